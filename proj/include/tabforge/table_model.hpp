#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tabforge/csv.hpp"
#include "tabforge/decimal.hpp"

namespace tabforge {

inline constexpr double kDefaultNumericThreshold = 0.99;

enum class ColumnKind { numeric, textual };

std::string_view to_string(ColumnKind kind);
ColumnKind column_kind_from_string(std::string_view text);

class Cell {
 public:
  Cell() = default;  // Missing

  static Cell missing() { return Cell(); }
  static Cell numeric(const Decimal& value);
  static Cell text(std::string value);

  bool is_missing() const noexcept { return std::holds_alternative<std::monostate>(value_); }
  bool is_numeric() const noexcept { return std::holds_alternative<Decimal>(value_); }
  bool is_text() const noexcept { return std::holds_alternative<std::string>(value_); }

  const Decimal& number() const { return std::get<Decimal>(value_); }
  const std::string& text() const { return std::get<std::string>(value_); }

  // Canonical text; empty for Missing.
  std::string render() const;

  friend bool operator==(const Cell&, const Cell&) = default;

 private:
  std::variant<std::monostate, Decimal, std::string> value_;
};

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::textual;

  friend bool operator==(const ColumnSpec&, const ColumnSpec&) = default;
};

// Immutable, validated table. Every row has one cell per column; Numeric
// cells only in numeric columns, Text cells only in textual ones.
class Table {
 public:
  Table(std::string name, std::optional<std::string> domain_tag, std::vector<ColumnSpec> columns,
        std::vector<std::vector<Cell>> rows);

  const std::string& name() const noexcept { return name_; }
  const std::optional<std::string>& domain_tag() const noexcept { return domain_tag_; }
  const std::vector<ColumnSpec>& columns() const noexcept { return columns_; }
  const std::vector<std::vector<Cell>>& rows() const noexcept { return rows_; }
  std::size_t num_columns() const noexcept { return columns_.size(); }
  std::size_t num_rows() const noexcept { return rows_.size(); }
  const Cell& cell(std::size_t row, std::size_t col) const { return rows_.at(row).at(col); }

  // Index of the named column, or nullopt.
  std::optional<std::size_t> column_index(std::string_view name) const;

  // Copy restricted to the given rows, in the given order.
  Table select_rows(const std::vector<std::size_t>& row_indices) const;

  friend bool operator==(const Table&, const Table&) = default;

 private:
  std::string name_;
  std::optional<std::string> domain_tag_;
  std::vector<ColumnSpec> columns_;
  std::vector<std::vector<Cell>> rows_;
};

struct RawColumn {
  std::string name;
  std::vector<std::string> values;
};

// Empty string, NA, N/A and null (any case, surrounding whitespace ignored).
bool is_missing_token(std::string_view raw);

// Text cell normalization: CR/LF become single spaces, then the whole value
// is trimmed.
std::string canonicalize_text(std::string_view raw);

// A column is numeric iff the share of its non-missing entries that parse as
// finite decimals is >= numeric_threshold. Columns with no non-missing
// entries are textual.
std::vector<ColumnSpec> infer_column_kinds(const std::vector<RawColumn>& raw_columns,
                                           double numeric_threshold = kDefaultNumericThreshold);

// Duplicate names get "_2", "_3", ... left to right, skipping any suffix that
// collides with another column.
std::vector<std::string> dedup_column_names(const std::vector<std::string>& names);

// First row is the header. Short rows are padded with Missing; rows wider
// than the header are rejected. In numeric columns, entries that do not
// parse become Missing.
Table load_table(const RawGrid& grid, std::string name, std::optional<std::string> domain_tag = std::nullopt,
                 double numeric_threshold = kDefaultNumericThreshold);

// Header plus canonical cell text; inverse of load_table on canonical tables.
RawGrid render_raw(const Table& table);

nlohmann::json table_to_json(const Table& table);
Table table_from_json(const nlohmann::json& j);

}  // namespace tabforge
