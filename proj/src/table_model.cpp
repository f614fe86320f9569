#include "tabforge/table_model.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <nlohmann/json.hpp>

#include "tabforge/error.hpp"

namespace tabforge {

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

std::string_view to_string(ColumnKind kind) { return kind == ColumnKind::numeric ? "numeric" : "textual"; }

ColumnKind column_kind_from_string(std::string_view text) {
  if (text == "numeric") return ColumnKind::numeric;
  if (text == "textual") return ColumnKind::textual;
  throw ParseError("unknown column kind '" + std::string(text) + "'", 0);
}

Cell Cell::numeric(const Decimal& value) {
  Cell c;
  c.value_ = value.rounded(kNumericPrecision);
  return c;
}

Cell Cell::text(std::string value) {
  Cell c;
  c.value_ = std::move(value);
  return c;
}

std::string Cell::render() const {
  if (is_numeric()) return number().to_string();
  if (is_text()) return text();
  return {};
}

Table::Table(std::string name, std::optional<std::string> domain_tag, std::vector<ColumnSpec> columns,
             std::vector<std::vector<Cell>> rows)
    : name_(std::move(name)), domain_tag_(std::move(domain_tag)), columns_(std::move(columns)), rows_(std::move(rows)) {
  if (columns_.empty()) throw StructuralError("table '" + name_ + "' has no columns");
  std::set<std::string_view> seen;
  for (const auto& c : columns_) {
    if (trim(c.name).empty()) throw StructuralError("empty column name in table '" + name_ + "'");
    if (!seen.insert(c.name).second) throw StructuralError("duplicate column name '" + c.name + "'");
  }
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    const auto& row = rows_[r];
    if (row.size() != columns_.size()) {
      throw StructuralError("row " + std::to_string(r) + " has " + std::to_string(row.size()) + " cells, expected " +
                            std::to_string(columns_.size()));
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      const bool numeric_col = columns_[c].kind == ColumnKind::numeric;
      if ((row[c].is_numeric() && !numeric_col) || (row[c].is_text() && numeric_col)) {
        throw StructuralError("cell (" + std::to_string(r) + ", " + std::to_string(c) +
                              ") does not match the kind of column '" + columns_[c].name + "'");
      }
    }
  }
}

std::optional<std::size_t> Table::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i].name == name) return i;
  return std::nullopt;
}

Table Table::select_rows(const std::vector<std::size_t>& row_indices) const {
  std::vector<std::vector<Cell>> rows;
  rows.reserve(row_indices.size());
  for (auto r : row_indices) rows.push_back(rows_.at(r));
  return Table(name_, domain_tag_, columns_, std::move(rows));
}

bool is_missing_token(std::string_view raw) {
  const auto t = trim(raw);
  return t.empty() || iequals(t, "NA") || iequals(t, "N/A") || iequals(t, "null");
}

std::string canonicalize_text(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char c = raw[i];
    if (c == '\r') {
      if (i + 1 < raw.size() && raw[i + 1] == '\n') ++i;
      out.push_back(' ');
    } else if (c == '\n') {
      out.push_back(' ');
    } else {
      out.push_back(c);
    }
  }
  return std::string(trim(out));
}

std::vector<ColumnSpec> infer_column_kinds(const std::vector<RawColumn>& raw_columns, double numeric_threshold) {
  if (raw_columns.empty()) throw StructuralError("zero columns");
  if (!(numeric_threshold > 0.5 && numeric_threshold <= 1.0))
    throw DomainError("numeric_threshold must lie in (0.5, 1.0]");
  std::vector<ColumnSpec> specs;
  specs.reserve(raw_columns.size());
  for (const auto& col : raw_columns) {
    if (trim(col.name).empty()) throw StructuralError("column with empty name");
    std::size_t present = 0;
    std::size_t numeric = 0;
    for (const auto& v : col.values) {
      if (is_missing_token(v)) continue;
      ++present;
      if (Decimal::parse(trim(v))) ++numeric;
    }
    const bool is_numeric =
        present > 0 && static_cast<double>(numeric) >= numeric_threshold * static_cast<double>(present);
    specs.push_back({col.name, is_numeric ? ColumnKind::numeric : ColumnKind::textual});
  }
  return specs;
}

std::vector<std::string> dedup_column_names(const std::vector<std::string>& names) {
  std::set<std::string> originals(names.begin(), names.end());
  std::set<std::string> assigned;
  std::vector<std::string> out;
  out.reserve(names.size());
  for (const auto& n : names) {
    if (!assigned.contains(n)) {
      assigned.insert(n);
      out.push_back(n);
      continue;
    }
    for (int suffix = 2;; ++suffix) {
      std::string candidate = n + "_" + std::to_string(suffix);
      if (!assigned.contains(candidate) && !originals.contains(candidate)) {
        assigned.insert(candidate);
        out.push_back(std::move(candidate));
        break;
      }
    }
  }
  return out;
}

Table load_table(const RawGrid& grid, std::string name, std::optional<std::string> domain_tag,
                 double numeric_threshold) {
  if (grid.empty()) throw StructuralError("empty grid");
  if (grid.size() == 1) throw StructuralError("grid has a header but no rows");
  const auto& header = grid.front();
  if (header.empty()) throw StructuralError("zero columns");
  const std::size_t width = header.size();

  std::vector<RawColumn> raw(width);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < width; ++c) {
    names.push_back(canonicalize_text(header[c]));
    if (names.back().empty()) throw StructuralError("column " + std::to_string(c) + " has an empty name");
  }
  names = dedup_column_names(names);
  for (std::size_t c = 0; c < width; ++c) raw[c].name = names[c];

  for (std::size_t r = 1; r < grid.size(); ++r) {
    const auto& row = grid[r];
    if (row.size() > width) {
      throw StructuralError("row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                            " fields, header has " + std::to_string(width));
    }
    for (std::size_t c = 0; c < width; ++c) raw[c].values.push_back(c < row.size() ? row[c] : std::string());
  }

  auto columns = infer_column_kinds(raw, numeric_threshold);
  std::vector<std::vector<Cell>> rows(grid.size() - 1, std::vector<Cell>(width));
  for (std::size_t c = 0; c < width; ++c) {
    const bool numeric = columns[c].kind == ColumnKind::numeric;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::string& v = raw[c].values[r];
      if (is_missing_token(v)) continue;
      if (numeric) {
        if (auto d = Decimal::parse(trim(v))) rows[r][c] = Cell::numeric(*d);
      } else {
        auto text = canonicalize_text(v);
        if (!is_missing_token(text)) rows[r][c] = Cell::text(std::move(text));
      }
    }
  }
  return Table(std::move(name), std::move(domain_tag), std::move(columns), std::move(rows));
}

RawGrid render_raw(const Table& table) {
  RawGrid grid;
  grid.reserve(table.num_rows() + 1);
  std::vector<std::string> header;
  for (const auto& c : table.columns()) header.push_back(c.name);
  grid.push_back(std::move(header));
  for (const auto& row : table.rows()) {
    std::vector<std::string> out;
    out.reserve(row.size());
    for (const auto& cell : row) out.push_back(cell.render());
    grid.push_back(std::move(out));
  }
  return grid;
}

nlohmann::json table_to_json(const Table& table) {
  nlohmann::json j;
  j["name"] = table.name();
  j["domain_tag"] = table.domain_tag() ? nlohmann::json(*table.domain_tag()) : nlohmann::json(nullptr);
  auto cols = nlohmann::json::array();
  for (const auto& c : table.columns()) cols.push_back({{"name", c.name}, {"kind", to_string(c.kind)}});
  j["columns"] = std::move(cols);
  auto rows = nlohmann::json::array();
  for (const auto& row : table.rows()) {
    auto out = nlohmann::json::array();
    for (const auto& cell : row) out.push_back(cell.is_missing() ? nlohmann::json(nullptr) : nlohmann::json(cell.render()));
    rows.push_back(std::move(out));
  }
  j["rows"] = std::move(rows);
  return j;
}

Table table_from_json(const nlohmann::json& j) {
  std::vector<ColumnSpec> columns;
  for (const auto& c : j.at("columns"))
    columns.push_back({c.at("name").get<std::string>(), column_kind_from_string(c.at("kind").get<std::string>())});
  std::vector<std::vector<Cell>> rows;
  for (const auto& jr : j.at("rows")) {
    std::vector<Cell> row;
    std::size_t c = 0;
    for (const auto& jc : jr) {
      if (jc.is_null()) {
        row.emplace_back();
      } else if (c < columns.size() && columns[c].kind == ColumnKind::numeric) {
        auto d = Decimal::parse(jc.get<std::string>());
        if (!d) throw StructuralError("non-numeric cell in numeric column '" + columns[c].name + "'");
        row.push_back(Cell::numeric(*d));
      } else {
        row.push_back(Cell::text(jc.get<std::string>()));
      }
      ++c;
    }
    rows.push_back(std::move(row));
  }
  std::optional<std::string> domain;
  if (j.contains("domain_tag") && !j.at("domain_tag").is_null()) domain = j.at("domain_tag").get<std::string>();
  return Table(j.at("name").get<std::string>(), std::move(domain), std::move(columns), std::move(rows));
}

}  // namespace tabforge
