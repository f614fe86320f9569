#pragma once

#include <string>
#include <vector>

#include "tabforge/random.hpp"
#include "tabforge/table_model.hpp"

namespace test_support {

// Random canonical table: text cells are trimmed letter strings (some with
// pipes and inner spaces), numeric columns hold at least one number.
inline tabforge::Table random_table(tabforge::Rng& rng, std::size_t max_cols = 5, std::size_t max_rows = 6) {
  using tabforge::Cell;
  const std::size_t n_cols = 1 + rng.below(max_cols);
  const std::size_t n_rows = 1 + rng.below(max_rows);
  std::vector<tabforge::ColumnSpec> cols;
  for (std::size_t c = 0; c < n_cols; ++c)
    cols.push_back({"col" + std::to_string(c) + (rng.below(2) ? " x" : ""),
                    rng.below(2) ? tabforge::ColumnKind::numeric : tabforge::ColumnKind::textual});
  const std::string alphabet = "abcxyzQ||  ";
  std::vector<std::vector<Cell>> rows(n_rows, std::vector<Cell>(n_cols));
  for (std::size_t c = 0; c < n_cols; ++c) {
    for (std::size_t r = 0; r < n_rows; ++r) {
      const bool force = cols[c].kind == tabforge::ColumnKind::numeric && r == 0;
      if (!force && rng.below(6) == 0) continue;
      if (cols[c].kind == tabforge::ColumnKind::numeric) {
        const double v = rng.uniform(-1000.0, 1000.0);
        rows[r][c] = Cell::numeric(*tabforge::Decimal::parse(tabforge::canonicalize_numeric(
            rng.below(3) == 0 ? static_cast<double>(static_cast<long>(v)) : v)));
      } else {
        std::string s(1, "abcdefgh"[rng.below(8)]);
        const std::size_t len = rng.below(8);
        for (std::size_t k = 0; k < len; ++k) s += alphabet[rng.below(alphabet.size())];
        s += "xyz"[rng.below(3)];
        rows[r][c] = Cell::text(s);
      }
    }
  }
  return tabforge::Table("t", std::nullopt, cols, rows);
}

}  // namespace test_support
