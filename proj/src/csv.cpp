#include "tabforge/csv.hpp"

#include "tabforge/error.hpp"

namespace tabforge {

RawGrid parse_csv(std::string_view text, char separator) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);

  RawGrid grid;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool after_quote = false;
  bool row_has_content = false;
  std::size_t line = 1;
  std::size_t quote_line = 1;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    after_quote = false;
  };
  auto end_row = [&] {
    if (row_has_content) {
      end_field();
      grid.push_back(std::move(row));
    }
    row.clear();
    field.clear();
    after_quote = false;
    row_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
          after_quote = true;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == separator) {
      row_has_content = true;
      end_field();
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_row();
      ++line;
    } else if (after_quote) {
      throw ParseError("unexpected character after closing quote", line);
    } else if (c == '"' && field.empty()) {
      in_quotes = true;
      row_has_content = true;
      quote_line = line;
    } else {
      field.push_back(c);
      row_has_content = true;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field", quote_line);
  end_row();
  return grid;
}

std::string write_csv(const RawGrid& grid, char separator) {
  std::string out;
  for (const auto& row : grid) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j > 0) out.push_back(separator);
      const std::string& f = row[j];
      const bool quote = (row.size() == 1 && f.empty()) ||
                         f.find_first_of(std::string{separator, '"', '\r', '\n'}) != std::string::npos;
      if (!quote) {
        out += f;
        continue;
      }
      out.push_back('"');
      for (char c : f) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
      }
      out.push_back('"');
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace tabforge
