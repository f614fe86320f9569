#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tabforge {

using RawGrid = std::vector<std::vector<std::string>>;

// RFC-4180 reader: quoted fields may contain separators, CR/LF and doubled
// quotes. A leading UTF-8 byte-order mark is dropped and completely empty
// lines are skipped. Throws ParseError on an unterminated quote or stray
// characters after a closing quote.
RawGrid parse_csv(std::string_view text, char separator = ',');

// Quotes a field only when it contains the separator, a quote, CR or LF.
std::string write_csv(const RawGrid& grid, char separator = ',');

}  // namespace tabforge
