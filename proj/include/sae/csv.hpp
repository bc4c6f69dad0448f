#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace sae::csv {

/// Splits one line on commas. Double-quoted fields may contain commas and
/// "" escapes. Surrounding whitespace of unquoted fields is trimmed.
std::vector<std::string> split_line(std::string_view line);

/// Reads the next non-empty, non-comment ('#') line. Returns false at EOF.
bool next_record(std::istream& in, std::string& line, long& line_no);

/// Strict numeric parse of a whole field; false on trailing junk or empty.
bool parse_double(std::string_view field, double& out);

/// Shortest form that round-trips (%.17g).
std::string format_double(double v);

std::string quote_if_needed(std::string_view field);

}  // namespace sae::csv
