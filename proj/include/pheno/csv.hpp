#pragma once

#include <optional>
#include <string>
#include <vector>

namespace pheno {

// Minimal comma-separated parsing: UTF-8, no quoting, '\n' or '\r\n' line
// ends. Field values must not contain commas.
namespace csv {

std::vector<std::string> split_line(const std::string& line);

// Splits text into lines, dropping a trailing empty line.
std::vector<std::string> split_lines(const std::string& text);

double parse_double(const std::string& field, int line_no, const std::string& column);
int parse_int(const std::string& field, int line_no, const std::string& column);
std::optional<double> parse_optional_double(const std::string& field, int line_no,
                                            const std::string& column);

std::string join(const std::vector<std::string>& fields);

// Fixed shortest-roundtrip formatting so identical runs serialize identically.
std::string format_double(double v);

} // namespace csv

} // namespace pheno
