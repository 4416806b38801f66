#pragma once

#include <stdexcept>
#include <string>

namespace pheno {

// Malformed input text (bad CSV row, truncated grid, ...).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Well-formed input that violates a domain invariant (unknown crop,
// tmax < tmin, negative precipitation, ...).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace pheno
