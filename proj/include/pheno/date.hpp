#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <string>

namespace pheno {

// Calendar date backed by a serial day count (days since 1970-01-01).
// Cheap to copy and compare; arithmetic is plain integer math on the serial.
class Date {
public:
    Date() = default;
    Date(int year, unsigned month, unsigned day);

    static Date from_serial(std::int64_t days_since_epoch);
    // Parses strict ISO-8601 "YYYY-MM-DD". Throws ParseError otherwise.
    static Date parse(const std::string& text);

    std::int64_t serial() const { return serial_; }
    int year() const;
    unsigned month() const;
    unsigned day() const;
    int day_of_year() const;          // 1..366
    int weekday_monday0() const;      // 0 = Monday .. 6 = Sunday

    // Season key for grouping observations: the harvest year. Days from
    // DOY 265 of year Y-1 through DOY 264 of year Y belong to season Y.
    int season_year() const;

    std::string iso() const;          // "YYYY-MM-DD"

    Date operator+(std::int64_t days) const { return from_serial(serial_ + days); }
    Date operator-(std::int64_t days) const { return from_serial(serial_ - days); }
    std::int64_t operator-(const Date& o) const { return serial_ - o.serial_; }
    auto operator<=>(const Date&) const = default;

private:
    std::int64_t serial_ = 0;
};

// First day of the given season: DOY 265 of the previous calendar year.
Date season_start(int season_year);

} // namespace pheno
