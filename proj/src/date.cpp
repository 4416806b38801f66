#include "pheno/date.hpp"

#include <cstdio>

#include "pheno/errors.hpp"

namespace pheno {

namespace {

std::chrono::year_month_day to_ymd(std::int64_t serial) {
    return std::chrono::year_month_day{
        std::chrono::sys_days{std::chrono::days{serial}}};
}

} // namespace

Date::Date(int year, unsigned month, unsigned day) {
    std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                    std::chrono::day{day}};
    if (!ymd.ok())
        throw ValidationError("invalid calendar date " + std::to_string(year) + "-" +
                              std::to_string(month) + "-" + std::to_string(day));
    serial_ = std::chrono::sys_days{ymd}.time_since_epoch().count();
}

Date Date::from_serial(std::int64_t days_since_epoch) {
    Date d;
    d.serial_ = days_since_epoch;
    return d;
}

Date Date::parse(const std::string& text) {
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    if (std::sscanf(text.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3 ||
        text.size() != 10 || text[4] != '-' || text[7] != '-')
        throw ParseError("expected ISO date YYYY-MM-DD, got \"" + text + "\"");
    return Date(y, m, d);
}

int Date::year() const { return static_cast<int>(to_ymd(serial_).year()); }
unsigned Date::month() const { return static_cast<unsigned>(to_ymd(serial_).month()); }
unsigned Date::day() const { return static_cast<unsigned>(to_ymd(serial_).day()); }

int Date::day_of_year() const {
    const auto ymd = to_ymd(serial_);
    const Date jan1(static_cast<int>(ymd.year()), 1, 1);
    return static_cast<int>(serial_ - jan1.serial_) + 1;
}

int Date::weekday_monday0() const {
    const std::chrono::weekday wd{std::chrono::sys_days{std::chrono::days{serial_}}};
    return static_cast<int>(wd.iso_encoding()) - 1;
}

int Date::season_year() const {
    const int y = year();
    return day_of_year() >= 265 ? y + 1 : y;
}

std::string Date::iso() const {
    const auto ymd = to_ymd(serial_);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

Date season_start(int season_year) {
    const Date jan1(season_year - 1, 1, 1);
    return jan1 + 264; // DOY 265
}

} // namespace pheno
