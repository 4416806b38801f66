#include "pheno/ingest.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <tuple>

#include "pheno/csv.hpp"
#include "pheno/errors.hpp"

namespace pheno {

namespace {

void expect_header(const std::vector<std::string>& lines, const std::string& expected,
                   const char* what) {
    if (lines.empty() || lines[0] != expected)
        throw ParseError(std::string(what) + ": expected header \"" + expected + "\"");
}

} // namespace

// ---------------------------------------------------------------- phenology

std::vector<StationObservation> parse_phenology_csv(const std::string& text) {
    const auto lines = csv::split_lines(text);
    expect_header(lines, "station_id,lat,lon,crop,bbch,date,qb,qn", "phenology csv");

    std::vector<StationObservation> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const int line_no = static_cast<int>(i) + 1;
        if (lines[i].empty()) continue;
        const auto f = csv::split_line(lines[i]);
        if (f.size() != 8)
            throw ParseError("line " + std::to_string(line_no) + ": expected 8 fields, found " +
                             std::to_string(f.size()));
        StationObservation rec;
        rec.station_id = f[0];
        rec.lat = csv::parse_double(f[1], line_no, "lat");
        rec.lon = csv::parse_double(f[2], line_no, "lon");
        const auto crop = crop_from_name(f[3]);
        if (!crop)
            throw ValidationError("line " + std::to_string(line_no) + ": unknown crop \"" + f[3] +
                                  "\"");
        rec.crop = *crop;
        rec.bbch = csv::parse_int(f[4], line_no, "bbch");
        if (!is_known_bbch(rec.bbch))
            throw ValidationError("line " + std::to_string(line_no) + ": unknown bbch code " +
                                  std::to_string(rec.bbch));
        try {
            rec.date = Date::parse(f[5]);
        } catch (const std::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        rec.qb = csv::parse_int(f[6], line_no, "qb");
        rec.qn = csv::parse_int(f[7], line_no, "qn");
        out.push_back(std::move(rec));
    }
    return out;
}

std::string serialize_phenology_csv(const std::vector<StationObservation>& obs) {
    std::string out = "station_id,lat,lon,crop,bbch,date,qb,qn\n";
    for (const auto& r : obs) {
        out += r.station_id;
        out += ',';
        out += csv::format_double(r.lat);
        out += ',';
        out += csv::format_double(r.lon);
        out += ',';
        out += crop_name(r.crop);
        out += ',';
        out += std::to_string(r.bbch);
        out += ',';
        out += r.date.iso();
        out += ',';
        out += std::to_string(r.qb);
        out += ',';
        out += std::to_string(r.qn);
        out += '\n';
    }
    return out;
}

std::vector<StationObservation> clean_observations(std::vector<StationObservation> obs) {
    // Quality filter.
    std::erase_if(obs, [](const StationObservation& r) { return !(r.qb == 1 || r.qn == 10); });

    // Group by (station, crop, season).
    using GroupKey = std::tuple<std::string, int, int>;
    std::map<GroupKey, std::vector<StationObservation>> groups;
    for (auto& r : obs)
        groups[{r.station_id, static_cast<int>(r.crop), r.date.season_year()}].push_back(
            std::move(r));

    std::vector<StationObservation> result;
    for (auto& [key, group] : groups) {
        // One record per stage: the earliest report wins.
        std::map<int, StationObservation> by_stage;
        for (auto& r : group) {
            auto it = by_stage.find(r.bbch);
            if (it == by_stage.end() || r.date < it->second.date)
                by_stage.insert_or_assign(r.bbch, std::move(r));
        }
        // Walk stages in ascending BBCH order; a stage survives only when its
        // date is strictly later than every retained lower stage.
        bool have_prev = false;
        Date prev_date;
        for (auto& [bbch, rec] : by_stage) {
            if (have_prev && !(rec.date > prev_date)) continue;
            prev_date = rec.date;
            have_prev = true;
            result.push_back(std::move(rec));
        }
    }

    std::sort(result.begin(), result.end(),
              [](const StationObservation& a, const StationObservation& b) {
                  return std::tie(a.station_id, a.crop, a.date, a.bbch) <
                         std::tie(b.station_id, b.crop, b.date, b.bbch);
              });
    return result;
}

// ---------------------------------------------------------------- climate

std::vector<ClimateRecord> parse_climate_csv(const std::string& text) {
    const auto lines = csv::split_lines(text);
    expect_header(lines, "station_id,lat,lon,date,tmax,tmin,prcp", "climate csv");

    std::vector<ClimateRecord> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const int line_no = static_cast<int>(i) + 1;
        if (lines[i].empty()) continue;
        const auto f = csv::split_line(lines[i]);
        if (f.size() != 7)
            throw ParseError("line " + std::to_string(line_no) + ": expected 7 fields, found " +
                             std::to_string(f.size()));
        ClimateRecord rec;
        rec.station_id = f[0];
        rec.lat = csv::parse_double(f[1], line_no, "lat");
        rec.lon = csv::parse_double(f[2], line_no, "lon");
        try {
            rec.date = Date::parse(f[3]);
        } catch (const std::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        rec.tmax = csv::parse_optional_double(f[4], line_no, "tmax");
        rec.tmin = csv::parse_optional_double(f[5], line_no, "tmin");
        rec.prcp = csv::parse_optional_double(f[6], line_no, "prcp");
        if (rec.tmax && rec.tmin && *rec.tmax < *rec.tmin)
            throw ValidationError("line " + std::to_string(line_no) + ": tmax " +
                                  csv::format_double(*rec.tmax) + " < tmin " +
                                  csv::format_double(*rec.tmin));
        if (rec.prcp && *rec.prcp < 0)
            throw ValidationError("line " + std::to_string(line_no) + ": negative precipitation " +
                                  csv::format_double(*rec.prcp));
        out.push_back(std::move(rec));
    }
    return out;
}

std::string serialize_climate_csv(const std::vector<ClimateRecord>& records) {
    std::string out = "station_id,lat,lon,date,tmax,tmin,prcp\n";
    for (const auto& r : records) {
        out += r.station_id;
        out += ',';
        out += csv::format_double(r.lat);
        out += ',';
        out += csv::format_double(r.lon);
        out += ',';
        out += r.date.iso();
        out += ',';
        if (r.tmax) out += csv::format_double(*r.tmax);
        out += ',';
        if (r.tmin) out += csv::format_double(*r.tmin);
        out += ',';
        if (r.prcp) out += csv::format_double(*r.prcp);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------- grids

Grid parse_grid(const std::string& text) {
    std::istringstream in(text);
    Grid g;
    // Header: six "key value" pairs in fixed order.
    const char* keys[6] = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"};
    double header[6];
    for (int k = 0; k < 6; ++k) {
        std::string key;
        if (!(in >> key >> header[k]) || key != keys[k])
            throw ParseError(std::string("grid header: expected '") + keys[k] + "'");
    }
    g.ncols = static_cast<int>(header[0]);
    g.nrows = static_cast<int>(header[1]);
    g.origin_x = header[2];
    g.origin_y = header[3];
    g.cellsize = header[4];
    g.nodata = header[5];
    if (g.ncols <= 0 || g.nrows <= 0) throw ValidationError("grid: ncols/nrows must be positive");
    if (!(g.cellsize > 0)) throw ValidationError("grid: cellsize must be positive");

    const std::size_t expected = static_cast<std::size_t>(g.ncols) * g.nrows;
    g.values.reserve(expected);
    double v;
    while (in >> v) g.values.push_back(v);
    if (g.values.size() != expected)
        throw ParseError("grid: expected " + std::to_string(expected) + " values, found " +
                         std::to_string(g.values.size()));
    return g;
}

std::string serialize_grid(const Grid& grid) {
    std::string out;
    out += "ncols " + std::to_string(grid.ncols) + "\n";
    out += "nrows " + std::to_string(grid.nrows) + "\n";
    out += "xllcorner " + csv::format_double(grid.origin_x) + "\n";
    out += "yllcorner " + csv::format_double(grid.origin_y) + "\n";
    out += "cellsize " + csv::format_double(grid.cellsize) + "\n";
    out += "nodata_value " + csv::format_double(grid.nodata) + "\n";
    for (int r = 0; r < grid.nrows; ++r) {
        for (int c = 0; c < grid.ncols; ++c) {
            if (c) out += ' ';
            out += csv::format_double(grid.at(r, c));
        }
        out += '\n';
    }
    return out;
}

} // namespace pheno
