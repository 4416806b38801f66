#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pheno/date.hpp"

namespace pheno {

// ---------------------------------------------------------------- crops

enum class Crop : int {
    Maize = 0,
    SpringBarley,
    SpringOat,
    SugarBeet,
    WinterBarley,
    WinterRapeseed,
    WinterRye,
    WinterWheat,
};

inline constexpr int kNumCrops = 8;

inline constexpr std::array<Crop, kNumCrops> kAllCrops = {
    Crop::Maize,        Crop::SpringBarley,   Crop::SpringOat, Crop::SugarBeet,
    Crop::WinterBarley, Crop::WinterRapeseed, Crop::WinterRye, Crop::WinterWheat,
};

const std::string& crop_name(Crop c);
std::optional<Crop> crop_from_name(const std::string& name);

// Base temperature for growing-degree-day accumulation, per crop.
double crop_base_temperature(Crop c);

// Integer code used for crop classes in crop-type-map rasters (background = 0).
inline int crop_mask_code(Crop c) { return static_cast<int>(c) + 1; }

// The BBCH stage codes handled by the pipeline.
inline constexpr std::array<int, 13> kBbchCodes = {0,  10, 14, 31, 35, 51, 53,
                                                   61, 65, 75, 83, 87, 89};

bool is_known_bbch(int code);

inline constexpr int kBackgroundLabel = -1;
inline constexpr int kSeasonStartDoy = 265;

// ---------------------------------------------------------------- records

struct StationObservation {
    std::string station_id;
    double lat = 0.0;
    double lon = 0.0;
    Crop crop = Crop::Maize;
    int bbch = 0;
    Date date;
    int qb = 0;
    int qn = 0;
};

struct ClimateRecord {
    std::string station_id;
    double lat = 0.0;
    double lon = 0.0;
    Date date;
    std::optional<double> tmax; // degC
    std::optional<double> tmin; // degC
    std::optional<double> prcp; // mm
};

// ---------------------------------------------------------------- rasters

// Row-major raster, row 0 = northernmost. origin_x/origin_y are the
// coordinates of the lower-left corner (ASCII-grid convention).
struct Grid {
    int ncols = 0;
    int nrows = 0;
    double origin_x = 0.0;
    double origin_y = 0.0;
    double cellsize = 0.0;
    double nodata = -9999.0;
    std::vector<double> values;

    double at(int row, int col) const { return values[static_cast<std::size_t>(row) * ncols + col]; }
    double& at(int row, int col) { return values[static_cast<std::size_t>(row) * ncols + col]; }
    bool is_nodata(double v) const { return v == nodata; }
    bool same_geometry(const Grid& o) const;

    // Cell-center coordinates.
    double cell_x(int col) const { return origin_x + (col + 0.5) * cellsize; }
    double cell_y(int row) const { return origin_y + (nrows - row - 0.5) * cellsize; }
};

// ---------------------------------------------------------------- series

// Sparse time series: strictly increasing serial days, one value per day.
struct IrregularSeries {
    std::vector<std::int64_t> days;
    std::vector<double> values;

    std::size_t size() const { return days.size(); }
    bool empty() const { return days.empty(); }
};

// Dense daily series starting at `start`; slots may be empty at the edges.
struct DailySeries {
    std::string name;
    std::string station_id;
    Date start;
    std::vector<std::optional<double>> values;

    std::size_t size() const { return values.size(); }
    Date date_at(std::size_t i) const { return start + static_cast<std::int64_t>(i); }
    std::optional<double> at_date(Date d) const {
        const std::int64_t i = d - start;
        if (i < 0 || i >= static_cast<std::int64_t>(values.size())) return std::nullopt;
        return values[static_cast<std::size_t>(i)];
    }
};

// ---------------------------------------------------------------- fields

// Crop fields selected to represent one station: connected pixel sets of the
// crop-type map (full-grid row-major indices) that survived the inner buffer
// and the minimum-area rule.
struct FieldSelection {
    std::string station_id;
    Crop crop = Crop::Maize;
    std::vector<std::vector<std::int64_t>> pixel_sets;
    std::vector<double> areas_ha;

    std::size_t total_pixels() const {
        std::size_t n = 0;
        for (const auto& s : pixel_sets) n += s.size();
        return n;
    }
};

} // namespace pheno
