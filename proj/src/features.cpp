#include "pheno/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pheno/errors.hpp"

namespace pheno {

// ------------------------------------------------------------ catalog

namespace {

const std::array<std::string, kNumFeatures> kFeatureNames = {
    "vh", "vv",
    "b", "g", "nir", "r", "swir1", "swir2",
    "re1", "re2", "re3", "re4",
    "tmin", "tmax", "prcp",
    "ndvi", "evi2", "gndvi", "gcvi", "savi",
    "ndwi", "psri", "mcari", "ndyi",
    "arvi", "wdrvi", "vari",
    "rvi", "pr", "cr",
    "gdd", "gdd_sum", "dtr", "prcp_sum",
    "season", "month", "day_of_week", "day_of_month",
    "latitude", "longitude",
    "altitude", "slope", "aspect",
};

const std::array<std::string, kNumFeatureGroups + 1> kGroupNames = {
    "",
    "SAR",
    "Optical",
    "Red edge",
    "Climate",
    "Vegetation Health and Density Indices",
    "Water and Stress Indicators",
    "Soil and Atmospheric Correction Indices",
    "SAR Based Vegetation Indices",
    "Climate indices",
    "Time features",
    "Geospatial features",
    "Elevation data",
};

constexpr std::array<int, kNumFeatures> kFeatureGroup = {
    1, 1,
    2, 2, 2, 2, 2, 2,
    3, 3, 3, 3,
    4, 4, 4,
    5, 5, 5, 5, 5,
    6, 6, 6, 6,
    7, 7, 7,
    8, 8, 8,
    9, 9, 9, 9,
    10, 10, 10, 10,
    11, 11,
    12, 12, 12,
};

} // namespace

const std::string& feature_name(int f) { return kFeatureNames[static_cast<std::size_t>(f)]; }

std::optional<int> feature_from_name(const std::string& name) {
    for (int i = 0; i < kNumFeatures; ++i)
        if (kFeatureNames[static_cast<std::size_t>(i)] == name) return i;
    return std::nullopt;
}

int feature_group(int f) { return kFeatureGroup[static_cast<std::size_t>(f)]; }

const std::string& feature_group_name(int gid) {
    return kGroupNames[static_cast<std::size_t>(gid)];
}

const std::vector<int>& group_features(int gid) {
    static const auto table = [] {
        std::array<std::vector<int>, kNumFeatureGroups + 1> t;
        for (int f = 0; f < kNumFeatures; ++f) t[static_cast<std::size_t>(kFeatureGroup[f])].push_back(f);
        return t;
    }();
    return table[static_cast<std::size_t>(gid)];
}

FeatureSet FeatureSet::all() {
    FeatureSet s;
    s.on.fill(true);
    return s;
}

FeatureSet FeatureSet::none() { return FeatureSet{}; }

FeatureSet FeatureSet::from_indices(const std::vector<int>& idx) {
    FeatureSet s;
    for (int f : idx) s.set(f);
    return s;
}

FeatureSet FeatureSet::from_names(const std::vector<std::string>& names) {
    FeatureSet s;
    for (const auto& n : names) {
        const auto f = feature_from_name(n);
        if (!f) throw ValidationError("unknown feature name \"" + n + "\"");
        s.set(*f);
    }
    return s;
}

FeatureSet FeatureSet::paper_standard() {
    return from_indices({F_LATITUDE, F_LONGITUDE, F_ALTITUDE, F_SLOPE, F_ASPECT, F_DTR, F_GDD_SUM,
                         F_GDD, F_PRCP_SUM, F_VV, F_PR, F_RVI});
}

int FeatureSet::count() const {
    return static_cast<int>(std::count(on.begin(), on.end(), true));
}

std::vector<int> FeatureSet::indices() const {
    std::vector<int> out;
    for (int f = 0; f < kNumFeatures; ++f)
        if (on[static_cast<std::size_t>(f)]) out.push_back(f);
    return out;
}

std::vector<std::string> FeatureSet::names() const {
    std::vector<std::string> out;
    for (int f : indices()) out.push_back(feature_name(f));
    return out;
}

// ------------------------------------------------------------ radar

RadarIndices radar_indices(const RadarSample& s) {
    RadarIndices out;
    out.cr = s.vh - s.vv;
    if (s.vv == 0.0) throw ValidationError("radar_indices: pr undefined (vv = 0)");
    out.pr = s.vh / s.vv;
    if (s.vh == 0.0) throw ValidationError("radar_indices: rvi undefined (vh = 0)");
    const double denom = 1.0 + s.vv / s.vh;
    if (denom == 0.0) throw ValidationError("radar_indices: rvi undefined (vv = -vh)");
    out.rvi = 4.0 / denom;
    return out;
}

// ------------------------------------------------------------ optical

namespace {

std::optional<double> ratio(double num, double den) {
    if (den == 0.0) return std::nullopt;
    return num / den;
}

} // namespace

OpticalIndices optical_indices(const OpticalSample& s) {
    OpticalIndices o;
    o.ndvi = ratio(s.nir - s.r, s.nir + s.r);
    o.evi2 = ratio(2.5 * (s.nir - s.r), s.nir + 2.4 * s.r + 1.0);
    o.gndvi = ratio(s.nir - s.g, s.nir + s.g);
    o.gcvi = s.g == 0.0 ? std::nullopt : std::optional<double>(s.nir / s.g - 1.0);
    o.savi = ratio(1.5 * (s.nir - s.r), s.nir + s.r + 0.5);
    o.ndwi = ratio(s.g - s.nir, s.g + s.nir);
    o.psri = ratio(s.r - s.g, s.re2);
    o.mcari = s.r == 0.0 ? std::nullopt
                         : std::optional<double>(((s.re1 - s.r) - 0.2 * (s.re1 - s.g)) *
                                                 (s.re1 / s.r));
    o.ndyi = ratio(s.g - s.b, s.g + s.b);
    o.arvi = ratio(s.nir - (2.0 * s.r - s.b), s.nir + (2.0 * s.r - s.b));
    o.wdrvi = ratio(0.2 * s.nir - s.r, 0.2 * s.nir + s.r);
    o.vari = ratio(s.g - s.r, s.g + s.r - s.b);
    return o;
}

// ------------------------------------------------------------ climate

double gdd_daily(double tmax, double tmin, double t_base) {
    if (tmax < tmin) throw ValidationError("gdd_daily: tmax < tmin");
    return std::max(0.0, 0.5 * (tmax + tmin) - t_base);
}

ClimateAccumulation accumulate_climate(const DailySeries& tmax, const DailySeries& tmin,
                                       const DailySeries& prcp, const CropConfig& cfg) {
    if (tmax.start != tmin.start || tmax.start != prcp.start || tmax.size() != tmin.size() ||
        tmax.size() != prcp.size())
        throw ValidationError("accumulate_climate: series are not aligned");

    const std::size_t n = tmax.size();
    ClimateAccumulation acc;
    for (DailySeries* s : {&acc.gdd, &acc.gdd_sum, &acc.dtr, &acc.prcp_sum}) {
        s->station_id = tmax.station_id;
        s->start = tmax.start;
        s->values.resize(n);
    }
    acc.gdd.name = "gdd";
    acc.gdd_sum.name = "gdd_sum";
    acc.dtr.name = "dtr";
    acc.prcp_sum.name = "prcp_sum";

    double gdd_acc = 0.0;
    double prcp_acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Date day = tmax.date_at(i);
        if (day.day_of_year() == cfg.season_start_doy) {
            gdd_acc = 0.0;
            prcp_acc = 0.0;
        }
        const auto tx = tmax.values[i];
        const auto tn = tmin.values[i];
        const auto pr = prcp.values[i];
        if (tx && tn) {
            const double g = gdd_daily(*tx, *tn, cfg.t_base);
            gdd_acc += g;
            acc.gdd.values[i] = g;
            acc.gdd_sum.values[i] = gdd_acc;
            acc.dtr.values[i] = *tx - *tn;
        }
        if (pr) {
            prcp_acc += *pr;
            acc.prcp_sum.values[i] = prcp_acc;
        }
    }
    return acc;
}

// ------------------------------------------------------------ interpolation

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
    constexpr double kRadiusM = 6371000.0;
    constexpr double deg = std::numbers::pi / 180.0;
    const double p1 = lat1 * deg, p2 = lat2 * deg;
    const double dp = (lat2 - lat1) * deg;
    const double dl = (lon2 - lon1) * deg;
    const double a = std::sin(dp / 2) * std::sin(dp / 2) +
                     std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
    return 2.0 * kRadiusM * std::asin(std::min(1.0, std::sqrt(a)));
}

double idw_interpolate(const std::vector<IdwSample>& stations, double target_lat,
                       double target_lon, int k) {
    if (stations.empty()) throw ValidationError("idw_interpolate: no stations");
    if (k < 1) throw ValidationError("idw_interpolate: k must be >= 1");

    std::vector<std::pair<double, std::size_t>> by_dist;
    by_dist.reserve(stations.size());
    for (std::size_t i = 0; i < stations.size(); ++i)
        by_dist.emplace_back(haversine_m(stations[i].lat, stations[i].lon, target_lat, target_lon),
                             i);
    std::sort(by_dist.begin(), by_dist.end());

    const std::size_t use = std::min<std::size_t>(static_cast<std::size_t>(k), by_dist.size());
    double wsum = 0.0, vsum = 0.0;
    for (std::size_t j = 0; j < use; ++j) {
        const auto [d, i] = by_dist[j];
        if (d == 0.0) return stations[i].value;
        const double w = 1.0 / (d * d);
        wsum += w;
        vsum += w * stations[i].value;
    }
    return vsum / wsum;
}

// ------------------------------------------------------------ terrain

TerrainDerivatives terrain_derivatives(const Grid& dem) {
    if (!(dem.cellsize > 0)) throw ValidationError("terrain_derivatives: cellsize must be > 0");
    if (dem.ncols < 3 || dem.nrows < 3)
        throw ValidationError("terrain_derivatives: grid smaller than 3x3");

    TerrainDerivatives out;
    out.slope = dem;
    out.aspect = dem;
    constexpr double rad2deg = 180.0 / std::numbers::pi;

    auto z = [&](int r, int c) {
        r = std::clamp(r, 0, dem.nrows - 1);
        c = std::clamp(c, 0, dem.ncols - 1);
        return dem.at(r, c);
    };

    for (int r = 0; r < dem.nrows; ++r) {
        for (int c = 0; c < dem.ncols; ++c) {
            // Horn stencil; rows run north (top) to south.
            const double a = z(r - 1, c - 1), b = z(r - 1, c), cc_ = z(r - 1, c + 1);
            const double d = z(r, c - 1), f = z(r, c + 1);
            const double g = z(r + 1, c - 1), hh = z(r + 1, c), i = z(r + 1, c + 1);
            const double dzdx = ((cc_ + 2 * f + i) - (a + 2 * d + g)) / (8.0 * dem.cellsize);
            const double dzdn = ((a + 2 * b + cc_) - (g + 2 * hh + i)) / (8.0 * dem.cellsize);

            out.slope.at(r, c) = std::atan(std::hypot(dzdx, dzdn)) * rad2deg;
            if (dzdx == 0.0 && dzdn == 0.0) {
                out.aspect.at(r, c) = 0.0; // flat
            } else {
                // Downslope azimuth measured clockwise from north.
                double az = std::atan2(-dzdx, -dzdn) * rad2deg;
                if (az < 0) az += 360.0;
                if (az >= 360.0) az -= 360.0;
                out.aspect.at(r, c) = az;
            }
        }
    }
    return out;
}

// ------------------------------------------------------------ time

TimeFeatures time_features(Date d) {
    TimeFeatures t;
    t.month = static_cast<int>(d.month());
    t.season = (t.month % 12) / 3; // Dec..Feb = 0, Mar..May = 1, ...
    t.dow = d.weekday_monday0();
    t.dom = static_cast<int>(d.day());
    return t;
}

} // namespace pheno
