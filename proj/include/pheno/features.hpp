#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "pheno/types.hpp"

namespace pheno {

// ------------------------------------------------------------ catalog
//
// The 43 model-input features, in group order. Day of year is the label
// axis, not an input, and is carried separately.

enum Feature : int {
    F_VH = 0, F_VV,                                           // 1 SAR backscatter
    F_B, F_G, F_NIR, F_R, F_SWIR1, F_SWIR2,                   // 2 optical bands
    F_RE1, F_RE2, F_RE3, F_RE4,                               // 3 red edge
    F_TMIN, F_TMAX, F_PRCP,                                   // 4 climate
    F_NDVI, F_EVI2, F_GNDVI, F_GCVI, F_SAVI,                  // 5 vegetation health
    F_NDWI, F_PSRI, F_MCARI, F_NDYI,                          // 6 water & stress
    F_ARVI, F_WDRVI, F_VARI,                                  // 7 atmospheric corrected
    F_RVI, F_PR, F_CR,                                        // 8 SAR vegetation indices
    F_GDD, F_GDD_SUM, F_DTR, F_PRCP_SUM,                      // 9 climate indices
    F_SEASON, F_MONTH, F_DAY_OF_WEEK, F_DAY_OF_MONTH,         // 10 time
    F_LATITUDE, F_LONGITUDE,                                  // 11 geospatial
    F_ALTITUDE, F_SLOPE, F_ASPECT,                            // 12 elevation
    kNumFeatures
};

static_assert(kNumFeatures == 43);

inline constexpr int kNumFeatureGroups = 12;

const std::string& feature_name(int f);
std::optional<int> feature_from_name(const std::string& name);
int feature_group(int f);                       // 1..12
const std::string& feature_group_name(int gid); // Table-3 style group label
const std::vector<int>& group_features(int gid);

using FeatureVector = std::array<double, kNumFeatures>;

// Subset of the 43 features used as model inputs.
struct FeatureSet {
    std::array<bool, kNumFeatures> on{};

    static FeatureSet all();
    static FeatureSet none();
    static FeatureSet from_indices(const std::vector<int>& idx);
    static FeatureSet from_names(const std::vector<std::string>& names);

    // The fixed 12-feature standardized set shipped as a preset.
    static FeatureSet paper_standard();

    bool contains(int f) const { return on[static_cast<std::size_t>(f)]; }
    void set(int f, bool v = true) { on[static_cast<std::size_t>(f)] = v; }
    int count() const;
    std::vector<int> indices() const;
    std::vector<std::string> names() const;
    bool operator==(const FeatureSet&) const = default;
};

// ------------------------------------------------------------ radar

struct RadarSample {
    double vv = 0.0; // dB
    double vh = 0.0; // dB
};

struct RadarIndices {
    double cr = 0.0;  // vh - vv
    double pr = 0.0;  // vh / vv
    double rvi = 0.0; // 4 / (1 + vv/vh)
};

// Computed on the dB values exactly as supplied. Throws ValidationError
// naming the index on a zero denominator.
RadarIndices radar_indices(const RadarSample& s);

// ------------------------------------------------------------ optical

struct OpticalSample {
    double b = 0, g = 0, r = 0, nir = 0, swir1 = 0, swir2 = 0;
    double re1 = 0, re2 = 0, re3 = 0, re4 = 0;
};

// Empty slots mark indices whose denominator was zero; the rest are still
// returned.
struct OpticalIndices {
    std::optional<double> ndvi, evi2, gndvi, gcvi, savi;
    std::optional<double> ndwi, psri, mcari, ndyi;
    std::optional<double> arvi, wdrvi, vari;
};

OpticalIndices optical_indices(const OpticalSample& s);

// ------------------------------------------------------------ climate

struct CropConfig {
    Crop crop = Crop::WinterWheat;
    double t_base = 4.5;
    int season_start_doy = kSeasonStartDoy;

    static CropConfig for_crop(Crop c) {
        return CropConfig{c, crop_base_temperature(c), kSeasonStartDoy};
    }
};

// max(0, (tmax+tmin)/2 - t_base); throws when tmax < tmin.
double gdd_daily(double tmax, double tmin, double t_base);

struct ClimateAccumulation {
    DailySeries gdd;
    DailySeries gdd_sum;  // running sum, reset on season-start DOY
    DailySeries dtr;      // tmax - tmin
    DailySeries prcp_sum; // running sum, reset on season-start DOY
};

// Series must share start date and length. Days with a missing input leave
// the accumulators unchanged and produce empty slots.
ClimateAccumulation accumulate_climate(const DailySeries& tmax, const DailySeries& tmin,
                                       const DailySeries& prcp, const CropConfig& cfg);

// ------------------------------------------------------------ interpolation

struct IdwSample {
    double lat = 0, lon = 0;
    double value = 0;
};

// Great-circle distance in meters on a 6371 km sphere.
double haversine_m(double lat1, double lon1, double lat2, double lon2);

// Inverse-distance-squared weighting over the k nearest stations; an exact
// location match returns that station's value directly.
double idw_interpolate(const std::vector<IdwSample>& stations, double target_lat,
                       double target_lon, int k = 10);

// ------------------------------------------------------------ terrain

struct TerrainDerivatives {
    Grid slope;  // degrees
    Grid aspect; // clockwise degrees from north, [0, 360); flat cells = 0
};

// Horn 3x3 finite differences with edge replication at the borders.
TerrainDerivatives terrain_derivatives(const Grid& dem);

// ------------------------------------------------------------ time

struct TimeFeatures {
    int season = 0; // meteorological: DJF=0 MAM=1 JJA=2 SON=3
    int month = 1;  // 1..12
    int dow = 0;    // 0 = Monday
    int dom = 1;    // 1..31
};

TimeFeatures time_features(Date d);

} // namespace pheno
