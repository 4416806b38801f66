#include "pheno/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "pheno/csv.hpp"
#include "pheno/errors.hpp"
#include "pheno/features.hpp"
#include "pheno/ingest.hpp"
#include "pheno/rng.hpp"

namespace pheno {

namespace {

constexpr int kGridSize = 40;     // pixels
constexpr double kCellSize = 20;  // meters
constexpr double kNodata = -9999;

double quantize(double v, double step = 1e-4) { return std::round(v / step) * step; }

double project_x(double lon) { return (lon - 6.0) * 70000.0; }
double project_y(double lat) { return (lat - 47.0) * 111000.0; }

// Regional terrain height shared by climate lapse rates and station DEMs.
double regional_altitude(double lat, double lon) {
    const double u = 0.5 + 0.5 * std::sin(1.1 * lon - 2.0) * std::cos(0.8 * lat - 1.0);
    return 130.0 + 420.0 * u * u;
}

double seasonal_mean_temp(int doy, double lat, double alt, double year_offset) {
    return 9.0 - 0.35 * (lat - 51.0) - 0.004 * (alt - 200.0) + year_offset +
           9.5 * std::sin(2.0 * std::numbers::pi * (doy - 105) / 365.25);
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct StationInfo {
    std::string id;
    double lat = 0, lon = 0;
    double x = 0, y = 0;
    double base_alt = 0;
    double tilt_x = 0, tilt_y = 0; // DEM gradients
};

struct BandCurve {
    const char* name;
    double base;    // bare-soil level
    double span;    // added at full biomass (sign matters)
    double noise;   // per-date series noise scale
    bool optical;
};

const BandCurve kBands[] = {
    {"vh", -24.0, 9.0, 0.6, false},
    {"vv", -13.5, 3.5, 0.5, false},
    {"b", 0.050, 0.005, 0.004, true},
    {"g", 0.085, 0.020, 0.006, true},
    {"r", 0.100, -0.055, 0.006, true},
    {"nir", 0.160, 0.300, 0.012, true},
    {"swir1", 0.220, -0.100, 0.008, true},
    {"swir2", 0.160, -0.070, 0.008, true},
    {"re1", 0.110, 0.020, 0.006, true},
    {"re2", 0.125, 0.110, 0.008, true},
    {"re3", 0.140, 0.200, 0.010, true},
    {"re4", 0.150, 0.260, 0.010, true},
};

} // namespace

SynthSummary synth_generate(const SynthSpec& spec, const FileSink& sink) {
    spec.validate();
    SynthSummary summary;

    // --------------------------------------------------------- stations
    std::vector<StationInfo> stations;
    for (int i = 0; i < spec.n_stations; ++i) {
        Rng rng(mix_seed(spec.seed, 0x706f73, static_cast<std::uint64_t>(i)));
        StationInfo s;
        char buf[16];
        std::snprintf(buf, sizeof buf, "P%03d", i + 1);
        s.id = buf;
        s.lat = quantize(rng.uniform(47.6, 54.4), 1e-6);
        s.lon = quantize(rng.uniform(6.6, 14.4), 1e-6);
        s.x = quantize(project_x(s.lon), 0.01);
        s.y = quantize(project_y(s.lat), 0.01);
        s.base_alt = regional_altitude(s.lat, s.lon);
        s.tilt_x = rng.uniform(-0.035, 0.035);
        s.tilt_y = rng.uniform(-0.035, 0.035);
        stations.push_back(std::move(s));
    }

    struct ClimateStation {
        std::string id;
        double lat = 0, lon = 0, alt = 0;
    };
    std::vector<ClimateStation> climate_stations;
    for (int i = 0; i < spec.n_climate_stations; ++i) {
        Rng rng(mix_seed(spec.seed, 0x636c696d, static_cast<std::uint64_t>(i)));
        ClimateStation s;
        char buf[16];
        std::snprintf(buf, sizeof buf, "C%03d", i + 1);
        s.id = buf;
        s.lat = quantize(rng.uniform(47.5, 54.5), 1e-6);
        s.lon = quantize(rng.uniform(6.5, 14.5), 1e-6);
        s.alt = regional_altitude(s.lat, s.lon);
        climate_stations.push_back(std::move(s));
    }

    // --------------------------------------------------------- climate
    const int min_season = *std::min_element(spec.seasons.begin(), spec.seasons.end());
    const int max_season = *std::max_element(spec.seasons.begin(), spec.seasons.end());
    const Date clim_start = season_start(min_season) - 10;
    const Date clim_end = Date(max_season, 10, 10);
    const int n_days = static_cast<int>(clim_end - clim_start) + 1;

    std::map<int, double> year_offset;
    for (int y = clim_start.year(); y <= clim_end.year(); ++y) {
        Rng rng(mix_seed(spec.seed, 0x79656172, static_cast<std::uint64_t>(y)));
        year_offset[y] = rng.uniform(-1.25, 1.25);
    }

    // Per climate station, per day: tmax/tmin/prcp (already quantized, so the
    // CSV and the in-memory values used for the truth table agree exactly).
    std::vector<std::vector<std::array<double, 3>>> climate_values(climate_stations.size());
    for (std::size_t ci = 0; ci < climate_stations.size(); ++ci) {
        const auto& cs = climate_stations[ci];
        Rng rng(mix_seed(spec.seed, 0x776561, static_cast<std::uint64_t>(ci)));
        auto& days = climate_values[ci];
        days.resize(static_cast<std::size_t>(n_days));
        for (int d = 0; d < n_days; ++d) {
            const Date date = clim_start + d;
            const double tmean = seasonal_mean_temp(date.day_of_year(), cs.lat, cs.alt,
                                                    year_offset.at(date.year())) +
                                 rng.normal(0.0, 1.0);
            const double dtr = std::max(
                1.5, 7.0 + 2.5 * std::sin(2.0 * std::numbers::pi * (date.day_of_year() - 130) / 365.25) +
                         rng.normal(0.0, 0.8));
            const double u = rng.next_double();
            const double prcp = u < 0.35 ? std::min(60.0, -4.0 * std::log(rng.next_double() + 1e-12))
                                         : 0.0;
            days[static_cast<std::size_t>(d)] = {quantize(tmean + dtr / 2), quantize(tmean - dtr / 2),
                                                 quantize(std::max(0.0, prcp))};
        }
    }

    {
        std::vector<ClimateRecord> records;
        for (std::size_t ci = 0; ci < climate_stations.size(); ++ci)
            for (int d = 0; d < n_days; ++d) {
                ClimateRecord r;
                r.station_id = climate_stations[ci].id;
                r.lat = climate_stations[ci].lat;
                r.lon = climate_stations[ci].lon;
                r.date = clim_start + d;
                r.tmax = climate_values[ci][static_cast<std::size_t>(d)][0];
                r.tmin = climate_values[ci][static_cast<std::size_t>(d)][1];
                r.prcp = climate_values[ci][static_cast<std::size_t>(d)][2];
                records.push_back(std::move(r));
            }
        sink("climate.csv", serialize_climate_csv(records));
    }

    // --------------------------------------------------- per-station truth
    // IDW the climate to each phenology station, accumulate GDD per crop, and
    // read off the threshold crossings.
    struct StationSeries {
        DailySeries tmax, tmin, prcp;
        std::map<Crop, DailySeries> gdd_sum;
    };
    std::vector<StationSeries> station_series(stations.size());
    for (std::size_t si = 0; si < stations.size(); ++si) {
        auto& ss = station_series[si];
        for (DailySeries* s : {&ss.tmax, &ss.tmin, &ss.prcp}) {
            s->station_id = stations[si].id;
            s->start = clim_start;
            s->values.resize(static_cast<std::size_t>(n_days));
        }
        std::vector<IdwSample> samples(climate_stations.size());
        for (int d = 0; d < n_days; ++d) {
            for (int var = 0; var < 3; ++var) {
                for (std::size_t ci = 0; ci < climate_stations.size(); ++ci)
                    samples[ci] = {climate_stations[ci].lat, climate_stations[ci].lon,
                                   climate_values[ci][static_cast<std::size_t>(d)][static_cast<std::size_t>(var)]};
                const double v = idw_interpolate(samples, stations[si].lat, stations[si].lon, 10);
                (var == 0 ? ss.tmax : var == 1 ? ss.tmin : ss.prcp)
                    .values[static_cast<std::size_t>(d)] = v;
            }
        }
        for (Crop crop : spec.crops) {
            const auto acc = accumulate_climate(ss.tmax, ss.tmin, ss.prcp,
                                                CropConfig::for_crop(crop));
            ss.gdd_sum[crop] = acc.gdd_sum;
        }
    }

    // ------------------------------------------------------- observations
    std::vector<StationObservation> observations;
    std::string truth_csv = "station_id,crop,season,bbch,true_date,observed_date\n";
    for (std::size_t si = 0; si < stations.size(); ++si) {
        const auto& st = stations[si];
        for (Crop crop : spec.crops) {
            Rng rng(mix_seed(spec.seed, 0x6f6273, si, static_cast<std::uint64_t>(crop)));
            const auto& gdd_sum = station_series[si].gdd_sum.at(crop);
            for (int season : spec.seasons) {
                const Date lo = season_start(season);
                const Date hi = season_start(season + 1) - 1;
                Date prev = lo - 1;
                for (const auto& [bbch, threshold] : spec.stage_thresholds.at(crop)) {
                    // First crossing within the season.
                    Date crossing;
                    bool found = false;
                    for (Date d = lo; d <= hi; d = d + 1) {
                        const auto v = gdd_sum.at_date(d);
                        if (v && *v >= threshold) {
                            crossing = d;
                            found = true;
                            break;
                        }
                    }
                    if (!found) continue;
                    const double jitter = spec.noise_sd_days > 0
                                              ? rng.normal(0.0, spec.noise_sd_days)
                                              : 0.0;
                    Date observed = crossing + static_cast<std::int64_t>(std::llround(jitter));
                    if (observed <= prev) observed = prev + 1; // keep stage order
                    if (observed > hi) observed = hi;
                    prev = observed;

                    StationObservation o;
                    o.station_id = st.id;
                    o.lat = st.lat;
                    o.lon = st.lon;
                    o.crop = crop;
                    o.bbch = bbch;
                    o.date = observed;
                    o.qb = 1;
                    o.qn = 10;
                    observations.push_back(o);

                    // An occasional rejected-quality duplicate for the filter
                    // to chew on.
                    if (rng.next_double() < 0.05) {
                        StationObservation bad = o;
                        bad.date = observed + static_cast<std::int64_t>(rng.uniform_int(1, 5));
                        bad.qb = 5;
                        bad.qn = 3;
                        observations.push_back(bad);
                    }

                    TruthOnset t;
                    t.station_id = st.id;
                    t.crop = crop;
                    t.season = season;
                    t.bbch = bbch;
                    t.true_date = crossing;
                    t.observed_date = observed;
                    summary.truth.push_back(t);
                    truth_csv += st.id;
                    truth_csv += ',' + crop_name(crop);
                    truth_csv += ',' + std::to_string(season);
                    truth_csv += ',' + std::to_string(bbch);
                    truth_csv += ',' + crossing.iso();
                    truth_csv += ',' + observed.iso();
                    truth_csv += '\n';
                }
            }
        }
    }
    summary.n_observations = static_cast<int>(observations.size());
    sink("phenology.csv", serialize_phenology_csv(observations));
    sink("truth.csv", truth_csv);

    // ------------------------------------------------------------ grids
    std::string stations_csv = "station_id,lat,lon,x,y\n";
    for (const auto& st : stations) {
        stations_csv += st.id;
        stations_csv += ',' + csv::format_double(st.lat);
        stations_csv += ',' + csv::format_double(st.lon);
        stations_csv += ',' + csv::format_double(st.x);
        stations_csv += ',' + csv::format_double(st.y);
        stations_csv += '\n';
    }
    sink("grids/stations.csv", stations_csv);

    // Field rectangles by crop index: quadrants of the station window.
    auto field_rect = [](int crop_pos) {
        struct R {
            int r0, c0;
        };
        const R quads[4] = {{3, 3}, {21, 21}, {3, 21}, {21, 3}};
        return quads[crop_pos % 4];
    };

    auto make_grid = [&](const StationInfo& st) {
        Grid g;
        g.ncols = kGridSize;
        g.nrows = kGridSize;
        g.cellsize = kCellSize;
        g.origin_x = st.x - kGridSize / 2 * kCellSize;
        g.origin_y = st.y - kGridSize / 2 * kCellSize;
        g.nodata = kNodata;
        g.values.assign(static_cast<std::size_t>(kGridSize) * kGridSize, 0.0);
        return g;
    };

    for (std::size_t si = 0; si < stations.size(); ++si) {
        const auto& st = stations[si];

        Grid mask = make_grid(st);
        std::vector<int> crop_of_pixel(mask.values.size(), -1);
        for (std::size_t cpos = 0; cpos < spec.crops.size() && cpos < 4; ++cpos) {
            const auto q = field_rect(static_cast<int>(cpos));
            for (int r = q.r0; r < q.r0 + 16; ++r)
                for (int c = q.c0; c < q.c0 + 16; ++c) {
                    mask.at(r, c) = crop_mask_code(spec.crops[cpos]);
                    crop_of_pixel[static_cast<std::size_t>(r) * kGridSize + c] =
                        static_cast<int>(cpos);
                }
        }
        sink("grids/" + st.id + "/mask.asc", serialize_grid(mask));

        Grid dem = make_grid(st);
        for (int r = 0; r < kGridSize; ++r)
            for (int c = 0; c < kGridSize; ++c) {
                const double dx = mask.cell_x(c) - st.x;
                const double dy = mask.cell_y(r) - st.y;
                dem.at(r, c) = quantize(st.base_alt + st.tilt_x * dx + st.tilt_y * dy);
            }
        sink("grids/" + st.id + "/dem.asc", serialize_grid(dem));

        // Biomass per crop per day, from the station's own GDD sum.
        auto biomass = [&](Crop crop, Date d) {
            const auto v = station_series[si].gdd_sum.at(crop).at_date(d);
            if (!v) return 0.0;
            const auto& stages = spec.stage_thresholds.at(crop);
            const double theta_first = stages.front().second;
            const double theta_last = stages.back().second;
            const double rise = logistic((*v - theta_first) / (0.12 * theta_first));
            const double fall = logistic((*v - theta_last) / (0.08 * theta_last));
            return rise * (1.0 - 0.8 * fall);
        };

        for (int season : spec.seasons) {
            for (std::size_t bi = 0; bi < std::size(kBands); ++bi) {
                const auto& band = kBands[bi];
                const int revisit =
                    band.optical ? spec.optical_revisit_days : spec.radar_revisit_days;
                const double response = band.optical ? spec.optical_response : spec.sar_response;
                for (int doy = spec.band_window_start_doy; doy <= spec.band_window_end_doy;
                     doy += revisit) {
                    const Date date = Date(season, 1, 1) + (doy - 1);
                    Rng rng(mix_seed(spec.seed, 0x62616e64 + bi, si,
                                     static_cast<std::uint64_t>(date.serial())));
                    // Per-crop and soil band levels for this date.
                    double level[5];
                    level[4] = band.base + rng.normal(0.0, band.noise * spec.series_noise * 4.0);
                    for (std::size_t cpos = 0; cpos < spec.crops.size() && cpos < 4; ++cpos) {
                        const double b = biomass(spec.crops[cpos], date);
                        level[cpos] = band.base + band.span * response * b +
                                      rng.normal(0.0, band.noise * spec.series_noise * 4.0);
                    }
                    Grid g = make_grid(st);
                    for (std::size_t px = 0; px < g.values.size(); ++px) {
                        const int cpos = crop_of_pixel[px];
                        const double base = level[cpos < 0 ? 4 : cpos];
                        double v = base + rng.normal(0.0, band.noise * spec.pixel_noise);
                        if (band.optical) v = std::max(v, 0.0);
                        g.values[px] = quantize(v);
                    }
                    sink("grids/" + st.id + "/bands/" + band.name + "_" + date.iso() + ".asc",
                         serialize_grid(g));
                    ++summary.n_grid_files;
                }
            }

            // Cloud probability rasters on the optical dates.
            for (int doy = spec.band_window_start_doy; doy <= spec.band_window_end_doy;
                 doy += spec.optical_revisit_days) {
                const Date date = Date(season, 1, 1) + (doy - 1);
                Rng rng(mix_seed(spec.seed, 0x636c6f7564, si,
                                 static_cast<std::uint64_t>(date.serial())));
                const bool cloudy = rng.next_double() < spec.cloud_fraction;
                const double base = cloudy ? rng.uniform(76.0, 98.0) : rng.uniform(2.0, 55.0);
                Grid g = make_grid(st);
                for (auto& v : g.values)
                    v = quantize(std::clamp(base + rng.normal(0.0, 1.5), 0.0, 100.0));
                sink("grids/" + st.id + "/bands/cloudprob_" + date.iso() + ".asc",
                     serialize_grid(g));
                ++summary.n_grid_files;
            }
        }
    }

    return summary;
}

} // namespace pheno
