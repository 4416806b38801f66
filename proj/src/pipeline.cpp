#include "pheno/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "pheno/csv.hpp"
#include "pheno/dataset.hpp"
#include "pheno/errors.hpp"
#include "pheno/evaluate.hpp"
#include "pheno/features.hpp"
#include "pheno/ingest.hpp"
#include "pheno/io_util.hpp"
#include "pheno/preprocess.hpp"
#include "pheno/synth.hpp"

namespace fs = std::filesystem;

namespace pheno {

namespace {

constexpr const char* kBandNames[12] = {"vh",    "vv",    "b",   "g",   "r",   "nir",
                                        "swir1", "swir2", "re1", "re2", "re3", "re4"};
constexpr int kOpticalFirst = 2; // bands before this index are radar

void require_file(const fs::path& p) {
    if (!fs::exists(p)) throw ValidationError("missing input: " + p.string());
}

std::string fmt(double v) { return csv::format_double(v); }

struct StationMeta {
    std::string id;
    double lat = 0, lon = 0, x = 0, y = 0;
    double altitude = 0, slope = 0, aspect = 0;
};

std::vector<StationMeta> read_stations_csv(const fs::path& path, bool with_terrain) {
    require_file(path);
    const auto lines = csv::split_lines(read_text_file(path));
    std::vector<StationMeta> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = csv::split_line(lines[i]);
        const int line_no = static_cast<int>(i) + 1;
        StationMeta m;
        m.id = f[0];
        m.lat = csv::parse_double(f[1], line_no, "lat");
        m.lon = csv::parse_double(f[2], line_no, "lon");
        m.x = csv::parse_double(f[3], line_no, "x");
        m.y = csv::parse_double(f[4], line_no, "y");
        if (with_terrain) {
            m.altitude = csv::parse_double(f[5], line_no, "altitude");
            m.slope = csv::parse_double(f[6], line_no, "slope");
            m.aspect = csv::parse_double(f[7], line_no, "aspect");
        }
        out.push_back(std::move(m));
    }
    return out;
}

// Optional-value daily table keyed by date.
using DailyMap = std::map<Date, double>;

DailySeries to_daily_series(const DailyMap& m, const std::string& name,
                            const std::string& station) {
    DailySeries s;
    s.name = name;
    s.station_id = station;
    if (m.empty()) return s;
    s.start = m.begin()->first;
    const std::int64_t span = m.rbegin()->first - m.begin()->first;
    s.values.resize(static_cast<std::size_t>(span) + 1);
    for (const auto& [d, v] : m) s.values[static_cast<std::size_t>(d - s.start)] = v;
    return s;
}

// Splits an irregular series at long gaps, smooths and resamples each
// segment, and merges the daily pieces. Segments with fewer than 3 points
// are dropped.
DailyMap smooth_and_resample(const IrregularSeries& raw, double loess_fraction,
                             std::int64_t max_gap_days = 45) {
    DailyMap out;
    std::size_t begin = 0;
    while (begin < raw.size()) {
        std::size_t end = begin + 1;
        while (end < raw.size() && raw.days[end] - raw.days[end - 1] <= max_gap_days) ++end;
        if (end - begin >= 3) {
            IrregularSeries seg;
            seg.days.assign(raw.days.begin() + static_cast<std::ptrdiff_t>(begin),
                            raw.days.begin() + static_cast<std::ptrdiff_t>(end));
            seg.values.assign(raw.values.begin() + static_cast<std::ptrdiff_t>(begin),
                              raw.values.begin() + static_cast<std::ptrdiff_t>(end));
            const auto smooth = loess_smooth(seg, loess_fraction);
            const auto daily = resample_daily(smooth);
            for (std::size_t i = 0; i < daily.size(); ++i)
                if (daily.values[i]) out[daily.date_at(i)] = *daily.values[i];
        }
        begin = end;
    }
    return out;
}

fs::path series_path(const PipelineConfig& cfg, const std::string& station, Crop crop) {
    return cfg.out_dir / "preprocess" / "series" / (station + "_" + crop_name(crop) + ".csv");
}

fs::path climate_series_path(const PipelineConfig& cfg, const std::string& station) {
    return cfg.out_dir / "preprocess" / "climate" / (station + ".csv");
}

} // namespace

// ================================================================= synth

void run_synth(const PipelineConfig& cfg) {
    int n_files = 0;
    const auto summary = synth_generate(cfg.synth, [&](const std::string& rel,
                                                       const std::string& content) {
        fs::path target;
        if (rel == "phenology.csv")
            target = cfg.phenology_csv;
        else if (rel == "climate.csv")
            target = cfg.climate_csv;
        else if (rel == "truth.csv")
            target = cfg.out_dir / "truth.csv";
        else if (rel.rfind("grids/", 0) == 0)
            target = cfg.grids_dir / rel.substr(6);
        else
            throw ValidationError("synth: unexpected output " + rel);
        atomic_write_file(target, content);
        ++n_files;
    });
    std::printf("synth: %d observations, %d grid files, %d files total\n",
                summary.n_observations, summary.n_grid_files, n_files);
}

// ============================================================ preprocess

void run_preprocess(const PipelineConfig& cfg) {
    require_file(cfg.climate_csv);
    const auto climate = parse_climate_csv(read_text_file(cfg.climate_csv));
    const auto stations = read_stations_csv(cfg.grids_dir / "stations.csv", false);

    // Climate grouped by station for the IDW lookups.
    struct ClimateCol {
        double lat = 0, lon = 0;
        std::map<Date, std::array<std::optional<double>, 3>> days;
    };
    std::map<std::string, ClimateCol> by_cstation;
    Date clim_lo, clim_hi;
    bool have_clim = false;
    for (const auto& r : climate) {
        auto& col = by_cstation[r.station_id];
        col.lat = r.lat;
        col.lon = r.lon;
        col.days[r.date] = {r.tmax, r.tmin, r.prcp};
        if (!have_clim || r.date < clim_lo) clim_lo = r.date;
        if (!have_clim || r.date > clim_hi) clim_hi = r.date;
        have_clim = true;
    }
    if (!have_clim) throw ValidationError("preprocess: climate file has no records");

    std::string stations_out = "station_id,lat,lon,x,y,altitude,slope,aspect\n";
    std::string fields_out = "station_id,crop,n_fields,total_pixels,total_area_ha\n";

    for (const auto& st : stations) {
        const fs::path station_dir = cfg.grids_dir / st.id;
        require_file(station_dir / "mask.asc");
        require_file(station_dir / "dem.asc");
        const Grid mask = parse_grid(read_text_file(station_dir / "mask.asc"));
        const Grid dem = parse_grid(read_text_file(station_dir / "dem.asc"));

        const auto terrain = terrain_derivatives(dem);
        const int col = std::clamp(
            static_cast<int>(std::floor((st.x - dem.origin_x) / dem.cellsize)), 0, dem.ncols - 1);
        const int row =
            std::clamp(static_cast<int>(std::floor(
                           (dem.origin_y + dem.nrows * dem.cellsize - st.y) / dem.cellsize)),
                       0, dem.nrows - 1);
        stations_out += st.id + ',' + fmt(st.lat) + ',' + fmt(st.lon) + ',' + fmt(st.x) + ',' +
                        fmt(st.y) + ',' + fmt(dem.at(row, col)) + ',' +
                        fmt(terrain.slope.at(row, col)) + ',' + fmt(terrain.aspect.at(row, col)) +
                        '\n';

        // Band rasters, parsed once and shared across crops.
        std::map<std::string, std::map<Date, Grid>> rasters;
        const fs::path bands_dir = station_dir / "bands";
        if (fs::exists(bands_dir)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(bands_dir))
                if (e.path().extension() == ".asc") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                const std::string stem = f.stem().string(); // <band>_<date>
                const auto us = stem.rfind('_');
                if (us == std::string::npos) continue;
                rasters[stem.substr(0, us)].emplace(Date::parse(stem.substr(us + 1)),
                                                    parse_grid(read_text_file(f)));
            }
        }

        for (Crop crop : cfg.crops) {
            FieldSelection sel = select_station_fields(mask, st.x, st.y, crop, 5000.0,
                                                       cfg.buffer_inner_m, cfg.min_field_ha);
            sel.station_id = st.id;
            if (sel.pixel_sets.empty()) continue;
            double total_area = 0;
            for (double a : sel.areas_ha) total_area += a;
            fields_out += st.id + ',' + crop_name(crop) + ',' +
                          std::to_string(sel.pixel_sets.size()) + ',' +
                          std::to_string(sel.total_pixels()) + ',' + fmt(total_area) + '\n';

            // Aggregate, cloud-mask the optical bands, smooth, resample.
            std::array<DailyMap, 12> band_daily;
            IrregularSeries cloud;
            if (rasters.contains("cloudprob"))
                cloud = median_aggregate(sel, mask, rasters.at("cloudprob"));
            for (int b = 0; b < 12; ++b) {
                const auto it = rasters.find(kBandNames[b]);
                if (it == rasters.end()) continue;
                IrregularSeries series = median_aggregate(sel, mask, it->second);
                if (b >= kOpticalFirst) {
                    if (cloud.empty())
                        throw ValidationError("preprocess: optical band without cloudprob at " +
                                              st.id);
                    series = cloud_mask_series(series, cloud, cfg.cloud_threshold);
                }
                if (series.size() < 3) continue;
                band_daily[static_cast<std::size_t>(b)] =
                    smooth_and_resample(series, cfg.loess_fraction);
            }

            std::set<Date> dates;
            for (const auto& m : band_daily)
                for (const auto& [d, v] : m) dates.insert(d);
            if (dates.empty()) continue;
            std::string out = "date";
            for (const auto* name : kBandNames) out += std::string(",") + name;
            out += '\n';
            for (const Date d : dates) {
                out += d.iso();
                for (const auto& m : band_daily) {
                    out += ',';
                    const auto it = m.find(d);
                    if (it != m.end()) out += fmt(it->second);
                }
                out += '\n';
            }
            atomic_write_file(series_path(cfg, st.id, crop), out);
        }

        // IDW climate at the station, one value per day and variable.
        {
            std::string out = "date,tmax,tmin,prcp\n";
            std::vector<IdwSample> samples;
            for (Date d = clim_lo; d <= clim_hi; d = d + 1) {
                std::array<std::optional<double>, 3> vals;
                for (int var = 0; var < 3; ++var) {
                    samples.clear();
                    for (const auto& [cid, ccol] : by_cstation) {
                        const auto it = ccol.days.find(d);
                        if (it == ccol.days.end()) continue;
                        const auto& v = it->second[static_cast<std::size_t>(var)];
                        if (v) samples.push_back({ccol.lat, ccol.lon, *v});
                    }
                    if (!samples.empty())
                        vals[static_cast<std::size_t>(var)] =
                            idw_interpolate(samples, st.lat, st.lon, cfg.idw_k);
                }
                out += d.iso();
                for (const auto& v : vals) {
                    out += ',';
                    if (v) out += fmt(*v);
                }
                out += '\n';
            }
            atomic_write_file(climate_series_path(cfg, st.id), out);
        }
    }

    atomic_write_file(cfg.out_dir / "preprocess" / "stations.csv", stations_out);
    atomic_write_file(cfg.out_dir / "preprocess" / "fields.csv", fields_out);
    std::printf("preprocess: %zu stations\n", stations.size());
}

// ============================================================== features

namespace {

struct StationDaily {
    std::array<DailyMap, 12> bands;
    DailyMap tmax, tmin, prcp;
};

StationDaily load_station_daily(const PipelineConfig& cfg, const std::string& station,
                                Crop crop) {
    StationDaily out;
    {
        const fs::path p = series_path(cfg, station, crop);
        require_file(p);
        const auto lines = csv::split_lines(read_text_file(p));
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            const auto f = csv::split_line(lines[i]);
            const Date d = Date::parse(f[0]);
            for (int b = 0; b < 12; ++b) {
                const auto& field = f[static_cast<std::size_t>(b) + 1];
                if (!field.empty())
                    out.bands[static_cast<std::size_t>(b)][d] =
                        csv::parse_double(field, static_cast<int>(i) + 1, kBandNames[b]);
            }
        }
    }
    {
        const fs::path p = climate_series_path(cfg, station);
        require_file(p);
        const auto lines = csv::split_lines(read_text_file(p));
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            const auto f = csv::split_line(lines[i]);
            const Date d = Date::parse(f[0]);
            const int line_no = static_cast<int>(i) + 1;
            if (!f[1].empty()) out.tmax[d] = csv::parse_double(f[1], line_no, "tmax");
            if (!f[2].empty()) out.tmin[d] = csv::parse_double(f[2], line_no, "tmin");
            if (!f[3].empty()) out.prcp[d] = csv::parse_double(f[3], line_no, "prcp");
        }
    }
    return out;
}

} // namespace

void run_features(const PipelineConfig& cfg) {
    require_file(cfg.phenology_csv);
    const auto cleaned = clean_observations(parse_phenology_csv(read_text_file(cfg.phenology_csv)));
    const auto stations = read_stations_csv(cfg.out_dir / "preprocess" / "stations.csv", true);

    // (station, crop) pairs that produced series.
    const fs::path fields_path = cfg.out_dir / "preprocess" / "fields.csv";
    require_file(fields_path);
    std::vector<std::pair<std::string, Crop>> pairs;
    {
        const auto lines = csv::split_lines(read_text_file(fields_path));
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (lines[i].empty()) continue;
            const auto f = csv::split_line(lines[i]);
            const auto crop = crop_from_name(f[1]);
            if (!crop) throw ValidationError("fields.csv: unknown crop " + f[1]);
            pairs.emplace_back(f[0], *crop);
        }
    }

    std::string log = "crop,station_id,skipped_observations,samples\n";
    for (Crop crop : cfg.crops) {
        std::vector<SeasonFeatures> features;
        bool any = false;
        for (const auto& [station, pcrop] : pairs) {
            if (pcrop != crop) continue;
            any = true;
            const auto meta_it = std::find_if(stations.begin(), stations.end(),
                                              [&](const StationMeta& m) { return m.id == station; });
            if (meta_it == stations.end())
                throw ValidationError("features: station " + station + " missing from stations.csv");
            const StationMeta& meta = *meta_it;
            const StationDaily daily = load_station_daily(cfg, station, crop);

            const auto acc = accumulate_climate(
                to_daily_series(daily.tmax, "tmax", station),
                to_daily_series(daily.tmin, "tmin", station),
                to_daily_series(daily.prcp, "prcp", station), CropConfig::for_crop(crop));

            // Days with the full feature vector defined.
            std::map<Date, FeatureVector> covered;
            if (!daily.bands[0].empty()) {
                Date lo = daily.bands[0].begin()->first;
                Date hi = daily.bands[0].rbegin()->first;
                for (const auto& m : daily.bands) {
                    if (m.empty()) { lo = hi + 1; break; }
                    lo = std::max(lo, m.begin()->first);
                    hi = std::min(hi, m.rbegin()->first);
                }
                for (Date d = lo; d <= hi; d = d + 1) {
                    FeatureVector v{};
                    bool ok = true;
                    double band_val[12];
                    for (int b = 0; b < 12 && ok; ++b) {
                        const auto it = daily.bands[static_cast<std::size_t>(b)].find(d);
                        if (it == daily.bands[static_cast<std::size_t>(b)].end())
                            ok = false;
                        else
                            band_val[b] = it->second;
                    }
                    if (!ok) continue;
                    const auto tx = daily.tmax.find(d);
                    const auto tn = daily.tmin.find(d);
                    const auto pr = daily.prcp.find(d);
                    if (tx == daily.tmax.end() || tn == daily.tmin.end() || pr == daily.prcp.end())
                        continue;
                    const auto gdd = acc.gdd.at_date(d);
                    const auto gdd_sum = acc.gdd_sum.at_date(d);
                    const auto dtr = acc.dtr.at_date(d);
                    const auto prcp_sum = acc.prcp_sum.at_date(d);
                    if (!gdd || !gdd_sum || !dtr || !prcp_sum) continue;

                    v[F_VH] = band_val[0];
                    v[F_VV] = band_val[1];
                    v[F_B] = band_val[2];
                    v[F_G] = band_val[3];
                    v[F_R] = band_val[4];
                    v[F_NIR] = band_val[5];
                    v[F_SWIR1] = band_val[6];
                    v[F_SWIR2] = band_val[7];
                    v[F_RE1] = band_val[8];
                    v[F_RE2] = band_val[9];
                    v[F_RE3] = band_val[10];
                    v[F_RE4] = band_val[11];
                    v[F_TMIN] = tn->second;
                    v[F_TMAX] = tx->second;
                    v[F_PRCP] = pr->second;

                    RadarIndices ri;
                    try {
                        ri = radar_indices({band_val[1], band_val[0]});
                    } catch (const ValidationError&) {
                        continue;
                    }
                    v[F_RVI] = ri.rvi;
                    v[F_PR] = ri.pr;
                    v[F_CR] = ri.cr;

                    OpticalSample os;
                    os.b = band_val[2];
                    os.g = band_val[3];
                    os.r = band_val[4];
                    os.nir = band_val[5];
                    os.swir1 = band_val[6];
                    os.swir2 = band_val[7];
                    os.re1 = band_val[8];
                    os.re2 = band_val[9];
                    os.re3 = band_val[10];
                    os.re4 = band_val[11];
                    const auto oi = optical_indices(os);
                    if (!oi.ndvi || !oi.evi2 || !oi.gndvi || !oi.gcvi || !oi.savi || !oi.ndwi ||
                        !oi.psri || !oi.mcari || !oi.ndyi || !oi.arvi || !oi.wdrvi || !oi.vari)
                        continue;
                    v[F_NDVI] = *oi.ndvi;
                    v[F_EVI2] = *oi.evi2;
                    v[F_GNDVI] = *oi.gndvi;
                    v[F_GCVI] = *oi.gcvi;
                    v[F_SAVI] = *oi.savi;
                    v[F_NDWI] = *oi.ndwi;
                    v[F_PSRI] = *oi.psri;
                    v[F_MCARI] = *oi.mcari;
                    v[F_NDYI] = *oi.ndyi;
                    v[F_ARVI] = *oi.arvi;
                    v[F_WDRVI] = *oi.wdrvi;
                    v[F_VARI] = *oi.vari;

                    v[F_GDD] = *gdd;
                    v[F_GDD_SUM] = *gdd_sum;
                    v[F_DTR] = *dtr;
                    v[F_PRCP_SUM] = *prcp_sum;

                    const auto tf = time_features(d);
                    v[F_SEASON] = tf.season;
                    v[F_MONTH] = tf.month;
                    v[F_DAY_OF_WEEK] = tf.dow;
                    v[F_DAY_OF_MONTH] = tf.dom;
                    v[F_LATITUDE] = meta.lat;
                    v[F_LONGITUDE] = meta.lon;
                    v[F_ALTITUDE] = meta.altitude;
                    v[F_SLOPE] = meta.slope;
                    v[F_ASPECT] = meta.aspect;
                    covered[d] = v;
                }
            }

            // Contiguous runs, split at season boundaries.
            SeasonFeatures current;
            auto flush = [&] {
                if (!current.days.empty()) features.push_back(std::move(current));
                current = SeasonFeatures{};
            };
            for (const auto& [d, v] : covered) {
                const int season = d.season_year();
                const bool contiguous = !current.days.empty() &&
                                        d - current.start ==
                                            static_cast<std::int64_t>(current.days.size()) &&
                                        season == current.season;
                if (!contiguous) {
                    flush();
                    current.station_id = station;
                    current.season = season;
                    current.start = d;
                }
                current.days.push_back(v);
            }
            flush();
        }
        if (!any) continue;

        const auto result = assemble_labeled_dataset(crop, cleaned, features);
        atomic_write_file(cfg.out_dir / "features" / ("dataset_" + crop_name(crop) + ".csv"),
                          serialize_dataset_csv(result.dataset));
        log += crop_name(crop) + ",all," + std::to_string(result.skipped_observations) + ',' +
               std::to_string(result.dataset.samples.size()) + '\n';
        std::printf("features: %s -> %zu samples (%d observations skipped)\n",
                    crop_name(crop).c_str(), result.dataset.samples.size(),
                    result.skipped_observations);
    }
    atomic_write_file(cfg.out_dir / "features" / "assembly_log.csv", log);
}

// ================================================================= train

namespace {

std::string onsets_csv_header() {
    return "station_id,season,bbch,observed_date,predicted_date,observed_doy,predicted_doy,"
           "residual,detected,outer_fold\n";
}

std::string onset_row(const OnsetPrediction& p) {
    return p.station_id + ',' + std::to_string(p.season) + ',' + std::to_string(p.bbch) + ',' +
           p.observed_date.iso() + ',' + p.predicted_date.iso() + ',' +
           std::to_string(p.observed_doy) + ',' + std::to_string(p.predicted_doy) + ',' +
           fmt(p.residual) + ',' + (p.detected ? "1" : "0") + ',' + std::to_string(p.outer_fold) +
           '\n';
}

std::vector<OnsetPrediction> parse_onsets_csv(const std::string& text) {
    const auto lines = csv::split_lines(text);
    std::vector<OnsetPrediction> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = csv::split_line(lines[i]);
        const int line_no = static_cast<int>(i) + 1;
        OnsetPrediction p;
        p.station_id = f[0];
        p.season = csv::parse_int(f[1], line_no, "season");
        p.bbch = csv::parse_int(f[2], line_no, "bbch");
        p.observed_date = Date::parse(f[3]);
        p.predicted_date = Date::parse(f[4]);
        p.observed_doy = csv::parse_int(f[5], line_no, "observed_doy");
        p.predicted_doy = csv::parse_int(f[6], line_no, "predicted_doy");
        p.residual = csv::parse_double(f[7], line_no, "residual");
        p.detected = f[8] == "1";
        p.outer_fold = csv::parse_int(f[9], line_no, "outer_fold");
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<Crop> crops_with_file(const PipelineConfig& cfg, const std::string& dir,
                                  const std::string& prefix) {
    std::vector<Crop> out;
    for (Crop c : cfg.crops)
        if (fs::exists(cfg.out_dir / dir / (prefix + crop_name(c) + ".csv"))) out.push_back(c);
    return out;
}

} // namespace

void run_train(const PipelineConfig& cfg) {
    const auto crops = crops_with_file(cfg, "features", "dataset_");
    if (crops.empty())
        throw ValidationError("train: no dataset files under " +
                              (cfg.out_dir / "features").string() + " (run features first)");

    for (Crop crop : crops) {
        const fs::path ds_path = cfg.out_dir / "features" / ("dataset_" + crop_name(crop) + ".csv");
        const auto dataset = parse_dataset_csv(read_text_file(ds_path));

        NestedCvConfig ncfg;
        ncfg.outer_folds = cfg.cv_outer;
        ncfg.inner_folds = cfg.cv_inner;
        ncfg.n_trials = cfg.n_trials;
        ncfg.seed = cfg.seed;
        ncfg.feature_search = cfg.feature_search();
        ncfg.fixed_mask = cfg.preset_mask();
        ncfg.threads = cfg.threads;

        const auto result = nested_cv(dataset, ncfg);

        const std::string cname = crop_name(crop);
        std::string folds_csv = "unit,station_id,season,outer_fold\n";
        for (int f = 0; f < ncfg.outer_folds; ++f)
            for (int u : result.split.outer[static_cast<std::size_t>(f)])
                folds_csv += std::to_string(u) + ',' +
                             result.units[static_cast<std::size_t>(u)].first + ',' +
                             std::to_string(result.units[static_cast<std::size_t>(u)].second) +
                             ',' + std::to_string(f) + '\n';
        atomic_write_file(cfg.out_dir / "train" / ("folds_" + cname + ".csv"), folds_csv);

        std::string sel_csv = "outer_fold,inner_fold,loss,n_features,n_estimators,num_leaves,"
                              "min_data_in_bin,min_child_samples,early_stopping_round,features\n";
        std::string onsets_csv = onsets_csv_header();
        for (int f = 0; f < ncfg.outer_folds; ++f) {
            const auto& fold = result.folds[static_cast<std::size_t>(f)];
            for (int j = 0; j < ncfg.inner_folds; ++j) {
                const auto& m = fold.members[static_cast<std::size_t>(j)];
                std::string names;
                for (const auto& n : m.features.names()) {
                    if (!names.empty()) names += ';';
                    names += n;
                }
                sel_csv += std::to_string(f) + ',' + std::to_string(j) + ',' + fmt(m.loss) + ',' +
                           std::to_string(m.features.count()) + ',' +
                           std::to_string(m.hp.n_estimators) + ',' +
                           std::to_string(m.hp.num_leaves) + ',' +
                           std::to_string(m.hp.min_data_in_bin) + ',' +
                           std::to_string(m.hp.min_child_samples) + ',' +
                           std::to_string(m.hp.early_stopping_round) + ',' + names + '\n';
                atomic_write_file(cfg.out_dir / "train" / "models" / cname /
                                      ("outer" + std::to_string(f) + "_member" + std::to_string(j) +
                                       ".json"),
                                  m.model.to_json());
                atomic_write_file(cfg.out_dir / "train" / "studies" / cname /
                                      ("outer" + std::to_string(f) + "_inner" + std::to_string(j) +
                                       ".jsonl"),
                                  m.study.to_jsonl());
            }
            for (const auto& p : fold.predictions) onsets_csv += onset_row(p);
        }
        atomic_write_file(cfg.out_dir / "train" / ("selection_" + cname + ".csv"), sel_csv);
        atomic_write_file(cfg.out_dir / "train" / ("onsets_" + cname + ".csv"), onsets_csv);
        std::printf("train: %s -> %d outer folds x %d members\n", cname.c_str(), ncfg.outer_folds,
                    ncfg.inner_folds);
    }
}

// =============================================================== evaluate

namespace {

double clamp_r2(double r2) { return std::isnan(r2) ? r2 : std::max(r2, -10.0); }

std::string metrics_rows(const std::string& crop, const std::string& year,
                         const std::vector<OnsetPrediction>& subset, double tol) {
    std::string out;
    for (const auto& m : per_stage_metrics(subset, tol)) {
        const std::string stage = m.bbch == kBackgroundLabel ? "all" : std::to_string(m.bbch);
        out += crop + ',' + stage + ',' + year + ',' + std::to_string(m.n) + ',' + fmt(m.mae) +
               ',' + fmt(clamp_r2(m.r2)) + ',' + fmt(m.r2) + ',' + fmt(m.objective) + ',' +
               fmt(m.within_tol) + '\n';
    }
    return out;
}

} // namespace

void run_evaluate(const PipelineConfig& cfg) {
    const auto crops = crops_with_file(cfg, "train", "onsets_");
    if (crops.empty())
        throw ValidationError("evaluate: no onset files under " +
                              (cfg.out_dir / "train").string() + " (run train first)");

    const std::string header = "crop,bbch,year,n,mae,r2,r2_raw,objective,within_share\n";
    std::string all_metrics = header;
    for (Crop crop : crops) {
        const std::string cname = crop_name(crop);
        const auto onsets =
            parse_onsets_csv(read_text_file(cfg.out_dir / "train" / ("onsets_" + cname + ".csv")));

        std::string metrics = header;
        metrics += metrics_rows(cname, "all", onsets, cfg.tolerance_days);
        std::set<int> seasons;
        for (const auto& o : onsets) seasons.insert(o.season);
        for (int season : seasons) {
            std::vector<OnsetPrediction> subset;
            for (const auto& o : onsets)
                if (o.season == season) subset.push_back(o);
            metrics += metrics_rows(cname, std::to_string(season), subset, cfg.tolerance_days);
        }
        atomic_write_file(cfg.out_dir / "evaluate" / ("metrics_" + cname + ".csv"), metrics);
        all_metrics += metrics.substr(header.size());

        // Residual tables (stage / year / station) and the per-year MAE deltas.
        for (const auto& [tag, group] :
             {std::pair{"stage", ResidualGroupBy::Stage}, {"year", ResidualGroupBy::Year},
              {"station", ResidualGroupBy::Station}}) {
            const auto rep = residual_report(onsets, {-15, -4, 4, 15}, group);
            std::string out = "group,n";
            for (const auto& label : rep.bin_labels) out += ",count " + label;
            for (const auto& label : rep.bin_labels) out += ",pct " + label;
            out += '\n';
            for (const auto& row : rep.rows) {
                out += row.group + ',' + std::to_string(row.n);
                for (int c : row.counts) out += ',' + std::to_string(c);
                for (double p : row.percents) out += ',' + fmt(p);
                out += '\n';
            }
            atomic_write_file(cfg.out_dir / "evaluate" /
                                  ("residuals_by_" + std::string(tag) + "_" + cname + ".csv"),
                              out);
            if (group == ResidualGroupBy::Year) {
                std::string ym = "year,n,mae,delta_vs_all_years\n";
                for (const auto& d : rep.per_year)
                    ym += std::to_string(d.year) + ',' + std::to_string(d.n) + ',' + fmt(d.mae) +
                          ',' + fmt(d.delta) + '\n';
                atomic_write_file(cfg.out_dir / "evaluate" / ("per_year_mae_" + cname + ".csv"),
                                  ym);
            }
        }

        // Scatter data (observed vs predicted day of year, per stage).
        std::string scatter = "station_id,season,bbch,observed_doy,predicted_doy,detected\n";
        for (const auto& o : onsets)
            scatter += o.station_id + ',' + std::to_string(o.season) + ',' +
                       std::to_string(o.bbch) + ',' + std::to_string(o.observed_doy) + ',' +
                       std::to_string(o.predicted_doy) + ',' + (o.detected ? "1" : "0") + '\n';
        atomic_write_file(cfg.out_dir / "evaluate" / ("scatter_" + cname + ".csv"), scatter);

        // Feature importance from the winning fold selections, one table per
        // outer fold plus the across-folds aggregate.
        const auto sel_lines = csv::split_lines(
            read_text_file(cfg.out_dir / "train" / ("selection_" + cname + ".csv")));
        std::map<int, std::vector<FoldSelectionResult>> by_outer;
        for (std::size_t i = 1; i < sel_lines.size(); ++i) {
            if (sel_lines[i].empty()) continue;
            const auto f = csv::split_line(sel_lines[i]);
            FoldSelectionResult r;
            const int outer = csv::parse_int(f[0], static_cast<int>(i) + 1, "outer_fold");
            r.loss = csv::parse_double(f[2], static_cast<int>(i) + 1, "loss");
            std::vector<std::string> names;
            std::string cur;
            for (char ch : f[9]) {
                if (ch == ';') {
                    names.push_back(cur);
                    cur.clear();
                } else {
                    cur += ch;
                }
            }
            if (!cur.empty()) names.push_back(cur);
            r.features = FeatureSet::from_names(names);
            by_outer[outer].push_back(std::move(r));
        }
        std::string imp = "outer_fold,rank,feature,n_folds,mean_loss,importance\n";
        std::vector<FeatureImportanceTable> tables;
        for (const auto& [outer, results] : by_outer) {
            const auto table = feature_importance(crop, results);
            for (std::size_t rank = 0; rank < table.ranked.size(); ++rank) {
                const auto& fi = table.ranked[rank];
                imp += std::to_string(outer) + ',' + std::to_string(rank + 1) + ',' +
                       feature_name(fi.feature) + ',' + std::to_string(fi.n_folds) + ',' +
                       fmt(fi.mean_loss) + ',' + fmt(fi.importance) + '\n';
            }
            tables.push_back(table);
        }
        // Aggregate: mean importance across the outer folds (missing = 0).
        std::array<double, kNumFeatures> mean_imp{};
        std::array<int, kNumFeatures> folds_total{};
        for (const auto& t : tables)
            for (const auto& fi : t.ranked) {
                mean_imp[static_cast<std::size_t>(fi.feature)] += fi.importance;
                folds_total[static_cast<std::size_t>(fi.feature)] += fi.n_folds;
            }
        std::vector<int> order;
        for (int f = 0; f < kNumFeatures; ++f)
            if (folds_total[static_cast<std::size_t>(f)] > 0) order.push_back(f);
        for (int f : order) mean_imp[static_cast<std::size_t>(f)] /= static_cast<double>(tables.size());
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (mean_imp[static_cast<std::size_t>(a)] != mean_imp[static_cast<std::size_t>(b)])
                return mean_imp[static_cast<std::size_t>(a)] > mean_imp[static_cast<std::size_t>(b)];
            return feature_name(a) < feature_name(b);
        });
        for (std::size_t rank = 0; rank < order.size(); ++rank)
            imp += "all," + std::to_string(rank + 1) + ',' + feature_name(order[rank]) + ',' +
                   std::to_string(folds_total[static_cast<std::size_t>(order[rank])]) + ",," +
                   fmt(mean_imp[static_cast<std::size_t>(order[rank])]) + '\n';
        atomic_write_file(cfg.out_dir / "evaluate" / ("importance_" + cname + ".csv"), imp);
        std::printf("evaluate: %s -> %zu onset predictions\n", cname.c_str(), onsets.size());
    }
    atomic_write_file(cfg.out_dir / "evaluate" / "metrics_all_crops.csv", all_metrics);
}

// ================================================================ report

namespace {

std::string scatter_svg(const std::vector<OnsetPrediction>& onsets, const std::string& title) {
    const int size = 460, margin = 45;
    int lo = 400, hi = 0;
    for (const auto& o : onsets) {
        lo = std::min({lo, o.observed_doy, o.predicted_doy});
        hi = std::max({hi, o.observed_doy, o.predicted_doy});
    }
    if (lo > hi) { lo = 0; hi = 1; }
    lo = std::max(0, lo - 5);
    hi += 5;
    const double scale = static_cast<double>(size - 2 * margin) / (hi - lo);
    auto X = [&](double v) { return margin + (v - lo) * scale; };
    auto Y = [&](double v) { return size - margin - (v - lo) * scale; };

    const char* palette[] = {"#1b6ca8", "#d1495b", "#46a758", "#8a4fbe",
                             "#e0a100", "#28777a", "#7a4a22", "#555555"};
    std::map<int, int> color_of;
    for (const auto& o : onsets)
        if (!color_of.contains(o.bbch)) {
            const int idx = static_cast<int>(color_of.size()) % 8;
            color_of[o.bbch] = idx;
        }

    char buf[256];
    std::string svg;
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                  "viewBox=\"0 0 %d %d\">\n",
                  size, size, size, size);
    svg += buf;
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // 1:1 line and the +/-15 day guides.
    auto line = [&](double off, const char* dash) {
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\" "
                      "stroke-width=\"1\"%s/>\n",
                      X(lo), Y(lo + off), X(hi - std::max(0.0, off)), Y(hi + std::min(0.0, off)),
                      dash);
        svg += buf;
    };
    line(0, "");
    line(15, " stroke-dasharray=\"5,4\"");
    line(-15, " stroke-dasharray=\"5,4\"");
    for (const auto& o : onsets) {
        std::snprintf(buf, sizeof buf,
                      "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"2.4\" fill=\"%s\" fill-opacity=\"%s\"/>\n",
                      X(o.observed_doy), Y(o.predicted_doy), palette[color_of[o.bbch]],
                      o.detected ? "0.75" : "0.25");
        svg += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%d\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">%s</text>\n",
                  margin, title.c_str());
    svg += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\">observed "
                  "day of year</text>\n",
                  size / 2 - 50, size - 10);
    svg += buf;
    int ly = 40;
    for (const auto& [bbch, color] : color_of) {
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%d\" y=\"%d\" width=\"10\" height=\"10\" fill=\"%s\"/>"
                      "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\">BBCH "
                      "%d</text>\n",
                      size - 90, ly, palette[color], size - 75, ly + 9, bbch);
        svg += buf;
        ly += 16;
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace

void run_report(const PipelineConfig& cfg) {
    const auto crops = crops_with_file(cfg, "train", "onsets_");
    if (crops.empty())
        throw ValidationError("report: no onset files under " + (cfg.out_dir / "train").string() +
                              " (run train first)");

    nlohmann::ordered_json summary;
    summary["config"] = nlohmann::ordered_json::parse(cfg.to_json());
    nlohmann::ordered_json crops_json = nlohmann::ordered_json::object();

    double mae_sum = 0, r2_sum = 0;
    int stage_count = 0;
    for (Crop crop : crops) {
        const std::string cname = crop_name(crop);
        const auto onsets =
            parse_onsets_csv(read_text_file(cfg.out_dir / "train" / ("onsets_" + cname + ".csv")));

        nlohmann::ordered_json cj;
        nlohmann::ordered_json stages = nlohmann::ordered_json::array();
        for (const auto& m : per_stage_metrics(onsets, cfg.tolerance_days)) {
            nlohmann::ordered_json sj;
            sj["bbch"] = m.bbch == kBackgroundLabel ? "all" : std::to_string(m.bbch);
            sj["n"] = m.n;
            sj["mae"] = m.mae;
            sj["r2"] = std::isnan(m.r2) ? nlohmann::ordered_json()
                                        : nlohmann::ordered_json(clamp_r2(m.r2));
            sj["r2_raw"] =
                std::isnan(m.r2) ? nlohmann::ordered_json() : nlohmann::ordered_json(m.r2);
            sj["objective"] = std::isnan(m.objective) ? nlohmann::ordered_json()
                                                      : nlohmann::ordered_json(m.objective);
            sj["within_share"] = m.within_tol;
            stages.push_back(std::move(sj));
            if (m.bbch != kBackgroundLabel && !std::isnan(m.r2)) {
                mae_sum += m.mae;
                r2_sum += m.r2;
                ++stage_count;
            }
        }
        cj["stages"] = std::move(stages);

        const auto rep = residual_report(onsets);
        nlohmann::ordered_json bins = nlohmann::ordered_json::array();
        for (const auto& row : rep.rows) {
            nlohmann::ordered_json rj;
            rj["group"] = row.group;
            rj["n"] = row.n;
            rj["counts"] = row.counts;
            rj["percents"] = row.percents;
            bins.push_back(std::move(rj));
        }
        cj["residual_bins"] = std::move(bins);
        cj["bin_labels"] = rep.bin_labels;
        nlohmann::ordered_json years = nlohmann::ordered_json::array();
        for (const auto& d : rep.per_year) {
            nlohmann::ordered_json yj;
            yj["year"] = d.year;
            yj["n"] = d.n;
            yj["mae"] = d.mae;
            yj["delta"] = d.delta;
            years.push_back(std::move(yj));
        }
        cj["per_year_mae"] = std::move(years);
        crops_json[cname] = std::move(cj);

        atomic_write_file(cfg.out_dir / "report" / ("scatter_" + cname + ".svg"),
                          scatter_svg(onsets, cname));
    }
    summary["crops"] = std::move(crops_json);
    if (stage_count > 0) {
        summary["mean_stage_mae"] = mae_sum / stage_count;
        summary["mean_stage_r2"] = r2_sum / stage_count;
    }
    atomic_write_file(cfg.out_dir / "report" / "summary.json", summary.dump(2) + "\n");
    if (stage_count > 0)
        std::printf("report: mean per-stage MAE %.3f days, R2 %.3f (%d stage rows)\n",
                    mae_sum / stage_count, r2_sum / stage_count, stage_count);
}

// ================================================================= runner

void run_stage(const std::string& stage, const PipelineConfig& cfg) {
    if (stage == "synth") return run_synth(cfg);
    if (stage == "preprocess") return run_preprocess(cfg);
    if (stage == "features") return run_features(cfg);
    if (stage == "train") return run_train(cfg);
    if (stage == "evaluate") return run_evaluate(cfg);
    if (stage == "report") return run_report(cfg);
    if (stage == "all") {
        run_synth(cfg);
        run_preprocess(cfg);
        run_features(cfg);
        run_train(cfg);
        run_evaluate(cfg);
        run_report(cfg);
        return;
    }
    throw ValidationError("unknown stage \"" + stage + "\"");
}

} // namespace pheno
