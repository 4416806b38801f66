#include "pheno/config.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "pheno/errors.hpp"
#include "pheno/io_util.hpp"

namespace pheno {

using nlohmann::json;
using nlohmann::ordered_json;

// Default GDD-sum thresholds, tuned so the synthetic crossings land inside
// the raster window (roughly April through July).
std::vector<std::pair<int, double>> SynthSpec::default_thresholds(Crop c) {
    if (crop_base_temperature(c) >= 10.0) // maize-like accumulation
        return {{10, 90.0}, {31, 150.0}, {61, 230.0}};
    if (crop_base_temperature(c) >= 4.5)
        return {{10, 420.0}, {31, 560.0}, {61, 720.0}};
    return {{10, 600.0}, {31, 800.0}, {61, 1030.0}};
}

void SynthSpec::validate() const {
    if (n_stations < 0 || n_climate_stations < 0)
        throw ValidationError("synth: station counts must be >= 0");
    if (seasons.empty()) throw ValidationError("synth: need at least one season");
    if (crops.empty()) throw ValidationError("synth: need at least one crop");
    if (noise_sd_days < 0) throw ValidationError("synth: noise_sd_days must be >= 0");
    if (radar_revisit_days < 1 || optical_revisit_days < 1)
        throw ValidationError("synth: revisit intervals must be >= 1 day");
    if (band_window_start_doy < 1 || band_window_end_doy <= band_window_start_doy ||
        band_window_end_doy > 264)
        throw ValidationError("synth: band window must lie inside one season year");
    for (const auto& [crop, stages] : stage_thresholds) {
        if (stages.empty()) throw ValidationError("synth: empty stage list");
        for (std::size_t i = 0; i < stages.size(); ++i) {
            if (!is_known_bbch(stages[i].first))
                throw ValidationError("synth: unknown bbch " + std::to_string(stages[i].first));
            if (i > 0 && (stages[i].first <= stages[i - 1].first ||
                          stages[i].second <= stages[i - 1].second))
                throw ValidationError("synth: thresholds for " + crop_name(crop) +
                                      " must increase strictly with bbch");
        }
    }
}

FeatureSet PipelineConfig::preset_mask() const {
    if (feature_preset == "search") return FeatureSet::all();
    if (feature_preset == "paper-standard") return FeatureSet::paper_standard();
    if (feature_preset == "list") {
        if (feature_list.empty()) throw ValidationError("config: empty feature list");
        return FeatureSet::from_names(feature_list);
    }
    throw ValidationError("config: feature_preset must be \"search\", \"paper-standard\", or a "
                          "feature-name list");
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* where) {
    for (const auto& [key, value] : j.items())
        if (!known.contains(key))
            throw ValidationError(std::string("config: unknown key \"") + key + "\" in " + where);
}

std::vector<Crop> parse_crops(const json& j) {
    std::vector<Crop> out;
    for (const auto& name : j) {
        const auto c = crop_from_name(name.get<std::string>());
        if (!c) throw ValidationError("config: unknown crop \"" + name.get<std::string>() + "\"");
        out.push_back(*c);
    }
    return out;
}

SynthSpec parse_synth(const json& j) {
    static const std::set<std::string> known = {
        "n_stations",     "n_climate_stations", "seasons",
        "crops",          "stage_thresholds",   "noise_sd_days",
        "sar_response",   "optical_response",   "pixel_noise",
        "series_noise",   "cloud_fraction",     "radar_revisit_days",
        "optical_revisit_days", "band_window_start_doy", "band_window_end_doy",
        "seed",
    };
    reject_unknown(j, known, "synth");
    SynthSpec s;
    if (j.contains("n_stations")) s.n_stations = j["n_stations"].get<int>();
    if (j.contains("n_climate_stations")) s.n_climate_stations = j["n_climate_stations"].get<int>();
    if (j.contains("seasons")) s.seasons = j["seasons"].get<std::vector<int>>();
    if (j.contains("crops")) s.crops = parse_crops(j["crops"]);
    if (j.contains("stage_thresholds")) {
        for (const auto& [crop_key, stages] : j["stage_thresholds"].items()) {
            const auto crop = crop_from_name(crop_key);
            if (!crop) throw ValidationError("config: unknown crop \"" + crop_key + "\"");
            std::vector<std::pair<int, double>> list;
            for (const auto& [bbch, threshold] : stages.items())
                list.emplace_back(std::stoi(bbch), threshold.get<double>());
            std::sort(list.begin(), list.end());
            s.stage_thresholds[*crop] = std::move(list);
        }
    }
    if (j.contains("noise_sd_days")) s.noise_sd_days = j["noise_sd_days"].get<double>();
    if (j.contains("sar_response")) s.sar_response = j["sar_response"].get<double>();
    if (j.contains("optical_response")) s.optical_response = j["optical_response"].get<double>();
    if (j.contains("pixel_noise")) s.pixel_noise = j["pixel_noise"].get<double>();
    if (j.contains("series_noise")) s.series_noise = j["series_noise"].get<double>();
    if (j.contains("cloud_fraction")) s.cloud_fraction = j["cloud_fraction"].get<double>();
    if (j.contains("radar_revisit_days")) s.radar_revisit_days = j["radar_revisit_days"].get<int>();
    if (j.contains("optical_revisit_days"))
        s.optical_revisit_days = j["optical_revisit_days"].get<int>();
    if (j.contains("band_window_start_doy"))
        s.band_window_start_doy = j["band_window_start_doy"].get<int>();
    if (j.contains("band_window_end_doy"))
        s.band_window_end_doy = j["band_window_end_doy"].get<int>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    for (Crop c : s.crops)
        if (!s.stage_thresholds.contains(c))
            s.stage_thresholds[c] = SynthSpec::default_thresholds(c);
    std::erase_if(s.stage_thresholds, [&](const auto& entry) {
        return std::find(s.crops.begin(), s.crops.end(), entry.first) == s.crops.end();
    });
    s.validate();
    return s;
}

} // namespace

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    static const std::set<std::string> known = {
        "phenology_csv", "climate_csv", "grids_dir",      "out_dir",        "crops",
        "seed",          "loess_fraction", "cloud_threshold", "idw_k",      "buffer_inner_m",
        "buffer_outer_m", "min_field_ha", "cv_outer",     "cv_inner",       "n_trials",
        "tolerance_days", "feature_preset", "threads",    "synth",
    };
    reject_unknown(j, known, "top level");

    PipelineConfig c;
    if (j.contains("phenology_csv")) c.phenology_csv = j["phenology_csv"].get<std::string>();
    if (j.contains("climate_csv")) c.climate_csv = j["climate_csv"].get<std::string>();
    if (j.contains("grids_dir")) c.grids_dir = j["grids_dir"].get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("crops")) c.crops = parse_crops(j["crops"]);
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("loess_fraction")) c.loess_fraction = j["loess_fraction"].get<double>();
    if (j.contains("cloud_threshold")) c.cloud_threshold = j["cloud_threshold"].get<double>();
    if (j.contains("idw_k")) c.idw_k = j["idw_k"].get<int>();
    if (j.contains("buffer_inner_m")) c.buffer_inner_m = j["buffer_inner_m"].get<double>();
    if (j.contains("buffer_outer_m")) c.buffer_outer_m = j["buffer_outer_m"].get<double>();
    if (j.contains("min_field_ha")) c.min_field_ha = j["min_field_ha"].get<double>();
    if (j.contains("cv_outer")) c.cv_outer = j["cv_outer"].get<int>();
    if (j.contains("cv_inner")) c.cv_inner = j["cv_inner"].get<int>();
    if (j.contains("n_trials")) c.n_trials = j["n_trials"].get<int>();
    if (j.contains("tolerance_days")) c.tolerance_days = j["tolerance_days"].get<double>();
    if (j.contains("feature_preset")) {
        const auto& fp = j["feature_preset"];
        if (fp.is_string()) {
            c.feature_preset = fp.get<std::string>();
        } else if (fp.is_array()) {
            c.feature_preset = "list";
            c.feature_list = fp.get<std::vector<std::string>>();
        } else {
            throw ValidationError("config: feature_preset must be a string or a name array");
        }
    }
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
    if (j.contains("synth")) c.synth = parse_synth(j["synth"]);
    c.preset_mask(); // validates the preset spelling
    if (c.cv_outer < 2 || c.cv_inner < 2) throw ValidationError("config: cv folds must be >= 2");
    if (c.n_trials < 1) throw ValidationError("config: n_trials must be >= 1");
    return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    return from_json(read_text_file(path));
}

std::string PipelineConfig::to_json() const {
    ordered_json j;
    j["phenology_csv"] = phenology_csv.string();
    j["climate_csv"] = climate_csv.string();
    j["grids_dir"] = grids_dir.string();
    j["out_dir"] = out_dir.string();
    ordered_json crop_names = ordered_json::array();
    for (Crop c : crops) crop_names.push_back(crop_name(c));
    j["crops"] = std::move(crop_names);
    j["seed"] = seed;
    j["loess_fraction"] = loess_fraction;
    j["cloud_threshold"] = cloud_threshold;
    j["idw_k"] = idw_k;
    j["buffer_inner_m"] = buffer_inner_m;
    j["buffer_outer_m"] = buffer_outer_m;
    j["min_field_ha"] = min_field_ha;
    j["cv_outer"] = cv_outer;
    j["cv_inner"] = cv_inner;
    j["n_trials"] = n_trials;
    j["tolerance_days"] = tolerance_days;
    if (feature_preset == "list")
        j["feature_preset"] = feature_list;
    else
        j["feature_preset"] = feature_preset;
    j["threads"] = threads;

    ordered_json s;
    s["n_stations"] = synth.n_stations;
    s["n_climate_stations"] = synth.n_climate_stations;
    s["seasons"] = synth.seasons;
    ordered_json synth_crops = ordered_json::array();
    for (Crop c : synth.crops) synth_crops.push_back(crop_name(c));
    s["crops"] = std::move(synth_crops);
    ordered_json thresholds = ordered_json::object();
    for (const auto& [crop, stages] : synth.stage_thresholds) {
        ordered_json per_crop = ordered_json::object();
        for (const auto& [bbch, value] : stages) per_crop[std::to_string(bbch)] = value;
        thresholds[crop_name(crop)] = std::move(per_crop);
    }
    s["stage_thresholds"] = std::move(thresholds);
    s["noise_sd_days"] = synth.noise_sd_days;
    s["sar_response"] = synth.sar_response;
    s["optical_response"] = synth.optical_response;
    s["pixel_noise"] = synth.pixel_noise;
    s["series_noise"] = synth.series_noise;
    s["cloud_fraction"] = synth.cloud_fraction;
    s["radar_revisit_days"] = synth.radar_revisit_days;
    s["optical_revisit_days"] = synth.optical_revisit_days;
    s["band_window_start_doy"] = synth.band_window_start_doy;
    s["band_window_end_doy"] = synth.band_window_end_doy;
    s["seed"] = synth.seed;
    j["synth"] = std::move(s);
    return j.dump(2) + "\n";
}

} // namespace pheno
