#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pheno/features.hpp"
#include "pheno/types.hpp"

namespace pheno {

// Synthetic-world description: station/climate layout, per-crop GDD-sum
// stage thresholds, and the signal/noise knobs.
struct SynthSpec {
    int n_stations = 30;
    int n_climate_stations = 60;
    std::vector<int> seasons = {2019, 2020};              // harvest years
    std::vector<Crop> crops = {Crop::WinterWheat, Crop::Maize};
    // Per crop: (bbch, gdd-sum threshold), strictly increasing in both.
    std::map<Crop, std::vector<std::pair<int, double>>> stage_thresholds;
    double noise_sd_days = 2.0;   // observation-date jitter
    double sar_response = 1.0;    // 0 = radar bands carry no stage signal
    double optical_response = 1.0;
    double pixel_noise = 0.25;    // within-field raster noise
    double series_noise = 0.25;   // day-to-day band noise
    double cloud_fraction = 0.15; // optical dates with cloud prob >= 75
    int radar_revisit_days = 6;
    int optical_revisit_days = 8;
    int band_window_start_doy = 100; // raster coverage within each season year
    int band_window_end_doy = 192;
    std::uint64_t seed = 42;

    SynthSpec() {
        for (Crop c : crops) stage_thresholds[c] = default_thresholds(c);
    }

    static std::vector<std::pair<int, double>> default_thresholds(Crop c);
    void validate() const;
};

struct PipelineConfig {
    std::filesystem::path phenology_csv = "data/phenology.csv";
    std::filesystem::path climate_csv = "data/climate.csv";
    std::filesystem::path grids_dir = "data/grids";
    std::filesystem::path out_dir = "out";
    std::vector<Crop> crops{kAllCrops.begin(), kAllCrops.end()};
    std::uint64_t seed = 42;

    double loess_fraction = 0.03;
    double cloud_threshold = 75.0;
    int idw_k = 10;
    double buffer_inner_m = 70.0;
    double buffer_outer_m = 40.0;
    double min_field_ha = 2.0;
    int cv_outer = 10;
    int cv_inner = 10;
    int n_trials = 50;
    double tolerance_days = 6.0;

    // "search", "paper-standard", or an explicit feature-name list.
    std::string feature_preset = "search";
    std::vector<std::string> feature_list;

    int threads = 0; // 0 = hardware concurrency

    SynthSpec synth;

    bool feature_search() const { return feature_preset == "search"; }
    FeatureSet preset_mask() const;

    // Strict schema: unknown keys are rejected.
    static PipelineConfig from_json(const std::string& text);
    static PipelineConfig load(const std::filesystem::path& path);
    std::string to_json() const;
};

} // namespace pheno
