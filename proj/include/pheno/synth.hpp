#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pheno/config.hpp"
#include "pheno/types.hpp"

namespace pheno {

struct TruthOnset {
    std::string station_id;
    Crop crop = Crop::WinterWheat;
    int season = 0;
    int bbch = 0;
    Date true_date;     // noise-free GDD-sum threshold crossing
    Date observed_date; // what the phenology CSV reports
};

// Receives every generated file as (relative path, content). Paths:
// phenology.csv, climate.csv, truth.csv, grids/stations.csv,
// grids/<station>/{mask.asc,dem.asc}, grids/<station>/bands/<band>_<date>.asc
using FileSink = std::function<void(const std::string& relpath, const std::string& content)>;

struct SynthSummary {
    int n_observations = 0;
    int n_grid_files = 0;
    std::vector<TruthOnset> truth;
};

// Deterministic in spec.seed: identical specs produce byte-identical files.
// Climate follows a seasonal sinusoid with latitude/altitude/year effects;
// true onsets are the days the station's IDW-interpolated GDD sum crosses
// each stage threshold; band rasters follow a stage-driven logistic biomass
// curve (or pure noise when the response knobs are 0).
SynthSummary synth_generate(const SynthSpec& spec, const FileSink& sink);

} // namespace pheno
