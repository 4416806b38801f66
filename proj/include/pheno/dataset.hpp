#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pheno/features.hpp"
#include "pheno/types.hpp"

namespace pheno {

struct LabeledSample {
    std::string station_id;
    int season = 0; // harvest year
    Date date;
    int doy = 0;    // label axis, not a model input
    FeatureVector features{};
    int label = kBackgroundLabel; // BBCH code or -1
};

struct LabeledDataset {
    Crop crop = Crop::WinterWheat;
    std::vector<LabeledSample> samples;
    std::map<int, double> class_weights;
};

// All feature slots for every day of one station-season window.
struct SeasonFeatures {
    std::string station_id;
    int season = 0;
    Date start;
    std::vector<FeatureVector> days;
};

struct AssembleResult {
    LabeledDataset dataset;
    int skipped_observations = 0; // stage dates outside feature coverage
};

// One sample per covered day per station-season; days carrying an observed
// stage get that BBCH code, all others the background label. Two stages on
// one day is an error ("coincident stages").
AssembleResult assemble_labeled_dataset(Crop crop, const std::vector<StationObservation>& obs,
                                        const std::vector<SeasonFeatures>& features);

// Balanced inverse frequency: weight(c) = N / (K * n_c).
std::map<int, double> compute_class_weights(const std::vector<int>& labels);

struct FoldSplit {
    std::vector<std::vector<int>> outer;              // k disjoint test-index sets
    std::vector<std::vector<std::vector<int>>> inner; // per outer fold: folds of its training set
    std::uint64_t seed = 0;
};

// Seeded shuffle then near-equal contiguous chunks; the first n%k folds take
// the extra element. Inner folds split each outer training set the same way
// with a seed derived from (seed, outer index).
FoldSplit kfold_split(int n, int k, std::uint64_t seed, int inner_k = 0);

// Columnar CSV of one dataset: keys, 43 feature columns, label.
std::string serialize_dataset_csv(const LabeledDataset& ds);
LabeledDataset parse_dataset_csv(const std::string& text);

} // namespace pheno
