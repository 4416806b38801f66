#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pheno/features.hpp"
#include "pheno/gbdt.hpp"
#include "pheno/rng.hpp"
#include "pheno/types.hpp"

namespace pheno {

// ------------------------------------------------------------ search space

enum class DimKind {
    Uniform,       // continuous in [lo, hi]
    LogUniform,    // continuous, log-spaced
    IntUniform,    // integer in [lo, hi]
    IntLogUniform, // integer, log-spaced
    Categorical,   // index in [0, n_choices)
    Boolean,       // 0/1; may gate conditional dimensions
};

struct Dimension {
    std::string name;
    DimKind kind = DimKind::Uniform;
    double lo = 0.0, hi = 0.0; // numeric kinds
    int n_choices = 0;         // categorical
    std::string parent;        // boolean dim gating this one; empty = always active
};

struct SearchSpace {
    std::vector<Dimension> dims;

    SearchSpace& uniform(const std::string& name, double lo, double hi);
    SearchSpace& log_uniform(const std::string& name, double lo, double hi);
    SearchSpace& int_uniform(const std::string& name, int lo, int hi, const std::string& parent = {});
    SearchSpace& int_log_uniform(const std::string& name, int lo, int hi);
    SearchSpace& categorical(const std::string& name, int n_choices, const std::string& parent = {});
    SearchSpace& boolean(const std::string& name, const std::string& parent = {});

    // Parents must be boolean and declared before their children.
    void validate() const;
};

// Parameter assignment: numeric value, categorical index, or 0/1 for
// booleans. Conditional dimensions are absent when their parent is off.
using Params = std::map<std::string, double>;

struct Trial {
    Params params;
    double loss = 0.0;
    bool failed = false; // non-finite loss; excluded from the densities
};

struct StudyState {
    std::vector<Trial> trials;
    std::uint64_t seed = 0;
    double gamma = 0.25;
    int n_startup = 10;
    int n_candidates = 24;
    Rng rng;

    explicit StudyState(std::uint64_t seed_ = 0, double gamma_ = 0.25, int n_startup_ = 10,
                        int n_candidates_ = 24)
        : seed(seed_), gamma(gamma_), n_startup(n_startup_), n_candidates(n_candidates_),
          rng(mix_seed(seed_, 0x747065)) {}

    int completed() const;
    void record(Params params, double loss);

    // One trial per line; resume/audit format.
    std::string to_jsonl() const;
    static StudyState from_jsonl(const std::string& text, std::uint64_t seed, double gamma = 0.25,
                                 int n_startup = 10, int n_candidates = 24);
};

// Draws the next parameter set. Uniform while fewer than n_startup trials
// completed; afterwards splits completed trials at the gamma-quantile of
// loss, fits per-dimension Parzen densities to the good and bad sides, and
// returns the candidate (of n_candidates drawn from the good densities)
// maximizing the density ratio l(x)/g(x).
Params tpe_suggest(StudyState& study, const SearchSpace& space);

struct OptimizeResult {
    Params best_params;
    double best_loss = 0.0;
    StudyState study;
};

using Objective = std::function<double(const Params&)>;

OptimizeResult tpe_optimize(const Objective& objective, const SearchSpace& space, int n_trials,
                            std::uint64_t seed, double gamma = 0.25, int n_startup = 10,
                            int n_candidates = 24);

// ------------------------------------------------------------ feature search

// Tuned hyperparameter ranges used by the grouped feature-selection studies.
struct GbdtSearchRanges {
    int n_estimators_lo = 50, n_estimators_hi = 1000;         // log
    int num_leaves_lo = 7, num_leaves_hi = 255;               // log
    int min_data_in_bin_lo = 1, min_data_in_bin_hi = 64;      // log
    int min_child_samples_lo = 5, min_child_samples_hi = 200; // log
    int early_stopping_lo = 10, early_stopping_hi = 50;
};

// Joint conditional space: one boolean per feature group, one boolean per
// feature gated by its group, plus the five tuned hyperparameters.
SearchSpace feature_selection_space(const GbdtSearchRanges& ranges = {});

// Hyperparameter-only space (fixed feature mask).
SearchSpace hyperparameter_space(const GbdtSearchRanges& ranges = {});

FeatureSet mask_from_params(const Params& p);
GbdtHyperparams hyperparams_from_params(const Params& p, const GbdtHyperparams& base = {});

struct FoldEvalRequest {
    int fold = 0;
    FeatureSet mask;
    GbdtHyperparams hp;
};

// Trains a model for one inner fold under the proposed mask/hyperparameters
// and returns the validation loss ((1 - R^2) * MAE units).
using FoldObjective = std::function<double(const FoldEvalRequest&)>;

struct FoldSelectionResult {
    FeatureSet features;
    double loss = 0.0;
    GbdtHyperparams hp;
    StudyState study;
};

// Algorithm-1 style per-fold search: each fold runs its own n_trials study
// over the joint space. A trial with an empty mask is recorded as failed
// (+inf) without calling the objective.
std::vector<FoldSelectionResult> select_feature_groups(const FoldObjective& objective, int n_folds,
                                                       int n_trials, std::uint64_t seed,
                                                       const GbdtSearchRanges& ranges = {});

struct FeatureImportance {
    int feature = 0;
    int n_folds = 0;        // folds whose winning set contains the feature
    double mean_loss = 0.0; // mean winning loss of those folds
    double importance = 0.0; // n_folds / mean_loss
};

struct FeatureImportanceTable {
    Crop crop = Crop::WinterWheat;
    std::vector<FeatureImportance> ranked; // descending importance
};

// Ties: higher fold count first, then feature name order.
FeatureImportanceTable feature_importance(Crop crop,
                                          const std::vector<FoldSelectionResult>& folds);

// Top-m features by mean importance across crops (missing = 0).
FeatureSet standardize_feature_set(const std::vector<FeatureImportanceTable>& tables, int m = 12);

} // namespace pheno
