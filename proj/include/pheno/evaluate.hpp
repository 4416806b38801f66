#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "pheno/dataset.hpp"
#include "pheno/gbdt.hpp"
#include "pheno/tpe.hpp"

namespace pheno {

// ------------------------------------------------------------ metrics

// 1 - SS_res/SS_tot. Throws on length < 2, length mismatch, or zero
// variance of the observations.
double metric_r2(std::span<const double> obs, std::span<const double> pred);

double metric_mae(std::span<const double> obs, std::span<const double> pred);

// (1 - R^2) * MAE, the study loss.
double objective_loss(std::span<const double> obs, std::span<const double> pred);

// Fraction of pairs with |pred - obs| <= tol (boundary inclusive).
double within_tolerance_share(std::span<const double> obs, std::span<const double> pred,
                              double tol = 6.0);

// ------------------------------------------------------------ decoding

struct DailyProbs {
    std::vector<Date> days;
    std::vector<int> classes;
    std::vector<double> probs; // days x classes, row-major

    double at(std::size_t day, std::size_t cls) const { return probs[day * classes.size() + cls]; }
};

struct StageDecode {
    int bbch = 0;
    Date day;
    double probability = 0.0;
    bool detected = true; // false when background dominates at the peak
};

// Peak-probability decoding: per stage class the day with the maximal
// predicted probability (ties -> earliest day). A stage whose peak
// probability is below the background probability on that same day is
// flagged as not detected.
std::vector<StageDecode> decode_onsets(const DailyProbs& daily, const std::vector<int>& stage_list);

// Arithmetic mean of member probabilities; members must share the class list.
std::vector<double> ensemble_predict(std::span<const GbdtModel> models,
                                     std::span<const double> x);

// ------------------------------------------------------------ nested CV

struct OnsetPrediction {
    std::string station_id;
    int season = 0;
    int bbch = 0;
    Date predicted_date;
    Date observed_date;
    int predicted_doy = 0;
    int observed_doy = 0;
    double residual = 0.0; // days, predicted - observed
    bool detected = true;
    int outer_fold = 0;
};

struct InnerFoldModel {
    FeatureSet features;
    GbdtHyperparams hp;
    double loss = 0.0;
    StudyState study;
    GbdtModel model; // refit winner, pruned to best_iteration
};

struct OuterFoldResult {
    std::vector<int> train_units;
    std::vector<int> test_units;
    std::vector<InnerFoldModel> members;
    std::vector<OnsetPrediction> predictions;
};

struct NestedCvConfig {
    int outer_folds = 10;
    int inner_folds = 10;
    int n_trials = 50;
    std::uint64_t seed = 0;
    bool feature_search = true; // false: tune hyperparameters with fixed_mask
    FeatureSet fixed_mask = FeatureSet::all();
    GbdtSearchRanges ranges{};
    int threads = 0; // 0 = hardware concurrency
};

struct NestedCvResult {
    std::vector<std::pair<std::string, int>> units; // station-season keys
    FoldSplit split;
    std::vector<OuterFoldResult> folds;

    std::vector<OnsetPrediction> all_predictions() const;
};

// Station-season folds (never splitting one season's days), per-(outer,inner)
// TPE studies, inner winners refit into the outer ensemble, outer-test
// decoded through the averaged ensemble. Study seeds derive from
// (seed, crop, outer, inner), so distinct studies run in parallel without
// affecting the result.
NestedCvResult nested_cv(const LabeledDataset& dataset, const NestedCvConfig& config);

// Station-season unit keys in first-appearance order, plus each unit's rows.
std::vector<std::pair<std::string, int>> dataset_units(const LabeledDataset& dataset,
                                                       std::vector<std::vector<int>>* rows_by_unit);

// The per-inner-fold study objective: train on the other folds' units,
// validate on the requested fold, and score (1 - R^2) * MAE over the decoded
// onset days of the validation units. Fold data is built lazily on first
// use; the returned callable is not thread-safe.
FoldObjective make_inner_objective(const LabeledDataset& dataset,
                                   std::vector<std::vector<int>> unit_folds);

// ------------------------------------------------------------ reports

struct StageMetrics {
    int bbch = 0; // or -1 for "all stages pooled"
    int n = 0;
    double mae = 0.0;
    double r2 = 0.0;
    double objective = 0.0;
    double within_tol = 0.0;
};

// Per-stage metrics over detected predictions; bbch -1 row pools everything.
std::vector<StageMetrics> per_stage_metrics(const std::vector<OnsetPrediction>& onsets,
                                            double tol = 6.0);

enum class ResidualGroupBy { Stage, Year, Station };

struct ResidualBinRow {
    std::string group;
    int n = 0;
    std::vector<int> counts;      // one per bin
    std::vector<double> percents; // sums to 100 per row
};

struct YearMaeDelta {
    int year = 0;
    int n = 0;
    double mae = 0.0;
    double delta = 0.0; // year MAE minus all-years MAE
};

struct ResidualReport {
    std::vector<double> edges; // default -15, -4, 4, 15; outer bins open
    std::vector<std::string> bin_labels;
    std::vector<ResidualBinRow> rows;
    std::vector<YearMaeDelta> per_year;
    double overall_mae = 0.0;
};

ResidualReport residual_report(const std::vector<OnsetPrediction>& onsets,
                               std::vector<double> edges = {-15, -4, 4, 15},
                               ResidualGroupBy group_by = ResidualGroupBy::Stage);

} // namespace pheno
