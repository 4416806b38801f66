#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "pheno/dataset.hpp"
#include "pheno/features.hpp"

namespace pheno {

struct GbdtHyperparams {
    int n_estimators = 100;
    int num_leaves = 31;
    int min_data_in_bin = 3;
    int min_child_samples = 20;
    int early_stopping_round = 10; // 0 disables early stopping
    double learning_rate = 0.1;
    int max_bins = 255;

    void validate() const;
};

// One regression tree in flattened-array form. Internal nodes carry both the
// histogram bin index and the raw-value threshold (the upper edge of the left
// bins), so routing works on raw feature values.
struct GbdtTree {
    std::vector<int> split_feature; // -1 for leaves
    std::vector<int> split_bin;
    std::vector<double> threshold;
    std::vector<int> left;
    std::vector<int> right;
    std::vector<bool> default_left; // missing values follow the bigger child
    std::vector<double> value;      // leaf output (already shrunk)
    std::vector<int> count;         // training rows through the node

    int size() const { return static_cast<int>(split_feature.size()); }
    double predict(std::span<const double> x) const;
};

struct GbdtModel {
    std::vector<int> classes;                   // ordered label list
    FeatureSet feature_mask;
    GbdtHyperparams hp;
    std::vector<std::vector<double>> bin_edges; // per feature; finite upper
                                                // edges, last bin open-ended
    std::vector<std::vector<GbdtTree>> rounds;  // [round][class]
    int best_iteration = 0;                     // rounds used at prediction

    // Per-round weighted log-loss traces; informational, not serialized.
    std::vector<double> train_loss;
    std::vector<double> valid_loss;

    int num_classes() const { return static_cast<int>(classes.size()); }

    std::vector<double> predict_raw(std::span<const double> x) const;
    std::vector<double> predict_proba(std::span<const double> x) const;

    std::string to_json() const;
    static GbdtModel from_json(const std::string& text);
};

// Flat training view: row-major features, one label and weight per row.
struct DataMatrix {
    int n = 0;
    std::vector<double> x; // n * kNumFeatures
    std::vector<int> labels;
    std::vector<double> weights;

    std::span<const double> row(int i) const {
        return {x.data() + static_cast<std::size_t>(i) * kNumFeatures, kNumFeatures};
    }
};

DataMatrix make_data_matrix(const LabeledDataset& ds, const std::vector<int>& rows,
                            const std::map<int, double>& class_weights);
DataMatrix make_data_matrix(const LabeledDataset& ds);

struct FitOutput {
    GbdtModel model;
    // Raw per-class scores of the validation rows at best_iteration,
    // row-major; empty without a validation set.
    std::vector<double> valid_scores_at_best;
};

// Sorted copies of each feature column; lets repeated fits on the same rows
// (hyperparameter studies) skip the per-fit sorts during bin construction.
struct PresortedColumns {
    std::vector<std::vector<double>> by_feature; // one sorted vector per feature
};

PresortedColumns presort_columns(const DataMatrix& train);

// Multiclass softmax boosting: per round one tree per class is fit to the
// gradient/hessian of the weighted cross-entropy, grown leaf-wise up to
// num_leaves. Training stops early when the weighted validation log-loss has
// not improved for early_stopping_round consecutive rounds. Deterministic:
// identical inputs give a bit-identical model (equal-gain ties resolve to the
// lowest feature index, then the lowest bin, then the earliest leaf).
FitOutput fit_gbdt_traced(const DataMatrix& train, const DataMatrix* valid,
                          const GbdtHyperparams& hp, const FeatureSet& mask,
                          const PresortedColumns* presorted = nullptr);

GbdtModel fit_gbdt(const DataMatrix& train, const DataMatrix* valid, const GbdtHyperparams& hp,
                   const FeatureSet& mask);

std::vector<double> softmax(std::span<const double> scores);

} // namespace pheno
