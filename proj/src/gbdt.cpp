#include "pheno/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "pheno/errors.hpp"

namespace pheno {

namespace {

constexpr double kHessEps = 1e-16;
constexpr double kProbFloor = 1e-15;

// ------------------------------------------------------------ binning

struct BinMapper {
    std::vector<double> edges; // finite upper edges; bins = edges.size() + 1
    int bins() const { return static_cast<int>(edges.size()) + 1; }

    int bin(double v) const {
        return static_cast<int>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
    }
};

// Equal-frequency bins over the training column. Every bin holds at least
// max(min_data_in_bin, ceil(n/max_bins)) rows; cuts land between distinct
// values only, and a short trailing remainder merges into its neighbor.
BinMapper build_bins(const std::vector<double>& sorted_values, int max_bins, int min_data_in_bin) {
    BinMapper m;
    const std::size_t n = sorted_values.size();
    if (n == 0) return m;
    const std::size_t target = std::max<std::size_t>(
        static_cast<std::size_t>(min_data_in_bin),
        (n + static_cast<std::size_t>(max_bins) - 1) / static_cast<std::size_t>(max_bins));

    std::size_t in_bin = 0;
    std::size_t i = 0;
    while (i < n) {
        // Run of equal values never splits across bins.
        std::size_t j = i;
        while (j < n && sorted_values[j] == sorted_values[i]) ++j;
        in_bin += j - i;
        if (in_bin >= target && j < n && m.bins() < max_bins) {
            m.edges.push_back(0.5 * (sorted_values[j - 1] + sorted_values[j]));
            in_bin = 0;
        }
        i = j;
    }
    // Trailing remainder smaller than the minimum merges into the last bin.
    if (!m.edges.empty() && in_bin < static_cast<std::size_t>(min_data_in_bin)) m.edges.pop_back();
    return m;
}

// ------------------------------------------------------------ growth state

struct LeafRecord {
    int node = -1;
    int begin = 0, end = 0; // range in the row-index partition
    double sum_grad = 0, sum_hess = 0;
    std::vector<double> hist_gh; // 2 * total_bins, (grad, hess) interleaved
    std::vector<int> hist_cnt;
    // Best candidate split.
    double gain = 0;
    int slot = -1, bin = -1;
    double left_grad = 0, left_hess = 0;
    int left_cnt = 0;
    bool splittable = false;
};

double leaf_output(double g, double h, double lr) { return -lr * g / (h + kHessEps); }

double split_gain(double gl, double hl, double gr, double hr) {
    return 0.5 * (gl * gl / (hl + kHessEps) + gr * gr / (hr + kHessEps) -
                  (gl + gr) * (gl + gr) / (hl + hr + kHessEps));
}

} // namespace

// ------------------------------------------------------------ public bits

void GbdtHyperparams::validate() const {
    if (n_estimators < 1 || num_leaves < 1 || min_data_in_bin < 1 || min_child_samples < 1 ||
        early_stopping_round < 0 || max_bins < 1)
        throw ValidationError("gbdt: counts must be >= 1");
    if (max_bins > 255) throw ValidationError("gbdt: max_bins above 255 is not supported");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0))
        throw ValidationError("gbdt: learning_rate must be in (0, 1]");
}

double GbdtTree::predict(std::span<const double> x) const {
    int node = 0;
    while (split_feature[static_cast<std::size_t>(node)] >= 0) {
        const auto f = static_cast<std::size_t>(split_feature[static_cast<std::size_t>(node)]);
        const double v = x[f];
        bool go_left;
        if (std::isnan(v))
            go_left = default_left[static_cast<std::size_t>(node)];
        else
            go_left = v <= threshold[static_cast<std::size_t>(node)];
        node = go_left ? left[static_cast<std::size_t>(node)] : right[static_cast<std::size_t>(node)];
    }
    return value[static_cast<std::size_t>(node)];
}

std::vector<double> softmax(std::span<const double> scores) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double s : scores) mx = std::max(mx, s);
    std::vector<double> p(scores.size());
    double sum = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) sum += p[i] = std::exp(scores[i] - mx);
    for (auto& v : p) v /= sum;
    return p;
}

std::vector<double> GbdtModel::predict_raw(std::span<const double> x) const {
    if (x.size() != kNumFeatures)
        throw ValidationError("predict: expected " + std::to_string(kNumFeatures) +
                              " features, got " + std::to_string(x.size()));
    std::vector<double> scores(classes.size(), 0.0);
    for (int r = 0; r < best_iteration; ++r)
        for (std::size_t c = 0; c < classes.size(); ++c)
            scores[c] += rounds[static_cast<std::size_t>(r)][c].predict(x);
    return scores;
}

std::vector<double> GbdtModel::predict_proba(std::span<const double> x) const {
    const auto scores = predict_raw(x);
    return softmax(scores);
}

DataMatrix make_data_matrix(const LabeledDataset& ds, const std::vector<int>& rows,
                            const std::map<int, double>& class_weights) {
    DataMatrix m;
    m.n = static_cast<int>(rows.size());
    m.x.resize(static_cast<std::size_t>(m.n) * kNumFeatures);
    m.labels.resize(static_cast<std::size_t>(m.n));
    m.weights.resize(static_cast<std::size_t>(m.n));
    for (int i = 0; i < m.n; ++i) {
        const auto& s = ds.samples[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])];
        std::copy(s.features.begin(), s.features.end(),
                  m.x.begin() + static_cast<std::size_t>(i) * kNumFeatures);
        m.labels[static_cast<std::size_t>(i)] = s.label;
        const auto w = class_weights.find(s.label);
        m.weights[static_cast<std::size_t>(i)] = w == class_weights.end() ? 1.0 : w->second;
    }
    return m;
}

DataMatrix make_data_matrix(const LabeledDataset& ds) {
    std::vector<int> rows(ds.samples.size());
    std::iota(rows.begin(), rows.end(), 0);
    return make_data_matrix(ds, rows, ds.class_weights);
}

// ------------------------------------------------------------ training

PresortedColumns presort_columns(const DataMatrix& train) {
    PresortedColumns out;
    out.by_feature.resize(kNumFeatures);
    std::vector<double> col(static_cast<std::size_t>(train.n));
    for (int f = 0; f < kNumFeatures; ++f) {
        for (int i = 0; i < train.n; ++i)
            col[static_cast<std::size_t>(i)] =
                train.x[static_cast<std::size_t>(i) * kNumFeatures + static_cast<std::size_t>(f)];
        std::sort(col.begin(), col.end());
        out.by_feature[static_cast<std::size_t>(f)] = col;
    }
    return out;
}

FitOutput fit_gbdt_traced(const DataMatrix& train, const DataMatrix* valid,
                          const GbdtHyperparams& hp, const FeatureSet& mask,
                          const PresortedColumns* presorted) {
    hp.validate();
    if (train.n < 1) throw ValidationError("fit_gbdt: empty training set");
    if (mask.count() < 1) throw ValidationError("fit_gbdt: empty feature mask");
    if (hp.early_stopping_round > 0 && (valid == nullptr || valid->n == 0))
        throw ValidationError("fit_gbdt: early stopping needs a validation set");

    const int n = train.n;

    GbdtModel model;
    model.feature_mask = mask;
    model.hp = hp;
    {
        std::set<int> labels(train.labels.begin(), train.labels.end());
        model.classes.assign(labels.begin(), labels.end());
    }
    const int K = model.num_classes();

    // Class index per row; weight lookup.
    std::vector<int> yidx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        yidx[static_cast<std::size_t>(i)] = static_cast<int>(
            std::lower_bound(model.classes.begin(), model.classes.end(),
                             train.labels[static_cast<std::size_t>(i)]) -
            model.classes.begin());

    // Bin construction + binned rows for the masked features (row-major so
    // the histogram loop streams).
    const std::vector<int> slots = mask.indices();
    const int n_slots = static_cast<int>(slots.size());
    model.bin_edges.assign(kNumFeatures, {});
    std::vector<BinMapper> mappers(static_cast<std::size_t>(n_slots));
    std::vector<std::uint8_t> binned(static_cast<std::size_t>(n) * static_cast<std::size_t>(n_slots));
    {
        std::vector<double> col(static_cast<std::size_t>(n));
        for (int s = 0; s < n_slots; ++s) {
            const int f = slots[static_cast<std::size_t>(s)];
            for (int i = 0; i < n; ++i)
                col[static_cast<std::size_t>(i)] =
                    train.x[static_cast<std::size_t>(i) * kNumFeatures + static_cast<std::size_t>(f)];
            if (presorted) {
                mappers[static_cast<std::size_t>(s)] = build_bins(
                    presorted->by_feature[static_cast<std::size_t>(f)], hp.max_bins,
                    hp.min_data_in_bin);
            } else {
                std::vector<double> sorted = col;
                std::sort(sorted.begin(), sorted.end());
                mappers[static_cast<std::size_t>(s)] =
                    build_bins(sorted, hp.max_bins, hp.min_data_in_bin);
            }
            model.bin_edges[static_cast<std::size_t>(f)] = mappers[static_cast<std::size_t>(s)].edges;
            for (int i = 0; i < n; ++i)
                binned[static_cast<std::size_t>(i) * n_slots + static_cast<std::size_t>(s)] =
                    static_cast<std::uint8_t>(
                        mappers[static_cast<std::size_t>(s)].bin(col[static_cast<std::size_t>(i)]));
        }
    }

    // Flat histogram layout across slots.
    std::vector<int> slot_offset(static_cast<std::size_t>(n_slots) + 1, 0);
    for (int s = 0; s < n_slots; ++s)
        slot_offset[static_cast<std::size_t>(s) + 1] =
            slot_offset[static_cast<std::size_t>(s)] + mappers[static_cast<std::size_t>(s)].bins();
    const int total_bins = slot_offset[static_cast<std::size_t>(n_slots)];

    // Boosting state.
    std::vector<double> scores(static_cast<std::size_t>(n) * static_cast<std::size_t>(K), 0.0);
    std::vector<double> grad(static_cast<std::size_t>(n) * static_cast<std::size_t>(K));
    std::vector<double> hess(grad.size());
    std::vector<double> probs(static_cast<std::size_t>(K));

    const double train_weight_sum =
        std::accumulate(train.weights.begin(), train.weights.end(), 0.0);

    // Validation state: running scores plus a snapshot at the best round.
    const int n_valid = valid ? valid->n : 0;
    std::vector<double> vscores(static_cast<std::size_t>(n_valid) * static_cast<std::size_t>(K), 0.0);
    std::vector<int> vclass(static_cast<std::size_t>(n_valid), -1);
    double vweight_sum = 0.0;
    if (valid) {
        for (int i = 0; i < n_valid; ++i) {
            const auto it = std::lower_bound(model.classes.begin(), model.classes.end(),
                                             valid->labels[static_cast<std::size_t>(i)]);
            if (it != model.classes.end() && *it == valid->labels[static_cast<std::size_t>(i)]) {
                vclass[static_cast<std::size_t>(i)] =
                    static_cast<int>(it - model.classes.begin());
                vweight_sum += valid->weights[static_cast<std::size_t>(i)];
            }
        }
    }

    double best_valid = std::numeric_limits<double>::infinity();
    int best_round = 0;
    std::vector<double> best_vscores = vscores;

    // Histogram buffer pool.
    std::vector<std::pair<std::vector<double>, std::vector<int>>> pool;
    auto acquire_hist = [&](LeafRecord& leaf, bool clear = true) {
        if (!pool.empty()) {
            leaf.hist_gh = std::move(pool.back().first);
            leaf.hist_cnt = std::move(pool.back().second);
            pool.pop_back();
            if (clear) {
                std::fill(leaf.hist_gh.begin(), leaf.hist_gh.end(), 0.0);
                std::fill(leaf.hist_cnt.begin(), leaf.hist_cnt.end(), 0);
            }
        } else {
            leaf.hist_gh.resize(static_cast<std::size_t>(2 * total_bins));
            leaf.hist_cnt.resize(static_cast<std::size_t>(total_bins));
            if (clear) {
                std::fill(leaf.hist_gh.begin(), leaf.hist_gh.end(), 0.0);
                std::fill(leaf.hist_cnt.begin(), leaf.hist_cnt.end(), 0);
            }
        }
    };
    auto release_hist = [&](LeafRecord& leaf) {
        if (!leaf.hist_gh.empty())
            pool.emplace_back(std::move(leaf.hist_gh), std::move(leaf.hist_cnt));
        leaf.hist_gh.clear();
        leaf.hist_cnt.clear();
    };

    std::vector<int> partition(static_cast<std::size_t>(n));
    std::vector<int> scratch(static_cast<std::size_t>(n));

    // Root histograms are shared: counts never depend on the class, and one
    // interleaved gradient/hessian pass per round serves every class tree.
    std::vector<int> root_cnt(static_cast<std::size_t>(total_bins), 0);
    for (int i = 0; i < n; ++i) {
        const std::uint8_t* brow = binned.data() + static_cast<std::size_t>(i) * n_slots;
        for (int s = 0; s < n_slots; ++s)
            ++root_cnt[static_cast<std::size_t>(slot_offset[static_cast<std::size_t>(s)] + brow[s])];
    }
    std::vector<double> root_gh(static_cast<std::size_t>(2 * total_bins) *
                                static_cast<std::size_t>(K));

    auto build_hist = [&](LeafRecord& leaf, const double* g, const double* h) {
        const int* offs = slot_offset.data();
        for (int p = leaf.begin; p < leaf.end; ++p) {
            const int row = partition[static_cast<std::size_t>(p)];
            const double gr = g[row];
            const double hr = h[row];
            const std::uint8_t* brow = binned.data() + static_cast<std::size_t>(row) * n_slots;
            for (int s = 0; s < n_slots; ++s) {
                const int b = offs[s] + brow[s];
                leaf.hist_gh[static_cast<std::size_t>(2 * b)] += gr;
                leaf.hist_gh[static_cast<std::size_t>(2 * b) + 1] += hr;
                ++leaf.hist_cnt[static_cast<std::size_t>(b)];
            }
        }
    };

    auto find_best_split = [&](LeafRecord& leaf) {
        leaf.splittable = false;
        leaf.gain = 0.0;
        const int count = leaf.end - leaf.begin;
        if (count < 2 * hp.min_child_samples) return;
        const double parent_term =
            leaf.sum_grad * leaf.sum_grad / (leaf.sum_hess + kHessEps);
        for (int s = 0; s < n_slots; ++s) {
            const int nb = mappers[static_cast<std::size_t>(s)].bins();
            if (nb < 2) continue;
            const int off = slot_offset[static_cast<std::size_t>(s)];
            const double* gh = leaf.hist_gh.data() + 2 * off;
            const int* cnt = leaf.hist_cnt.data() + off;
            double gl = 0, hl = 0;
            int cl = 0;
            for (int b = 0; b + 1 < nb; ++b) {
                const int cb = cnt[b];
                // An empty bin produces the same partition as the previous
                // cut; the earlier candidate already covered it.
                if (cb == 0) continue;
                gl += gh[2 * b];
                hl += gh[2 * b + 1];
                cl += cb;
                const int cr = count - cl;
                if (cl < hp.min_child_samples) continue;
                if (cr < hp.min_child_samples) break;
                const double gr = leaf.sum_grad - gl;
                const double hr = leaf.sum_hess - hl;
                const double gain =
                    0.5 * (gl * gl / (hl + kHessEps) + gr * gr / (hr + kHessEps) - parent_term);
                if (gain > leaf.gain) { // ties keep the earliest slot/bin
                    leaf.gain = gain;
                    leaf.slot = s;
                    leaf.bin = b;
                    leaf.left_grad = gl;
                    leaf.left_hess = hl;
                    leaf.left_cnt = cl;
                    leaf.splittable = true;
                }
            }
        }
        if (leaf.splittable && !(leaf.gain > 0.0)) leaf.splittable = false;
    };

    auto weighted_logloss = [&](const std::vector<double>& sc, const DataMatrix& data,
                                const std::vector<int>* class_of, double wsum) {
        if (wsum <= 0) return 0.0;
        double loss = 0;
        for (int i = 0; i < data.n; ++i) {
            const int c = class_of ? (*class_of)[static_cast<std::size_t>(i)]
                                   : yidx[static_cast<std::size_t>(i)];
            if (c < 0) continue;
            double mx = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < K; ++k)
                mx = std::max(mx, sc[static_cast<std::size_t>(i) * K + static_cast<std::size_t>(k)]);
            double denom = 0;
            for (int k = 0; k < K; ++k)
                denom += std::exp(sc[static_cast<std::size_t>(i) * K + static_cast<std::size_t>(k)] - mx);
            const double p =
                std::exp(sc[static_cast<std::size_t>(i) * K + static_cast<std::size_t>(c)] - mx) / denom;
            loss -= data.weights[static_cast<std::size_t>(i)] * std::log(std::max(p, kProbFloor));
        }
        return loss / wsum;
    };

    int rounds_run = 0;
    for (int round = 1; round <= hp.n_estimators; ++round) {
        // Gradients of the weighted softmax cross-entropy. The same softmax
        // also yields the training log-loss of the previous round's scores.
        double loss_acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double* srow = scores.data() + static_cast<std::size_t>(i) * K;
            double mx = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < K; ++k) mx = std::max(mx, srow[k]);
            double denom = 0;
            for (int k = 0; k < K; ++k) denom += probs[static_cast<std::size_t>(k)] = std::exp(srow[k] - mx);
            const double w = train.weights[static_cast<std::size_t>(i)];
            const int yi = yidx[static_cast<std::size_t>(i)];
            loss_acc -= w * std::log(std::max(probs[static_cast<std::size_t>(yi)] / denom, kProbFloor));
            for (int k = 0; k < K; ++k) {
                const double p = probs[static_cast<std::size_t>(k)] / denom;
                const double y = (k == yi) ? 1.0 : 0.0;
                grad[static_cast<std::size_t>(k) * n + static_cast<std::size_t>(i)] = w * (p - y);
                hess[static_cast<std::size_t>(k) * n + static_cast<std::size_t>(i)] =
                    std::max(w * p * (1.0 - p), 0.0);
            }
        }
        if (round > 1 && train_weight_sum > 0)
            model.train_loss.push_back(loss_acc / train_weight_sum);

        model.rounds.emplace_back();
        auto& class_trees = model.rounds.back();
        class_trees.resize(static_cast<std::size_t>(K));

        std::fill(root_gh.begin(), root_gh.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            const std::uint8_t* brow = binned.data() + static_cast<std::size_t>(i) * n_slots;
            for (int s = 0; s < n_slots; ++s) {
                double* cell =
                    root_gh.data() +
                    static_cast<std::size_t>(slot_offset[static_cast<std::size_t>(s)] + brow[s]) *
                        2 * static_cast<std::size_t>(K);
                for (int k = 0; k < K; ++k) {
                    cell[2 * k] += grad[static_cast<std::size_t>(k) * n + static_cast<std::size_t>(i)];
                    cell[2 * k + 1] +=
                        hess[static_cast<std::size_t>(k) * n + static_cast<std::size_t>(i)];
                }
            }
        }

        for (int k = 0; k < K; ++k) {
            const double* g = grad.data() + static_cast<std::size_t>(k) * n;
            const double* h = hess.data() + static_cast<std::size_t>(k) * n;

            GbdtTree& tree = class_trees[static_cast<std::size_t>(k)];
            auto add_node = [&tree](int cnt) {
                tree.split_feature.push_back(-1);
                tree.split_bin.push_back(-1);
                tree.threshold.push_back(0.0);
                tree.left.push_back(-1);
                tree.right.push_back(-1);
                tree.default_left.push_back(true);
                tree.value.push_back(0.0);
                tree.count.push_back(cnt);
                return tree.size() - 1;
            };

            std::iota(partition.begin(), partition.end(), 0);

            std::vector<LeafRecord> leaves;
            leaves.reserve(static_cast<std::size_t>(hp.num_leaves));
            {
                LeafRecord root;
                root.node = add_node(n);
                root.begin = 0;
                root.end = n;
                for (int i = 0; i < n; ++i) {
                    root.sum_grad += g[i];
                    root.sum_hess += h[i];
                }
                acquire_hist(root, /*clear=*/false);
                for (int b = 0; b < total_bins; ++b) {
                    root.hist_gh[static_cast<std::size_t>(2 * b)] =
                        root_gh[static_cast<std::size_t>(b) * 2 * K + static_cast<std::size_t>(2 * k)];
                    root.hist_gh[static_cast<std::size_t>(2 * b) + 1] =
                        root_gh[static_cast<std::size_t>(b) * 2 * K + static_cast<std::size_t>(2 * k) + 1];
                }
                std::copy(root_cnt.begin(), root_cnt.end(), root.hist_cnt.begin());
                find_best_split(root);
                leaves.push_back(std::move(root));
            }

            int n_leaves = 1;
            while (n_leaves < hp.num_leaves) {
                int best = -1;
                for (std::size_t li = 0; li < leaves.size(); ++li)
                    if (leaves[li].splittable &&
                        (best < 0 || leaves[li].gain > leaves[static_cast<std::size_t>(best)].gain))
                        best = static_cast<int>(li);
                if (best < 0) break;

                LeafRecord parent = std::move(leaves[static_cast<std::size_t>(best)]);
                leaves.erase(leaves.begin() + best);

                const int s = parent.slot;
                const int split_b = parent.bin;

                // Stable two-way partition of the parent's rows.
                int nl = 0, nr = 0;
                for (int p = parent.begin; p < parent.end; ++p) {
                    const int row = partition[static_cast<std::size_t>(p)];
                    if (binned[static_cast<std::size_t>(row) * n_slots + static_cast<std::size_t>(s)] <=
                        split_b)
                        partition[static_cast<std::size_t>(parent.begin + nl++)] = row;
                    else
                        scratch[static_cast<std::size_t>(nr++)] = row;
                }
                std::copy(scratch.begin(), scratch.begin() + nr,
                          partition.begin() + parent.begin + nl);

                LeafRecord lchild, rchild;
                lchild.begin = parent.begin;
                lchild.end = parent.begin + nl;
                lchild.sum_grad = parent.left_grad;
                lchild.sum_hess = parent.left_hess;
                rchild.begin = lchild.end;
                rchild.end = parent.end;
                rchild.sum_grad = parent.sum_grad - parent.left_grad;
                rchild.sum_hess = parent.sum_hess - parent.left_hess;

                lchild.node = add_node(nl);
                rchild.node = add_node(nr);

                const int f = slots[static_cast<std::size_t>(s)];
                const auto pn = static_cast<std::size_t>(parent.node);
                tree.split_feature[pn] = f;
                tree.split_bin[pn] = split_b;
                tree.threshold[pn] =
                    mappers[static_cast<std::size_t>(s)].edges[static_cast<std::size_t>(split_b)];
                tree.left[pn] = lchild.node;
                tree.right[pn] = rchild.node;
                tree.default_left[pn] = nl >= nr;

                // Children histograms: leaves too small to split again never
                // need one. The bigger child comes from parent-minus-sibling
                // subtraction unless it is small enough that a direct build
                // beats touching the whole histogram footprint.
                LeafRecord& small = nl <= nr ? lchild : rchild;
                LeafRecord& big = nl <= nr ? rchild : lchild;
                const int threshold = 2 * hp.min_child_samples;
                const bool small_needed = small.end - small.begin >= threshold;
                const bool big_needed = big.end - big.begin >= threshold;
                if (small_needed) {
                    acquire_hist(small);
                    build_hist(small, g, h);
                }
                if (big_needed) {
                    const bool direct_cheaper =
                        static_cast<long>(big.end - big.begin) * n_slots < total_bins;
                    if (small_needed && !direct_cheaper) {
                        big.hist_gh = std::move(parent.hist_gh);
                        big.hist_cnt = std::move(parent.hist_cnt);
                        for (std::size_t b = 0; b < big.hist_gh.size(); ++b)
                            big.hist_gh[b] -= small.hist_gh[b];
                        for (std::size_t b = 0; b < big.hist_cnt.size(); ++b)
                            big.hist_cnt[b] -= small.hist_cnt[b];
                    } else {
                        acquire_hist(big);
                        build_hist(big, g, h);
                    }
                }
                release_hist(parent);

                find_best_split(lchild);
                find_best_split(rchild);
                leaves.push_back(std::move(lchild));
                leaves.push_back(std::move(rchild));
                ++n_leaves;
            }

            // Finish leaves: Newton output, then push the new scores.
            for (auto& leaf : leaves) {
                const double out = leaf_output(leaf.sum_grad, leaf.sum_hess, hp.learning_rate);
                tree.value[static_cast<std::size_t>(leaf.node)] = out;
                for (int p = leaf.begin; p < leaf.end; ++p)
                    scores[static_cast<std::size_t>(partition[static_cast<std::size_t>(p)]) * K +
                           static_cast<std::size_t>(k)] += out;
                release_hist(leaf);
            }
        }

        rounds_run = round;

        if (valid) {
            for (int i = 0; i < n_valid; ++i) {
                const auto xrow = valid->row(i);
                for (int k = 0; k < K; ++k)
                    vscores[static_cast<std::size_t>(i) * K + static_cast<std::size_t>(k)] +=
                        class_trees[static_cast<std::size_t>(k)].predict(xrow);
            }
            const double vloss = weighted_logloss(vscores, *valid, &vclass, vweight_sum);
            model.valid_loss.push_back(vloss);
            if (vloss < best_valid) {
                best_valid = vloss;
                best_round = round;
                best_vscores = vscores;
            }
            if (hp.early_stopping_round > 0 && round - best_round >= hp.early_stopping_round)
                break;
        }
    }

    // The trace lags one round behind; close it with the final scores.
    if (rounds_run > 0)
        model.train_loss.push_back(weighted_logloss(scores, train, nullptr, train_weight_sum));

    model.best_iteration = valid && best_round > 0 ? best_round : rounds_run;

    FitOutput out;
    out.model = std::move(model);
    if (valid) out.valid_scores_at_best = std::move(best_vscores);
    return out;
}

GbdtModel fit_gbdt(const DataMatrix& train, const DataMatrix* valid, const GbdtHyperparams& hp,
                   const FeatureSet& mask) {
    return fit_gbdt_traced(train, valid, hp, mask).model;
}

// ------------------------------------------------------------ serialization

std::string GbdtModel::to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "gbdt-model";
    j["version"] = 1;
    j["classes"] = classes;
    j["feature_mask"] = feature_mask.names();
    j["best_iteration"] = best_iteration;
    j["hyperparams"] = {
        {"n_estimators", hp.n_estimators},
        {"num_leaves", hp.num_leaves},
        {"min_data_in_bin", hp.min_data_in_bin},
        {"min_child_samples", hp.min_child_samples},
        {"early_stopping_round", hp.early_stopping_round},
        {"learning_rate", hp.learning_rate},
        {"max_bins", hp.max_bins},
    };
    nlohmann::ordered_json edges = nlohmann::ordered_json::object();
    for (int f = 0; f < kNumFeatures; ++f)
        if (!bin_edges[static_cast<std::size_t>(f)].empty() || feature_mask.contains(f))
            edges[feature_name(f)] = bin_edges[static_cast<std::size_t>(f)];
    j["bin_edges"] = std::move(edges);
    nlohmann::ordered_json rnds = nlohmann::ordered_json::array();
    for (const auto& class_trees : rounds) {
        nlohmann::ordered_json rj = nlohmann::ordered_json::array();
        for (const auto& t : class_trees) {
            nlohmann::ordered_json tj;
            tj["split_feature"] = t.split_feature;
            tj["split_bin"] = t.split_bin;
            tj["threshold"] = t.threshold;
            tj["left"] = t.left;
            tj["right"] = t.right;
            tj["default_left"] = t.default_left;
            tj["value"] = t.value;
            tj["count"] = t.count;
            rj.push_back(std::move(tj));
        }
        rnds.push_back(std::move(rj));
    }
    j["rounds"] = std::move(rnds);
    return j.dump();
}

GbdtModel GbdtModel::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.value("format", "") != "gbdt-model" || j.value("version", 0) != 1)
        throw ValidationError("gbdt model: unknown format/version");
    GbdtModel m;
    m.classes = j.at("classes").get<std::vector<int>>();
    m.feature_mask = FeatureSet::from_names(j.at("feature_mask").get<std::vector<std::string>>());
    m.best_iteration = j.at("best_iteration").get<int>();
    const auto& hj = j.at("hyperparams");
    m.hp.n_estimators = hj.at("n_estimators").get<int>();
    m.hp.num_leaves = hj.at("num_leaves").get<int>();
    m.hp.min_data_in_bin = hj.at("min_data_in_bin").get<int>();
    m.hp.min_child_samples = hj.at("min_child_samples").get<int>();
    m.hp.early_stopping_round = hj.at("early_stopping_round").get<int>();
    m.hp.learning_rate = hj.at("learning_rate").get<double>();
    m.hp.max_bins = hj.at("max_bins").get<int>();
    m.bin_edges.assign(kNumFeatures, {});
    for (const auto& [name, edges] : j.at("bin_edges").items()) {
        const auto f = feature_from_name(name);
        if (!f) throw ValidationError("gbdt model: unknown feature \"" + name + "\"");
        m.bin_edges[static_cast<std::size_t>(*f)] = edges.get<std::vector<double>>();
    }
    for (const auto& rj : j.at("rounds")) {
        std::vector<GbdtTree> class_trees;
        for (const auto& tj : rj) {
            GbdtTree t;
            t.split_feature = tj.at("split_feature").get<std::vector<int>>();
            t.split_bin = tj.at("split_bin").get<std::vector<int>>();
            t.threshold = tj.at("threshold").get<std::vector<double>>();
            t.left = tj.at("left").get<std::vector<int>>();
            t.right = tj.at("right").get<std::vector<int>>();
            t.default_left = tj.at("default_left").get<std::vector<bool>>();
            t.value = tj.at("value").get<std::vector<double>>();
            t.count = tj.at("count").get<std::vector<int>>();
            for (int sf : t.split_feature)
                if (sf >= kNumFeatures)
                    throw ValidationError("gbdt model: split feature out of range");
            class_trees.push_back(std::move(t));
        }
        m.rounds.push_back(std::move(class_trees));
    }
    return m;
}

} // namespace pheno
