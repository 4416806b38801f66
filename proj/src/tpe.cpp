#include "pheno/tpe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "pheno/errors.hpp"

namespace pheno {

// ------------------------------------------------------------ space

SearchSpace& SearchSpace::uniform(const std::string& name, double lo, double hi) {
    dims.push_back({name, DimKind::Uniform, lo, hi, 0, {}});
    return *this;
}
SearchSpace& SearchSpace::log_uniform(const std::string& name, double lo, double hi) {
    dims.push_back({name, DimKind::LogUniform, lo, hi, 0, {}});
    return *this;
}
SearchSpace& SearchSpace::int_uniform(const std::string& name, int lo, int hi,
                                      const std::string& parent) {
    dims.push_back({name, DimKind::IntUniform, static_cast<double>(lo), static_cast<double>(hi), 0,
                    parent});
    return *this;
}
SearchSpace& SearchSpace::int_log_uniform(const std::string& name, int lo, int hi) {
    dims.push_back({name, DimKind::IntLogUniform, static_cast<double>(lo),
                    static_cast<double>(hi), 0, {}});
    return *this;
}
SearchSpace& SearchSpace::categorical(const std::string& name, int n_choices,
                                      const std::string& parent) {
    dims.push_back({name, DimKind::Categorical, 0, 0, n_choices, parent});
    return *this;
}
SearchSpace& SearchSpace::boolean(const std::string& name, const std::string& parent) {
    dims.push_back({name, DimKind::Boolean, 0, 0, 2, parent});
    return *this;
}

void SearchSpace::validate() const {
    std::set<std::string> seen;
    for (const auto& d : dims) {
        if (d.name.empty() || !seen.insert(d.name).second)
            throw ValidationError("search space: duplicate or empty dimension name");
        switch (d.kind) {
            case DimKind::Uniform:
            case DimKind::IntUniform:
                if (!(d.lo < d.hi)) throw ValidationError("search space: lo must be < hi");
                break;
            case DimKind::LogUniform:
            case DimKind::IntLogUniform:
                if (!(d.lo > 0 && d.lo < d.hi))
                    throw ValidationError("search space: log dims need 0 < lo < hi");
                break;
            case DimKind::Categorical:
            case DimKind::Boolean:
                if (d.n_choices < 1) throw ValidationError("search space: need >= 1 choice");
                break;
        }
        if (!d.parent.empty()) {
            if (!seen.contains(d.parent))
                throw ValidationError("search space: parent '" + d.parent +
                                      "' must be declared before '" + d.name + "'");
            bool parent_is_bool = false;
            for (const auto& p : dims)
                if (p.name == d.parent) parent_is_bool = p.kind == DimKind::Boolean;
            if (!parent_is_bool)
                throw ValidationError("search space: parent '" + d.parent + "' must be boolean");
        }
    }
}

// ------------------------------------------------------------ study

int StudyState::completed() const {
    int n = 0;
    for (const auto& t : trials)
        if (!t.failed) ++n;
    return n;
}

void StudyState::record(Params params, double loss) {
    Trial t;
    t.params = std::move(params);
    t.failed = !std::isfinite(loss);
    t.loss = t.failed ? std::numeric_limits<double>::infinity() : loss;
    trials.push_back(std::move(t));
}

std::string StudyState::to_jsonl() const {
    std::string out;
    for (const auto& t : trials) {
        nlohmann::ordered_json j;
        j["params"] = t.params;
        if (t.failed)
            j["loss"] = nullptr;
        else
            j["loss"] = t.loss;
        j["failed"] = t.failed;
        out += j.dump();
        out += '\n';
    }
    return out;
}

StudyState StudyState::from_jsonl(const std::string& text, std::uint64_t seed, double gamma,
                                  int n_startup, int n_candidates) {
    StudyState s(seed, gamma, n_startup, n_candidates);
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        Trial t;
        t.params = j.at("params").get<Params>();
        t.failed = j.at("failed").get<bool>();
        t.loss = t.failed ? std::numeric_limits<double>::infinity() : j.at("loss").get<double>();
        s.trials.push_back(std::move(t));
    }
    return s;
}

// ------------------------------------------------------------ suggest

namespace {

bool is_log(DimKind k) { return k == DimKind::LogUniform || k == DimKind::IntLogUniform; }
bool is_int(DimKind k) { return k == DimKind::IntUniform || k == DimKind::IntLogUniform; }
bool is_cat(DimKind k) { return k == DimKind::Categorical || k == DimKind::Boolean; }

double to_internal(const Dimension& d, double v) { return is_log(d.kind) ? std::log(v) : v; }

double dim_lo(const Dimension& d) { return to_internal(d, d.lo); }
double dim_hi(const Dimension& d) { return to_internal(d, d.hi); }

double clamp_round(const Dimension& d, double internal) {
    double v = is_log(d.kind) ? std::exp(internal) : internal;
    v = std::clamp(v, d.lo, d.hi);
    if (is_int(d.kind)) v = std::clamp(std::round(v), d.lo, d.hi);
    return v;
}

double uniform_draw(const Dimension& d, Rng& rng) {
    if (is_cat(d.kind)) return static_cast<double>(rng.uniform_int(0, d.n_choices - 1));
    if (is_int(d.kind) && !is_log(d.kind))
        return static_cast<double>(
            rng.uniform_int(static_cast<std::int64_t>(d.lo), static_cast<std::int64_t>(d.hi)));
    return clamp_round(d, rng.uniform(dim_lo(d), dim_hi(d)));
}

// Parzen estimator for one numeric dimension: one Gaussian kernel per
// observed point plus a wide prior kernel at the range midpoint. Kernel
// widths come from the gaps between neighboring points (the prior kernel
// included), floored at 1% of the range, so isolated points stay connected
// to unexplored space while tight clusters sharpen.
struct NumericDensity {
    std::vector<double> mus;    // internal space, sorted (prior included)
    std::vector<double> sigmas; // one per kernel
    double lo = 0.0, hi = 1.0;

    void fit(const Dimension& d, const std::vector<double>& values) {
        lo = dim_lo(d);
        hi = dim_hi(d);
        const double range = hi - lo;
        mus.clear();
        for (double v : values) mus.push_back(to_internal(d, v));
        const double prior_mu = 0.5 * (lo + hi);
        mus.push_back(prior_mu);
        std::sort(mus.begin(), mus.end());

        const std::size_t n = mus.size();
        sigmas.assign(n, range);
        for (std::size_t i = 0; i < n; ++i) {
            const double left = i > 0 ? mus[i] - mus[i - 1] : mus[i] - lo;
            const double right = i + 1 < n ? mus[i + 1] - mus[i] : hi - mus[i];
            sigmas[i] = std::clamp(std::max(left, right), 0.01 * range, range);
        }
        // The prior kernel itself stays wide.
        const std::size_t prior_idx = static_cast<std::size_t>(
            std::lower_bound(mus.begin(), mus.end(), prior_mu) - mus.begin());
        if (prior_idx < n) sigmas[prior_idx] = range;
    }

    double pdf(double internal) const {
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        double sum = 0.0;
        for (std::size_t i = 0; i < mus.size(); ++i) {
            const double z = (internal - mus[i]) / sigmas[i];
            sum += std::exp(-0.5 * z * z) * inv_sqrt_2pi / sigmas[i];
        }
        return sum / static_cast<double>(mus.size());
    }

    double sample(const Dimension& d, Rng& rng) const {
        const std::size_t pick = static_cast<std::size_t>(rng.bounded(mus.size()));
        return clamp_round(d, mus[pick] + sigmas[pick] * rng.normal());
    }
};

struct CategoricalDensity {
    std::vector<double> probs;

    void fit(const Dimension& d, const std::vector<double>& values) {
        std::vector<double> counts(static_cast<std::size_t>(d.n_choices), 1.0); // +1 smoothing
        for (double v : values) {
            const int c = static_cast<int>(v);
            if (c >= 0 && c < d.n_choices) counts[static_cast<std::size_t>(c)] += 1.0;
        }
        double total = 0;
        for (double c : counts) total += c;
        probs.resize(counts.size());
        for (std::size_t i = 0; i < counts.size(); ++i) probs[i] = counts[i] / total;
    }

    double pdf(double v) const {
        const int c = static_cast<int>(v);
        if (c < 0 || c >= static_cast<int>(probs.size())) return 1e-12;
        return probs[static_cast<std::size_t>(c)];
    }

    double sample(Rng& rng) const {
        const double u = rng.next_double();
        double acc = 0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<double>(i);
        }
        return static_cast<double>(probs.size() - 1);
    }
};

struct DimDensities {
    bool categorical = false;
    NumericDensity num_good, num_bad;
    CategoricalDensity cat_good, cat_bad;
};

bool dim_active(const Dimension& d, const Params& p) {
    if (d.parent.empty()) return true;
    const auto it = p.find(d.parent);
    return it != p.end() && it->second != 0.0;
}

Params uniform_params(const SearchSpace& space, Rng& rng) {
    Params p;
    for (const auto& d : space.dims) {
        if (!dim_active(d, p)) continue;
        p[d.name] = uniform_draw(d, rng);
    }
    return p;
}

} // namespace

Params tpe_suggest(StudyState& study, const SearchSpace& space) {
    space.validate();

    // Completed trials only; failed ones never enter the densities.
    std::vector<const Trial*> done;
    for (const auto& t : study.trials)
        if (!t.failed) done.push_back(&t);

    if (static_cast<int>(done.size()) < study.n_startup)
        return uniform_params(space, study.rng);

    // Rank-based split (ties by arrival order). The good side holds the best
    // ceil(gamma * sqrt(n)) trials, capped at 25 — the reference TPE's
    // schedule, which keeps the good density tight around the incumbents
    // instead of diluting it across a quarter of the history.
    std::vector<std::size_t> order(done.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return done[a]->loss < done[b]->loss; });
    const std::size_t n_good = std::min<std::size_t>(
        25, std::max<std::size_t>(
                1, static_cast<std::size_t>(std::ceil(
                       study.gamma * std::sqrt(static_cast<double>(done.size()))))));

    std::vector<DimDensities> dens(space.dims.size());
    for (std::size_t di = 0; di < space.dims.size(); ++di) {
        const auto& d = space.dims[di];
        std::vector<double> good_vals, bad_vals;
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const auto it = done[order[oi]]->params.find(d.name);
            if (it == done[order[oi]]->params.end()) continue;
            (oi < n_good ? good_vals : bad_vals).push_back(it->second);
        }
        auto& dd = dens[di];
        dd.categorical = is_cat(d.kind);
        if (dd.categorical) {
            dd.cat_good.fit(d, good_vals);
            dd.cat_bad.fit(d, bad_vals);
        } else {
            dd.num_good.fit(d, good_vals);
            dd.num_bad.fit(d, bad_vals);
        }
    }

    Params best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < study.n_candidates; ++c) {
        Params cand;
        double score = 0;
        for (std::size_t di = 0; di < space.dims.size(); ++di) {
            const auto& d = space.dims[di];
            if (!dim_active(d, cand)) continue;
            const auto& dd = dens[di];
            double v;
            if (dd.categorical) {
                v = dd.cat_good.sample(study.rng);
                score += std::log(dd.cat_good.pdf(v)) - std::log(dd.cat_bad.pdf(v));
            } else {
                v = dd.num_good.sample(d, study.rng);
                const double internal = to_internal(d, v);
                score += std::log(dd.num_good.pdf(internal)) - std::log(dd.num_bad.pdf(internal));
            }
            cand[d.name] = v;
        }
        if (score > best_score) {
            best_score = score;
            best = std::move(cand);
        }
    }
    return best;
}

OptimizeResult tpe_optimize(const Objective& objective, const SearchSpace& space, int n_trials,
                            std::uint64_t seed, double gamma, int n_startup, int n_candidates) {
    if (n_trials < 1) throw ValidationError("tpe_optimize: n_trials must be >= 1");
    OptimizeResult res;
    res.study = StudyState(seed, gamma, n_startup, n_candidates);
    res.best_loss = std::numeric_limits<double>::infinity();
    for (int t = 0; t < n_trials; ++t) {
        Params p = tpe_suggest(res.study, space);
        const double loss = objective(p);
        res.study.record(p, loss);
        if (std::isfinite(loss) && loss < res.best_loss) {
            res.best_loss = loss;
            res.best_params = std::move(p);
        }
    }
    return res;
}

// ------------------------------------------------------------ feature search

namespace {

std::string group_dim_name(int gid) { return "group:" + std::to_string(gid); }
std::string feature_dim_name(int f) { return "feat:" + feature_name(f); }

void add_hyperparam_dims(SearchSpace& s, const GbdtSearchRanges& r) {
    s.int_log_uniform("hp:n_estimators", r.n_estimators_lo, r.n_estimators_hi);
    s.int_log_uniform("hp:num_leaves", r.num_leaves_lo, r.num_leaves_hi);
    s.int_log_uniform("hp:min_data_in_bin", r.min_data_in_bin_lo, r.min_data_in_bin_hi);
    s.int_log_uniform("hp:min_child_samples", r.min_child_samples_lo, r.min_child_samples_hi);
    s.int_uniform("hp:early_stopping_round", r.early_stopping_lo, r.early_stopping_hi);
}

} // namespace

SearchSpace feature_selection_space(const GbdtSearchRanges& ranges) {
    SearchSpace s;
    for (int gid = 1; gid <= kNumFeatureGroups; ++gid) {
        s.boolean(group_dim_name(gid));
        for (int f : group_features(gid)) s.boolean(feature_dim_name(f), group_dim_name(gid));
    }
    add_hyperparam_dims(s, ranges);
    return s;
}

SearchSpace hyperparameter_space(const GbdtSearchRanges& ranges) {
    SearchSpace s;
    add_hyperparam_dims(s, ranges);
    return s;
}

FeatureSet mask_from_params(const Params& p) {
    FeatureSet mask;
    for (int f = 0; f < kNumFeatures; ++f) {
        const auto it = p.find(feature_dim_name(f));
        if (it != p.end() && it->second != 0.0) mask.set(f);
    }
    return mask;
}

GbdtHyperparams hyperparams_from_params(const Params& p, const GbdtHyperparams& base) {
    GbdtHyperparams hp = base;
    auto get = [&](const char* name, int& out) {
        const auto it = p.find(name);
        if (it != p.end()) out = static_cast<int>(it->second);
    };
    get("hp:n_estimators", hp.n_estimators);
    get("hp:num_leaves", hp.num_leaves);
    get("hp:min_data_in_bin", hp.min_data_in_bin);
    get("hp:min_child_samples", hp.min_child_samples);
    get("hp:early_stopping_round", hp.early_stopping_round);
    return hp;
}

std::vector<FoldSelectionResult> select_feature_groups(const FoldObjective& objective, int n_folds,
                                                       int n_trials, std::uint64_t seed,
                                                       const GbdtSearchRanges& ranges) {
    const SearchSpace space = feature_selection_space(ranges);
    std::vector<FoldSelectionResult> results;
    results.reserve(static_cast<std::size_t>(n_folds));
    for (int fold = 0; fold < n_folds; ++fold) {
        FoldSelectionResult r;
        r.study = StudyState(mix_seed(seed, 0x666f6c64, static_cast<std::uint64_t>(fold)));
        r.loss = std::numeric_limits<double>::infinity();
        for (int t = 0; t < n_trials; ++t) {
            Params p = tpe_suggest(r.study, space);
            const FeatureSet mask = mask_from_params(p);
            double loss;
            if (mask.count() == 0) {
                loss = std::numeric_limits<double>::infinity();
            } else {
                FoldEvalRequest req;
                req.fold = fold;
                req.mask = mask;
                req.hp = hyperparams_from_params(p);
                loss = objective(req);
            }
            r.study.record(p, loss);
            if (std::isfinite(loss) && loss < r.loss) {
                r.loss = loss;
                r.features = mask;
                r.hp = hyperparams_from_params(p);
            }
        }
        results.push_back(std::move(r));
    }
    return results;
}

FeatureImportanceTable feature_importance(Crop crop,
                                          const std::vector<FoldSelectionResult>& folds) {
    if (folds.empty()) throw ValidationError("feature_importance: no fold results");
    FeatureImportanceTable table;
    table.crop = crop;
    for (int f = 0; f < kNumFeatures; ++f) {
        int n = 0;
        double loss_sum = 0;
        for (const auto& fold : folds) {
            if (!std::isfinite(fold.loss) || !fold.features.contains(f)) continue;
            ++n;
            loss_sum += fold.loss;
        }
        if (n == 0) continue;
        FeatureImportance fi;
        fi.feature = f;
        fi.n_folds = n;
        fi.mean_loss = loss_sum / n;
        fi.importance = fi.mean_loss > 0 ? static_cast<double>(n) / fi.mean_loss
                                         : std::numeric_limits<double>::infinity();
        table.ranked.push_back(fi);
    }
    std::sort(table.ranked.begin(), table.ranked.end(),
              [](const FeatureImportance& a, const FeatureImportance& b) {
                  if (a.importance != b.importance) return a.importance > b.importance;
                  if (a.n_folds != b.n_folds) return a.n_folds > b.n_folds;
                  return feature_name(a.feature) < feature_name(b.feature);
              });
    return table;
}

FeatureSet standardize_feature_set(const std::vector<FeatureImportanceTable>& tables, int m) {
    if (tables.empty()) throw ValidationError("standardize_feature_set: no tables");
    struct Agg {
        double mean_importance = 0;
        int total_folds = 0;
    };
    std::array<Agg, kNumFeatures> agg{};
    for (const auto& t : tables)
        for (const auto& fi : t.ranked) {
            agg[static_cast<std::size_t>(fi.feature)].mean_importance += fi.importance;
            agg[static_cast<std::size_t>(fi.feature)].total_folds += fi.n_folds;
        }
    std::vector<int> order;
    for (int f = 0; f < kNumFeatures; ++f) {
        agg[static_cast<std::size_t>(f)].mean_importance /= static_cast<double>(tables.size());
        order.push_back(f);
    }
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const auto& A = agg[static_cast<std::size_t>(a)];
        const auto& B = agg[static_cast<std::size_t>(b)];
        if (A.mean_importance != B.mean_importance) return A.mean_importance > B.mean_importance;
        if (A.total_folds != B.total_folds) return A.total_folds > B.total_folds;
        return feature_name(a) < feature_name(b);
    });

    FeatureSet out;
    const int take = std::min(m, static_cast<int>(kNumFeatures));
    for (int i = 0; i < take; ++i) out.set(order[static_cast<std::size_t>(i)]);
    return out;
}

} // namespace pheno
