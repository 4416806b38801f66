#include "pheno/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "pheno/errors.hpp"
#include "pheno/rng.hpp"

namespace pheno {

// ------------------------------------------------------------ metrics

double metric_r2(std::span<const double> obs, std::span<const double> pred) {
    if (obs.size() != pred.size()) throw ValidationError("metric_r2: length mismatch");
    if (obs.size() < 2) throw ValidationError("metric_r2: need at least 2 pairs");
    double mean = 0;
    for (double y : obs) mean += y;
    mean /= static_cast<double>(obs.size());
    double ss_res = 0, ss_tot = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        ss_res += (obs[i] - pred[i]) * (obs[i] - pred[i]);
        ss_tot += (obs[i] - mean) * (obs[i] - mean);
    }
    if (ss_tot == 0) throw ValidationError("metric_r2: zero variance in observations");
    return 1.0 - ss_res / ss_tot;
}

double metric_mae(std::span<const double> obs, std::span<const double> pred) {
    if (obs.size() != pred.size()) throw ValidationError("metric_mae: length mismatch");
    if (obs.empty()) throw ValidationError("metric_mae: empty input");
    double sum = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) sum += std::abs(obs[i] - pred[i]);
    return sum / static_cast<double>(obs.size());
}

double objective_loss(std::span<const double> obs, std::span<const double> pred) {
    return (1.0 - metric_r2(obs, pred)) * metric_mae(obs, pred);
}

double within_tolerance_share(std::span<const double> obs, std::span<const double> pred,
                              double tol) {
    if (obs.size() != pred.size())
        throw ValidationError("within_tolerance_share: length mismatch");
    if (obs.empty()) throw ValidationError("within_tolerance_share: empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < obs.size(); ++i)
        if (std::abs(pred[i] - obs[i]) <= tol) ++hit;
    return static_cast<double>(hit) / static_cast<double>(obs.size());
}

// ------------------------------------------------------------ decoding

std::vector<StageDecode> decode_onsets(const DailyProbs& daily,
                                       const std::vector<int>& stage_list) {
    if (daily.days.empty()) throw ValidationError("decode_onsets: empty window");
    const std::size_t K = daily.classes.size();
    if (daily.probs.size() != daily.days.size() * K)
        throw ValidationError("decode_onsets: probability matrix shape mismatch");

    int background_cls = -1;
    for (std::size_t c = 0; c < K; ++c)
        if (daily.classes[c] == kBackgroundLabel) background_cls = static_cast<int>(c);

    std::vector<StageDecode> out;
    for (int stage : stage_list) {
        const auto it = std::find(daily.classes.begin(), daily.classes.end(), stage);
        if (it == daily.classes.end()) continue;
        const std::size_t c = static_cast<std::size_t>(it - daily.classes.begin());
        std::size_t best_day = 0;
        double best_p = -1.0;
        for (std::size_t d = 0; d < daily.days.size(); ++d) {
            const double p = daily.at(d, c);
            if (p > best_p) { // strictly greater keeps the earliest peak
                best_p = p;
                best_day = d;
            }
        }
        StageDecode dec;
        dec.bbch = stage;
        dec.day = daily.days[best_day];
        dec.probability = best_p;
        dec.detected = background_cls < 0 ||
                       best_p >= daily.at(best_day, static_cast<std::size_t>(background_cls));
        out.push_back(dec);
    }
    return out;
}

std::vector<double> ensemble_predict(std::span<const GbdtModel> models,
                                     std::span<const double> x) {
    if (models.empty()) throw ValidationError("ensemble_predict: no models");
    const auto& classes = models.front().classes;
    for (const auto& m : models)
        if (m.classes != classes)
            throw ValidationError("ensemble_predict: members disagree on the class list");
    std::vector<double> mean(classes.size(), 0.0);
    for (const auto& m : models) {
        const auto p = m.predict_proba(x);
        for (std::size_t c = 0; c < p.size(); ++c) mean[c] += p[c];
    }
    for (auto& v : mean) v /= static_cast<double>(models.size());
    return mean;
}

// ------------------------------------------------------------ nested CV

namespace {

void parallel_tasks(int n_tasks, int threads, const std::function<void(int)>& fn) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, n_tasks));
    if (threads == 1) {
        for (int t = 0; t < n_tasks; ++t) fn(t);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const int t = next.fetch_add(1);
                if (t >= n_tasks) return;
                try {
                    fn(t);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

struct UnitView {
    int unit = 0;
    int begin = 0, end = 0;                 // row range in a DataMatrix
    std::vector<Date> dates;                // per row
    std::vector<std::pair<int, Date>> obs;  // observed (bbch, date)
};

// Rows of the given units in deterministic order, with per-unit slices.
struct SubsetMatrix {
    DataMatrix matrix;
    std::vector<UnitView> views;
    PresortedColumns presorted; // reused across the fold's study trials
};

SubsetMatrix build_subset(const LabeledDataset& ds,
                          const std::vector<std::vector<int>>& rows_by_unit,
                          std::vector<int> units, const std::map<int, double>& weights) {
    std::sort(units.begin(), units.end());
    SubsetMatrix out;
    std::vector<int> rows;
    for (int u : units) {
        UnitView view;
        view.unit = u;
        view.begin = static_cast<int>(rows.size());
        for (int r : rows_by_unit[static_cast<std::size_t>(u)]) {
            rows.push_back(r);
            const auto& s = ds.samples[static_cast<std::size_t>(r)];
            view.dates.push_back(s.date);
            if (s.label != kBackgroundLabel) view.obs.emplace_back(s.label, s.date);
        }
        view.end = static_cast<int>(rows.size());
        out.views.push_back(std::move(view));
    }
    out.matrix = make_data_matrix(ds, rows, weights);
    out.presorted = presort_columns(out.matrix);
    return out;
}

// Peak-day decoding over raw per-row scores; used for the study loss where
// every observed stage needs a predicted day (no detection veto).
void pooled_pairs(const SubsetMatrix& subset, const std::vector<double>& scores,
                  const std::vector<int>& classes, std::vector<double>& obs_out,
                  std::vector<double>& pred_out) {
    const std::size_t K = classes.size();
    for (const auto& view : subset.views) {
        if (view.obs.empty()) continue;
        for (const auto& [bbch, obs_date] : view.obs) {
            const auto cit = std::find(classes.begin(), classes.end(), bbch);
            if (cit == classes.end()) continue;
            const std::size_t c = static_cast<std::size_t>(cit - classes.begin());
            int best_row = view.begin;
            double best_s = -std::numeric_limits<double>::infinity();
            for (int r = view.begin; r < view.end; ++r) {
                const double* srow = scores.data() + static_cast<std::size_t>(r) * K;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, srow[k]);
                double denom = 0;
                for (std::size_t k = 0; k < K; ++k) denom += std::exp(srow[k] - mx);
                const double p = std::exp(srow[c] - mx) / denom;
                if (p > best_s) {
                    best_s = p;
                    best_row = r;
                }
            }
            obs_out.push_back(static_cast<double>(obs_date.serial()));
            pred_out.push_back(
                static_cast<double>(view.dates[static_cast<std::size_t>(best_row - view.begin)].serial()));
        }
    }
}

double trial_loss(const SubsetMatrix& train, const SubsetMatrix& valid, const FeatureSet& mask,
                  const GbdtHyperparams& hp) {
    const FitOutput fit = fit_gbdt_traced(train.matrix, &valid.matrix, hp, mask, &train.presorted);
    std::vector<double> obs, pred;
    pooled_pairs(valid, fit.valid_scores_at_best, fit.model.classes, obs, pred);
    if (obs.size() < 2) return std::numeric_limits<double>::infinity();
    bool all_equal = true;
    for (double o : obs) all_equal = all_equal && o == obs.front();
    if (all_equal) return std::numeric_limits<double>::infinity();
    return objective_loss(obs, pred);
}

std::map<int, double> subset_class_weights(const LabeledDataset& ds,
                                           const std::vector<std::vector<int>>& rows_by_unit,
                                           const std::vector<int>& units) {
    std::vector<int> labels;
    for (int u : units)
        for (int r : rows_by_unit[static_cast<std::size_t>(u)])
            labels.push_back(ds.samples[static_cast<std::size_t>(r)].label);
    return compute_class_weights(labels);
}

} // namespace

std::vector<OnsetPrediction> NestedCvResult::all_predictions() const {
    std::vector<OnsetPrediction> out;
    for (const auto& f : folds) out.insert(out.end(), f.predictions.begin(), f.predictions.end());
    return out;
}

std::vector<std::pair<std::string, int>> dataset_units(
    const LabeledDataset& dataset, std::vector<std::vector<int>>* rows_by_unit) {
    std::vector<std::pair<std::string, int>> units;
    std::map<std::pair<std::string, int>, int> unit_of;
    for (const auto& s : dataset.samples) {
        const auto key = std::make_pair(s.station_id, s.season);
        if (!unit_of.contains(key)) {
            unit_of[key] = static_cast<int>(units.size());
            units.push_back(key);
        }
    }
    if (rows_by_unit) {
        rows_by_unit->assign(units.size(), {});
        for (std::size_t r = 0; r < dataset.samples.size(); ++r) {
            const auto& s = dataset.samples[r];
            (*rows_by_unit)[static_cast<std::size_t>(unit_of[{s.station_id, s.season}])].push_back(
                static_cast<int>(r));
        }
    }
    return units;
}

FoldObjective make_inner_objective(const LabeledDataset& dataset,
                                   std::vector<std::vector<int>> unit_folds) {
    struct State {
        const LabeledDataset* ds;
        std::vector<std::vector<int>> folds;
        std::vector<std::vector<int>> rows_by_unit;
        std::map<int, std::pair<SubsetMatrix, SubsetMatrix>> cache; // fold -> (train, valid)
    };
    auto state = std::make_shared<State>();
    state->ds = &dataset;
    state->folds = std::move(unit_folds);
    dataset_units(dataset, &state->rows_by_unit);

    return [state](const FoldEvalRequest& req) {
        const int n_folds = static_cast<int>(state->folds.size());
        if (req.fold < 0 || req.fold >= n_folds)
            throw ValidationError("inner objective: fold index out of range");
        auto it = state->cache.find(req.fold);
        if (it == state->cache.end()) {
            std::vector<int> train_units;
            for (int g = 0; g < n_folds; ++g)
                if (g != req.fold)
                    train_units.insert(train_units.end(),
                                       state->folds[static_cast<std::size_t>(g)].begin(),
                                       state->folds[static_cast<std::size_t>(g)].end());
            const auto weights = subset_class_weights(*state->ds, state->rows_by_unit, train_units);
            it = state->cache
                     .emplace(req.fold,
                              std::make_pair(build_subset(*state->ds, state->rows_by_unit,
                                                          train_units, weights),
                                             build_subset(*state->ds, state->rows_by_unit,
                                                          state->folds[static_cast<std::size_t>(
                                                              req.fold)],
                                                          weights)))
                     .first;
        }
        return trial_loss(it->second.first, it->second.second, req.mask, req.hp);
    };
}

NestedCvResult nested_cv(const LabeledDataset& dataset, const NestedCvConfig& config) {
    NestedCvResult result;

    // Station-season units; the fold grain that keeps one season's days
    // together.
    std::map<std::pair<std::string, int>, int> unit_of;
    for (const auto& s : dataset.samples) {
        const auto key = std::make_pair(s.station_id, s.season);
        if (!unit_of.contains(key)) {
            const int id = static_cast<int>(result.units.size());
            unit_of[key] = id;
            result.units.push_back(key);
        }
    }
    const int n_units = static_cast<int>(result.units.size());
    if (n_units < config.outer_folds)
        throw ValidationError("nested_cv: need at least " + std::to_string(config.outer_folds) +
                              " station-seasons, have " + std::to_string(n_units));

    std::vector<std::vector<int>> rows_by_unit(static_cast<std::size_t>(n_units));
    for (std::size_t r = 0; r < dataset.samples.size(); ++r) {
        const auto& s = dataset.samples[r];
        rows_by_unit[static_cast<std::size_t>(unit_of[{s.station_id, s.season}])].push_back(
            static_cast<int>(r));
    }

    result.split = kfold_split(n_units, config.outer_folds, config.seed, config.inner_folds);
    result.folds.resize(static_cast<std::size_t>(config.outer_folds));

    const std::uint64_t crop_tag = static_cast<std::uint64_t>(dataset.crop);
    const int n_tasks = config.outer_folds * config.inner_folds;
    std::vector<InnerFoldModel> members(static_cast<std::size_t>(n_tasks));

    parallel_tasks(n_tasks, config.threads, [&](int task) {
        const int f = task / config.inner_folds;
        const int j = task % config.inner_folds;

        const auto& inner = result.split.inner[static_cast<std::size_t>(f)];
        std::vector<int> train_units;
        for (int g = 0; g < config.inner_folds; ++g)
            if (g != j)
                train_units.insert(train_units.end(), inner[static_cast<std::size_t>(g)].begin(),
                                   inner[static_cast<std::size_t>(g)].end());
        const std::vector<int>& valid_units = inner[static_cast<std::size_t>(j)];

        const auto weights = subset_class_weights(dataset, rows_by_unit, train_units);
        const SubsetMatrix train = build_subset(dataset, rows_by_unit, train_units, weights);
        const SubsetMatrix valid = build_subset(dataset, rows_by_unit, valid_units, weights);

        auto evaluate_trial = [&](const FeatureSet& mask, const GbdtHyperparams& hp) {
            return trial_loss(train, valid, mask, hp);
        };

        const std::uint64_t study_seed =
            mix_seed(config.seed, crop_tag, static_cast<std::uint64_t>(f),
                     static_cast<std::uint64_t>(j));

        InnerFoldModel member;
        if (config.feature_search) {
            auto fold_results = select_feature_groups(
                [&](const FoldEvalRequest& req) { return evaluate_trial(req.mask, req.hp); }, 1,
                config.n_trials, study_seed, config.ranges);
            auto& r = fold_results.front();
            if (!std::isfinite(r.loss))
                throw ValidationError("nested_cv: every trial failed in outer fold " +
                                      std::to_string(f) + ", inner fold " + std::to_string(j));
            member.features = r.features;
            member.hp = r.hp;
            member.loss = r.loss;
            member.study = std::move(r.study);
        } else {
            const FeatureSet mask = config.fixed_mask;
            auto opt = tpe_optimize(
                [&](const Params& p) { return evaluate_trial(mask, hyperparams_from_params(p)); },
                hyperparameter_space(config.ranges), config.n_trials, study_seed);
            if (!std::isfinite(opt.best_loss))
                throw ValidationError("nested_cv: every trial failed in outer fold " +
                                      std::to_string(f) + ", inner fold " + std::to_string(j));
            member.features = mask;
            member.hp = hyperparams_from_params(opt.best_params);
            member.loss = opt.best_loss;
            member.study = std::move(opt.study);
        }

        // Refit the winner and keep only the rounds prediction uses.
        FitOutput refit =
            fit_gbdt_traced(train.matrix, &valid.matrix, member.hp, member.features,
                            &train.presorted);
        refit.model.rounds.resize(static_cast<std::size_t>(refit.model.best_iteration));
        member.model = std::move(refit.model);
        members[static_cast<std::size_t>(task)] = std::move(member);
    });

    // Assemble outer folds and predict their test units.
    for (int f = 0; f < config.outer_folds; ++f) {
        OuterFoldResult& fold = result.folds[static_cast<std::size_t>(f)];
        fold.test_units = result.split.outer[static_cast<std::size_t>(f)];
        std::sort(fold.test_units.begin(), fold.test_units.end());
        for (int g = 0; g < config.outer_folds; ++g)
            if (g != f)
                fold.train_units.insert(fold.train_units.end(),
                                        result.split.outer[static_cast<std::size_t>(g)].begin(),
                                        result.split.outer[static_cast<std::size_t>(g)].end());
        std::sort(fold.train_units.begin(), fold.train_units.end());

        std::vector<GbdtModel> models;
        for (int j = 0; j < config.inner_folds; ++j) {
            auto& m = members[static_cast<std::size_t>(f * config.inner_folds + j)];
            models.push_back(m.model); // copy for the ensemble call below
            fold.members.push_back(std::move(m));
        }

        const SubsetMatrix test = build_subset(dataset, rows_by_unit, fold.test_units, {});
        const auto& classes = models.front().classes;
        std::vector<int> stage_list;
        for (int c : classes)
            if (c != kBackgroundLabel) stage_list.push_back(c);

        for (const auto& view : test.views) {
            if (view.obs.empty()) continue;
            DailyProbs daily;
            daily.classes = classes;
            daily.days = view.dates;
            daily.probs.resize(view.dates.size() * classes.size());
            for (int r = view.begin; r < view.end; ++r) {
                const auto p = ensemble_predict(models, test.matrix.row(r));
                std::copy(p.begin(), p.end(),
                          daily.probs.begin() +
                              static_cast<std::size_t>(r - view.begin) * classes.size());
            }
            const auto decoded = decode_onsets(daily, stage_list);
            for (const auto& [bbch, obs_date] : view.obs) {
                const auto dit = std::find_if(decoded.begin(), decoded.end(),
                                              [&](const StageDecode& d) { return d.bbch == bbch; });
                if (dit == decoded.end()) continue;
                OnsetPrediction p;
                const auto& key = result.units[static_cast<std::size_t>(view.unit)];
                p.station_id = key.first;
                p.season = key.second;
                p.bbch = bbch;
                p.predicted_date = dit->day;
                p.observed_date = obs_date;
                p.predicted_doy = dit->day.day_of_year();
                p.observed_doy = obs_date.day_of_year();
                p.residual = static_cast<double>(dit->day - obs_date);
                p.detected = dit->detected;
                p.outer_fold = f;
                fold.predictions.push_back(std::move(p));
            }
        }
    }
    return result;
}

// ------------------------------------------------------------ reports

std::vector<StageMetrics> per_stage_metrics(const std::vector<OnsetPrediction>& onsets,
                                            double tol) {
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_stage;
    for (const auto& o : onsets) {
        if (!o.detected) continue;
        by_stage[o.bbch].first.push_back(static_cast<double>(o.observed_date.serial()));
        by_stage[o.bbch].second.push_back(static_cast<double>(o.predicted_date.serial()));
        by_stage[kBackgroundLabel].first.push_back(static_cast<double>(o.observed_date.serial()));
        by_stage[kBackgroundLabel].second.push_back(static_cast<double>(o.predicted_date.serial()));
    }
    std::vector<StageMetrics> out;
    for (const auto& [bbch, pair] : by_stage) {
        const auto& [obs, pred] = pair;
        StageMetrics m;
        m.bbch = bbch;
        m.n = static_cast<int>(obs.size());
        m.mae = metric_mae(obs, pred);
        m.within_tol = within_tolerance_share(obs, pred, tol);
        bool degenerate = obs.size() < 2;
        if (!degenerate) {
            bool all_equal = true;
            for (double o : obs) all_equal = all_equal && o == obs.front();
            degenerate = all_equal;
        }
        if (degenerate) {
            m.r2 = std::numeric_limits<double>::quiet_NaN();
            m.objective = std::numeric_limits<double>::quiet_NaN();
        } else {
            m.r2 = metric_r2(obs, pred);
            m.objective = (1.0 - m.r2) * m.mae;
        }
        out.push_back(m);
    }
    return out;
}

ResidualReport residual_report(const std::vector<OnsetPrediction>& onsets,
                               std::vector<double> edges, ResidualGroupBy group_by) {
    if (onsets.empty()) throw ValidationError("residual_report: no predictions");
    std::sort(edges.begin(), edges.end());
    ResidualReport rep;
    rep.edges = edges;

    const std::size_t n_bins = edges.size() + 1;
    auto bin_of = [&](double r) {
        std::size_t idx = 0;
        for (double e : edges)
            if (r > e || (r == e && e < 0)) ++idx;
        return idx;
    };
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (b == 0)
            rep.bin_labels.push_back("<" + fmt(edges.front()));
        else if (b == n_bins - 1)
            rep.bin_labels.push_back(">" + fmt(edges.back()));
        else {
            const double lo = edges[b - 1], hi = edges[b];
            rep.bin_labels.push_back(std::string(lo < 0 ? "[" : "(") + fmt(lo) + "," + fmt(hi) +
                                     (hi >= 0 ? "]" : ")"));
        }
    }

    auto group_key = [&](const OnsetPrediction& o) -> std::string {
        switch (group_by) {
            case ResidualGroupBy::Stage: return "bbch_" + std::to_string(o.bbch);
            case ResidualGroupBy::Year: return std::to_string(o.season);
            case ResidualGroupBy::Station: return o.station_id;
        }
        return {};
    };

    std::map<std::string, ResidualBinRow> rows;
    std::map<int, std::vector<double>> abs_by_year;
    double abs_sum = 0;
    int n_detected = 0;
    for (const auto& o : onsets) {
        if (!o.detected) continue;
        auto& row = rows[group_key(o)];
        if (row.counts.empty()) row.counts.assign(n_bins, 0);
        ++row.counts[bin_of(o.residual)];
        ++row.n;
        abs_by_year[o.season].push_back(std::abs(o.residual));
        abs_sum += std::abs(o.residual);
        ++n_detected;
    }
    if (n_detected == 0) throw ValidationError("residual_report: no detected predictions");
    rep.overall_mae = abs_sum / n_detected;

    for (auto& [key, row] : rows) {
        row.group = key;
        row.percents.resize(n_bins);
        for (std::size_t b = 0; b < n_bins; ++b)
            row.percents[b] = 100.0 * row.counts[b] / static_cast<double>(row.n);
        rep.rows.push_back(std::move(row));
    }

    for (const auto& [year, absr] : abs_by_year) {
        YearMaeDelta d;
        d.year = year;
        d.n = static_cast<int>(absr.size());
        d.mae = std::accumulate(absr.begin(), absr.end(), 0.0) / d.n;
        d.delta = d.mae - rep.overall_mae;
        rep.per_year.push_back(d);
    }
    return rep;
}

} // namespace pheno
