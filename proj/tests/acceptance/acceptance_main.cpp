// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. The heavier criteria build their synthetic worlds under a
// temp directory through the same stages the CLI runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "common/oracles.hpp"
#include "pheno/config.hpp"
#include "pheno/csv.hpp"
#include "pheno/dataset.hpp"
#include "pheno/evaluate.hpp"
#include "pheno/features.hpp"
#include "pheno/gbdt.hpp"
#include "pheno/ingest.hpp"
#include "pheno/io_util.hpp"
#include "pheno/pipeline.hpp"
#include "pheno/preprocess.hpp"
#include "pheno/rng.hpp"
#include "pheno/tpe.hpp"

using namespace pheno;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

class Criterion {
public:
    Criterion(int id, std::string name) : id_(id), name_(std::move(name)) {
        start_ = std::chrono::steady_clock::now();
    }

    void expect(bool ok, const std::string& what) {
        if (!ok) {
            pass_ = false;
            if (!detail_.empty()) detail_ += "; ";
            detail_ += what;
        }
    }

    void note(const std::string& text) {
        if (!detail_.empty()) detail_ += "; ";
        detail_ += text;
    }

    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    ~Criterion() {
        if (!pass_) ++g_failures;
        std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n", pass_ ? "PASS" : "FAIL", id_,
                    name_.c_str(), elapsed(), detail_.empty() ? "" : " -- ", detail_.c_str());
        std::fflush(stdout);
    }

private:
    int id_;
    std::string name_;
    std::string detail_;
    bool pass_ = true;
    std::chrono::steady_clock::time_point start_;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

// ------------------------------------------------------------ criterion 1

void criterion_metric_oracles() {
    Criterion c(1, "metric oracles agree with brute force within 1e-12");
    Rng rng(0xAC01);
    double max_err = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng.bounded(49));
        std::vector<double> obs, pred;
        for (int i = 0; i < n; ++i) {
            obs.push_back(rng.uniform(50, 300));
            pred.push_back(rng.uniform(50, 300));
        }
        obs[0] += 1.0; // guarantee nonzero variance

        // Brute force, straight from the formulas.
        double mean = 0;
        for (double y : obs) mean += y;
        mean /= n;
        double ss_res = 0, ss_tot = 0, abs_sum = 0;
        for (int i = 0; i < n; ++i) {
            ss_res += std::pow(obs[static_cast<std::size_t>(i)] - pred[static_cast<std::size_t>(i)], 2);
            ss_tot += std::pow(obs[static_cast<std::size_t>(i)] - mean, 2);
            abs_sum += std::abs(obs[static_cast<std::size_t>(i)] - pred[static_cast<std::size_t>(i)]);
        }
        const double r2_bf = 1.0 - ss_res / ss_tot;
        const double mae_bf = abs_sum / n;
        const double obj_bf = (1.0 - r2_bf) * mae_bf;

        max_err = std::max(max_err, std::abs(metric_r2(obs, pred) - r2_bf));
        max_err = std::max(max_err, std::abs(metric_mae(obs, pred) - mae_bf));
        max_err = std::max(max_err, std::abs(objective_loss(obs, pred) - obj_bf));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.expect(max_err < 1e-12, "max deviation " + fmt(max_err));
    c.expect(secs < 1.0, "took " + fmt(secs) + "s");
    c.note("max err " + fmt(max_err));
}

// ------------------------------------------------------------ criterion 2

void criterion_loess_oracle() {
    Criterion c(2, "loess matches the weighted-least-squares oracle");
    Rng rng(0xAC02);
    double max_err = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 3 + static_cast<int>(rng.bounded(198));
        IrregularSeries s;
        std::int64_t day = static_cast<std::int64_t>(rng.bounded(1000));
        for (int i = 0; i < n; ++i) {
            day += 1 + static_cast<std::int64_t>(rng.bounded(5));
            s.days.push_back(day);
            s.values.push_back(std::sin(0.05 * static_cast<double>(day)) + 0.3 * rng.normal());
        }
        const double fraction = rng.uniform(0.02, 1.0);
        const auto out = loess_smooth(s, fraction);
        for (std::size_t i = 0; i < s.size(); ++i)
            max_err = std::max(max_err,
                               std::abs(out.values[i] - oracle::loess_at(s, i, fraction)));
    }
    c.expect(max_err < 1e-9, "max deviation " + fmt(max_err));

    // Exact lines are reproduced.
    IrregularSeries line;
    for (int i = 0; i < 60; ++i) {
        line.days.push_back(i * 2 + (i % 3));
        line.values.push_back(-0.75 * static_cast<double>(line.days.back()) + 4.0);
    }
    double line_err = 0;
    for (double fraction : {0.03, 0.2, 1.0}) {
        const auto out = loess_smooth(line, fraction);
        for (std::size_t i = 0; i < line.size(); ++i)
            line_err = std::max(line_err, std::abs(out.values[i] - line.values[i]));
    }
    c.expect(line_err < 1e-9, "line deviation " + fmt(line_err));
    c.note("max err " + fmt(max_err));
}

// ------------------------------------------------------------ criterion 3

void criterion_idw_oracle() {
    Criterion c(3, "idw matches brute-force sort-and-weight");
    Rng rng(0xAC03);
    double max_err = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 1 + static_cast<int>(rng.bounded(30));
        const int k = 1 + static_cast<int>(rng.bounded(15));
        std::vector<IdwSample> st;
        for (int i = 0; i < n; ++i)
            st.push_back({rng.uniform(47, 55), rng.uniform(6, 15), rng.uniform(-20, 40)});
        const double tlat = rng.uniform(47, 55);
        const double tlon = rng.uniform(6, 15);

        std::vector<std::pair<double, std::size_t>> order;
        for (std::size_t i = 0; i < st.size(); ++i)
            order.emplace_back(haversine_m(st[i].lat, st[i].lon, tlat, tlon), i);
        std::sort(order.begin(), order.end());
        const std::size_t use = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
        double num = 0, den = 0;
        bool exact = false;
        double exact_val = 0;
        for (std::size_t i = 0; i < use; ++i) {
            const auto [d, idx] = order[i];
            if (d == 0.0 && !exact) {
                exact = true;
                exact_val = st[idx].value;
            }
            num += st[idx].value / (d * d);
            den += 1.0 / (d * d);
        }
        const double expected = exact ? exact_val : num / den;
        max_err = std::max(max_err, std::abs(idw_interpolate(st, tlat, tlon, k) - expected));
    }
    c.expect(max_err < 1e-12, "max deviation " + fmt(max_err));

    // Zero-distance exactness, bitwise.
    const std::vector<IdwSample> st = {{50.5, 10.25, 7.3}, {52.0, 8.0, -2.0}, {49.0, 12.0, 15.5}};
    c.expect(idw_interpolate(st, 50.5, 10.25, 10) == 7.3, "zero-distance value not exact");
    c.note("max err " + fmt(max_err));
}

// ------------------------------------------------------------ criterion 4

void criterion_gdd() {
    Criterion c(4, "gdd clamp, season reset, cumulative-sum oracle, base temperatures");
    Rng rng(0xAC04);
    for (int i = 0; i < 5000; ++i) {
        const double tmin = rng.uniform(-25, 30);
        const double tmax = tmin + rng.uniform(0, 25);
        const double g = gdd_daily(tmax, tmin, rng.uniform(-2, 14));
        if (g < 0) {
            c.expect(false, "negative gdd");
            break;
        }
    }

    // Two-year random series: exact running-sum oracle with DOY-265 resets.
    DailySeries tmax, tmin, prcp;
    tmax.start = tmin.start = prcp.start = Date(2019, 6, 1);
    for (int i = 0; i < 700; ++i) {
        const double lo = rng.uniform(-10, 20);
        tmin.values.push_back(lo);
        tmax.values.push_back(lo + rng.uniform(0, 15));
        prcp.values.push_back(rng.uniform(0, 12));
    }
    const CropConfig cfg = CropConfig::for_crop(Crop::WinterWheat);
    const auto acc = accumulate_climate(tmax, tmin, prcp, cfg);
    double sum = 0, psum = 0;
    bool exact = true;
    int resets = 0;
    for (std::size_t i = 0; i < tmax.size(); ++i) {
        const Date day = tmax.date_at(i);
        if (day.day_of_year() == 265) {
            sum = 0;
            psum = 0;
            ++resets;
            if (*acc.gdd_sum.values[i] !=
                gdd_daily(*tmax.values[i], *tmin.values[i], cfg.t_base))
                exact = false;
        }
        sum += gdd_daily(*tmax.values[i], *tmin.values[i], cfg.t_base);
        psum += *prcp.values[i];
        if (*acc.gdd_sum.values[i] != sum || *acc.prcp_sum.values[i] != psum) exact = false;
    }
    c.expect(exact, "running sums deviate from the oracle");
    c.expect(resets == 2, "expected two season resets");

    c.expect(crop_base_temperature(Crop::WinterWheat) == 4.5 &&
                 crop_base_temperature(Crop::WinterRapeseed) == 4.5 &&
                 crop_base_temperature(Crop::WinterRye) == 4.5 &&
                 crop_base_temperature(Crop::SpringBarley) == 4.5 &&
                 crop_base_temperature(Crop::WinterBarley) == 4.5 &&
                 crop_base_temperature(Crop::Maize) == 10.0 &&
                 crop_base_temperature(Crop::SpringOat) == 0.0 &&
                 crop_base_temperature(Crop::SugarBeet) == 1.0,
             "base-temperature table mismatch");
}

// ------------------------------------------------------------ criterion 5

void criterion_field_geometry() {
    Criterion c(5, "field selection matches the distance-to-boundary oracle");
    Rng rng(0xAC05);
    bool all_equal = true;
    for (int trial = 0; trial < 50 && all_equal; ++trial) {
        Grid mask;
        mask.ncols = mask.nrows = 100;
        mask.cellsize = 20;
        mask.origin_x = mask.origin_y = 0;
        mask.nodata = -9999;
        mask.values.assign(10000, 0.0);
        const int n_rects = 2 + static_cast<int>(rng.bounded(7));
        for (int kk = 0; kk < n_rects; ++kk) {
            const int code = 1 + static_cast<int>(rng.bounded(4));
            const int r0 = static_cast<int>(rng.bounded(92));
            const int c0 = static_cast<int>(rng.bounded(92));
            const int h = 5 + static_cast<int>(rng.bounded(30));
            const int w = 5 + static_cast<int>(rng.bounded(30));
            for (int r = r0; r < std::min(100, r0 + h); ++r)
                for (int cc = c0; cc < std::min(100, c0 + w); ++cc) mask.at(r, cc) = code;
        }
        const double sx = rng.uniform(200, 1800);
        const double sy = rng.uniform(200, 1800);
        const Crop crop = static_cast<Crop>(rng.bounded(4));

        const auto got = select_station_fields(mask, sx, sy, crop);
        auto expected = oracle::select_fields(mask, sx, sy, crop_mask_code(crop), 5000, 70, 2);
        std::set<std::set<std::int64_t>> got_sets, exp_sets;
        for (const auto& s : got.pixel_sets) got_sets.insert({s.begin(), s.end()});
        for (auto& s : expected) exp_sets.insert(std::move(s));
        all_equal = got_sets == exp_sets;
    }
    c.expect(all_equal, "selection differs from oracle");

    // 4 ha square rejected, 16 ha square kept, exactly.
    Grid mask;
    mask.ncols = mask.nrows = 60;
    mask.cellsize = 20;
    mask.origin_x = mask.origin_y = 0;
    mask.nodata = -9999;
    mask.values.assign(3600, 0.0);
    for (int r = 20; r < 30; ++r)
        for (int cc = 20; cc < 30; ++cc) mask.at(r, cc) = 1;
    c.expect(select_station_fields(mask, 600, 600, static_cast<Crop>(0)).pixel_sets.empty(),
             "4 ha square not rejected");
    for (int r = 20; r < 40; ++r)
        for (int cc = 20; cc < 40; ++cc) mask.at(r, cc) = 1;
    const auto sel = select_station_fields(mask, 600, 600, static_cast<Crop>(0));
    c.expect(sel.pixel_sets.size() == 1 && sel.pixel_sets[0].size() == 144,
             "16 ha square erosion wrong");
}

// ------------------------------------------------------------ criterion 6

void criterion_gbdt() {
    Criterion c(6, "gbdt accuracy, loss monotonicity, early stopping, round trip");
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(0xAC06);

    auto matrix = [&](const std::vector<std::array<double, 2>>& xy, const std::vector<int>& lab) {
        DataMatrix m;
        m.n = static_cast<int>(xy.size());
        m.x.assign(static_cast<std::size_t>(m.n) * kNumFeatures, 0.0);
        for (int i = 0; i < m.n; ++i) {
            m.x[static_cast<std::size_t>(i) * kNumFeatures + F_GDD_SUM] =
                xy[static_cast<std::size_t>(i)][0];
            m.x[static_cast<std::size_t>(i) * kNumFeatures + F_TMAX] =
                xy[static_cast<std::size_t>(i)][1];
        }
        m.labels = lab;
        m.weights.assign(static_cast<std::size_t>(m.n), 1.0);
        return m;
    };
    const FeatureSet mask = FeatureSet::from_indices({F_GDD_SUM, F_TMAX});

    std::vector<std::array<double, 2>> xy;
    std::vector<int> labels;
    const double centers[3][2] = {{0, 0}, {10, 0}, {5, 9}};
    for (int cls = 0; cls < 3; ++cls)
        for (int i = 0; i < 100; ++i) {
            xy.push_back({centers[cls][0] + 0.5 * rng.normal(),
                          centers[cls][1] + 0.5 * rng.normal()});
            labels.push_back(cls);
        }
    const DataMatrix train = matrix(xy, labels);

    GbdtHyperparams hp;
    hp.n_estimators = 100;
    hp.num_leaves = 15;
    hp.min_child_samples = 5;
    hp.min_data_in_bin = 1;
    hp.early_stopping_round = 0;
    const GbdtModel model = fit_gbdt(train, nullptr, hp, mask);

    int correct = 0;
    for (int i = 0; i < train.n; ++i) {
        const auto p = model.predict_proba(train.row(i));
        const int arg = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        if (model.classes[static_cast<std::size_t>(arg)] == train.labels[static_cast<std::size_t>(i)])
            ++correct;
    }
    const double acc = static_cast<double>(correct) / train.n;
    c.expect(acc >= 0.99, "training accuracy " + fmt(acc));

    bool monotone = true;
    for (std::size_t r = 1; r < model.train_loss.size(); ++r)
        monotone = monotone && model.train_loss[r] <= model.train_loss[r - 1] + 1e-9;
    c.expect(monotone, "training log-loss not monotone");

    // Early stopping halts within the patience of the validation minimum.
    std::vector<int> wrong = labels;
    for (auto& l : wrong) l = (l + 1) % 3;
    const DataMatrix bad_valid = matrix(xy, wrong);
    GbdtHyperparams hp_es = hp;
    hp_es.early_stopping_round = 7;
    const GbdtModel es = fit_gbdt(train, &bad_valid, hp_es, mask);
    const int best_round =
        1 + static_cast<int>(std::min_element(es.valid_loss.begin(), es.valid_loss.end()) -
                             es.valid_loss.begin());
    c.expect(es.best_iteration == best_round, "best_iteration is not the validation argmin");
    c.expect(static_cast<int>(es.valid_loss.size()) - best_round <= hp_es.early_stopping_round,
             "ran past the patience window");

    const std::string json = model.to_json();
    const GbdtModel back = GbdtModel::from_json(json);
    c.expect(back.to_json() == json, "serialization round trip not exact");
    bool preds_equal = true;
    for (int i = 0; i < 50; ++i) {
        std::array<double, kNumFeatures> x{};
        x[F_GDD_SUM] = rng.uniform(-3, 13);
        x[F_TMAX] = rng.uniform(-3, 12);
        const auto pa = model.predict_proba(x);
        const auto pb = back.predict_proba(x);
        for (std::size_t k = 0; k < pa.size(); ++k) preds_equal = preds_equal && pa[k] == pb[k];
    }
    c.expect(preds_equal, "round-tripped predictions differ");

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.expect(secs < 30.0, "took " + fmt(secs) + "s");
    c.note("train acc " + fmt(acc));
}

// ------------------------------------------------------------ criterion 7

void criterion_tpe() {
    Criterion c(7, "tpe beats random search on the quadratic; bounds/conditionality hold");
    SearchSpace space;
    space.uniform("x", -10, 10);
    auto f = [](const Params& p) {
        const double x = p.at("x");
        return (x - 2) * (x - 2);
    };

    std::vector<double> tpe_best, rnd_best;
    int hits = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto res = tpe_optimize(f, space, 50, seed);
        if (std::abs(res.best_params.at("x") - 2.0) < 0.5) ++hits;
        tpe_best.push_back(res.best_loss);

        Rng rng(mix_seed(seed, 0x72616e64));
        double best = std::numeric_limits<double>::infinity();
        for (int t = 0; t < 50; ++t) {
            const double x = rng.uniform(-10, 10);
            best = std::min(best, (x - 2) * (x - 2));
        }
        rnd_best.push_back(best);
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    const double tpe_med = median(tpe_best);
    const double rnd_med = median(rnd_best);
    c.expect(hits >= 18, "only " + std::to_string(hits) + "/20 seeds within 0.5");
    c.expect(tpe_med < rnd_med, "tpe median " + fmt(tpe_med) + " not below random " + fmt(rnd_med));

    // 1000 fuzzed spaces: every suggestion within bounds, conditional dims
    // present exactly when the parent boolean is on.
    bool fuzz_ok = true;
    for (std::uint64_t seed = 0; seed < 1000 && fuzz_ok; ++seed) {
        Rng rng(mix_seed(seed, 0xF5));
        SearchSpace sp;
        std::vector<std::string> bools;
        const int n_dims = 2 + static_cast<int>(rng.bounded(6));
        for (int d = 0; d < n_dims; ++d) {
            const std::string name = "d" + std::to_string(d);
            std::string parent;
            if (!bools.empty() && rng.next_double() < 0.4)
                parent = bools[static_cast<std::size_t>(rng.bounded(bools.size()))];
            switch (rng.bounded(5)) {
                case 0: sp.uniform(name, -5, 5); break;
                case 1: sp.log_uniform(name, 0.1, 100); break;
                case 2: {
                    const int lo = static_cast<int>(rng.bounded(10));
                    sp.int_uniform(name, lo, lo + 1 + static_cast<int>(rng.bounded(50)), parent);
                    break;
                }
                case 3:
                    sp.categorical(name, 2 + static_cast<int>(rng.bounded(5)), parent);
                    break;
                default:
                    sp.boolean(name, parent);
                    bools.push_back(name);
            }
        }
        StudyState study(seed);
        for (int t = 0; t < 14 && fuzz_ok; ++t) {
            const auto p = tpe_suggest(study, sp);
            for (const auto& d : sp.dims) {
                const auto it = p.find(d.name);
                if (!d.parent.empty()) {
                    const auto pit = p.find(d.parent);
                    const bool active = pit != p.end() && pit->second != 0.0;
                    if (active != (it != p.end())) fuzz_ok = false;
                }
                if (it == p.end()) continue;
                const bool is_cat = d.kind == DimKind::Categorical || d.kind == DimKind::Boolean;
                const double lo = is_cat ? 0 : d.lo;
                const double hi = is_cat ? d.n_choices - 1 : d.hi;
                if (it->second < lo || it->second > hi) fuzz_ok = false;
            }
            study.record(p, std::sin(static_cast<double>(t) * 1.7) + 0.02 * t);
        }
    }
    c.expect(fuzz_ok, "fuzzed space violated bounds or conditionality");

    // Group-conditionality on the actual feature space.
    StudyState study(0xFEA7);
    const SearchSpace fspace = feature_selection_space();
    bool gating_ok = true;
    for (int t = 0; t < 200 && gating_ok; ++t) {
        const auto p = tpe_suggest(study, fspace);
        for (int fidx = 0; fidx < kNumFeatures; ++fidx) {
            const bool group_on = p.at("group:" + std::to_string(feature_group(fidx))) != 0.0;
            if (group_on != p.contains("feat:" + feature_name(fidx))) gating_ok = false;
        }
        study.record(p, 1.0 + std::cos(0.3 * t));
    }
    c.expect(gating_ok, "feature gating violated");
    c.note(std::to_string(hits) + "/20 seeds, tpe median " + fmt(tpe_med) + " vs random " +
           fmt(rnd_med));
}

// ------------------------------------------------------------ world builder

PipelineConfig world_config(const fs::path& root, int n_stations, std::vector<int> seasons,
                            std::vector<Crop> crops, std::uint64_t seed) {
    PipelineConfig cfg;
    cfg.phenology_csv = root / "data" / "phenology.csv";
    cfg.climate_csv = root / "data" / "climate.csv";
    cfg.grids_dir = root / "data" / "grids";
    cfg.out_dir = root / "out";
    cfg.crops = crops;
    cfg.seed = seed;
    cfg.threads = 0;
    cfg.synth.n_stations = n_stations;
    cfg.synth.n_climate_stations = 2 * n_stations;
    cfg.synth.seasons = std::move(seasons);
    cfg.synth.crops = crops;
    cfg.synth.stage_thresholds.clear();
    for (Crop crop : crops) cfg.synth.stage_thresholds[crop] = SynthSpec::default_thresholds(crop);
    cfg.synth.seed = seed;
    return cfg;
}

// ------------------------------------------------------------ criterion 8

void criterion_feature_recovery() {
    Criterion c(8, "grouped search recovers the climate-index group and gdd_sum");
    const fs::path root = fs::temp_directory_path() / "pheno_accept8";
    fs::remove_all(root);
    PipelineConfig cfg = world_config(root, 16, {2019, 2020}, {Crop::WinterWheat}, 808);
    cfg.synth.sar_response = 0.0;     // labels derive solely from the GDD-sum
    cfg.synth.optical_response = 0.0; // thresholds; bands are pure noise
    run_synth(cfg);
    run_preprocess(cfg);
    run_features(cfg);
    const auto ds = parse_dataset_csv(
        read_text_file(cfg.out_dir / "features" / "dataset_winter_wheat.csv"));

    std::vector<std::vector<int>> rows_by_unit;
    const auto units = dataset_units(ds, &rows_by_unit);
    const auto split = kfold_split(static_cast<int>(units.size()), 10, cfg.seed);
    const auto objective = make_inner_objective(ds, split.inner[0]);
    const auto results = select_feature_groups(objective, 10, 50, mix_seed(cfg.seed, 8));

    int climate_group = 0;
    for (const auto& r : results) {
        bool has_group9 = false;
        for (int f : r.features.indices()) has_group9 = has_group9 || feature_group(f) == 9;
        if (has_group9) ++climate_group;
    }
    const auto table = feature_importance(Crop::WinterWheat, results);
    int gdd_sum_rank = -1;
    for (std::size_t i = 0; i < table.ranked.size(); ++i)
        if (table.ranked[i].feature == F_GDD_SUM) gdd_sum_rank = static_cast<int>(i) + 1;

    c.expect(climate_group >= 9,
             "climate-index group in " + std::to_string(climate_group) + "/10 folds");
    c.expect(gdd_sum_rank >= 1 && gdd_sum_rank <= 3,
             "gdd_sum importance rank " + std::to_string(gdd_sum_rank));
    c.note("climate group " + std::to_string(climate_group) + "/10, gdd_sum rank " +
           std::to_string(gdd_sum_rank));
    fs::remove_all(root);
}

// ------------------------------------------------------------ criterion 9

struct E2eOutputs {
    std::map<Crop, std::vector<OnsetPrediction>> onsets;
    fs::path out_dir;
    double seconds = 0;
};

std::vector<OnsetPrediction> read_onsets(const fs::path& path) {
    const auto lines = csv::split_lines(read_text_file(path));
    std::vector<OnsetPrediction> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = csv::split_line(lines[i]);
        OnsetPrediction p;
        p.station_id = f[0];
        p.season = std::stoi(f[1]);
        p.bbch = std::stoi(f[2]);
        p.observed_date = Date::parse(f[3]);
        p.predicted_date = Date::parse(f[4]);
        p.observed_doy = std::stoi(f[5]);
        p.predicted_doy = std::stoi(f[6]);
        p.residual = std::stod(f[7]);
        p.detected = f[8] == "1";
        p.outer_fold = std::stoi(f[9]);
        out.push_back(std::move(p));
    }
    return out;
}

void criterion_end_to_end(E2eOutputs& outputs) {
    Criterion c(9, "end-to-end synthetic run recovers onsets (MAE <= 4, R2 >= 0.6)");
    const fs::path root = fs::temp_directory_path() / "pheno_accept9";
    fs::remove_all(root);
    // 30 stations x 2 seasons x 2 crops = 120 station-seasons.
    PipelineConfig cfg =
        world_config(root, 30, {2019, 2020}, {Crop::WinterWheat, Crop::Maize}, 42);
    cfg.synth.noise_sd_days = 2.0;

    const auto t0 = std::chrono::steady_clock::now();
    run_synth(cfg);
    run_preprocess(cfg);
    run_features(cfg);
    run_train(cfg);
    run_evaluate(cfg);
    run_report(cfg);
    outputs.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    outputs.out_dir = cfg.out_dir;

    double mae_sum = 0, r2_sum = 0;
    int stage_rows = 0, undetected = 0, total = 0;
    for (Crop crop : cfg.crops) {
        const auto onsets =
            read_onsets(cfg.out_dir / "train" / ("onsets_" + crop_name(crop) + ".csv"));
        outputs.onsets[crop] = onsets;
        for (const auto& o : onsets) {
            ++total;
            if (!o.detected) ++undetected;
        }
        for (const auto& m : per_stage_metrics(onsets, 6.0)) {
            if (m.bbch == kBackgroundLabel || std::isnan(m.r2)) continue;
            mae_sum += m.mae;
            r2_sum += m.r2;
            ++stage_rows;
        }

        // 10 inner winners per outer fold, 100 trained models per crop run.
        int model_files = 0;
        for (const auto& e :
             fs::directory_iterator(cfg.out_dir / "train" / "models" / crop_name(crop)))
            if (e.path().extension() == ".json") ++model_files;
        c.expect(model_files == 100, crop_name(crop) + ": " + std::to_string(model_files) +
                                         " models, expected 100");

        // Fold assignment partitions the station-seasons (leak-free grain).
        const auto fold_lines = csv::split_lines(
            read_text_file(cfg.out_dir / "train" / ("folds_" + crop_name(crop) + ".csv")));
        std::set<std::pair<std::string, std::string>> seen;
        std::map<std::string, int> fold_of;
        for (std::size_t i = 1; i < fold_lines.size(); ++i) {
            if (fold_lines[i].empty()) continue;
            const auto f = csv::split_line(fold_lines[i]);
            if (!seen.insert({f[1], f[2]}).second)
                c.expect(false, "unit assigned to two outer folds");
            fold_of[f[1] + "|" + f[2]] = std::stoi(f[3]);
        }
        c.expect(seen.size() == 60, crop_name(crop) + ": " + std::to_string(seen.size()) +
                                        " units, expected 60");
        // Every prediction was made in the unit's own test fold.
        for (const auto& o : onsets)
            c.expect(fold_of.at(o.station_id + "|" + std::to_string(o.season)) == o.outer_fold,
                     "prediction outside the unit's test fold");
    }
    const double mean_mae = mae_sum / stage_rows;
    const double mean_r2 = r2_sum / stage_rows;
    c.expect(stage_rows == 8, "expected 8 (crop, stage) rows, got " + std::to_string(stage_rows));
    c.expect(mean_mae <= 4.0, "stage-mean MAE " + fmt(mean_mae));
    c.expect(mean_r2 >= 0.6, "stage-mean R2 " + fmt(mean_r2));
    c.expect(outputs.seconds < 600.0, "took " + fmt(outputs.seconds) + "s");
    c.note("MAE " + fmt(mean_mae) + ", R2 " + fmt(mean_r2) + ", undetected " +
           std::to_string(undetected) + "/" + std::to_string(total) + ", " +
           fmt(outputs.seconds) + "s");
}

// ------------------------------------------------------------ criterion 10

void criterion_report_fidelity(const E2eOutputs& outputs) {
    Criterion c(10, "residual bins, tolerance boundary, per-year deltas");
    // Percentages sum to 100 per group on the real end-to-end onsets.
    bool sums_ok = true;
    for (const auto& [crop, onsets] : outputs.onsets) {
        if (onsets.empty()) continue;
        for (auto group :
             {ResidualGroupBy::Stage, ResidualGroupBy::Year, ResidualGroupBy::Station}) {
            const auto rep = residual_report(onsets, {-15, -4, 4, 15}, group);
            for (const auto& row : rep.rows) {
                double total = 0;
                for (double p : row.percents) total += p;
                if (std::abs(total - 100.0) > 1e-9) sums_ok = false;
            }
        }
    }
    c.expect(sums_ok, "percentages do not sum to 100");

    // |residual| = 6 is inside the tolerance.
    const std::vector<double> obs{100, 100, 100};
    const std::vector<double> pred{106, 94, 107};
    c.expect(within_tolerance_share(obs, pred, 6.0) == 2.0 / 3.0,
             "boundary |r| = 6 not counted as within");

    // Per-year MAE deltas against a hand-grouped oracle on random onsets.
    Rng rng(0xAC10);
    std::vector<OnsetPrediction> onsets;
    std::map<int, std::vector<double>> by_year;
    std::vector<double> all;
    for (int i = 0; i < 200; ++i) {
        OnsetPrediction p;
        p.station_id = "S" + std::to_string(i % 9);
        p.season = 2018 + static_cast<int>(rng.bounded(4));
        p.bbch = 31;
        p.observed_date = Date(p.season, 5, 1) + static_cast<std::int64_t>(rng.bounded(40));
        const double resid = std::round(rng.normal(0, 7));
        p.predicted_date = p.observed_date + static_cast<std::int64_t>(resid);
        p.observed_doy = p.observed_date.day_of_year();
        p.predicted_doy = p.predicted_date.day_of_year();
        p.residual = resid;
        p.detected = true;
        onsets.push_back(p);
        by_year[p.season].push_back(std::abs(resid));
        all.push_back(std::abs(resid));
    }
    const double overall = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
    const auto rep = residual_report(onsets, {-15, -4, 4, 15}, ResidualGroupBy::Year);
    bool deltas_ok = rep.per_year.size() == by_year.size();
    for (const auto& d : rep.per_year) {
        const auto& v = by_year.at(d.year);
        const double mae = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        if (std::abs(d.mae - mae) > 1e-12 || std::abs(d.delta - (mae - overall)) > 1e-12)
            deltas_ok = false;
    }
    c.expect(deltas_ok, "per-year deltas deviate from the oracle");
}

// ------------------------------------------------------------ criterion 11

std::map<std::string, std::string> hash_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        // Content keyed by relative path; compare full bytes.
        out[fs::relative(e.path(), root).string()] = read_text_file(e.path());
    }
    return out;
}

void criterion_determinism() {
    Criterion c(11, "identical config and seed reproduce byte-identical outputs");
    auto run_once = [&](const fs::path& root) {
        fs::remove_all(root);
        PipelineConfig cfg = world_config(root, 12, {2020}, {Crop::WinterWheat}, 77);
        cfg.n_trials = 4;
        run_synth(cfg);
        run_preprocess(cfg);
        run_features(cfg);
        run_train(cfg);
        run_evaluate(cfg);
        run_report(cfg);
        return cfg;
    };
    const fs::path root_a = fs::temp_directory_path() / "pheno_accept11a";
    const fs::path root_b = fs::temp_directory_path() / "pheno_accept11b";
    const auto cfg_a = run_once(root_a);
    run_once(root_b);

    const auto ta = hash_tree(root_a);
    const auto tb = hash_tree(root_b);
    c.expect(ta.size() == tb.size(), "file counts differ");
    int diffs = 0;
    std::string first_diff;
    for (const auto& [rel, content] : ta) {
        const auto it = tb.find(rel);
        if (it == tb.end() || it->second != content) {
            ++diffs;
            if (first_diff.empty()) first_diff = rel;
        }
    }
    c.expect(diffs == 0, std::to_string(diffs) + " files differ, first: " + first_diff);
    c.note(std::to_string(ta.size()) + " files compared");
    fs::remove_all(root_a);
    fs::remove_all(root_b);
}

} // namespace

int main() {
    std::printf("acceptance suite\n");
    criterion_metric_oracles();
    criterion_loess_oracle();
    criterion_idw_oracle();
    criterion_gdd();
    criterion_field_geometry();
    criterion_gbdt();
    criterion_tpe();
    criterion_feature_recovery();
    E2eOutputs e2e;
    criterion_end_to_end(e2e);
    criterion_report_fidelity(e2e);
    criterion_determinism();
    std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "SUCCESS" : "FAILURE",
                g_failures);
    return g_failures == 0 ? 0 : 1;
}
