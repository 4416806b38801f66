#include <doctest.h>

#include <algorithm>
#include <set>

#include "pheno/dataset.hpp"
#include "pheno/errors.hpp"
#include "pheno/rng.hpp"

using namespace pheno;

namespace {

StationObservation stage_obs(const char* station, Crop crop, int bbch, Date date) {
    StationObservation o;
    o.station_id = station;
    o.crop = crop;
    o.bbch = bbch;
    o.date = date;
    o.qb = 1;
    o.qn = 10;
    return o;
}

SeasonFeatures window(const char* station, int season, Date start, int n_days) {
    SeasonFeatures f;
    f.station_id = station;
    f.season = season;
    f.start = start;
    f.days.assign(static_cast<std::size_t>(n_days), FeatureVector{});
    return f;
}

} // namespace

TEST_CASE("assemble_labeled_dataset labels stage days and backgrounds") {
    const Date start(2020, 3, 1);
    std::vector<StationObservation> obs;
    for (int i = 0; i < 7; ++i)
        obs.push_back(stage_obs("S1", Crop::WinterWheat, kBbchCodes[static_cast<std::size_t>(i)],
                                start + 10 + i * 25));
    const auto res =
        assemble_labeled_dataset(Crop::WinterWheat, obs, {window("S1", 2020, start, 200)});
    CHECK(res.dataset.samples.size() == 200);
    int stage_count = 0;
    for (const auto& s : res.dataset.samples)
        if (s.label != kBackgroundLabel) ++stage_count;
    CHECK(stage_count == 7);
    CHECK(res.skipped_observations == 0);

    // Every label present has a positive weight.
    for (const auto& s : res.dataset.samples) {
        REQUIRE(res.dataset.class_weights.contains(s.label));
        CHECK(res.dataset.class_weights.at(s.label) > 0.0);
    }
}

TEST_CASE("assemble_labeled_dataset with no observations is all background") {
    const auto res = assemble_labeled_dataset(Crop::Maize, {},
                                              {window("S1", 2020, Date(2020, 4, 1), 50)});
    CHECK(res.dataset.samples.size() == 50);
    for (const auto& s : res.dataset.samples) CHECK(s.label == kBackgroundLabel);
}

TEST_CASE("assemble_labeled_dataset rejects coincident stages") {
    const Date d(2020, 5, 5);
    CHECK_THROWS_WITH_AS(
        assemble_labeled_dataset(Crop::Maize,
                                 {stage_obs("S1", Crop::Maize, 10, d),
                                  stage_obs("S1", Crop::Maize, 31, d)},
                                 {window("S1", 2020, Date(2020, 4, 1), 60)}),
        doctest::Contains("coincident"), ValidationError);
}

TEST_CASE("assemble_labeled_dataset counts observations outside coverage") {
    const auto res = assemble_labeled_dataset(
        Crop::Maize, {stage_obs("S1", Crop::Maize, 10, Date(2020, 9, 1))},
        {window("S1", 2020, Date(2020, 4, 1), 30)});
    CHECK(res.skipped_observations == 1);
}

TEST_CASE("assemble clips samples to the season window") {
    // A window that crosses the season boundary contributes only its own
    // season's days.
    const Date start = season_start(2021) - 5;
    const auto res =
        assemble_labeled_dataset(Crop::Maize, {}, {window("S1", 2021, start, 10)});
    CHECK(res.dataset.samples.size() == 5);
    for (const auto& s : res.dataset.samples) CHECK(s.date >= season_start(2021));
}

TEST_CASE("compute_class_weights") {
    SUBCASE("balanced classes get weight 1") {
        std::vector<int> labels(50, 0);
        labels.insert(labels.end(), 50, 1);
        const auto w = compute_class_weights(labels);
        CHECK(w.at(0) == doctest::Approx(1.0));
        CHECK(w.at(1) == doctest::Approx(1.0));
    }
    SUBCASE("90/10 imbalance") {
        std::vector<int> labels(90, 0);
        labels.insert(labels.end(), 10, 1);
        const auto w = compute_class_weights(labels);
        CHECK(w.at(0) == doctest::Approx(100.0 / (2 * 90)).epsilon(1e-12));
        CHECK(w.at(1) == doctest::Approx(5.0).epsilon(1e-12));
    }
    SUBCASE("single class") {
        const auto w = compute_class_weights(std::vector<int>(7, 3));
        CHECK(w.at(3) == doctest::Approx(1.0));
    }
    SUBCASE("weighted counts sum back to N") {
        Rng rng(3);
        std::vector<int> labels;
        for (int i = 0; i < 500; ++i) labels.push_back(static_cast<int>(rng.bounded(5)));
        const auto w = compute_class_weights(labels);
        std::map<int, int> counts;
        for (int l : labels) ++counts[l];
        double total = 0;
        for (const auto& [label, count] : counts) total += w.at(label) * count;
        CHECK(total == doctest::Approx(500.0).epsilon(1e-9));
    }
}

TEST_CASE("kfold_split") {
    SUBCASE("100 into 10 folds of 10") {
        const auto split = kfold_split(100, 10, 42);
        for (const auto& fold : split.outer) CHECK(fold.size() == 10);
    }
    SUBCASE("23 into 10: sizes 3,3,3,2,...") {
        const auto split = kfold_split(23, 10, 1);
        std::vector<std::size_t> sizes;
        for (const auto& fold : split.outer) sizes.push_back(fold.size());
        CHECK(sizes == std::vector<std::size_t>{3, 3, 3, 2, 2, 2, 2, 2, 2, 2});
    }
    SUBCASE("same seed, same split; different seed, different shuffle") {
        const auto a = kfold_split(64, 10, 7);
        const auto b = kfold_split(64, 10, 7);
        CHECK(a.outer == b.outer);
        CHECK(a.inner == b.inner);
        const auto c = kfold_split(64, 10, 8);
        CHECK(a.outer != c.outer);
    }
    SUBCASE("outer folds partition the index set") {
        const auto split = kfold_split(57, 10, 5);
        std::set<int> seen;
        std::size_t total = 0;
        for (const auto& fold : split.outer) {
            total += fold.size();
            for (int i : fold) CHECK(seen.insert(i).second); // disjoint
        }
        CHECK(total == 57);
        CHECK(*seen.begin() == 0);
        CHECK(*seen.rbegin() == 56);
    }
    SUBCASE("inner folds partition each outer training set") {
        const auto split = kfold_split(45, 10, 9);
        for (int f = 0; f < 10; ++f) {
            std::set<int> outer_test(split.outer[static_cast<std::size_t>(f)].begin(),
                                     split.outer[static_cast<std::size_t>(f)].end());
            std::set<int> seen;
            std::size_t total = 0;
            for (const auto& fold : split.inner[static_cast<std::size_t>(f)]) {
                total += fold.size();
                for (int i : fold) {
                    CHECK(!outer_test.contains(i));
                    CHECK(seen.insert(i).second);
                }
            }
            CHECK(total == 45 - outer_test.size());
        }
    }
    SUBCASE("n < k fails") { CHECK_THROWS_AS(kfold_split(5, 10, 0), ValidationError); }
}

TEST_CASE("dataset csv round trip") {
    Rng rng(12);
    LabeledDataset ds;
    ds.crop = Crop::Maize;
    for (int i = 0; i < 40; ++i) {
        LabeledSample s;
        s.station_id = "S" + std::to_string(i % 4);
        s.season = 2020;
        s.date = Date(2020, 4, 1) + i;
        s.doy = s.date.day_of_year();
        for (int f = 0; f < kNumFeatures; ++f)
            s.features[static_cast<std::size_t>(f)] = rng.normal();
        s.label = i % 13 == 0 ? 31 : kBackgroundLabel;
        ds.samples.push_back(std::move(s));
    }
    std::vector<int> labels;
    for (const auto& s : ds.samples) labels.push_back(s.label);
    ds.class_weights = compute_class_weights(labels);

    const auto text = serialize_dataset_csv(ds);
    const auto back = parse_dataset_csv(text);
    CHECK(back.crop == ds.crop);
    REQUIRE(back.samples.size() == ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].station_id == ds.samples[i].station_id);
        CHECK(back.samples[i].label == ds.samples[i].label);
        for (int f = 0; f < kNumFeatures; ++f)
            CHECK(back.samples[i].features[static_cast<std::size_t>(f)] ==
                  ds.samples[i].features[static_cast<std::size_t>(f)]);
    }
    CHECK(serialize_dataset_csv(back) == text);
}
