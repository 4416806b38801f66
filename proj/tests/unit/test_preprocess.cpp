#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "pheno/errors.hpp"
#include "pheno/preprocess.hpp"
#include "pheno/rng.hpp"

#include "common/oracles.hpp"

using namespace pheno;

namespace {

Grid blank_grid(int n, double cellsize = 20) {
    Grid g;
    g.ncols = n;
    g.nrows = n;
    g.origin_x = 0;
    g.origin_y = 0;
    g.cellsize = cellsize;
    g.nodata = -9999;
    g.values.assign(static_cast<std::size_t>(n) * n, 0.0);
    return g;
}

} // namespace

TEST_CASE("cloud_mask_series") {
    IrregularSeries obs{{1, 5, 9}, {0.2, 0.4, 0.6}};
    SUBCASE("all clear leaves the series unchanged") {
        IrregularSeries probs{{1, 5, 9}, {0, 0, 0}};
        const auto out = cloud_mask_series(obs, probs);
        CHECK(out.days == obs.days);
        CHECK(out.values == obs.values);
    }
    SUBCASE("a 90% probability at the default threshold drops that point") {
        IrregularSeries probs{{1, 5, 9}, {10, 90, 10}};
        const auto out = cloud_mask_series(obs, probs);
        CHECK(out.days == std::vector<std::int64_t>{1, 9});
    }
    SUBCASE("fully clouded gives an empty series") {
        IrregularSeries probs{{1, 5, 9}, {100, 100, 100}};
        CHECK(cloud_mask_series(obs, probs).empty());
    }
    SUBCASE("threshold is inclusive (>= masks)") {
        IrregularSeries probs{{1, 5, 9}, {74.9, 75.0, 75.1}};
        CHECK(cloud_mask_series(obs, probs).size() == 1);
    }
    SUBCASE("timestamp mismatch fails") {
        IrregularSeries probs{{1, 5}, {0, 0}};
        CHECK_THROWS_AS(cloud_mask_series(obs, probs), ValidationError);
    }
}

TEST_CASE("loess reproduces an exact line") {
    IrregularSeries s;
    for (int i = 0; i < 40; ++i) {
        s.days.push_back(i * 3 + (i % 2)); // uneven spacing
        s.values.push_back(2.0 * s.days.back() + 1.0);
    }
    for (double fraction : {0.05, 0.2, 1.0}) {
        const auto out = loess_smooth(s, fraction);
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(out.values[i] == doctest::Approx(s.values[i]).epsilon(1e-9));
    }
}

TEST_CASE("loess keeps a constant constant") {
    IrregularSeries s;
    for (int i = 0; i < 20; ++i) {
        s.days.push_back(i * 5);
        s.values.push_back(3.25);
    }
    const auto out = loess_smooth(s, 0.3);
    for (double v : out.values) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("loess matches the weighted-least-squares oracle on a noisy sine") {
    Rng rng(11);
    IrregularSeries s;
    std::int64_t day = 0;
    for (int i = 0; i < 50; ++i) {
        day += 1 + static_cast<std::int64_t>(rng.bounded(4));
        s.days.push_back(day);
        s.values.push_back(std::sin(0.1 * static_cast<double>(day)) + 0.1 * rng.normal());
    }
    const auto out = loess_smooth(s, 0.2);
    for (std::size_t i = 0; i < s.size(); ++i)
        CHECK(out.values[i] == doctest::Approx(oracle::loess_at(s, i, 0.2)).epsilon(1e-9));
}

TEST_CASE("loess is linear in y") {
    Rng rng(5);
    IrregularSeries s;
    for (int i = 0; i < 30; ++i) {
        s.days.push_back(i * 2 + static_cast<std::int64_t>(rng.bounded(2)));
        s.values.push_back(rng.normal());
    }
    IrregularSeries scaled = s;
    for (auto& v : scaled.values) v = 2.5 * v - 4.0;
    const auto base = loess_smooth(s, 0.25);
    const auto out = loess_smooth(scaled, 0.25);
    for (std::size_t i = 0; i < s.size(); ++i)
        CHECK(out.values[i] == doctest::Approx(2.5 * base.values[i] - 4.0).epsilon(1e-9));
}

TEST_CASE("loess rejects short series") {
    IrregularSeries s{{1, 2}, {0.0, 1.0}};
    CHECK_THROWS_WITH_AS(loess_smooth(s, 0.5), doctest::Contains("insufficient"), ValidationError);
}

TEST_CASE("resample_daily") {
    SUBCASE("midpoint interpolation") {
        IrregularSeries s{{1, 3}, {0.0, 10.0}};
        const auto out = resample_daily(s);
        REQUIRE(out.size() == 3);
        CHECK(*out.values[1] == doctest::Approx(5.0));
    }
    SUBCASE("already daily stays unchanged") {
        IrregularSeries s{{10, 11, 12}, {1.0, 4.0, 9.0}};
        const auto out = resample_daily(s);
        REQUIRE(out.size() == 3);
        CHECK(*out.values[0] == 1.0);
        CHECK(*out.values[1] == 4.0);
        CHECK(*out.values[2] == 9.0);
    }
    SUBCASE("flat segment") {
        IrregularSeries s{{1, 5}, {1.0, 1.0}};
        const auto out = resample_daily(s);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(*out.values[i] == doctest::Approx(1.0));
    }
    SUBCASE("input points preserved exactly, monotone between monotone points") {
        Rng rng(3);
        IrregularSeries s;
        std::int64_t d = 0;
        for (int i = 0; i < 20; ++i) {
            d += 1 + static_cast<std::int64_t>(rng.bounded(6));
            s.days.push_back(d);
            s.values.push_back(rng.uniform(-5, 5));
        }
        const auto out = resample_daily(s);
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(*out.at_date(Date::from_serial(s.days[i])) == s.values[i]);
        for (std::size_t i = 1; i < s.size(); ++i) {
            const double lo = std::min(s.values[i - 1], s.values[i]);
            const double hi = std::max(s.values[i - 1], s.values[i]);
            for (std::int64_t day = s.days[i - 1]; day <= s.days[i]; ++day) {
                const double v = *out.at_date(Date::from_serial(day));
                CHECK(v >= lo - 1e-12);
                CHECK(v <= hi + 1e-12);
            }
        }
    }
    SUBCASE("single point fails") {
        IrregularSeries s{{1}, {2.0}};
        CHECK_THROWS_AS(resample_daily(s), ValidationError);
    }
}

TEST_CASE("select_station_fields: 4 ha square is rejected, 16 ha square kept") {
    // 10x10 pixels = 4 ha erodes to 2x2 = 0.16 ha -> rejected.
    {
        Grid mask = blank_grid(60);
        for (int r = 20; r < 30; ++r)
            for (int c = 20; c < 30; ++c) mask.at(r, c) = 1;
        const auto sel = select_station_fields(mask, 600, 600, static_cast<Crop>(0));
        CHECK(sel.pixel_sets.empty());
    }
    // 20x20 pixels = 16 ha erodes to 12x12 = 5.76 ha -> kept.
    {
        Grid mask = blank_grid(60);
        for (int r = 20; r < 40; ++r)
            for (int c = 20; c < 40; ++c) mask.at(r, c) = 1;
        const auto sel = select_station_fields(mask, 600, 600, static_cast<Crop>(0));
        REQUIRE(sel.pixel_sets.size() == 1);
        CHECK(sel.pixel_sets[0].size() == 144);
        CHECK(sel.areas_ha[0] == doctest::Approx(5.76));
    }
}

TEST_CASE("select_station_fields: no target pixels yields an empty selection") {
    Grid mask = blank_grid(60);
    const auto sel = select_station_fields(mask, 600, 600, static_cast<Crop>(0));
    CHECK(sel.pixel_sets.empty());
    CHECK(sel.areas_ha.empty());
}

TEST_CASE("select_station_fields: station outside the grid fails") {
    Grid mask = blank_grid(60);
    CHECK_THROWS_AS(select_station_fields(mask, -5000, 600, static_cast<Crop>(0)),
                    ValidationError);
}

TEST_CASE("select_station_fields matches the brute-force oracle on random masks") {
    Rng rng(2024);
    for (int trial = 0; trial < 25; ++trial) {
        Grid mask = blank_grid(100);
        // A handful of random rectangles of codes 1..3, overlapping freely.
        const int n_rects = 3 + static_cast<int>(rng.bounded(5));
        for (int k = 0; k < n_rects; ++k) {
            const int code = 1 + static_cast<int>(rng.bounded(3));
            const int r0 = static_cast<int>(rng.bounded(90));
            const int c0 = static_cast<int>(rng.bounded(90));
            const int h = 4 + static_cast<int>(rng.bounded(26));
            const int w = 4 + static_cast<int>(rng.bounded(26));
            for (int r = r0; r < std::min(100, r0 + h); ++r)
                for (int c = c0; c < std::min(100, c0 + w); ++c) mask.at(r, c) = code;
        }
        const double sx = rng.uniform(400, 1600);
        const double sy = rng.uniform(400, 1600);
        const Crop crop = static_cast<Crop>(rng.bounded(3));

        const auto got = select_station_fields(mask, sx, sy, crop);
        auto expected = oracle::select_fields(mask, sx, sy, crop_mask_code(crop), 5000, 70, 2);

        // Compare as sets of pixel sets (labeling order must not matter).
        std::set<std::set<std::int64_t>> got_sets, exp_sets;
        for (const auto& s : got.pixel_sets) got_sets.insert({s.begin(), s.end()});
        for (auto& s : expected) exp_sets.insert(std::move(s));
        CHECK(got_sets == exp_sets);
    }
}

TEST_CASE("median_aggregate") {
    Grid mask = blank_grid(10);
    FieldSelection sel;
    sel.pixel_sets = {{11, 12, 21, 22}};
    sel.areas_ha = {0.16};

    auto grid_with = [&](std::vector<std::pair<std::int64_t, double>> vals) {
        Grid g = blank_grid(10);
        for (auto [px, v] : vals) g.values[static_cast<std::size_t>(px)] = v;
        return g;
    };

    SUBCASE("all pixels equal") {
        std::map<Date, Grid> series;
        series[Date(2020, 5, 1)] = grid_with({{11, 7}, {12, 7}, {21, 7}, {22, 7}});
        const auto out = median_aggregate(sel, mask, series);
        REQUIRE(out.size() == 1);
        CHECK(out.values[0] == 7.0);
    }
    SUBCASE("even count takes the mean of the middle two") {
        std::map<Date, Grid> series;
        series[Date(2020, 5, 1)] = grid_with({{11, 1}, {12, 2}, {21, 3}, {22, 4}});
        const auto out = median_aggregate(sel, mask, series);
        CHECK(out.values[0] == doctest::Approx(2.5));
    }
    SUBCASE("all-nodata dates are absent") {
        Grid g = blank_grid(10);
        for (auto px : {11, 12, 21, 22}) g.values[static_cast<std::size_t>(px)] = g.nodata;
        std::map<Date, Grid> series;
        series[Date(2020, 5, 1)] = g;
        series[Date(2020, 5, 7)] = grid_with({{11, 1}, {12, 2}, {21, 3}, {22, 5}});
        const auto out = median_aggregate(sel, mask, series);
        REQUIRE(out.size() == 1);
        CHECK(out.days[0] == Date(2020, 5, 7).serial());
    }
    SUBCASE("pixel permutation does not change the result") {
        std::map<Date, Grid> series;
        series[Date(2020, 5, 1)] = grid_with({{11, 9}, {12, 2}, {21, 5}, {22, 4}});
        FieldSelection shuffled = sel;
        shuffled.pixel_sets = {{22, 11, 12, 21}};
        CHECK(median_aggregate(sel, mask, series).values[0] ==
              median_aggregate(shuffled, mask, series).values[0]);
    }
    SUBCASE("geometry mismatch fails") {
        std::map<Date, Grid> series;
        series[Date(2020, 5, 1)] = blank_grid(11);
        CHECK_THROWS_AS(median_aggregate(sel, mask, series), ValidationError);
    }
}
