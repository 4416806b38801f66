#pragma once

// Brute-force reference implementations shared by the unit and acceptance
// suites. Deliberately written along different lines than the library code
// they check.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "pheno/types.hpp"

namespace pheno::oracle {

// LOESS: per evaluation point, build the tricube weights over the window of
// nearest neighbors explicitly, form the 2x2 weighted normal equations, and
// solve them by elimination.
inline double loess_at(const IrregularSeries& s, std::size_t i, double fraction) {
    const std::size_t n = s.size();
    const std::size_t window =
        std::min(n, std::max<std::size_t>(
                        2, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)))));
    const double t0 = static_cast<double>(s.days[i]);

    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < n; ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double da = std::abs(static_cast<double>(s.days[a]) - t0);
        const double db = std::abs(static_cast<double>(s.days[b]) - t0);
        return da != db ? da < db : a < b;
    });
    order.resize(window);
    double dmax = 0;
    for (std::size_t k : order)
        dmax = std::max(dmax, std::abs(static_cast<double>(s.days[k]) - t0));

    double a11 = 0, a12 = 0, a22 = 0, c1 = 0, c2 = 0;
    for (std::size_t k : order) {
        const double x = static_cast<double>(s.days[k]) - t0;
        const double u = dmax > 0 ? std::abs(x) / dmax : 0.0;
        const double w = dmax > 0 ? std::pow(1.0 - u * u * u, 3.0) : 1.0;
        a11 += w;
        a12 += w * x;
        a22 += w * x * x;
        c1 += w * s.values[k];
        c2 += w * x * s.values[k];
    }
    const double pivot = a22 - a12 * a12 / a11;
    if (std::abs(pivot) < 1e-12 * std::max(1.0, a22)) return c1 / a11;
    const double b1 = (c2 - a12 * c1 / a11) / pivot;
    return (c1 - a12 * b1) / a11;
}

// Field selection: flood-fill components inside the clipped box, erode by a
// per-pixel Chebyshev distance check against everything outside the
// component, then apply the area rule. Returns the surviving pixel sets.
inline std::vector<std::set<std::int64_t>> select_fields(const Grid& mask, double sx, double sy,
                                                         int crop_code, double box_m,
                                                         double inner_m, double min_ha) {
    const double gy1 = mask.origin_y + mask.nrows * mask.cellsize;
    const int c0 = std::max(
        0, static_cast<int>(std::floor((sx - box_m / 2 - mask.origin_x) / mask.cellsize)));
    const int c1 =
        std::min(mask.ncols - 1, static_cast<int>(std::floor(
                                     (sx + box_m / 2 - 1e-9 - mask.origin_x) / mask.cellsize)));
    const int r0 = std::max(
        0, static_cast<int>(std::floor((gy1 - (sy + box_m / 2 - 1e-9)) / mask.cellsize)));
    const int r1 = std::min(mask.nrows - 1,
                            static_cast<int>(std::floor((gy1 - (sy - box_m / 2)) / mask.cellsize)));

    auto inside = [&](int r, int c) { return r >= r0 && r <= r1 && c >= c0 && c <= c1; };
    auto is_crop = [&](int r, int c) {
        const double v = mask.at(r, c);
        return !mask.is_nodata(v) && static_cast<int>(v) == crop_code;
    };

    std::map<std::pair<int, int>, int> comp;
    int n_comp = 0;
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
            if (!is_crop(r, c) || comp.contains({r, c})) continue;
            std::vector<std::pair<int, int>> stack{{r, c}};
            comp[{r, c}] = n_comp;
            while (!stack.empty()) {
                auto [cr, cc] = stack.back();
                stack.pop_back();
                const int nb[4][2] = {{cr - 1, cc}, {cr + 1, cc}, {cr, cc - 1}, {cr, cc + 1}};
                for (auto& q : nb)
                    if (inside(q[0], q[1]) && is_crop(q[0], q[1]) &&
                        !comp.contains({q[0], q[1]})) {
                        comp[{q[0], q[1]}] = n_comp;
                        stack.push_back({q[0], q[1]});
                    }
            }
            ++n_comp;
        }

    const int radius = static_cast<int>(std::ceil(inner_m / mask.cellsize));
    std::vector<std::set<std::int64_t>> eroded(static_cast<std::size_t>(n_comp));
    for (const auto& [pix, id] : comp) {
        bool keep = true;
        for (int dr = -radius; dr <= radius && keep; ++dr)
            for (int dc = -radius; dc <= radius; ++dc) {
                const int rr = pix.first + dr, cc = pix.second + dc;
                const auto it = comp.find({rr, cc});
                if (!inside(rr, cc) || it == comp.end() || it->second != id) {
                    keep = false;
                    break;
                }
            }
        if (keep)
            eroded[static_cast<std::size_t>(id)].insert(
                static_cast<std::int64_t>(pix.first) * mask.ncols + pix.second);
    }
    std::vector<std::set<std::int64_t>> out;
    const double ha_per_px = mask.cellsize * mask.cellsize / 1e4;
    for (auto& s : eroded)
        if (static_cast<double>(s.size()) * ha_per_px >= min_ha) out.push_back(std::move(s));
    return out;
}

} // namespace pheno::oracle
