#include "pheno/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pheno/errors.hpp"

namespace pheno {

// ---------------------------------------------------------------- masking

IrregularSeries cloud_mask_series(const IrregularSeries& obs, const IrregularSeries& cloud_prob,
                                  double threshold_percent) {
    if (obs.days != cloud_prob.days)
        throw ValidationError("cloud_mask_series: observation and cloud-probability "
                              "series have different timestamps");
    IrregularSeries out;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        if (cloud_prob.values[i] >= threshold_percent) continue;
        out.days.push_back(obs.days[i]);
        out.values.push_back(obs.values[i]);
    }
    return out;
}

// ---------------------------------------------------------------- loess

namespace {

double tricube(double u) {
    const double t = 1.0 - u * u * u;
    return t * t * t;
}

} // namespace

IrregularSeries loess_smooth(const IrregularSeries& series, double fraction) {
    const std::size_t n = series.size();
    if (n < 3) throw ValidationError("loess_smooth: insufficient data (need >= 3 points)");
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ValidationError("loess_smooth: fraction must be in (0, 1]");

    const std::size_t window =
        std::min(n, std::max<std::size_t>(2, static_cast<std::size_t>(
                                                 std::ceil(fraction * static_cast<double>(n)))));

    IrregularSeries out;
    out.days = series.days;
    out.values.resize(n);

    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t0 = static_cast<double>(series.days[i]);

        // Nearest `window` points by |t - t0|; equal distances resolved by
        // original order so the result does not depend on sort internals.
        std::iota(idx.begin(), idx.end(), 0);
        std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(window - 1),
                         idx.end(), [&](std::size_t a, std::size_t b) {
                             const double da = std::abs(static_cast<double>(series.days[a]) - t0);
                             const double db = std::abs(static_cast<double>(series.days[b]) - t0);
                             return da != db ? da < db : a < b;
                         });

        double dmax = 0.0;
        for (std::size_t k = 0; k < window; ++k)
            dmax = std::max(dmax, std::abs(static_cast<double>(series.days[idx[k]]) - t0));

        // Weighted degree-1 fit over the window, evaluated at t0. Centering
        // on t0 makes the intercept the fitted value.
        double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
        for (std::size_t k = 0; k < window; ++k) {
            const std::size_t j = idx[k];
            const double x = static_cast<double>(series.days[j]) - t0;
            const double d = std::abs(x);
            const double w = dmax > 0 ? tricube(d / dmax) : 1.0;
            if (w <= 0) continue;
            const double y = series.values[j];
            sw += w;
            swx += w * x;
            swy += w * y;
            swxx += w * x * x;
            swxy += w * x * y;
        }
        const double det = sw * swxx - swx * swx;
        if (std::abs(det) > 1e-12 * std::max(1.0, sw * swxx)) {
            out.values[i] = (swxx * swy - swx * swxy) / det;
        } else {
            // Degenerate window (one effective point): weighted mean.
            out.values[i] = sw > 0 ? swy / sw : series.values[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------- resample

DailySeries resample_daily(const IrregularSeries& series) {
    if (series.size() < 2) throw ValidationError("resample_daily: need >= 2 points");
    for (std::size_t i = 1; i < series.size(); ++i)
        if (series.days[i] <= series.days[i - 1])
            throw ValidationError("resample_daily: timestamps must be strictly increasing");

    DailySeries out;
    out.start = Date::from_serial(series.days.front());
    const std::int64_t span = series.days.back() - series.days.front();
    out.values.resize(static_cast<std::size_t>(span) + 1);

    std::size_t seg = 0;
    for (std::int64_t d = 0; d <= span; ++d) {
        const std::int64_t day = series.days.front() + d;
        while (series.days[seg + 1] < day) ++seg;
        const std::int64_t d0 = series.days[seg];
        const std::int64_t d1 = series.days[seg + 1];
        const double v0 = series.values[seg];
        const double v1 = series.values[seg + 1];
        if (day == d0) {
            out.values[static_cast<std::size_t>(d)] = v0;
        } else if (day == d1) {
            out.values[static_cast<std::size_t>(d)] = v1;
        } else {
            const double t = static_cast<double>(day - d0) / static_cast<double>(d1 - d0);
            out.values[static_cast<std::size_t>(d)] = v0 + t * (v1 - v0);
        }
    }
    return out;
}

// ---------------------------------------------------------------- fields

namespace {

struct Window {
    int row0, row1, col0, col1; // inclusive
    int width() const { return col1 - col0 + 1; }
    int height() const { return row1 - row0 + 1; }
};

} // namespace

FieldSelection select_station_fields(const Grid& crop_mask, double station_x, double station_y,
                                     Crop crop, double box_size_m, double inner_buffer_m,
                                     double min_area_ha) {
    if (!(crop_mask.cellsize > 0)) throw ValidationError("select_station_fields: bad cellsize");
    const double gx0 = crop_mask.origin_x;
    const double gy0 = crop_mask.origin_y;
    const double gx1 = gx0 + crop_mask.ncols * crop_mask.cellsize;
    const double gy1 = gy0 + crop_mask.nrows * crop_mask.cellsize;
    if (station_x < gx0 || station_x > gx1 || station_y < gy0 || station_y > gy1)
        throw ValidationError("select_station_fields: station lies outside the crop mask");

    // Pixel window covered by the box, clipped to the grid.
    const double half = box_size_m / 2.0;
    auto col_of = [&](double x) {
        return static_cast<int>(std::floor((x - gx0) / crop_mask.cellsize));
    };
    auto row_of = [&](double y) {
        return static_cast<int>(std::floor((gy1 - y) / crop_mask.cellsize));
    };
    Window win;
    win.col0 = std::max(0, col_of(station_x - half));
    win.col1 = std::min(crop_mask.ncols - 1, col_of(station_x + half - 1e-9));
    win.row0 = std::max(0, row_of(station_y + half - 1e-9));
    win.row1 = std::min(crop_mask.nrows - 1, row_of(station_y - half));

    const int target = crop_mask_code(crop);
    const int w = win.width();
    const int h = win.height();
    auto in_window_class = [&](int r, int c) {
        const double v = crop_mask.at(win.row0 + r, win.col0 + c);
        return !crop_mask.is_nodata(v) && static_cast<int>(v) == target;
    };

    // 4-connected component labels within the window.
    std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
    int n_components = 0;
    std::vector<int> stack;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int at = r * w + c;
            if (label[at] != -1 || !in_window_class(r, c)) continue;
            const int id = n_components++;
            stack.assign(1, at);
            label[at] = id;
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                const int cr = cur / w, cc = cur % w;
                const int nbr[4][2] = {{cr - 1, cc}, {cr + 1, cc}, {cr, cc - 1}, {cr, cc + 1}};
                for (const auto& nb : nbr) {
                    if (nb[0] < 0 || nb[0] >= h || nb[1] < 0 || nb[1] >= w) continue;
                    const int ni = nb[0] * w + nb[1];
                    if (label[ni] == -1 && in_window_class(nb[0], nb[1])) {
                        label[ni] = id;
                        stack.push_back(ni);
                    }
                }
            }
        }
    }

    // Erode each component with a square structuring element: a pixel
    // survives when every pixel within Chebyshev radius `radius` belongs to
    // the same component (outside the window counts as background).
    const int radius = static_cast<int>(std::ceil(inner_buffer_m / crop_mask.cellsize));
    std::vector<std::vector<std::int64_t>> eroded(static_cast<std::size_t>(n_components));
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int id = label[r * w + c];
            if (id == -1) continue;
            bool keep = true;
            for (int dr = -radius; keep && dr <= radius; ++dr) {
                for (int dc = -radius; dc <= radius; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= h || cc < 0 || cc >= w || label[rr * w + cc] != id) {
                        keep = false;
                        break;
                    }
                }
            }
            if (keep)
                eroded[static_cast<std::size_t>(id)].push_back(
                    static_cast<std::int64_t>(win.row0 + r) * crop_mask.ncols + (win.col0 + c));
        }
    }

    const double ha_per_pixel = crop_mask.cellsize * crop_mask.cellsize / 1e4;
    FieldSelection sel;
    sel.crop = crop;
    for (auto& pixels : eroded) {
        const double area = static_cast<double>(pixels.size()) * ha_per_pixel;
        if (area >= min_area_ha) {
            sel.pixel_sets.push_back(std::move(pixels));
            sel.areas_ha.push_back(area);
        }
    }
    return sel;
}

// ---------------------------------------------------------------- medians

IrregularSeries median_aggregate(const FieldSelection& selection, const Grid& reference_geometry,
                                 const std::map<Date, Grid>& raster_series) {
    IrregularSeries out;
    std::vector<double> vals;
    for (const auto& [date, grid] : raster_series) {
        if (!grid.same_geometry(reference_geometry))
            throw ValidationError("median_aggregate: raster for " + date.iso() +
                                  " does not share the crop-mask geometry");
        vals.clear();
        for (const auto& set : selection.pixel_sets)
            for (const std::int64_t px : set) {
                const double v = grid.values[static_cast<std::size_t>(px)];
                if (!grid.is_nodata(v)) vals.push_back(v);
            }
        if (vals.empty()) continue;
        std::sort(vals.begin(), vals.end());
        const std::size_t m = vals.size();
        const double median =
            (m % 2 == 1) ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
        out.days.push_back(date.serial());
        out.values.push_back(median);
    }
    return out;
}

} // namespace pheno
