#pragma once

#include <map>
#include <vector>

#include "pheno/types.hpp"

namespace pheno {

// Drops observations whose cloud probability is >= threshold (percent).
// `obs` and `cloud_prob` must share timestamps exactly.
IrregularSeries cloud_mask_series(const IrregularSeries& obs, const IrregularSeries& cloud_prob,
                                  double threshold_percent = 75.0);

// Locally weighted linear regression. For each observed timestamp the value
// is refit from the window of the max(2, ceil(fraction*n)) nearest points in
// time with tricube weights. Single pass, no robustness iterations.
IrregularSeries loess_smooth(const IrregularSeries& series, double fraction);

// Linear interpolation onto every day between the first and last timestamp.
// No extrapolation outside the observed span.
DailySeries resample_daily(const IrregularSeries& series);

// Candidate-field selection around one station: clip the crop-type map to the
// 5 km box, label 4-connected components of the target crop, erode each by
// ceil(inner_buffer_m / cellsize) pixels (square structuring element), and
// keep components whose remaining area is at least min_area_ha.
FieldSelection select_station_fields(const Grid& crop_mask, double station_x, double station_y,
                                     Crop crop, double box_size_m = 5000.0,
                                     double inner_buffer_m = 70.0, double min_area_ha = 2.0);

// Per-date median over every selected pixel, nodata ignored; dates where all
// pixels are nodata are absent from the output. Grids must share the crop
// mask's geometry.
IrregularSeries median_aggregate(const FieldSelection& selection, const Grid& reference_geometry,
                                 const std::map<Date, Grid>& raster_series);

} // namespace pheno
