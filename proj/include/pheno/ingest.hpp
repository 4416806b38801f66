#pragma once

#include <string>
#include <vector>

#include "pheno/types.hpp"

namespace pheno {

// Header: station_id,lat,lon,crop,bbch,date,qb,qn
// Throws ParseError / ValidationError with the offending 1-based line number.
std::vector<StationObservation> parse_phenology_csv(const std::string& text);
std::string serialize_phenology_csv(const std::vector<StationObservation>& obs);

// Quality filter (qb=1 or qn=10) plus the stage-order filter: within each
// (station, crop, season) group a record is dropped when its date is not
// strictly later than the date of an already-retained lower BBCH code.
// Duplicate stages in a group keep the earliest date. Idempotent; output
// sorted by station, crop, date.
std::vector<StationObservation> clean_observations(std::vector<StationObservation> obs);

// Header: station_id,lat,lon,date,tmax,tmin,prcp (tmax/tmin/prcp may be empty)
std::vector<ClimateRecord> parse_climate_csv(const std::string& text);
std::string serialize_climate_csv(const std::vector<ClimateRecord>& records);

// ASCII grid: ncols/nrows/xllcorner/yllcorner/cellsize/nodata_value header,
// then nrows lines of ncols values, top row first.
Grid parse_grid(const std::string& text);
std::string serialize_grid(const Grid& grid);

} // namespace pheno
