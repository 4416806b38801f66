#include "pheno/types.hpp"

#include <algorithm>
#include <cmath>

namespace pheno {

namespace {

const std::array<std::string, kNumCrops> kCropNames = {
    "maize",         "spring_barley",   "spring_oat", "sugar_beet",
    "winter_barley", "winter_rapeseed", "winter_rye", "winter_wheat",
};

} // namespace

const std::string& crop_name(Crop c) { return kCropNames[static_cast<int>(c)]; }

std::optional<Crop> crop_from_name(const std::string& name) {
    for (int i = 0; i < kNumCrops; ++i)
        if (kCropNames[i] == name) return static_cast<Crop>(i);
    return std::nullopt;
}

double crop_base_temperature(Crop c) {
    switch (c) {
        case Crop::Maize: return 10.0;
        case Crop::SpringOat: return 0.0;
        case Crop::SugarBeet: return 1.0;
        case Crop::SpringBarley:
        case Crop::WinterBarley:
        case Crop::WinterRapeseed:
        case Crop::WinterRye:
        case Crop::WinterWheat: return 4.5;
    }
    return 4.5;
}

bool is_known_bbch(int code) {
    return std::find(kBbchCodes.begin(), kBbchCodes.end(), code) != kBbchCodes.end();
}

bool Grid::same_geometry(const Grid& o) const {
    return ncols == o.ncols && nrows == o.nrows &&
           std::abs(origin_x - o.origin_x) < 1e-6 && std::abs(origin_y - o.origin_y) < 1e-6 &&
           std::abs(cellsize - o.cellsize) < 1e-9;
}

} // namespace pheno
