#pragma once

#include <cstdint>
#include <vector>

#include "usnas/image.hpp"

namespace usnas {

// Two-class texture set for desk-scale runs: horizontal-stripe images are
// BENIGN, vertical-stripe images MALIGNANT. Balanced, deterministic per seed.
std::vector<RoiImage> make_stripes_dataset(int count, int side, uint64_t seed);

}  // namespace usnas
