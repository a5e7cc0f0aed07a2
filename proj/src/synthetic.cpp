#include "usnas/synthetic.hpp"

#include <algorithm>
#include <string>

#include "usnas/common.hpp"

namespace usnas {

std::vector<RoiImage> make_stripes_dataset(int count, int side, uint64_t seed) {
  if (count < 2 || side < 4)
    throw ValidationError("make_stripes_dataset: need count >= 2, side >= 4");
  Rng rng(seed);
  std::vector<RoiImage> out;
  out.reserve(static_cast<size_t>(count));
  char name[64];
  for (int i = 0; i < count; ++i) {
    const bool vertical = (i % 2) == 1;  // malignant
    const int period = 2 + static_cast<int>(rng.uniform_int(3));
    const int phase = static_cast<int>(rng.uniform_int(period));
    const int lo = 30 + static_cast<int>(rng.uniform_int(40));
    const int hi = 170 + static_cast<int>(rng.uniform_int(60));
    RoiImage img;
    img.height = side;
    img.width = side;
    img.pixels.resize(static_cast<size_t>(side) * side);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const int coord = vertical ? c : r;
        const bool band = ((coord + phase) / period) % 2 == 0;
        const int noise = static_cast<int>(rng.uniform_int(21)) - 10;
        img.pixels[static_cast<size_t>(r) * side + c] = static_cast<uint8_t>(
            std::clamp((band ? hi : lo) + noise, 0, 255));
      }
    img.label = vertical ? Label::kMalignant : Label::kBenign;
    std::snprintf(name, sizeof(name), "%s/stripes_%04d.png",
                  vertical ? "malignant" : "benign", i);
    img.source_id = name;
    img.provenance = Provenance::kOriginal;
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace usnas
