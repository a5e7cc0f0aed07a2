#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace usnas {

enum class Label : int { kBenign = 0, kMalignant = 1 };

enum class Provenance : int {
  kOriginal = 0,
  kMirror,
  kRot90,
  kRot180,
  kRot270,
  kSvd45,
  kSvd35,
  kSvd25,
};

std::string_view label_name(Label l);            // "benign" / "malignant"
std::string_view provenance_name(Provenance p);  // "original", "mirror", ...

// Grayscale lesion crop. Augmented variants keep their source's identity and
// label and record how they were derived.
struct RoiImage {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;  // row-major, 8-bit
  Label label = Label::kBenign;
  std::string source_id;
  Provenance provenance = Provenance::kOriginal;

  uint8_t at(int r, int c) const {
    return pixels[static_cast<size_t>(r) * static_cast<size_t>(width) +
                  static_cast<size_t>(c)];
  }
};

// Horizontal flip.
RoiImage mirror(const RoiImage& img);

// Exact lattice rotation; degrees must be 90, 180 or 270.
RoiImage rotate(const RoiImage& img, int degrees);

// Keeps the top ceil(ratio * min(H, W)) singular values of the pixel grid,
// reconstructs, clamps to [0,255] and rounds. ratio must lie in (0, 1].
RoiImage svd_truncate(const RoiImage& img, double ratio);

// Rank-k reconstruction of an arbitrary matrix (the primitive behind
// svd_truncate, exposed for error analysis).
Eigen::MatrixXd svd_rank_reconstruct(const Eigen::MatrixXd& m, int rank);

// The seven paper variants of one ORIGINAL image, in fixed order:
// mirror, rot90, rot180, rot270, svd45, svd35, svd25.
std::vector<RoiImage> augment_all(const RoiImage& img);

// Catmull-Rom bicubic (a = -0.5), edge-clamped, pixel-center aligned;
// output is side x side.
RoiImage resize_bicubic(const RoiImage& img, int side = 100);

}  // namespace usnas
