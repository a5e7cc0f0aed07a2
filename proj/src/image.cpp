#include "usnas/image.hpp"

#include <cmath>

#include "usnas/common.hpp"

namespace usnas {

namespace {

uint8_t quantize(double v) {
  const double clamped = std::min(255.0, std::max(0.0, v));
  return static_cast<uint8_t>(std::lround(clamped));
}

RoiImage rot90_cw(const RoiImage& img) {
  RoiImage out = img;
  out.height = img.width;
  out.width = img.height;
  out.pixels.assign(img.pixels.size(), 0);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      out.pixels[static_cast<size_t>(r) * static_cast<size_t>(out.width) + c] =
          img.at(img.height - 1 - c, r);
  return out;
}

// Catmull-Rom kernel, a = -0.5.
double cubic_weight(double s) {
  s = std::abs(s);
  if (s <= 1.0) return (1.5 * s - 2.5) * s * s + 1.0;
  if (s < 2.0) return ((-0.5 * s + 2.5) * s - 4.0) * s + 2.0;
  return 0.0;
}

}  // namespace

std::string_view label_name(Label l) {
  return l == Label::kBenign ? "benign" : "malignant";
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kOriginal: return "original";
    case Provenance::kMirror: return "mirror";
    case Provenance::kRot90: return "rot90";
    case Provenance::kRot180: return "rot180";
    case Provenance::kRot270: return "rot270";
    case Provenance::kSvd45: return "svd45";
    case Provenance::kSvd35: return "svd35";
    case Provenance::kSvd25: return "svd25";
  }
  return "unknown";
}

RoiImage mirror(const RoiImage& img) {
  RoiImage out = img;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      out.pixels[static_cast<size_t>(r) * static_cast<size_t>(img.width) + c] =
          img.at(r, img.width - 1 - c);
  out.provenance = Provenance::kMirror;
  return out;
}

RoiImage rotate(const RoiImage& img, int degrees) {
  int turns;
  Provenance prov;
  switch (degrees) {
    case 90: turns = 1; prov = Provenance::kRot90; break;
    case 180: turns = 2; prov = Provenance::kRot180; break;
    case 270: turns = 3; prov = Provenance::kRot270; break;
    default:
      throw ValidationError("rotate: degrees must be 90, 180 or 270, got " +
                            std::to_string(degrees));
  }
  RoiImage out = img;
  for (int i = 0; i < turns; ++i) out = rot90_cw(out);
  out.provenance = prov;
  return out;
}

Eigen::MatrixXd svd_rank_reconstruct(const Eigen::MatrixXd& m, int rank) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU |
                                            Eigen::ComputeThinV);
  const int k = std::min<int>(rank, static_cast<int>(svd.singularValues().size()));
  return svd.matrixU().leftCols(k) *
         svd.singularValues().head(k).asDiagonal() *
         svd.matrixV().leftCols(k).transpose();
}

RoiImage svd_truncate(const RoiImage& img, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw ValidationError("svd_truncate: ratio must be in (0,1], got " +
                          std::to_string(ratio));
  Eigen::MatrixXd m(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) m(r, c) = img.at(r, c);
  const int rank = static_cast<int>(
      std::ceil(ratio * std::min(img.height, img.width)));
  const Eigen::MatrixXd rec = svd_rank_reconstruct(m, rank);
  RoiImage out = img;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      out.pixels[static_cast<size_t>(r) * static_cast<size_t>(img.width) + c] =
          quantize(rec(r, c));
  out.provenance = ratio >= 0.40   ? Provenance::kSvd45
                   : ratio >= 0.30 ? Provenance::kSvd35
                                   : Provenance::kSvd25;
  return out;
}

std::vector<RoiImage> augment_all(const RoiImage& img) {
  if (img.provenance != Provenance::kOriginal)
    throw ValidationError("augment_all: input must be an ORIGINAL image, got " +
                          std::string(provenance_name(img.provenance)) +
                          " variant of " + img.source_id);
  return {mirror(img),           rotate(img, 90),       rotate(img, 180),
          rotate(img, 270),      svd_truncate(img, 0.45), svd_truncate(img, 0.35),
          svd_truncate(img, 0.25)};
}

RoiImage resize_bicubic(const RoiImage& img, int side) {
  if (side < 1)
    throw ValidationError("resize_bicubic: side must be >= 1");

  // Separable two-pass filtering; quantization happens once at the end.
  auto resample_axis = [](const std::vector<double>& in, int in_h, int in_w,
                          int out_w) {
    std::vector<double> out(static_cast<size_t>(in_h) * out_w);
    const double scale = static_cast<double>(in_w) / out_w;
    for (int x = 0; x < out_w; ++x) {
      const double src = (x + 0.5) * scale - 0.5;
      const double base = std::floor(src);
      const double t = src - base;
      double w[4];
      for (int i = -1; i <= 2; ++i) w[i + 1] = cubic_weight(t - i);
      int idx[4];
      for (int i = -1; i <= 2; ++i) {
        long p = static_cast<long>(base) + i;
        idx[i + 1] = static_cast<int>(std::min<long>(in_w - 1, std::max<long>(0, p)));
      }
      for (int r = 0; r < in_h; ++r) {
        const double* row = in.data() + static_cast<size_t>(r) * in_w;
        out[static_cast<size_t>(r) * out_w + x] =
            w[0] * row[idx[0]] + w[1] * row[idx[1]] + w[2] * row[idx[2]] +
            w[3] * row[idx[3]];
      }
    }
    return out;
  };
  auto transpose = [](const std::vector<double>& in, int h, int w) {
    std::vector<double> out(in.size());
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        out[static_cast<size_t>(c) * h + r] = in[static_cast<size_t>(r) * w + c];
    return out;
  };

  std::vector<double> work(img.pixels.begin(), img.pixels.end());
  work = resample_axis(work, img.height, img.width, side);  // H x side
  work = transpose(work, img.height, side);                 // side x H
  work = resample_axis(work, side, img.height, side);       // side x side
  work = transpose(work, side, side);

  RoiImage out = img;
  out.height = side;
  out.width = side;
  out.pixels.resize(static_cast<size_t>(side) * side);
  for (size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = quantize(work[i]);
  return out;
}

}  // namespace usnas
