#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "usnas/common.hpp"
#include "usnas/folds.hpp"
#include "usnas/image.hpp"
#include "usnas/image_io.hpp"
#include "usnas/synthetic.hpp"

using namespace usnas;
namespace fs = std::filesystem;

namespace {

RoiImage make_image(int h, int w, std::vector<uint8_t> px,
                    const std::string& id = "benign/a.png") {
  RoiImage img;
  img.height = h;
  img.width = w;
  img.pixels = std::move(px);
  img.source_id = id;
  return img;
}

RoiImage random_image(int h, int w, Rng& rng) {
  RoiImage img;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<size_t>(h) * w);
  for (auto& p : img.pixels)
    p = static_cast<uint8_t>(rng.uniform_int(256));
  img.source_id = "benign/r.png";
  return img;
}

std::array<long, 256> histogram(const RoiImage& img) {
  std::array<long, 256> h{};
  for (uint8_t p : img.pixels) ++h[p];
  return h;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("usnas_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST_CASE("mirror is an involution and flips columns") {
  RoiImage img = make_image(2, 2, {1, 2, 3, 4});
  const RoiImage m = mirror(img);
  CHECK(m.pixels == std::vector<uint8_t>{2, 1, 4, 3});
  CHECK(m.provenance == Provenance::kMirror);
  CHECK(m.label == img.label);
  CHECK(m.source_id == img.source_id);
  CHECK(mirror(m).pixels == img.pixels);

  Rng rng(1);
  const RoiImage r = random_image(7, 5, rng);
  CHECK(histogram(mirror(r)) == histogram(r));
}

TEST_CASE("rotation is exact and composes") {
  RoiImage img = make_image(2, 2, {1, 2, 3, 4});
  CHECK(rotate(img, 180).pixels == std::vector<uint8_t>{4, 3, 2, 1});
  CHECK_THROWS_AS(rotate(img, 45), ValidationError);

  Rng rng(2);
  const RoiImage r = random_image(6, 4, rng);
  const RoiImage r90 = rotate(r, 90);
  CHECK(r90.height == 4);
  CHECK(r90.width == 6);
  CHECK(rotate(rotate(rotate(r90, 90), 90), 90).pixels == r.pixels);
  CHECK(rotate(rotate(r, 90), 90).pixels == rotate(r, 180).pixels);
  CHECK(rotate(rotate(r, 180), 90).pixels == rotate(r, 270).pixels);
  CHECK(histogram(rotate(r, 90)) == histogram(r));
  CHECK(rotate(r, 90).provenance == Provenance::kRot90);
  CHECK(rotate(r, 270).provenance == Provenance::kRot270);
}

TEST_CASE("svd_truncate reconstructs rank-1 grids exactly") {
  // outer product of two positive vectors
  RoiImage img = make_image(3, 4, {});
  const double u[3] = {1.0, 2.0, 0.5};
  const double v[4] = {40.0, 80.0, 20.0, 60.0};
  img.pixels.resize(12);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      img.pixels[static_cast<size_t>(r) * 4 + c] =
          static_cast<uint8_t>(std::lround(u[r] * v[c]));
  for (double ratio : {0.25, 0.4, 1.0}) {
    const RoiImage rec = svd_truncate(img, ratio);
    for (size_t i = 0; i < img.pixels.size(); ++i)
      CHECK(std::abs(int(rec.pixels[i]) - int(img.pixels[i])) <= 1);
  }
}

TEST_CASE("svd_truncate at ratio 1 is the identity after rounding") {
  Rng rng(3);
  const RoiImage img = random_image(9, 9, rng);
  const RoiImage rec = svd_truncate(img, 1.0);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    CHECK(std::abs(int(rec.pixels[i]) - int(img.pixels[i])) <= 1);
  CHECK_THROWS_AS(svd_truncate(img, 0.0), ValidationError);
  CHECK_THROWS_AS(svd_truncate(img, 1.5), ValidationError);
}

TEST_CASE("svd truncation error equals the discarded spectrum") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd m(8, 8);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) m(r, c) = rng.uniform(0, 255);
    const int keep = 4;  // ratio 0.5
    const Eigen::MatrixXd rec = svd_rank_reconstruct(m, keep);
    const double err = (m - rec).squaredNorm();
    // independent route: the sum of discarded squared singular values
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    double expected = 0;
    for (int i = keep; i < 8; ++i)
      expected += svd.singularValues()[i] * svd.singularValues()[i];
    CHECK(std::abs(err - expected) / expected < 1e-9);
  }
}

TEST_CASE("svd truncation error shrinks as the ratio grows") {
  Rng rng(5);
  Eigen::MatrixXd m(10, 10);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) m(r, c) = rng.uniform(0, 255);
  double prev = std::numeric_limits<double>::infinity();
  for (int keep = 1; keep <= 10; ++keep) {
    const double err = (m - svd_rank_reconstruct(m, keep)).squaredNorm();
    CHECK(err <= prev + 1e-9);
    prev = err;
  }
}

TEST_CASE("augment_all yields the seven paper variants") {
  Rng rng(6);
  RoiImage img = random_image(12, 10, rng);
  const std::vector<RoiImage> variants = augment_all(img);
  REQUIRE(variants.size() == 7);
  const std::vector<Provenance> expected = {
      Provenance::kMirror, Provenance::kRot90,  Provenance::kRot180,
      Provenance::kRot270, Provenance::kSvd45, Provenance::kSvd35,
      Provenance::kSvd25};
  std::set<Provenance> seen;
  for (size_t i = 0; i < 7; ++i) {
    CHECK(variants[i].provenance == expected[i]);
    CHECK(variants[i].label == img.label);
    CHECK(variants[i].source_id == img.source_id);
    seen.insert(variants[i].provenance);
  }
  CHECK(seen.size() == 7);

  CHECK_THROWS_AS(augment_all(variants[0]), ValidationError);
}

TEST_CASE("resize_bicubic preserves constants and identity size") {
  RoiImage flat = make_image(13, 9, std::vector<uint8_t>(13 * 9, 77));
  const RoiImage out = resize_bicubic(flat, 100);
  CHECK(out.height == 100);
  CHECK(out.width == 100);
  for (uint8_t p : out.pixels) CHECK(p == 77);

  Rng rng(7);
  const RoiImage same = random_image(100, 100, rng);
  const RoiImage resized = resize_bicubic(same, 100);
  for (size_t i = 0; i < same.pixels.size(); ++i)
    CHECK(std::abs(int(resized.pixels[i]) - int(same.pixels[i])) <= 1);
}

TEST_CASE("resize_bicubic halves a checkerboard to its mean") {
  // 200x200 checkerboard of 2x2 blocks at 0/200
  RoiImage board = make_image(200, 200, std::vector<uint8_t>(200 * 200));
  for (int r = 0; r < 200; ++r)
    for (int c = 0; c < 200; ++c)
      board.pixels[static_cast<size_t>(r) * 200 + c] =
          (((r / 2) + (c / 2)) % 2) ? 200 : 0;
  double in_mean = 0;
  for (uint8_t p : board.pixels) in_mean += p;
  in_mean /= board.pixels.size();

  const RoiImage out = resize_bicubic(board, 100);
  double out_mean = 0;
  for (uint8_t p : out.pixels) out_mean += p;
  out_mean /= out.pixels.size();
  CHECK(std::abs(out_mean - in_mean) <= 1.0);
}

TEST_CASE("stratified folds balance both classes") {
  const std::vector<RoiImage> data = make_stripes_dataset(524, 8, 99);
  const FoldAssignment folds = stratified_folds(data, 5, 42);
  std::map<int, std::array<int, 2>> sizes;
  for (const RoiImage& img : data)
    ++sizes[folds.fold(img.source_id)][static_cast<int>(img.label)];
  REQUIRE(sizes.size() == 5);
  std::multiset<int> benign, malignant, totals;
  for (auto& [fold, counts] : sizes) {
    benign.insert(counts[0]);
    malignant.insert(counts[1]);
    totals.insert(counts[0] + counts[1]);
  }
  CHECK(benign == std::multiset<int>{53, 53, 52, 52, 52});
  CHECK(malignant == std::multiset<int>{53, 53, 52, 52, 52});
  CHECK(totals == std::multiset<int>{106, 105, 105, 104, 104});
}

TEST_CASE("fold assignment is deterministic and validates input") {
  const std::vector<RoiImage> data = make_stripes_dataset(40, 8, 1);
  const FoldAssignment a = stratified_folds(data, 5, 7);
  const FoldAssignment b = stratified_folds(data, 5, 7);
  CHECK(a.fold_of == b.fold_of);
  const FoldAssignment c = stratified_folds(data, 5, 8);
  CHECK(a.fold_of != c.fold_of);

  // k = 1 puts everything in fold 0
  for (auto& [id, fold] : stratified_folds(data, 1, 3).fold_of)
    CHECK(fold == 0);

  // augmented input is rejected
  std::vector<RoiImage> bad = data;
  bad.push_back(mirror(data[0]));
  CHECK_THROWS_AS(stratified_folds(bad, 5, 0), ValidationError);

  // too few sources in a class
  const std::vector<RoiImage> tiny = make_stripes_dataset(6, 8, 2);
  CHECK_THROWS_AS(stratified_folds(tiny, 5, 0), ValidationError);
}

TEST_CASE("validation split is stratified, disjoint and exhaustive") {
  std::vector<SourceRef> sources;
  for (int i = 0; i < 100; ++i)
    sources.push_back({"benign/" + std::to_string(i), Label::kBenign});
  for (int i = 0; i < 100; ++i)
    sources.push_back({"malignant/" + std::to_string(i), Label::kMalignant});
  auto [train, val] = split_validation(sources, 0.10, 5);
  CHECK(val.size() == 20);
  CHECK(train.size() == 180);
  long val_benign = 0;
  for (const SourceRef& s : val)
    if (s.label == Label::kBenign) ++val_benign;
  CHECK(val_benign == 10);

  std::set<std::string> seen;
  for (const SourceRef& s : train) seen.insert(s.source_id);
  for (const SourceRef& s : val) {
    CHECK(seen.count(s.source_id) == 0);
    seen.insert(s.source_id);
  }
  CHECK(seen.size() == sources.size());
}

TEST_CASE("validation split of a 419-source training split takes 42") {
  std::vector<SourceRef> sources;
  for (int i = 0; i < 209; ++i)
    sources.push_back({"benign/" + std::to_string(i), Label::kBenign});
  for (int i = 0; i < 210; ++i)
    sources.push_back({"malignant/" + std::to_string(i), Label::kMalignant});
  auto [train, val] = split_validation(sources, 0.10, 17);
  CHECK(val.size() == 21 + 21);
  CHECK(train.size() == 419 - 42);

  std::vector<SourceRef> degenerate = {{"benign/0", Label::kBenign},
                                       {"malignant/0", Label::kMalignant}};
  CHECK_THROWS_AS(split_validation(degenerate, 0.1, 0), ValidationError);
  CHECK_THROWS_AS(split_validation(sources, 1.0, 0), ValidationError);
}

TEST_CASE("augmented variants inherit their source's fold") {
  const std::vector<RoiImage> data = make_stripes_dataset(30, 8, 3);
  const FoldAssignment folds = stratified_folds(data, 3, 11);
  for (const RoiImage& img : data) {
    for (const RoiImage& aug : augment_all(img)) {
      CHECK(folds.fold(aug.source_id) == folds.fold(img.source_id));
    }
  }
}

TEST_CASE("png and pgm round-trips") {
  TempDir tmp;
  Rng rng(8);
  const RoiImage img = random_image(11, 17, rng);
  write_png(tmp.path / "img.png", img);
  const RoiImage back = read_image(tmp.path / "img.png", false);
  CHECK(back.height == img.height);
  CHECK(back.width == img.width);
  CHECK(back.pixels == img.pixels);

  write_pgm(tmp.path / "img.pgm", img);
  const RoiImage back_pgm = read_image(tmp.path / "img.pgm", false);
  CHECK(back_pgm.pixels == img.pixels);

  CHECK_THROWS_AS(read_image(tmp.path / "missing.png", false), IoError);
}

TEST_CASE("load_dataset orders, labels and validates") {
  TempDir tmp;
  fs::create_directories(tmp.path / "benign");
  fs::create_directories(tmp.path / "malignant");
  Rng rng(9);
  for (const char* name : {"c.png", "a.png", "b.png"})
    write_png(tmp.path / "benign" / name, random_image(8, 8, rng));
  for (const char* name : {"z.png", "y.pgm"}) {
    const RoiImage img = random_image(8, 8, rng);
    if (std::string(name).ends_with(".pgm"))
      write_pgm(tmp.path / "malignant" / name, img);
    else
      write_png(tmp.path / "malignant" / name, img);
  }

  const std::vector<RoiImage> data = load_dataset(tmp.path, false);
  REQUIRE(data.size() == 5);
  CHECK(data[0].source_id == "benign/a.png");
  CHECK(data[1].source_id == "benign/b.png");
  CHECK(data[2].source_id == "benign/c.png");
  CHECK(data[3].source_id == "malignant/y.pgm");
  CHECK(data[4].source_id == "malignant/z.png");
  for (int i = 0; i < 3; ++i) CHECK(data[i].label == Label::kBenign);
  for (int i = 3; i < 5; ++i) CHECK(data[i].label == Label::kMalignant);
  for (const RoiImage& img : data)
    CHECK(img.provenance == Provenance::kOriginal);

  // deterministic ordering
  const std::vector<RoiImage> again = load_dataset(tmp.path, false);
  for (size_t i = 0; i < data.size(); ++i)
    CHECK(data[i].source_id == again[i].source_id);

  // empty class
  for (const auto& entry : fs::directory_iterator(tmp.path / "malignant"))
    fs::remove(entry.path());
  CHECK_THROWS_WITH_AS(load_dataset(tmp.path, false),
                       doctest::Contains("malignant"), ValidationError);
}

TEST_CASE("manifest csv shape") {
  std::vector<ManifestRow> rows = {
      {"benign/a.png", Provenance::kOriginal, Label::kBenign, 0,
       "benign_a_png__original.png"},
      {"benign/a.png", Provenance::kSvd45, Label::kBenign, 0,
       "benign_a_png__svd45.png"}};
  const std::string csv = manifest_csv(rows);
  CHECK(csv ==
        "source_id,provenance,label,fold,file_path\n"
        "benign/a.png,original,benign,0,benign_a_png__original.png\n"
        "benign/a.png,svd45,benign,0,benign_a_png__svd45.png\n");
}
