#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "usnas/image.hpp"

namespace usnas {

// 8-bit grayscale PNG/PGM readers. Non-grayscale (or 16-bit) content is
// rejected unless convert_to_gray is set, in which case the Rec.601
// luminance weighting is applied.
RoiImage read_image(const std::filesystem::path& path, bool convert_to_gray);

void write_png(const std::filesystem::path& path, const RoiImage& img);
void write_pgm(const std::filesystem::path& path, const RoiImage& img);

// Loads root/benign and root/malignant (*.png, *.pgm), lexicographically
// ordered by relative path; source_id is the relative path. Throws on
// unreadable files, on non-grayscale input when conversion is off, and on an
// empty class.
std::vector<RoiImage> load_dataset(const std::filesystem::path& root,
                                   bool convert_to_gray = false);

// Augmented-set manifest (CSV columns: source_id, provenance, label, fold,
// file_path).
struct ManifestRow {
  std::string source_id;
  Provenance provenance = Provenance::kOriginal;
  Label label = Label::kBenign;
  int fold = -1;
  std::string file_path;
};

std::string manifest_csv(const std::vector<ManifestRow>& rows);

// Output file name for one (possibly augmented) image, unique per
// (source_id, provenance) and filesystem-safe.
std::string augmented_file_name(const RoiImage& img);

// FNV-1a over image identities and pixel content; used as the dataset
// fingerprint in experiment manifests.
uint64_t dataset_fingerprint(const std::vector<RoiImage>& images);

// Reads a directory previously written by the augment command (manifest.csv
// plus image files). Rows keep their manifest order.
struct AugmentedSet {
  std::vector<RoiImage> images;
  std::map<std::string, int> fold_of;  // empty when folds were not assigned
};

AugmentedSet load_augmented_set(const std::filesystem::path& dir);

}  // namespace usnas
