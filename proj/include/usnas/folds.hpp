#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "usnas/image.hpp"

namespace usnas {

struct SourceRef {
  std::string source_id;
  Label label = Label::kBenign;

  bool operator==(const SourceRef&) const = default;
};

// source_id -> fold index in [0, k). Stratified: within each class the fold
// sizes differ by at most one.
struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold_of;

  int fold(const std::string& source_id) const;
};

// Per-class seeded shuffle followed by round-robin assignment. The dataset
// must contain only ORIGINAL images (folds belong to sources; augmented
// variants inherit them). Throws when a class has fewer sources than k.
FoldAssignment stratified_folds(const std::vector<RoiImage>& dataset, int k,
                                uint64_t seed);

// Stratified validation carve-out: ceil(fraction * n) sources per class.
// Disjoint and exhaustive; throws when a class has fewer than two sources.
std::pair<std::vector<SourceRef>, std::vector<SourceRef>> split_validation(
    const std::vector<SourceRef>& sources, double fraction, uint64_t seed);

// folds file: CSV with columns source_id, label, fold.
void save_folds(const FoldAssignment& folds,
                const std::vector<RoiImage>& dataset,
                const std::filesystem::path& path);
FoldAssignment load_folds(const std::filesystem::path& path);

}  // namespace usnas
