#include "usnas/folds.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "usnas/common.hpp"

namespace usnas {

int FoldAssignment::fold(const std::string& source_id) const {
  auto it = fold_of.find(source_id);
  if (it == fold_of.end())
    throw ValidationError("no fold assignment for source " + source_id);
  return it->second;
}

FoldAssignment stratified_folds(const std::vector<RoiImage>& dataset, int k,
                                uint64_t seed) {
  if (k < 1) throw ValidationError("stratified_folds: k must be >= 1");
  std::vector<std::string> by_class[2];
  for (const RoiImage& img : dataset) {
    if (img.provenance != Provenance::kOriginal)
      throw ValidationError(
          "stratified_folds: dataset contains augmented image " +
          img.source_id + " (" + std::string(provenance_name(img.provenance)) +
          "); folds are assigned to original sources only");
    by_class[static_cast<int>(img.label)].push_back(img.source_id);
  }
  FoldAssignment out;
  out.k = k;
  Rng rng(seed);
  for (int cls = 0; cls < 2; ++cls) {
    auto& ids = by_class[cls];
    std::sort(ids.begin(), ids.end());
    if (static_cast<int>(ids.size()) < k)
      throw ValidationError("class " +
                            std::string(label_name(static_cast<Label>(cls))) +
                            " has " + std::to_string(ids.size()) +
                            " sources, fewer than k=" + std::to_string(k));
    rng.shuffle(ids);
    // staggered round-robin: each class starts one fold later, so the
    // oversized folds of the two classes do not pile up on the same index
    for (size_t i = 0; i < ids.size(); ++i)
      out.fold_of[ids[i]] =
          static_cast<int>((i + static_cast<size_t>(cls)) %
                           static_cast<size_t>(k));
  }
  return out;
}

std::pair<std::vector<SourceRef>, std::vector<SourceRef>> split_validation(
    const std::vector<SourceRef>& sources, double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ValidationError("split_validation: fraction must be in (0,1)");
  std::vector<SourceRef> by_class[2];
  for (const SourceRef& s : sources)
    by_class[static_cast<int>(s.label)].push_back(s);
  std::vector<SourceRef> train, val;
  Rng rng(seed);
  for (int cls = 0; cls < 2; ++cls) {
    auto& ids = by_class[cls];
    if (ids.size() < 2)
      throw ValidationError("split_validation: class " +
                            std::string(label_name(static_cast<Label>(cls))) +
                            " has fewer than 2 sources");
    std::sort(ids.begin(), ids.end(),
              [](const SourceRef& a, const SourceRef& b) {
                return a.source_id < b.source_id;
              });
    rng.shuffle(ids);
    const size_t n_val = static_cast<size_t>(
        std::ceil(fraction * static_cast<double>(ids.size())));
    for (size_t i = 0; i < ids.size(); ++i)
      (i < n_val ? val : train).push_back(ids[i]);
  }
  return {std::move(train), std::move(val)};
}

void save_folds(const FoldAssignment& folds,
                const std::vector<RoiImage>& dataset,
                const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write folds file " + path.string());
  f << "source_id,label,fold\n";
  for (const RoiImage& img : dataset) {
    f << img.source_id << "," << label_name(img.label) << ","
      << folds.fold(img.source_id) << "\n";
  }
}

FoldAssignment load_folds(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read folds file " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "source_id,label,fold")
    throw IoError("folds file " + path.string() + " has a bad header");
  FoldAssignment out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const size_t c1 = line.find(',');
    const size_t c2 = line.rfind(',');
    if (c1 == std::string::npos || c2 == c1)
      throw IoError("folds file " + path.string() + ": bad row: " + line);
    const std::string id = line.substr(0, c1);
    const int fold = std::stoi(line.substr(c2 + 1));
    out.fold_of[id] = fold;
    out.k = std::max(out.k, fold + 1);
  }
  if (out.fold_of.empty())
    throw IoError("folds file " + path.string() + " is empty");
  return out;
}

}  // namespace usnas
