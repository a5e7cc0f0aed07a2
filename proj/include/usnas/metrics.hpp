#pragma once

#include <optional>
#include <string>
#include <vector>

namespace usnas {

// Confusion counts plus the four Table-style rates. A rate whose denominator
// is zero is absent rather than silently zero; the positive class is
// MALIGNANT throughout (see kPositiveClassIsMalignant).
struct Metrics {
  long tn = 0, fp = 0, fn = 0, tp = 0;
  std::optional<double> tnr, tpr, pr, acc;
};

inline constexpr bool kPositiveClassIsMalignant = true;

// Throws ValidationError when all four counts are zero.
Metrics compute_metrics(long tn, long fp, long fn, long tp);

// Unweighted mean of per-fold rates (counts are summed); absent rates are
// skipped per-fold.
Metrics mean_of_rates(const std::vector<Metrics>& folds);

// CSV with columns fold, tn, fp, fn, tp, tnr, tpr, pr, acc and a final
// "mean" row. Absent rates print as empty fields.
std::string metrics_csv(const std::vector<Metrics>& folds,
                        const Metrics& mean);

}  // namespace usnas
