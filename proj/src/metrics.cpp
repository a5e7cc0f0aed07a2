#include "usnas/metrics.hpp"

#include <sstream>

#include "usnas/common.hpp"

namespace usnas {

Metrics compute_metrics(long tn, long fp, long fn, long tp) {
  if (tn < 0 || fp < 0 || fn < 0 || tp < 0)
    throw ValidationError("compute_metrics: counts must be non-negative");
  if (tn + fp + fn + tp == 0)
    throw ValidationError("compute_metrics: empty confusion matrix");
  Metrics m;
  m.tn = tn;
  m.fp = fp;
  m.fn = fn;
  m.tp = tp;
  auto rate = [](long num, long den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.tnr = rate(tn, tn + fp);
  m.tpr = rate(tp, tp + fn);
  m.pr = rate(tp, tp + fp);
  m.acc = rate(tp + tn, tp + tn + fp + fn);
  return m;
}

Metrics mean_of_rates(const std::vector<Metrics>& folds) {
  if (folds.empty())
    throw ValidationError("mean_of_rates: no folds");
  Metrics mean;
  auto average = [&folds](std::optional<double> Metrics::* field) {
    double acc = 0;
    int n = 0;
    for (const Metrics& m : folds) {
      if (m.*field) {
        acc += *(m.*field);
        ++n;
      }
    }
    return n > 0 ? std::optional<double>(acc / n) : std::nullopt;
  };
  for (const Metrics& m : folds) {
    mean.tn += m.tn;
    mean.fp += m.fp;
    mean.fn += m.fn;
    mean.tp += m.tp;
  }
  mean.tnr = average(&Metrics::tnr);
  mean.tpr = average(&Metrics::tpr);
  mean.pr = average(&Metrics::pr);
  mean.acc = average(&Metrics::acc);
  return mean;
}

std::string metrics_csv(const std::vector<Metrics>& folds,
                        const Metrics& mean) {
  std::ostringstream out;
  out << "fold,tn,fp,fn,tp,tnr,tpr,pr,acc\n";
  auto field = [&out](const std::optional<double>& v) {
    if (v) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", *v);
      out << buf;
    }
  };
  auto row = [&](const std::string& name, const Metrics& m) {
    out << name << "," << m.tn << "," << m.fp << "," << m.fn << "," << m.tp
        << ",";
    field(m.tnr);
    out << ",";
    field(m.tpr);
    out << ",";
    field(m.pr);
    out << ",";
    field(m.acc);
    out << "\n";
  };
  for (size_t i = 0; i < folds.size(); ++i)
    row(std::to_string(i), folds[i]);
  row("mean", mean);
  return out.str();
}

}  // namespace usnas
