#include "usnas/trainer.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <thread>

#include "json.hpp"

namespace usnas {

namespace {

nn::Tensor batch_tensor(const std::vector<const RoiImage*>& items,
                        int channels) {
  const long n = static_cast<long>(items.size());
  const long h = items[0]->height, w = items[0]->width;
  nn::Tensor x(std::vector<long>{n, channels, h, w});
  for (long i = 0; i < n; ++i) {
    const RoiImage& img = *items[static_cast<size_t>(i)];
    if (img.height != h || img.width != w)
      throw ValidationError("batch_tensor: mixed image sizes in one batch");
    for (long c = 0; c < channels; ++c) {
      double* dst = x.data() + ((i * channels + c) * h) * w;
      for (long j = 0; j < h * w; ++j)
        dst[j] = static_cast<double>(img.pixels[static_cast<size_t>(j)]) / 255.0;
    }
  }
  return x;
}

std::vector<int> batch_labels(const std::vector<const RoiImage*>& items) {
  std::vector<int> labels;
  labels.reserve(items.size());
  for (const RoiImage* img : items)
    labels.push_back(static_cast<int>(img->label));
  return labels;
}

// Ties go to the first class, i.e. BENIGN.
int argmax_row(const nn::Tensor& logits, long row) {
  const long k = logits.dim(1);
  int best = 0;
  for (long j = 1; j < k; ++j)
    if (logits[row * k + j] > logits[row * k + best]) best = static_cast<int>(j);
  return best;
}

using ForwardFn =
    std::function<nn::Graph::Ref(nn::Graph&, nn::Graph::Ref, nn::BnMode)>;

Metrics confusion_over(const ForwardFn& fwd,
                       const std::vector<RoiImage>& images, int channels,
                       int batch_size, nn::BnMode mode) {
  if (images.empty())
    throw ValidationError("evaluation: empty image set");
  long tn = 0, fp = 0, fn = 0, tp = 0;
  for (size_t start = 0; start < images.size();
       start += static_cast<size_t>(batch_size)) {
    std::vector<const RoiImage*> items;
    for (size_t i = start;
         i < std::min(images.size(), start + static_cast<size_t>(batch_size));
         ++i)
      items.push_back(&images[i]);
    nn::Graph g;
    nn::Graph::Ref x = g.constant(batch_tensor(items, channels));
    nn::Graph::Ref logits = fwd(g, x, mode);
    const nn::Tensor& out = g.value(logits);
    for (long row = 0; row < static_cast<long>(items.size()); ++row) {
      const bool positive =
          items[static_cast<size_t>(row)]->label == Label::kMalignant;
      const bool predicted =
          argmax_row(out, row) == static_cast<int>(Label::kMalignant);
      if (positive && predicted) ++tp;
      else if (positive && !predicted) ++fn;
      else if (!positive && predicted) ++fp;
      else ++tn;
    }
  }
  return compute_metrics(tn, fp, fn, tp);
}

std::vector<RoiImage> resize_all(const std::vector<RoiImage>& images,
                                 int side) {
  std::vector<RoiImage> out;
  out.reserve(images.size());
  for (const RoiImage& img : images) {
    out.push_back(img.height == side && img.width == side
                      ? img
                      : resize_bicubic(img, side));
  }
  return out;
}

}  // namespace

EpochRecord train_child_epoch(SharedSupergraph& super,
                              const ControllerPolicy& policy,
                              const std::vector<RoiImage>& train_images,
                              const SearchConfig& cfg, nn::SgdMomentum& opt,
                              double lr, Rng& rng) {
  if (train_images.empty())
    throw ValidationError("train_child_epoch: empty training stream");
  std::vector<size_t> order(train_images.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  EpochRecord record;
  double loss_sum = 0;
  for (size_t start = 0; start < order.size();
       start += static_cast<size_t>(cfg.batch_size)) {
    auto [arch, trace] = policy.sample(rng);
    ChildView view = activate_subnetwork(super, arch);

    std::vector<const RoiImage*> items;
    for (size_t i = start;
         i < std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
         ++i)
      items.push_back(&train_images[order[i]]);

    nn::Graph g;
    nn::Graph::Ref x = g.constant(batch_tensor(items, cfg.input_channels));
    nn::Graph::Ref logits = view.forward(g, x, nn::BnMode::kTrain);
    nn::Graph::Ref loss = g.softmax_cross_entropy(logits, batch_labels(items));
    loss_sum += g.value(loss)[0];
    g.backward(loss);
    opt.step(g.bound_parameters(), lr);
    ++record.batches;
  }
  record.mean_loss = loss_sum / record.batches;
  return record;
}

std::vector<CandidateRecord> controller_epoch(
    SharedSupergraph& super, ControllerPolicy& policy, BaselineState& baseline,
    const std::vector<RoiImage>& val_images, const SearchConfig& cfg,
    Rng& rng, int epoch_index) {
  if (val_images.empty())
    throw ValidationError("controller_epoch: empty validation set");
  std::vector<CandidateRecord> log;
  std::vector<SampleTrace> traces;
  std::vector<double> rewards;
  for (int i = 0; i < cfg.candidates_per_epoch; ++i) {
    auto [arch, trace] = policy.sample(rng);
    ChildView view = activate_subnetwork(super, arch);
    const Metrics m = confusion_over(
        [&view](nn::Graph& g, nn::Graph::Ref x, nn::BnMode mode) {
          return view.forward(g, x, mode);
        },
        val_images, cfg.input_channels, cfg.batch_size,
        nn::BnMode::kBatchStats);
    const double accuracy = m.acc.value();
    log.push_back({epoch_index, i, arch, accuracy});
    traces.push_back(std::move(trace));
    rewards.push_back(accuracy);
  }
  reinforce_update(policy, traces, rewards, baseline);
  return log;
}

SearchReport search(const std::vector<RoiImage>& dataset,
                    const SearchConfig& cfg) {
  if (dataset.empty()) throw ValidationError("search: empty dataset");

  // Validation is carved out by source so that no variant of a validation
  // image reaches child training.
  std::map<std::string, Label> source_labels;
  for (const RoiImage& img : dataset) source_labels[img.source_id] = img.label;
  std::vector<SourceRef> sources;
  for (const auto& [id, label] : source_labels) sources.push_back({id, label});
  auto [train_sources, val_sources] =
      split_validation(sources, cfg.validation_fraction, cfg.seed);

  std::map<std::string, bool> in_val;
  for (const SourceRef& s : val_sources) in_val[s.source_id] = true;
  std::vector<RoiImage> train_images, val_images;
  for (const RoiImage& img : dataset) {
    if (in_val.count(img.source_id)) {
      if (img.provenance == Provenance::kOriginal) val_images.push_back(img);
    } else {
      train_images.push_back(img);
    }
  }
  if (train_images.empty() || val_images.empty())
    throw ValidationError("search: degenerate train/validation split");
  train_images = resize_all(train_images, cfg.input_side);
  val_images = resize_all(val_images, cfg.input_side);

  StackPlan plan = make_stack_plan(StackVariant::kEnas7, cfg.base_channels,
                                   cfg.num_classes);
  SharedSupergraph super(plan, cfg.node_count, cfg.input_channels,
                         cfg.counting, cfg.seed);
  ControllerPolicy policy(cfg.node_count, cfg.controller, cfg.seed + 1);
  BaselineState baseline;
  baseline.decay = cfg.controller.baseline_decay;
  nn::SgdMomentum child_opt(cfg.child_momentum, cfg.child_weight_decay);
  Rng rng(cfg.seed + 2);

  SearchReport report;
  for (int epoch = 0; epoch < cfg.controller_epochs; ++epoch) {
    const double lr = nn::cosine_restart_lr(epoch, cfg.child_lr_max,
                                            cfg.child_lr_min, cfg.child_t0,
                                            cfg.child_t_mult);
    report.child_epochs.push_back(
        train_child_epoch(super, policy, train_images, cfg, child_opt, lr, rng));
    std::vector<CandidateRecord> log =
        controller_epoch(super, policy, baseline, val_images, cfg, rng, epoch);
    for (CandidateRecord& rec : log) {
      if (rec.val_accuracy > report.best_accuracy) {
        report.best_accuracy = rec.val_accuracy;
        report.best = rec.arch;
        report.best_epoch = rec.epoch;
        report.best_index = rec.index;
      }
      report.candidates.push_back(std::move(rec));
    }
  }
  return report;
}

TrainedModel train_from_scratch(const NetworkSpec& spec,
                                const std::vector<RoiImage>& train_images,
                                const TrainConfig& cfg) {
  if (train_images.empty())
    throw ValidationError("train_from_scratch: empty training set");
  if (cfg.epochs < 1)
    throw ValidationError("train_from_scratch: epochs must be >= 1");

  const std::vector<RoiImage> images = resize_all(train_images, cfg.input_side);
  TrainedModel result;
  result.net = std::make_unique<FixedNetwork>(spec, cfg.counting, cfg.seed);
  nn::SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  Rng rng(cfg.seed + 1);

  std::vector<size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = nn::cosine_restart_lr(epoch, cfg.lr_max, cfg.lr_min,
                                            cfg.epochs, 1);
    rng.shuffle(order);
    double loss_sum = 0;
    long correct = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      std::vector<const RoiImage*> items;
      for (size_t i = start;
           i < std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
           ++i)
        items.push_back(&images[order[i]]);
      nn::Graph g;
      nn::Graph::Ref x = g.constant(batch_tensor(items, cfg.input_channels));
      nn::Graph::Ref logits =
          result.net->forward(g, x, nn::BnMode::kTrain);
      const std::vector<int> labels = batch_labels(items);
      nn::Graph::Ref loss = g.softmax_cross_entropy(logits, labels);
      loss_sum += g.value(loss)[0];
      const nn::Tensor& out = g.value(logits);
      for (long row = 0; row < static_cast<long>(items.size()); ++row)
        if (argmax_row(out, row) == labels[static_cast<size_t>(row)]) ++correct;
      g.backward(loss);
      opt.step(g.bound_parameters(), lr);
      ++batches;
    }
    result.curve.push_back(
        {loss_sum / batches,
         static_cast<double>(correct) / static_cast<double>(images.size())});
  }
  return result;
}

Metrics evaluate_network(FixedNetwork& net, const std::vector<RoiImage>& images,
                         const TrainConfig& cfg) {
  const std::vector<RoiImage> resized = resize_all(images, cfg.input_side);
  return confusion_over(
      [&net](nn::Graph& g, nn::Graph::Ref x, nn::BnMode mode) {
        return net.forward(g, x, mode);
      },
      resized, cfg.input_channels, cfg.batch_size, nn::BnMode::kRunning);
}

CvResult cross_validate(const ArchPair& arch, StackVariant variant,
                        const std::vector<RoiImage>& originals,
                        const FoldAssignment& folds, const TrainConfig& cfg) {
  for (const RoiImage& img : originals)
    if (img.provenance != Provenance::kOriginal)
      throw ValidationError("cross_validate: dataset must contain only "
                            "ORIGINAL images");
  const int k = folds.k;
  if (k < 2) throw ValidationError("cross_validate: need k >= 2 folds");

  CvResult result;
  result.per_fold.resize(static_cast<size_t>(k));
  result.models.resize(static_cast<size_t>(k));

  auto run_fold = [&](int f) {
    std::vector<RoiImage> train, test;
    for (const RoiImage& img : originals) {
      if (folds.fold(img.source_id) == f) {
        test.push_back(img);
      } else {
        train.push_back(img);
        for (RoiImage& aug : augment_all(img)) train.push_back(std::move(aug));
      }
    }
    StackPlan plan =
        make_stack_plan(variant, cfg.base_channels, cfg.num_classes);
    NetworkSpec spec = build_network(arch, plan,
                                     std::string(variant_name(variant)),
                                     cfg.input_channels);
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + static_cast<uint64_t>(f);
    TrainedModel model = train_from_scratch(spec, train, fold_cfg);
    result.per_fold[static_cast<size_t>(f)] =
        evaluate_network(*model.net, test, fold_cfg);
    result.models[static_cast<size_t>(f)] = std::move(model.net);
  };

  if (cfg.workers > 1) {
    std::vector<std::thread> pool;
    for (int f = 0; f < k; ++f) pool.emplace_back(run_fold, f);
    for (std::thread& t : pool) t.join();
  } else {
    for (int f = 0; f < k; ++f) run_fold(f);
  }
  result.mean = mean_of_rates(result.per_fold);
  return result;
}

std::string search_report_json(const SearchReport& report,
                               const SearchConfig& cfg) {
  nlohmann::json doc;
  doc["config"] = {
      {"controller_epochs", cfg.controller_epochs},
      {"candidates_per_epoch", cfg.candidates_per_epoch},
      {"validation_fraction", cfg.validation_fraction},
      {"B", cfg.node_count},
      {"base_channels", cfg.base_channels},
      {"num_classes", cfg.num_classes},
      {"input_side", cfg.input_side},
      {"batch_size", cfg.batch_size},
      {"child_lr_max", cfg.child_lr_max},
      {"child_lr_min", cfg.child_lr_min},
      {"child_t0", cfg.child_t0},
      {"child_t_mult", cfg.child_t_mult},
      {"child_momentum", cfg.child_momentum},
      {"child_weight_decay", cfg.child_weight_decay},
      {"controller_lr", cfg.controller.lr},
      {"controller_hidden", cfg.controller.hidden},
      {"entropy_weight", cfg.controller.entropy_weight},
      {"tanh_constant", cfg.controller.tanh_constant},
      {"temperature", cfg.controller.temperature},
      {"baseline_decay", cfg.controller.baseline_decay},
      {"seed", cfg.seed},
  };
  nlohmann::json candidates = nlohmann::json::array();
  for (const CandidateRecord& rec : report.candidates) {
    candidates.push_back({{"epoch", rec.epoch},
                          {"index", rec.index},
                          {"genotype",
                           nlohmann::json::parse(arch_to_json(rec.arch))},
                          {"val_accuracy", rec.val_accuracy}});
  }
  doc["candidates"] = candidates;
  doc["best"] = {{"epoch", report.best_epoch},
                 {"index", report.best_index},
                 {"val_accuracy", report.best_accuracy},
                 {"genotype",
                  nlohmann::json::parse(arch_to_json(report.best))}};
  return doc.dump(2) + "\n";
}

}  // namespace usnas
