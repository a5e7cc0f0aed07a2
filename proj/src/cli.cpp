#include "usnas/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "usnas/common.hpp"
#include "usnas/config.hpp"
#include "usnas/folds.hpp"
#include "usnas/genotype.hpp"
#include "usnas/image_io.hpp"
#include "usnas/metrics.hpp"
#include "usnas/supergraph.hpp"
#include "usnas/synthetic.hpp"
#include "usnas/trainer.hpp"

namespace usnas {

namespace {

namespace fs = std::filesystem;

constexpr const char* kVersion = "0.1.0";

// Table 1 reference figures, reported next to this artifact's counts.
constexpr int64_t kPaperParamsEnas17 = 4251780;
constexpr int64_t kPaperParamsEnas7 = 2342484;
constexpr int64_t kPaperParamsAlexnet = 56858656;
constexpr int64_t kCanonicalAlexnet1000 = 61100840;

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void ensure_writable(const fs::path& path, bool force) {
  if (fs::exists(path) && !force)
    throw IoError("refusing to overwrite " + path.string() +
                  " (pass --force)");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

// One run manifest per command: config echo, seed, dataset fingerprint and
// timestamps. Timestamps make this file exempt from byte-identical rerun
// claims; every other output is covered.
void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        const nlohmann::json& config_echo, uint64_t seed,
                        const std::vector<RoiImage>* dataset,
                        const std::string& started) {
  nlohmann::json doc;
  doc["command"] = command;
  doc["version"] = kVersion;
  doc["seed"] = seed;
  doc["config"] = config_echo;
  if (dataset) {
    long benign = 0, malignant = 0;
    for (const RoiImage& img : *dataset)
      (img.label == Label::kBenign ? benign : malignant)++;
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(dataset_fingerprint(*dataset)));
    doc["dataset"] = {{"benign", benign},
                      {"malignant", malignant},
                      {"fingerprint", hex}};
  }
  doc["started"] = started;
  doc["finished"] = iso_now();
  write_text(out_dir / "run_manifest.json", doc.dump(2) + "\n");
}

nlohmann::json echo_config(const Config& cfg) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [k, v] : cfg.entries()) doc[k] = v;
  return doc;
}

SearchConfig search_config_from(const Config& cfg, uint64_t seed) {
  SearchConfig sc;
  sc.controller_epochs = static_cast<int>(cfg.get_int("epochs", 150));
  sc.candidates_per_epoch = static_cast<int>(cfg.get_int("candidates", 10));
  sc.validation_fraction = cfg.get_double("val_fraction", 0.10);
  sc.node_count = static_cast<int>(cfg.get_int("b", 5));
  sc.base_channels = static_cast<int>(cfg.get_int("base_channels", 20));
  sc.num_classes = static_cast<int>(cfg.get_int("num_classes", 2));
  sc.input_side = static_cast<int>(cfg.get_int("input_side", 100));
  sc.input_channels = static_cast<int>(cfg.get_int("input_channels", 1));
  sc.batch_size = static_cast<int>(cfg.get_int("batch_size", 32));
  sc.child_lr_max = cfg.get_double("child_lr_max", 0.05);
  sc.child_lr_min = cfg.get_double("child_lr_min", 5e-4);
  sc.child_t0 = static_cast<int>(cfg.get_int("child_t0", 10));
  sc.child_t_mult = static_cast<int>(cfg.get_int("child_t_mult", 2));
  sc.child_momentum = cfg.get_double("child_momentum", 0.9);
  sc.child_weight_decay = cfg.get_double("child_weight_decay", 1e-4);
  sc.controller.lr = cfg.get_double("controller_lr", sc.controller.lr);
  sc.controller.hidden =
      static_cast<int>(cfg.get_int("controller_hidden", sc.controller.hidden));
  sc.controller.entropy_weight =
      cfg.get_double("entropy_weight", sc.controller.entropy_weight);
  sc.controller.tanh_constant =
      cfg.get_double("tanh_constant", sc.controller.tanh_constant);
  sc.controller.temperature =
      cfg.get_double("temperature", sc.controller.temperature);
  sc.controller.baseline_decay =
      cfg.get_double("baseline_decay", sc.controller.baseline_decay);
  sc.counting.include_batchnorm_affine = cfg.get_bool("bn_affine", true);
  sc.counting.include_conv_bias = cfg.get_bool("conv_bias", false);
  sc.seed = seed;
  return sc;
}

TrainConfig train_config_from(const Config& cfg, uint64_t seed, int workers) {
  TrainConfig tc;
  tc.epochs = static_cast<int>(cfg.get_int("epochs", 100));
  tc.batch_size = static_cast<int>(cfg.get_int("batch_size", 32));
  tc.lr_max = cfg.get_double("lr_max", 0.05);
  tc.lr_min = cfg.get_double("lr_min", 5e-4);
  tc.momentum = cfg.get_double("momentum", 0.9);
  tc.weight_decay = cfg.get_double("weight_decay", 1e-4);
  tc.base_channels = static_cast<int>(cfg.get_int("base_channels", 36));
  tc.num_classes = static_cast<int>(cfg.get_int("num_classes", 2));
  tc.input_side = static_cast<int>(cfg.get_int("input_side", 100));
  tc.input_channels = static_cast<int>(cfg.get_int("input_channels", 1));
  tc.counting.include_batchnorm_affine = cfg.get_bool("bn_affine", true);
  tc.counting.include_conv_bias = cfg.get_bool("conv_bias", false);
  tc.workers = workers;
  tc.seed = seed;
  return tc;
}

const std::vector<std::string> kSearchKeys = {
    "data",          "augment",        "folds_file",      "search_fold",
    "epochs",        "candidates",     "val_fraction",    "b",
    "base_channels", "num_classes",    "input_side",      "input_channels",
    "batch_size",    "child_lr_max",   "child_lr_min",    "child_t0",
    "child_t_mult",  "child_momentum", "child_weight_decay",
    "controller_lr", "controller_hidden", "entropy_weight", "tanh_constant",
    "temperature",   "baseline_decay", "bn_affine",       "conv_bias",
    "seed",          "workers",        "convert_gray"};

const std::vector<std::string> kTrainKeys = {
    "epochs",       "batch_size",   "lr_max",        "lr_min",
    "momentum",     "weight_decay", "base_channels", "num_classes",
    "input_side",   "input_channels", "bn_affine",   "conv_bias",
    "seed",         "workers",      "k",             "convert_gray",
    "augment"};

struct CommonArgs {
  std::string config_path;
  std::string out;
  uint64_t seed = 0;
  bool seed_given = false;
  bool force = false;
  int workers = 1;
};

// --- augment ----------------------------------------------------------------

int cmd_augment(const std::string& root, const CommonArgs& common, int k,
                bool convert) {
  const std::string started = iso_now();
  const fs::path out_dir(common.out);
  fs::create_directories(out_dir);
  ensure_writable(out_dir / "manifest.csv", common.force);

  const std::vector<RoiImage> originals = load_dataset(root, convert);
  const FoldAssignment folds = stratified_folds(originals, k, common.seed);

  std::vector<ManifestRow> rows;
  for (const RoiImage& original : originals) {
    std::vector<RoiImage> group = {original};
    for (RoiImage& aug : augment_all(original)) group.push_back(std::move(aug));
    for (const RoiImage& img : group) {
      const std::string name = augmented_file_name(img);
      ensure_writable(out_dir / name, common.force);
      write_png(out_dir / name, img);
      rows.push_back({img.source_id, img.provenance, img.label,
                      folds.fold(img.source_id), name});
    }
  }
  write_text(out_dir / "manifest.csv", manifest_csv(rows));

  nlohmann::json echo = {{"dataset", root}, {"k", k}, {"convert_gray", convert}};
  write_run_manifest(out_dir, "augment", echo, common.seed, &originals, started);
  std::cout << "wrote " << rows.size() << " images and manifest.csv to "
            << out_dir.string() << "\n";
  return 0;
}

// --- folds --------------------------------------------------------------------

int cmd_folds(const std::string& root, const CommonArgs& common, int k,
              bool convert) {
  const fs::path out_path(common.out);
  ensure_writable(out_path, common.force);
  const std::vector<RoiImage> originals = load_dataset(root, convert);
  const FoldAssignment folds = stratified_folds(originals, k, common.seed);
  save_folds(folds, originals, out_path);
  std::cout << "wrote fold assignment for " << originals.size()
            << " sources to " << out_path.string() << "\n";
  return 0;
}

// --- search --------------------------------------------------------------------

int cmd_search(const CommonArgs& common) {
  const std::string started = iso_now();
  if (common.config_path.empty())
    throw ValidationError("search requires --config");
  Config cfg = Config::load(common.config_path);
  cfg.require_known(kSearchKeys);

  const std::string data = cfg.get_string("data", "");
  if (data.empty())
    throw ValidationError("search config: key \"data\" is required");
  if (!fs::exists(data))
    throw IoError("dataset path " + data + " does not exist");

  const uint64_t seed =
      common.seed_given ? common.seed
                        : static_cast<uint64_t>(cfg.get_int("seed", 0));
  SearchConfig sc = search_config_from(cfg, seed);

  // Dataset: an augmented-set directory (manifest.csv) or a raw class-dir
  // root, optionally augmented in memory.
  std::vector<RoiImage> images;
  std::map<std::string, int> fold_of;
  if (fs::exists(fs::path(data) / "manifest.csv")) {
    AugmentedSet set = load_augmented_set(data);
    images = std::move(set.images);
    fold_of = std::move(set.fold_of);
  } else {
    images = load_dataset(data, cfg.get_bool("convert_gray", false));
    if (cfg.get_bool("augment", true)) {
      std::vector<RoiImage> expanded;
      for (const RoiImage& img : images) {
        expanded.push_back(img);
        for (RoiImage& aug : augment_all(img))
          expanded.push_back(std::move(aug));
      }
      images = std::move(expanded);
    }
  }
  const std::string folds_file = cfg.get_string("folds_file", "");
  if (!folds_file.empty()) {
    fold_of = load_folds(folds_file).fold_of;
  }
  // The search stage sees only the designated training split: sources of
  // the held-out fold are dropped when folds are known.
  const int search_fold = static_cast<int>(cfg.get_int("search_fold", 0));
  if (!fold_of.empty() && search_fold >= 0) {
    std::vector<RoiImage> kept;
    for (RoiImage& img : images) {
      auto it = fold_of.find(img.source_id);
      if (it == fold_of.end())
        throw ValidationError("search: source " + img.source_id +
                              " has no fold assignment");
      if (it->second != search_fold) kept.push_back(std::move(img));
    }
    images = std::move(kept);
  }

  const fs::path out_dir(common.out);
  fs::create_directories(out_dir);
  ensure_writable(out_dir / "genotype.json", common.force);
  ensure_writable(out_dir / "search_report.json", common.force);

  const SearchReport report = search(images, sc);
  save_arch(report.best, out_dir / "genotype.json");
  write_text(out_dir / "search_report.json", search_report_json(report, sc));
  write_run_manifest(out_dir, "search", echo_config(cfg), seed, &images,
                     started);
  std::cout << "search finished: best validation accuracy "
            << report.best_accuracy << " (epoch " << report.best_epoch
            << ", candidate " << report.best_index << ")\n"
            << "genotype written to " << (out_dir / "genotype.json").string()
            << "\n";
  return 0;
}

// --- cv -------------------------------------------------------------------------

int cmd_cv(const std::string& genotype_path, const std::string& variant_str,
           const std::string& data, const std::string& folds_file,
           const CommonArgs& common, int k) {
  const std::string started = iso_now();
  const ArchPair arch = load_arch(genotype_path);
  const StackVariant variant = variant_from_name(variant_str);
  Config cfg = common.config_path.empty() ? Config()
                                          : Config::load(common.config_path);
  cfg.require_known(kTrainKeys);
  const uint64_t seed =
      common.seed_given ? common.seed
                        : static_cast<uint64_t>(cfg.get_int("seed", 0));
  const int workers = common.workers > 1
                          ? common.workers
                          : static_cast<int>(cfg.get_int("workers", 1));
  TrainConfig tc = train_config_from(cfg, seed, workers);

  const std::vector<RoiImage> originals =
      load_dataset(data, cfg.get_bool("convert_gray", false));
  FoldAssignment folds;
  if (!folds_file.empty()) {
    folds = load_folds(folds_file);
  } else {
    folds = stratified_folds(originals,
                             static_cast<int>(cfg.get_int("k", k)), seed);
  }

  const fs::path out_dir(common.out);
  fs::create_directories(out_dir);
  ensure_writable(out_dir / "metrics.csv", common.force);

  CvResult result = cross_validate(arch, variant, originals, folds, tc);
  write_text(out_dir / "metrics.csv",
             metrics_csv(result.per_fold, result.mean));
  for (size_t f = 0; f < result.models.size(); ++f) {
    const std::string stem = "model_fold" + std::to_string(f);
    ensure_writable(out_dir / (stem + ".bin"), common.force);
    result.models[f]->save(out_dir / (stem + ".bin"));
    write_text(out_dir / (stem + ".json"),
               network_manifest_json(result.models[f]->spec(), tc.counting));
  }
  write_run_manifest(out_dir, "cv", echo_config(cfg), seed, &originals,
                     started);
  std::cout << metrics_csv(result.per_fold, result.mean);
  return 0;
}

// --- train / eval ------------------------------------------------------------------

int cmd_train(const std::string& genotype_path, const std::string& variant_str,
              const std::string& data, const CommonArgs& common) {
  const std::string started = iso_now();
  const ArchPair arch = load_arch(genotype_path);
  const StackVariant variant = variant_from_name(variant_str);
  Config cfg = common.config_path.empty() ? Config()
                                          : Config::load(common.config_path);
  cfg.require_known(kTrainKeys);
  const uint64_t seed =
      common.seed_given ? common.seed
                        : static_cast<uint64_t>(cfg.get_int("seed", 0));
  TrainConfig tc = train_config_from(cfg, seed, 1);

  std::vector<RoiImage> images =
      load_dataset(data, cfg.get_bool("convert_gray", false));
  if (cfg.get_bool("augment", true)) {
    std::vector<RoiImage> expanded;
    for (const RoiImage& img : images) {
      expanded.push_back(img);
      for (RoiImage& aug : augment_all(img)) expanded.push_back(std::move(aug));
    }
    images = std::move(expanded);
  }

  const fs::path out_dir(common.out);
  fs::create_directories(out_dir);
  ensure_writable(out_dir / "model.bin", common.force);

  StackPlan plan = make_stack_plan(variant, tc.base_channels, tc.num_classes);
  NetworkSpec spec = build_network(arch, plan,
                                   std::string(variant_name(variant)),
                                   tc.input_channels);
  TrainedModel model = train_from_scratch(spec, images, tc);
  model.net->save(out_dir / "model.bin");
  write_text(out_dir / "model.json",
             network_manifest_json(spec, tc.counting));
  std::string curve = "epoch,loss,train_accuracy\n";
  for (size_t e = 0; e < model.curve.size(); ++e) {
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f\n", e, model.curve[e].loss,
                  model.curve[e].accuracy);
    curve += buf;
  }
  write_text(out_dir / "curve.csv", curve);
  write_run_manifest(out_dir, "train", echo_config(cfg), seed, &images,
                     started);
  std::cout << "final epoch loss " << model.curve.back().loss
            << ", train accuracy " << model.curve.back().accuracy << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& manifest_path,
             const std::string& data, const CommonArgs& common, bool convert) {
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open network manifest " + manifest_path);
  std::ostringstream buf;
  buf << mf.rdbuf();
  NetworkSpec spec = network_from_manifest_json(buf.str());

  Config cfg = common.config_path.empty() ? Config()
                                          : Config::load(common.config_path);
  cfg.require_known(kTrainKeys);
  TrainConfig tc = train_config_from(cfg, common.seed, 1);
  if (const CellStackNet* cells = spec.as_cells()) {
    tc.input_channels = cells->input_channels;
    tc.num_classes = cells->plan.num_classes;
  }

  CountingConfig counting = tc.counting;
  FixedNetwork net(spec, counting, 0);
  net.load(model_path);

  const std::vector<RoiImage> originals = load_dataset(data, convert);
  const Metrics m = evaluate_network(net, originals, tc);
  const std::string csv = metrics_csv({m}, m);
  if (!common.out.empty()) {
    ensure_writable(fs::path(common.out), common.force);
    write_text(common.out, csv);
  }
  std::cout << csv;
  return 0;
}

// --- params --------------------------------------------------------------------------

void print_count_line(const std::string& name, int64_t analytic,
                      std::optional<int64_t> enumerated,
                      std::optional<int64_t> reference) {
  std::cout << name << ": analytic " << analytic;
  if (enumerated) std::cout << ", enumerated " << *enumerated;
  if (reference) {
    const double dev = 100.0 *
                       (static_cast<double>(analytic) -
                        static_cast<double>(*reference)) /
                       static_cast<double>(*reference);
    char buf[64];
    std::snprintf(buf, sizeof(buf), ", published %lld (deviation %+.2f%%)",
                  static_cast<long long>(*reference), dev);
    std::cout << buf;
  }
  std::cout << "\n";
}

int cmd_params(const std::string& genotype_path, const std::string& variant_str,
               bool alexnet, int base_channels, int num_classes,
               int input_side, int input_channels, bool bn_affine,
               bool conv_bias, bool projections) {
  CountingConfig cfg{bn_affine, conv_bias, projections};
  if (alexnet) {
    NetworkSpec spec = build_alexnet(num_classes, input_side);
    const int64_t analytic = network_param_count(spec, cfg);
    FixedNetwork net(spec, cfg, 0);
    std::optional<int64_t> reference;
    if (num_classes == 2) reference = kPaperParamsAlexnet;
    if (num_classes == 1000) reference = kCanonicalAlexnet1000;
    print_count_line("AlexNet(classes=" + std::to_string(num_classes) +
                         ", input=" + std::to_string(input_side) + ")",
                     analytic, net.enumerated_param_count(), reference);
    return 0;
  }
  if (genotype_path.empty())
    throw ValidationError("params: provide a genotype file or --alexnet");
  const ArchPair arch = load_arch(genotype_path);
  const StackVariant variant = variant_from_name(variant_str);
  StackPlan plan = make_stack_plan(variant, base_channels, num_classes);
  NetworkSpec spec = build_network(arch, plan,
                                   std::string(variant_name(variant)),
                                   input_channels);
  const int64_t analytic = network_param_count(spec, cfg);
  std::optional<int64_t> enumerated;
  if (projections) {
    FixedNetwork net(spec, cfg, 0);
    enumerated = net.enumerated_param_count();
  }
  print_count_line(std::string(variant_name(variant)) + "(base=" +
                       std::to_string(base_channels) + ", B=" +
                       std::to_string(arch.normal.node_count()) + ")",
                   analytic, enumerated,
                   variant == StackVariant::kEnas17 ? kPaperParamsEnas17
                                                    : kPaperParamsEnas7);
  if (enumerated && analytic != *enumerated)
    throw ValidationError("analytic and enumerated counts disagree");
  return 0;
}

// --- render --------------------------------------------------------------------------

int cmd_render(const std::string& genotype_path, const CommonArgs& common) {
  const ArchPair arch = load_arch(genotype_path);
  const std::string normal_dot = to_dot(arch.normal, "Normal Cell");
  const std::string reduction_dot = to_dot(arch.reduction, "Reduction Cell");
  const fs::path out_dir(common.out);
  fs::create_directories(out_dir);
  ensure_writable(out_dir / "normal.dot", common.force);
  ensure_writable(out_dir / "reduction.dot", common.force);
  write_text(out_dir / "normal.dot", normal_dot);
  write_text(out_dir / "reduction.dot", reduction_dot);
  std::cout << "wrote " << (out_dir / "normal.dot").string() << " and "
            << (out_dir / "reduction.dot").string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"ENAS micro-cell search toolkit for ultrasound lesion "
               "classification"};
  app.set_version_flag("--version", std::string("usnas ") + kVersion);
  app.require_subcommand(1);

  CommonArgs common;
  std::string dataset_root, genotype_path, variant_str, data, folds_file;
  std::string model_path, manifest_path;
  int k = 5;
  bool convert = false;
  bool alexnet = false;
  int base_channels = 36, num_classes = 2, input_side = 100,
      input_channels = 1;
  bool bn_affine = true, conv_bias = false, projections = true;

  auto add_common = [&](CLI::App* cmd, bool with_out) {
    cmd->add_option("--config", common.config_path, "config file (key=value)");
    if (with_out) cmd->add_option("--out", common.out, "output path")->required();
    cmd->add_option("--seed", common.seed, "random seed")
        ->each([&](const std::string&) { common.seed_given = true; });
    cmd->add_flag("--force", common.force, "overwrite existing outputs");
    cmd->add_option("--workers", common.workers,
                    "parallel workers (default 1, deterministic)");
  };

  CLI::App* augment = app.add_subcommand(
      "augment", "apply the 7-variant augmentation suite and write PNGs");
  augment->add_option("dataset", dataset_root, "dataset root")->required();
  augment->add_option("--k", k, "fold count recorded in the manifest");
  augment->add_flag("--convert-gray", convert, "convert color input");
  add_common(augment, true);

  CLI::App* folds_cmd = app.add_subcommand(
      "folds", "materialize a stratified fold assignment");
  folds_cmd->add_option("dataset", dataset_root, "dataset root")->required();
  folds_cmd->add_option("--k", k, "fold count");
  folds_cmd->add_flag("--convert-gray", convert, "convert color input");
  add_common(folds_cmd, true);

  CLI::App* search_cmd = app.add_subcommand(
      "search", "run the two-phase shared-weight architecture search");
  add_common(search_cmd, true);

  CLI::App* cv_cmd = app.add_subcommand(
      "cv", "5-fold cross-validation of a discovered genotype");
  cv_cmd->add_option("genotype", genotype_path, "genotype JSON")->required();
  cv_cmd->add_option("variant", variant_str, "ENAS7 or ENAS17")->required();
  cv_cmd->add_option("--data", data, "dataset root")->required();
  cv_cmd->add_option("--folds", folds_file, "folds file from `usnas folds`");
  cv_cmd->add_option("--k", k, "fold count when --folds is absent");
  add_common(cv_cmd, true);

  CLI::App* train_cmd = app.add_subcommand(
      "train", "train one network from scratch on a full dataset");
  train_cmd->add_option("genotype", genotype_path, "genotype JSON")->required();
  train_cmd->add_option("variant", variant_str, "ENAS7 or ENAS17")->required();
  train_cmd->add_option("--data", data, "dataset root")->required();
  add_common(train_cmd, true);

  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "evaluate a checkpoint on a dataset's original images");
  eval_cmd->add_option("--model", model_path, "checkpoint blob")->required();
  eval_cmd->add_option("--manifest", manifest_path, "network manifest JSON")
      ->required();
  eval_cmd->add_option("--data", data, "dataset root")->required();
  eval_cmd->add_flag("--convert-gray", convert, "convert color input");
  add_common(eval_cmd, false);
  eval_cmd->add_option("--out", common.out, "metrics CSV path");

  CLI::App* params_cmd = app.add_subcommand(
      "params", "analytic and enumerated parameter counts");
  params_cmd->add_option("genotype", genotype_path, "genotype JSON");
  params_cmd->add_option("variant", variant_str, "ENAS7 or ENAS17");
  params_cmd->add_flag("--alexnet", alexnet, "count the AlexNet baseline");
  params_cmd->add_option("--base-channels", base_channels, "cell width");
  params_cmd->add_option("--num-classes", num_classes, "classifier width");
  params_cmd->add_option("--input-side", input_side, "input resolution");
  params_cmd->add_option("--input-channels", input_channels, "stem input");
  params_cmd->add_flag("--no-bn-affine{false}", bn_affine,
                       "exclude batchnorm affine terms");
  params_cmd->add_flag("--conv-bias", conv_bias, "include conv biases");
  params_cmd->add_flag("--no-projections{false}", projections,
                       "exclude projection ops (analytic only)");

  CLI::App* render_cmd = app.add_subcommand(
      "render", "write Graphviz DOT files for both cells");
  render_cmd->add_option("genotype", genotype_path, "genotype JSON")
      ->required();
  add_common(render_cmd, true);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(augment))
      return cmd_augment(dataset_root, common, k, convert);
    if (app.got_subcommand(folds_cmd))
      return cmd_folds(dataset_root, common, k, convert);
    if (app.got_subcommand(search_cmd)) return cmd_search(common);
    if (app.got_subcommand(cv_cmd))
      return cmd_cv(genotype_path, variant_str, data, folds_file, common, k);
    if (app.got_subcommand(train_cmd))
      return cmd_train(genotype_path, variant_str, data, common);
    if (app.got_subcommand(eval_cmd))
      return cmd_eval(model_path, manifest_path, data, common, convert);
    if (app.got_subcommand(params_cmd))
      return cmd_params(genotype_path, variant_str, alexnet, base_channels,
                        num_classes, input_side, input_channels, bn_affine,
                        conv_bias, projections);
    if (app.got_subcommand(render_cmd)) return cmd_render(genotype_path, common);
    throw ValidationError("no subcommand given");
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace usnas
