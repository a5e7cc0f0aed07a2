#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "usnas/cli.hpp"
#include "usnas/common.hpp"
#include "usnas/image_io.hpp"
#include "usnas/synthetic.hpp"

using namespace usnas;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("usnas_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

void write_stripes_dir(const fs::path& root, int count, int side,
                       uint64_t seed) {
  fs::create_directories(root / "benign");
  fs::create_directories(root / "malignant");
  for (const RoiImage& img : make_stripes_dataset(count, side, seed))
    write_png(root / img.source_id, img);
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

int cli(std::initializer_list<std::string> args) {
  return run_cli(std::vector<std::string>(args));
}

const std::string kGenotype =
    R"({"B":2,"normal":[[0,"sep3",1,"identity"],[2,"max3",1,"sep3"]],)"
    R"("reduction":[[0,"avg3",1,"sep5"],[0,"identity",2,"sep3"]]})";

}  // namespace

TEST_CASE("augment writes 8x images and a stable manifest") {
  TempDir tmp;
  write_stripes_dir(tmp.path / "data", 6, 8, 3);
  const std::string out = (tmp.path / "aug").string();

  CHECK(cli({"augment", (tmp.path / "data").string(), "--out", out, "--k", "3",
             "--seed", "5"}) == 0);
  size_t png_count = 0;
  for (const auto& entry : fs::directory_iterator(out))
    if (entry.path().extension() == ".png") ++png_count;
  CHECK(png_count == 48);  // 6 originals x 8
  CHECK(fs::exists(fs::path(out) / "manifest.csv"));
  CHECK(fs::exists(fs::path(out) / "run_manifest.json"));
  const std::string manifest = slurp(fs::path(out) / "manifest.csv");

  // rerun without --force refuses; with --force is byte-identical
  CHECK(cli({"augment", (tmp.path / "data").string(), "--out", out, "--k", "3",
             "--seed", "5"}) == 2);
  CHECK(cli({"augment", (tmp.path / "data").string(), "--out", out, "--k", "3",
             "--seed", "5", "--force"}) == 0);
  CHECK(slurp(fs::path(out) / "manifest.csv") == manifest);

  const AugmentedSet set = load_augmented_set(out);
  CHECK(set.images.size() == 48);
  CHECK(set.fold_of.size() == 6);
}

TEST_CASE("augment of a single image writes 8 files") {
  TempDir tmp;
  write_stripes_dir(tmp.path / "data", 2, 8, 7);
  fs::remove(tmp.path / "data" / "malignant" / "stripes_0001.png");
  // one class empty -> validation error
  CHECK(cli({"augment", (tmp.path / "data").string(), "--out",
             (tmp.path / "aug").string(), "--k", "1"}) == 1);

  write_stripes_dir(tmp.path / "data2", 2, 8, 7);
  CHECK(cli({"augment", (tmp.path / "data2").string(), "--out",
             (tmp.path / "aug2").string(), "--k", "1"}) == 0);
  size_t png_count = 0;
  for (const auto& entry : fs::directory_iterator(tmp.path / "aug2"))
    if (entry.path().extension() == ".png") ++png_count;
  CHECK(png_count == 16);  // 2 originals x 8
}

TEST_CASE("folds command materializes an assignment") {
  TempDir tmp;
  write_stripes_dir(tmp.path / "data", 10, 8, 9);
  const std::string out = (tmp.path / "folds.csv").string();
  CHECK(cli({"folds", (tmp.path / "data").string(), "--out", out, "--k", "5",
             "--seed", "2"}) == 0);
  const std::string first = slurp(out);
  CHECK(first.find("source_id,label,fold") == 0);
  CHECK(cli({"folds", (tmp.path / "data").string(), "--out", out, "--k", "5",
             "--seed", "2", "--force"}) == 0);
  CHECK(slurp(out) == first);
}

TEST_CASE("render writes two deterministic DOT files") {
  TempDir tmp;
  const fs::path geno = tmp.path / "genotype.json";
  std::ofstream(geno) << kGenotype;
  const std::string out = (tmp.path / "dot").string();
  CHECK(cli({"render", geno.string(), "--out", out}) == 0);
  CHECK(fs::exists(fs::path(out) / "normal.dot"));
  CHECK(fs::exists(fs::path(out) / "reduction.dot"));
  const std::string normal = slurp(fs::path(out) / "normal.dot");
  CHECK(cli({"render", geno.string(), "--out", out, "--force"}) == 0);
  CHECK(slurp(fs::path(out) / "normal.dot") == normal);
}

TEST_CASE("render validates before writing anything") {
  TempDir tmp;
  const fs::path geno = tmp.path / "bad.json";
  std::ofstream(geno) << R"({"B":2,"normal":[[0,"sep3",9,"identity"],)"
                      << R"([2,"max3",1,"sep3"]],"reduction":)"
                      << R"([[0,"avg3",1,"sep5"],[0,"identity",2,"sep3"]]})";
  const std::string out = (tmp.path / "dot").string();
  CHECK(cli({"render", geno.string(), "--out", out}) == 1);
  CHECK_FALSE(fs::exists(fs::path(out) / "normal.dot"));

  CHECK(cli({"render", (tmp.path / "missing.json").string(), "--out", out}) ==
        2);
}

TEST_CASE("params prints counts and validates oracle equality") {
  TempDir tmp;
  const fs::path geno = tmp.path / "genotype.json";
  std::ofstream(geno) << kGenotype;
  CHECK(cli({"params", geno.string(), "ENAS7", "--base-channels", "8"}) == 0);
  CHECK(cli({"params", geno.string(), "ENAS17", "--base-channels", "6"}) == 0);
  CHECK(cli({"params", "--alexnet", "--num-classes", "2", "--input-side",
             "100"}) == 0);
  CHECK(cli({"params", "--alexnet", "--num-classes", "1000", "--input-side",
             "224"}) == 0);
  CHECK(cli({"params", geno.string(), "BOGUS"}) == 1);
}

TEST_CASE("search runs a desk config end to end") {
  TempDir tmp;
  write_stripes_dir(tmp.path / "data", 20, 8, 11);
  const fs::path cfg_path = tmp.path / "desk.toml";
  std::ofstream(cfg_path) << "data = " << (tmp.path / "data").string() << "\n"
                          << "augment = false\n"
                          << "epochs = 2\n"
                          << "candidates = 5\n"
                          << "b = 2\n"
                          << "base_channels = 4\n"
                          << "input_side = 8\n"
                          << "batch_size = 16\n"
                          << "val_fraction = 0.2\n"
                          << "seed = 13\n";
  const std::string out = (tmp.path / "run").string();
  CHECK(cli({"search", "--config", cfg_path.string(), "--out", out}) == 0);
  CHECK(fs::exists(fs::path(out) / "genotype.json"));
  const std::string report = slurp(fs::path(out) / "search_report.json");
  // 2 epochs x 5 candidates
  size_t count = 0, at = 0;
  while ((at = report.find("\"val_accuracy\"", at)) != std::string::npos) {
    ++count;
    at += 10;
  }
  CHECK(count == 10 + 1);  // one per candidate plus the best block

  // config echo keeps the defaults visible
  const std::string run_manifest = slurp(fs::path(out) / "run_manifest.json");
  CHECK(run_manifest.find("\"candidates\": \"5\"") != std::string::npos);
}

TEST_CASE("search rejects bad configs before any compute") {
  TempDir tmp;
  const fs::path cfg_path = tmp.path / "bad.toml";
  std::ofstream(cfg_path) << "data = /nonexistent/path\n";
  CHECK(cli({"search", "--config", cfg_path.string(), "--out",
             (tmp.path / "out").string()}) == 2);

  std::ofstream(cfg_path) << "data = /tmp\nbogus_key = 1\nworse = x\n";
  CHECK(cli({"search", "--config", cfg_path.string(), "--out",
             (tmp.path / "out").string()}) == 1);

  CHECK(cli({"search", "--out", (tmp.path / "out").string()}) == 1);
}

TEST_CASE("cv emits a metrics csv with fold rows plus mean") {
  TempDir tmp;
  write_stripes_dir(tmp.path / "data", 12, 8, 17);
  const fs::path geno = tmp.path / "genotype.json";
  std::ofstream(geno) << kGenotype;
  const fs::path cfg_path = tmp.path / "train.toml";
  std::ofstream(cfg_path) << "epochs = 1\nbase_channels = 4\ninput_side = 8\n"
                          << "batch_size = 16\nk = 3\n";
  const std::string out = (tmp.path / "cv").string();
  CHECK(cli({"cv", geno.string(), "ENAS7", "--data",
             (tmp.path / "data").string(), "--config", cfg_path.string(),
             "--out", out, "--seed", "1"}) == 0);
  const std::string csv = slurp(fs::path(out) / "metrics.csv");
  CHECK(csv.find("fold,tn,fp,fn,tp,tnr,tpr,pr,acc\n") == 0);
  CHECK(csv.find("\nmean,") != std::string::npos);
  CHECK(fs::exists(fs::path(out) / "model_fold0.bin"));
  CHECK(fs::exists(fs::path(out) / "model_fold2.json"));
  const std::string manifest = slurp(fs::path(out) / "model_fold0.json");
  CHECK(manifest.find("NRNRNNN") != std::string::npos);

  CHECK(cli({"cv", (tmp.path / "missing.json").string(), "ENAS7", "--data",
             (tmp.path / "data").string(), "--out", out}) == 2);
}

TEST_CASE("train then eval round-trips a checkpoint") {
  TempDir tmp;
  write_stripes_dir(tmp.path / "data", 10, 8, 19);
  const fs::path geno = tmp.path / "genotype.json";
  std::ofstream(geno) << kGenotype;
  const fs::path cfg_path = tmp.path / "train.toml";
  std::ofstream(cfg_path) << "epochs = 2\nbase_channels = 4\ninput_side = 8\n"
                          << "batch_size = 16\naugment = false\n";
  const std::string out = (tmp.path / "model").string();
  CHECK(cli({"train", geno.string(), "ENAS7", "--data",
             (tmp.path / "data").string(), "--config", cfg_path.string(),
             "--out", out, "--seed", "2"}) == 0);
  CHECK(fs::exists(fs::path(out) / "model.bin"));
  CHECK(fs::exists(fs::path(out) / "curve.csv"));

  CHECK(cli({"eval", "--model", (fs::path(out) / "model.bin").string(),
             "--manifest", (fs::path(out) / "model.json").string(), "--data",
             (tmp.path / "data").string(), "--config", cfg_path.string()}) ==
        0);
}
