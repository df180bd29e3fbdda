#include "doctest.h"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pseudolab/checkpoint.hpp"
#include "pseudolab/cli.hpp"
#include "pseudolab/experiment.hpp"
#include "pseudolab/io.hpp"

using namespace pseudolab;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path root = fs::temp_directory_path() / ("pseudolab_cli_" + std::to_string(::getpid()));
  Scratch() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() { fs::remove_all(root); }
};

fs::path scratch() {
  static const Scratch s;
  return s.root;
}

const char* kTinyConfig = R"({
  "seed": 3,
  "dataset": {"synth": {"classes": 2, "channels": 1, "height": 8, "width": 8,
                        "separation": 0.6, "noise": 0.15}},
  "split": {"labeled_per_class": 10, "unlabeled_per_class": 40, "test_per_class": 10},
  "model": {"conv": [{"out_channels": 4}, {"out_channels": 4}], "hidden": [16]},
  "train": {"epochs": 20, "batch_size": 8, "learning_rate": 0.1},
  "selftrain": {"tau": 0.9, "max_rounds": 4, "per_class_cap": 15},
  "noise": {"levels": [0.3, 0.0]},
  "cv": {"k": 3},
  "embed": {"samples": 20, "perplexity": 5, "iterations": 120},
  "cam": {"samples": 3}
})";

fs::path tiny_config() {
  const fs::path p = scratch() / "tiny.json";
  if (!fs::exists(p)) io::write_file_atomic(p, kTinyConfig);
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

Result run_tiny(const std::string& cmd, const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{cmd, "--config", tiny_config().string(), "--out", out.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  return run(args);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

const fs::path& selftrain_run() {
  static const fs::path out = [] {
    const fs::path o = scratch() / "st_a";
    REQUIRE(run_tiny("selftrain", o).code == 0);
    return o;
  }();
  return out;
}

}  // namespace

TEST_CASE("selftrain writes the fixed layout") {
  const fs::path& out = selftrain_run();
  for (const char* rel : {"config.json", "manifest.json", "metrics/round_metrics.csv",
                          "metrics/report.csv", "logs/promotions.csv", "logs/sealed_truth.csv",
                          "figures-data/loss_trace.csv", "checkpoints/final.ckpt"}) {
    CHECK_MESSAGE(fs::is_regular_file(out / rel), rel);
  }
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  CHECK(manifest.at("sealed_truth") == "logs/sealed_truth.csv");
  CHECK(manifest.at("labeled_per_class") == 10);
  const auto report = csv_rows(out / "metrics/report.csv");
  REQUIRE(report.size() == 2);
  CHECK(report[0] == std::vector<std::string>{"setting", "acc", "macro_recall", "macro_f1", "n"});
  CHECK(report[1][4] == "20");
}

TEST_CASE("selftrain is byte-reproducible and the config echo replays it") {
  const fs::path& a = selftrain_run();
  const fs::path b = scratch() / "st_b";
  REQUIRE(run_tiny("selftrain", b).code == 0);
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() == tb.size());
  for (const auto& [rel, body] : ta) {
    if (rel == "config.json") continue;
    CHECK_MESSAGE(tb.at(rel) == body, rel);
  }

  const fs::path c = scratch() / "st_c";
  REQUIRE(run({"selftrain", "--config", (a / "config.json").string(), "--out", c.string()}).code == 0);
  for (const auto& [rel, body] : tree(c)) {
    if (rel == "config.json") continue;
    CHECK_MESSAGE(ta.at(rel) == body, rel);
  }
}

TEST_CASE("round csv matches the in-memory state") {
  auto cfg = experiment::load_config(tiny_config());
  cfg.out = selftrain_run().string();
  const auto data = experiment::prepare_data(cfg);
  const auto run_state = experiment::run_selftrain(cfg, data);
  CHECK(slurp(selftrain_run() / "metrics/round_metrics.csv") ==
        selftrain::round_metrics_csv(run_state.result.state));
  const auto rows = csv_rows(selftrain_run() / "metrics/round_metrics.csv");
  CHECK(run_state.result.state.rounds.size() > 1);
  CHECK(rows.size() == run_state.result.state.rounds.size() + 1);
  std::size_t promoted = 0;
  for (const auto& r : run_state.result.state.rounds) promoted += r.promoted.size();
  CHECK(csv_rows(selftrain_run() / "logs/promotions.csv").size() == promoted + 1);
  const std::string footer = "# stop_reason: " + selftrain::to_string(run_state.result.state.stop_reason);
  CHECK(slurp(selftrain_run() / "metrics/round_metrics.csv").find(footer) != std::string::npos);
}

TEST_CASE("flags override the config file") {
  const fs::path out = scratch() / "st_flags";
  REQUIRE(run_tiny("selftrain", out, {"--tau", "0.99", "--max-rounds", "1", "--seed", "9",
                                      "--labeled-per-class", "12"}).code == 0);
  const auto echo = nlohmann::json::parse(slurp(out / "config.json"));
  CHECK(echo["selftrain"]["tau"] == 0.99);
  CHECK(echo["selftrain"]["max_rounds"] == 1);
  CHECK(echo["seed"] == 9);
  CHECK(echo["split"]["labeled_per_class"] == 12);
  CHECK(csv_rows(out / "metrics/round_metrics.csv").size() == 2);
}

TEST_CASE("invalid configuration exits 2 without writing") {
  const fs::path bad = scratch() / "missing_cifar.json";
  io::write_file_atomic(bad, R"({"dataset": {"source": "cifar10",
      "cifar10": {"train_files": ["/nonexistent/data_batch_1.bin"]}}})");
  const fs::path out = scratch() / "never";
  const Result r = run({"selftrain", "--config", bad.string(), "--out", out.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("/nonexistent/data_batch_1.bin") != std::string::npos);
  CHECK_FALSE(fs::exists(out));

  const fs::path typo = scratch() / "typo.json";
  io::write_file_atomic(typo, R"({"selftrain": {"tua": 0.9}})");
  const Result t = run({"selftrain", "--config", typo.string(), "--out", out.string()});
  CHECK(t.code == 2);
  CHECK(t.err.find("tua") != std::string::npos);

  CHECK(run_tiny("selftrain", out, {"--tau", "0.4"}).code == 2);
  CHECK(run({"selftrain", "--config", (scratch() / "absent.json").string()}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"selftrain", "--bogus"}).code == 2);
  CHECK(run({"cv", "--config", tiny_config().string(), "--k", "1", "--out", out.string()}).code == 2);
  CHECK_FALSE(fs::exists(out));
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("compare emits three settings") {
  const fs::path out = scratch() / "compare";
  REQUIRE(run_tiny("compare", out).code == 0);
  const auto rows = csv_rows(out / "metrics/compare.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[1][0] == "cnn-selftrain");
  CHECK(rows[2][0] == "cnn-supervised-only");
  CHECK(rows[3][0] == "mlp");
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 1; c < 4; ++c) {
      const double v = std::stod(rows[r][c]);
      CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("noise sweep rows ascend and sigma 0 matches selftrain") {
  const fs::path out = scratch() / "noise";
  REQUIRE(run_tiny("noise-sweep", out).code == 0);
  const auto rows = csv_rows(out / "metrics/noise_sweep.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"sigma", "acc", "macro_recall", "macro_f1", "n_promoted"});
  CHECK(rows[1][0] == "0");
  CHECK(rows[2][0] == "0.3");
  const auto report = csv_rows(selftrain_run() / "metrics/report.csv");
  CHECK(rows[1][1] == report[1][1]);
  CHECK(rows[1][2] == report[1][2]);
  CHECK(rows[1][3] == report[1][3]);
}

TEST_CASE("cv folds partition the data and the aggregate is the mean") {
  const fs::path out = scratch() / "cv";
  REQUIRE(run_tiny("cv", out).code == 0);
  const auto rows = csv_rows(out / "metrics/cv.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[4][0] == "mean");
  for (std::size_t c = 1; c <= 3; ++c) {
    double sum = 0.0;
    for (std::size_t r = 1; r <= 3; ++r) sum += std::stod(rows[r][c]);
    CHECK(std::abs(std::stod(rows[4][c]) - sum / 3.0) <= 1e-12);
  }

  // 2 classes x (10 + 40 + 10) samples, ids 0..119.
  const auto folds = csv_rows(out / "logs/folds.csv");
  std::set<std::string> ids;
  std::map<std::string, std::size_t> sizes;
  for (std::size_t r = 1; r < folds.size(); ++r) {
    CHECK(ids.insert(folds[r][0]).second);
    ++sizes[folds[r][1]];
  }
  CHECK(ids.size() == 120);
  for (std::size_t i = 0; i < 120; ++i) CHECK(ids.count(std::to_string(i)));
  CHECK(sizes.size() == 3);
  for (const auto& [f, n] : sizes) CHECK(n == 40);
}

TEST_CASE("embed and cam consume the checkpoint") {
  const std::string ckpt = (selftrain_run() / "checkpoints/final.ckpt").string();
  const fs::path e1 = scratch() / "embed1", e2 = scratch() / "embed2";
  REQUIRE(run_tiny("embed", e1, {"--checkpoint", ckpt}).code == 0);
  REQUIRE(run_tiny("embed", e2, {"--checkpoint", ckpt}).code == 0);
  const auto rows = csv_rows(e1 / "figures-data/embedding.csv");
  CHECK(rows.size() == 21);
  CHECK(rows[0] == std::vector<std::string>{"sample_id", "x", "y", "true_or_pseudo_label", "label_kind"});
  CHECK(slurp(e1 / "figures-data/embedding.csv") == slurp(e2 / "figures-data/embedding.csv"));

  const fs::path cam = scratch() / "cam";
  REQUIRE(run_tiny("cam", cam, {"--checkpoint", ckpt}).code == 0);
  const auto index = csv_rows(cam / "figures-data/cam/index.csv");
  REQUIRE(index.size() == 4);
  for (std::size_t r = 1; r < index.size(); ++r) {
    const std::string pgm = slurp(cam / "figures-data/cam" / index[r][4]);
    CHECK(pgm.rfind("P5\n8 8\n255\n", 0) == 0);
    CHECK(pgm.size() == std::string("P5\n8 8\n255\n").size() + 64);
    CHECK(csv_rows(cam / "figures-data/cam" / index[r][5]).size() == 65);
  }

  CHECK(run_tiny("embed", scratch() / "embed_nockpt").code == 2);
}

TEST_CASE("corrupt checkpoint exits 1 naming the field") {
  const fs::path bad = scratch() / "bad.ckpt";
  std::string bytes = slurp(selftrain_run() / "checkpoints/final.ckpt");
  bytes[0] = 'X';
  io::write_file_atomic(bad, bytes);
  const Result r = run_tiny("embed", scratch() / "embed_bad", {"--checkpoint", bad.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("magic") != std::string::npos);

  bytes = slurp(selftrain_run() / "checkpoints/final.ckpt");
  io::write_file_atomic(bad, bytes.substr(0, bytes.size() - 5));
  const Result t = run_tiny("cam", scratch() / "cam_bad", {"--checkpoint", bad.string()});
  CHECK(t.code == 1);
  CHECK(t.err.find("param.data") != std::string::npos);
  CHECK_FALSE(fs::exists(scratch() / "cam_bad"));
}

TEST_CASE("gradcheck command") {
  const fs::path out = scratch() / "gradcheck";
  const Result r = run({"gradcheck", "--out", out.string()});
  CHECK(r.code == 0);
  const auto rows = csv_rows(out / "metrics/gradcheck.csv");
  REQUIRE(rows.size() == 7);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][3] == "1");
}
