#include "pseudolab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "pseudolab/checkpoint.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/gradcheck.hpp"
#include "pseudolab/interpret.hpp"
#include "pseudolab/io.hpp"

namespace pseudolab::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stream identifiers under the run seed.
enum Stream : std::uint64_t {
  kDataGen = 1,
  kTestCarve = 2,
  kLabeledSplit = 3,
  kValidationCarve = 4,
  kCnnInit = 5,
  kMlpInit = 6,
  kTrainShuffle = 7,
  kSelfTrain = 8,
  kNoise = 9,
  kFolds = 10,
  kTsne = 11,
};

Rng stream(const ExperimentConfig& c, Stream s) { return Rng(c.seed).split(s); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError("config: unknown key '" + key + "' in '" + where + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& into, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: '" + where + "." + key + "' has the wrong type: " + e.what());
  }
}

template <typename T>
void read_optional(const json& j, const char* key, std::optional<T>& into, const std::string& where) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    into.reset();
    return;
  }
  T v{};
  read(j, key, v, where);
  into = v;
}

json conv_to_json(const std::vector<ConvBlock>& blocks) {
  json arr = json::array();
  for (const auto& b : blocks) {
    arr.push_back({{"out_channels", b.out_channels},
                   {"kernel", b.kernel},
                   {"stride", b.stride},
                   {"padding", b.padding},
                   {"pool", b.pool}});
  }
  return arr;
}

std::vector<ConvBlock> conv_from_json(const json& arr) {
  if (!arr.is_array()) throw ConfigError("config: 'model.conv' must be an array");
  std::vector<ConvBlock> out;
  for (const auto& e : arr) {
    check_keys(e, "model.conv[]", {"out_channels", "kernel", "stride", "padding", "pool"});
    ConvBlock b;
    read(e, "out_channels", b.out_channels, "model.conv[]");
    read(e, "kernel", b.kernel, "model.conv[]");
    read(e, "stride", b.stride, "model.conv[]");
    read(e, "padding", b.padding, "model.conv[]");
    read(e, "pool", b.pool, "model.conv[]");
    out.push_back(b);
  }
  return out;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  check_keys(j, "<root>", {"seed", "out", "checkpoint", "dataset", "split", "model", "train",
                           "selftrain", "noise", "cv", "embed", "cam"});
  read(j, "seed", c.seed, "<root>");
  read(j, "out", c.out, "<root>");
  read(j, "checkpoint", c.checkpoint, "<root>");
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset", {"source", "synth", "cifar10"});
    read(d, "source", c.dataset.source, "dataset");
    if (d.contains("synth")) {
      const json& s = d.at("synth");
      check_keys(s, "dataset.synth",
                 {"classes", "channels", "height", "width", "separation", "noise", "background", "patch_fraction"});
      read(s, "classes", c.dataset.synth.classes, "dataset.synth");
      read(s, "channels", c.dataset.synth.channels, "dataset.synth");
      read(s, "height", c.dataset.synth.height, "dataset.synth");
      read(s, "width", c.dataset.synth.width, "dataset.synth");
      read(s, "separation", c.dataset.synth.separation, "dataset.synth");
      read(s, "noise", c.dataset.synth.noise, "dataset.synth");
      read(s, "background", c.dataset.synth.background, "dataset.synth");
      read(s, "patch_fraction", c.dataset.synth.patch_fraction, "dataset.synth");
    }
    if (d.contains("cifar10")) {
      const json& s = d.at("cifar10");
      check_keys(s, "dataset.cifar10", {"train_files", "test_files", "classes"});
      read(s, "train_files", c.dataset.cifar_train_files, "dataset.cifar10");
      read(s, "test_files", c.dataset.cifar_test_files, "dataset.cifar10");
      read(s, "classes", c.dataset.cifar_classes, "dataset.cifar10");
    }
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    check_keys(s, "split",
               {"labeled_per_class", "unlabeled_per_class", "test_per_class", "validation_fraction"});
    read(s, "labeled_per_class", c.split.labeled_per_class, "split");
    read(s, "unlabeled_per_class", c.split.unlabeled_per_class, "split");
    read(s, "test_per_class", c.split.test_per_class, "split");
    read(s, "validation_fraction", c.split.validation_fraction, "split");
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"kind", "conv", "hidden"});
    read(m, "kind", c.model.kind, "model");
    if (m.contains("conv") && !m.at("conv").is_null()) c.model.conv = conv_from_json(m.at("conv"));
    read_optional(m, "hidden", c.model.hidden, "model");
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", {"epochs", "batch_size", "learning_rate"});
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "learning_rate", c.train.learning_rate, "train");
  }
  if (j.contains("selftrain")) {
    const json& s = j.at("selftrain");
    check_keys(s, "selftrain", {"tau", "max_rounds", "plateau_epsilon", "plateau_patience",
                                "per_class_cap", "cold_start"});
    read(s, "tau", c.selftrain.tau, "selftrain");
    read(s, "max_rounds", c.selftrain.max_rounds, "selftrain");
    read(s, "plateau_epsilon", c.selftrain.plateau_epsilon, "selftrain");
    read(s, "plateau_patience", c.selftrain.plateau_patience, "selftrain");
    read_optional(s, "per_class_cap", c.selftrain.per_class_cap, "selftrain");
    read(s, "cold_start", c.selftrain.cold_start, "selftrain");
  }
  if (j.contains("noise")) {
    check_keys(j.at("noise"), "noise", {"levels"});
    read(j.at("noise"), "levels", c.noise_levels, "noise");
  }
  if (j.contains("cv")) {
    check_keys(j.at("cv"), "cv", {"k"});
    read(j.at("cv"), "k", c.cv_k, "cv");
  }
  if (j.contains("embed")) {
    const json& e = j.at("embed");
    check_keys(e, "embed", {"samples", "layer", "perplexity", "iterations", "learning_rate"});
    read(e, "samples", c.embed.samples, "embed");
    read(e, "layer", c.embed.layer, "embed");
    read(e, "perplexity", c.embed.perplexity, "embed");
    read(e, "iterations", c.embed.iterations, "embed");
    read(e, "learning_rate", c.embed.learning_rate, "embed");
  }
  if (j.contains("cam")) {
    const json& e = j.at("cam");
    check_keys(e, "cam", {"samples", "layer", "target"});
    read(e, "samples", c.cam.samples, "cam");
    read(e, "layer", c.cam.layer, "cam");
    read_optional(e, "target", c.cam.target, "cam");
  }
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["checkpoint"] = c.checkpoint;
  const SynthSpec& s = c.dataset.synth;
  j["dataset"] = {{"source", c.dataset.source},
                  {"synth",
                   {{"classes", s.classes},
                    {"channels", s.channels},
                    {"height", s.height},
                    {"width", s.width},
                    {"separation", s.separation},
                    {"noise", s.noise},
                    {"background", s.background},
                    {"patch_fraction", s.patch_fraction}}},
                  {"cifar10",
                   {{"train_files", c.dataset.cifar_train_files},
                    {"test_files", c.dataset.cifar_test_files},
                    {"classes", c.dataset.cifar_classes}}}};
  j["split"] = {{"labeled_per_class", c.split.labeled_per_class},
                {"unlabeled_per_class", c.split.unlabeled_per_class},
                {"test_per_class", c.split.test_per_class},
                {"validation_fraction", c.split.validation_fraction}};
  j["model"] = {{"kind", c.model.kind},
                {"conv", c.model.conv ? conv_to_json(*c.model.conv) : json(nullptr)},
                {"hidden", c.model.hidden ? json(*c.model.hidden) : json(nullptr)}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate}};
  j["selftrain"] = {{"tau", c.selftrain.tau},
                    {"max_rounds", c.selftrain.max_rounds},
                    {"plateau_epsilon", c.selftrain.plateau_epsilon},
                    {"plateau_patience", c.selftrain.plateau_patience},
                    {"per_class_cap", c.selftrain.per_class_cap ? json(*c.selftrain.per_class_cap)
                                                                : json(nullptr)},
                    {"cold_start", c.selftrain.cold_start}};
  j["noise"] = {{"levels", c.noise_levels}};
  j["cv"] = {{"k", c.cv_k}};
  j["embed"] = {{"samples", c.embed.samples},
                {"layer", c.embed.layer},
                {"perplexity", c.embed.perplexity},
                {"iterations", c.embed.iterations},
                {"learning_rate", c.embed.learning_rate}};
  j["cam"] = {{"samples", c.cam.samples},
              {"layer", c.cam.layer},
              {"target", c.cam.target ? json(*c.cam.target) : json(nullptr)}};
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

namespace {

std::size_t dataset_classes(const ExperimentConfig& c) {
  if (c.dataset.source == "synth") return c.dataset.synth.classes;
  return c.dataset.cifar_classes.empty() ? kCifarClasses : c.dataset.cifar_classes.size();
}

}  // namespace

void validate_config(const ExperimentConfig& c, const std::string& command) {
  if (c.out.empty()) throw ConfigError("output directory must be set");
  const std::size_t classes = dataset_classes(c);
  if (c.dataset.source == "synth") {
    const SynthSpec& s = c.dataset.synth;
    if (s.classes < 2) throw ConfigError("synth.classes must be at least 2");
    if (s.channels == 0 || s.height == 0 || s.width == 0) {
      throw ConfigError("synth image extents must be positive");
    }
    if (!(s.separation > 0.0)) throw ConfigError("synth.separation must be positive");
    if (!(s.noise >= 0.0)) throw ConfigError("synth.noise must be non-negative");
    if (!(s.patch_fraction > 0.0 && s.patch_fraction <= 1.0)) {
      throw ConfigError("synth.patch_fraction must be in (0, 1]");
    }
    if (c.split.unlabeled_per_class == 0) {
      throw ConfigError("split.unlabeled_per_class must be positive for synthetic data");
    }
  } else if (c.dataset.source == "cifar10") {
    if (c.dataset.cifar_train_files.empty()) throw ConfigError("cifar10.train_files is empty");
    for (const auto& f : c.dataset.cifar_train_files) {
      if (!fs::is_regular_file(f)) throw ConfigError("dataset file not found: " + f);
    }
    for (const auto& f : c.dataset.cifar_test_files) {
      if (!fs::is_regular_file(f)) throw ConfigError("dataset file not found: " + f);
    }
    std::set<std::size_t> seen;
    for (auto k : c.dataset.cifar_classes) {
      if (k >= kCifarClasses || !seen.insert(k).second) {
        throw ConfigError("cifar10.classes must be distinct values in [0, 9]");
      }
    }
    if (c.dataset.cifar_classes.size() == 1) throw ConfigError("cifar10.classes needs at least 2");
  } else {
    throw ConfigError("dataset.source must be 'synth' or 'cifar10', got '" + c.dataset.source + "'");
  }
  if (c.split.labeled_per_class < 2) throw ConfigError("split.labeled_per_class must be at least 2");
  if (c.split.test_per_class == 0) throw ConfigError("split.test_per_class must be positive");
  if (!(c.split.validation_fraction > 0.0 && c.split.validation_fraction < 1.0)) {
    throw ConfigError("split.validation_fraction must be in (0, 1)");
  }
  model_kind_from_string(c.model.kind);
  if (c.train.epochs == 0) throw ConfigError("train.epochs must be positive");
  if (c.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(c.train.learning_rate > 0.0) || !std::isfinite(c.train.learning_rate)) {
    throw ConfigError("train.learning_rate must be positive");
  }
  const auto kept = c.split.labeled_per_class -
                    std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(
                                                c.split.validation_fraction *
                                                static_cast<double>(c.split.labeled_per_class))),
                                            1, c.split.labeled_per_class - 1);
  if (c.train.batch_size > kept * classes) {
    throw ConfigError("train.batch_size exceeds the labeled training set (" +
                      std::to_string(kept * classes) + " samples)");
  }
  selftrain::SelfTrainConfig st = c.selftrain;
  st.validation_fraction = c.split.validation_fraction;
  selftrain::validate(st, classes);
  if (command == "noise-sweep") {
    if (c.noise_levels.empty()) throw ConfigError("noise.levels must not be empty");
    for (double s : c.noise_levels) {
      if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("noise levels must be non-negative");
    }
  }
  if (command == "cv") {
    if (c.cv_k < 2) throw ConfigError("cv.k must be at least 2");
  }
  if (command == "embed" || command == "cam") {
    if (c.checkpoint.empty()) throw ConfigError(command + " needs --checkpoint");
    if (!fs::is_regular_file(c.checkpoint)) throw ConfigError("checkpoint not found: " + c.checkpoint);
  }
  if (command == "embed") {
    if (!(c.embed.perplexity > 0.0)) throw ConfigError("embed.perplexity must be positive");
    if (static_cast<double>(c.embed.samples) < 3.0 * c.embed.perplexity) {
      throw ConfigError("embed.samples must be at least 3 x perplexity");
    }
    if (c.embed.iterations == 0) throw ConfigError("embed.iterations must be positive");
  }
  if (command == "cam" && c.cam.samples == 0) throw ConfigError("cam.samples must be positive");
}

namespace {

Dataset relabel_subset(const Dataset& raw, const std::vector<std::size_t>& classes) {
  if (classes.empty()) return raw;
  std::map<std::size_t, std::size_t> remap;
  for (std::size_t i = 0; i < classes.size(); ++i) remap[classes[i]] = i;
  Dataset out(classes.size(), raw.provenance());
  for (Sample s : raw.samples()) {
    auto it = remap.find(*s.label);
    if (it == remap.end()) continue;
    s.label = it->second;
    out.add(std::move(s));
  }
  return out;
}

Dataset load_cifar_files(const std::vector<std::string>& files, std::size_t& next_id) {
  Dataset all(kCifarClasses, "cifar10-bin");
  for (const auto& f : files) {
    const auto bytes = io::read_file(f);
    Dataset part;
    try {
      part = parse_cifar10_bin(std::span(bytes.data(), bytes.size()), next_id);
    } catch (const FormatError& e) {
      throw FormatError(f + ": " + e.what());
    }
    next_id += part.size();
    for (const auto& s : part.samples()) all.add(s);
  }
  return all;
}

Dataset merge(const Dataset& a, const Dataset& b) {
  Dataset out(a.classes(), a.provenance());
  for (const auto& s : a.samples()) out.add(s);
  for (const auto& s : b.samples()) out.add(s);
  return out;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& c) {
  Dataset pool, test;
  json files = json::array();
  if (c.dataset.source == "synth") {
    SynthSpec spec = c.dataset.synth;
    spec.per_class = c.split.labeled_per_class + c.split.unlabeled_per_class + c.split.test_per_class;
    Rng gen = stream(c, kDataGen);
    Dataset all = synth_dataset(spec, gen);
    Rng carve = stream(c, kTestCarve);
    Holdout h = stratified_take(all, c.split.test_per_class, carve);
    pool = std::move(h.kept);
    test = std::move(h.held);
  } else {
    std::size_t next_id = 0;
    Dataset train_raw =
        relabel_subset(load_cifar_files(c.dataset.cifar_train_files, next_id), c.dataset.cifar_classes);
    for (const auto& f : c.dataset.cifar_train_files) files.push_back(f);
    Rng carve = stream(c, kTestCarve);
    if (c.dataset.cifar_test_files.empty()) {
      Holdout h = stratified_take(normalize(train_raw), c.split.test_per_class, carve);
      pool = std::move(h.kept);
      test = std::move(h.held);
    } else {
      Dataset test_raw = relabel_subset(load_cifar_files(c.dataset.cifar_test_files, next_id),
                                        c.dataset.cifar_classes);
      for (const auto& f : c.dataset.cifar_test_files) files.push_back(f);
      pool = normalize(train_raw);
      test = stratified_take(normalize(test_raw), c.split.test_per_class, carve).held;
    }
    if (c.split.unlabeled_per_class > 0) {
      pool = stratified_take(pool, c.split.labeled_per_class + c.split.unlabeled_per_class, carve).held;
    }
  }

  Rng split_rng = stream(c, kLabeledSplit);
  SplitResult split = stratified_split(pool, c.split.labeled_per_class, split_rng);
  Rng val_rng = stream(c, kValidationCarve);
  Holdout tv = stratified_holdout(split.labeled, c.split.validation_fraction, val_rng);

  PreparedData d;
  d.classes = pool.classes();
  d.train = std::move(tv.kept);
  d.validation = std::move(tv.held);
  d.unlabeled = std::move(split.unlabeled);
  d.truth = std::move(split.truth);
  d.test = std::move(test);
  d.manifest = {{"source", c.dataset.source},
                {"files", files},
                {"split_seed", c.seed},
                {"labeled_per_class", c.split.labeled_per_class},
                {"unlabeled_per_class", c.split.unlabeled_per_class},
                {"test_per_class", c.split.test_per_class},
                {"validation_fraction", c.split.validation_fraction},
                {"classes", d.classes},
                {"sealed_truth", "logs/sealed_truth.csv"},
                {"counts",
                 {{"train", d.train.size()},
                  {"validation", d.validation.size()},
                  {"unlabeled", d.unlabeled.size()},
                  {"test", d.test.size()}}}};
  return d;
}

ArchDescriptor architecture(const ExperimentConfig& c, ModelKind kind, const Dataset& like) {
  const Shape& s = like.image_shape();
  ArchDescriptor a = kind == ModelKind::Cnn ? default_cnn_arch(s[0], s[1], s[2], like.classes())
                                            : default_mlp_arch(s[0], s[1], s[2], like.classes());
  if (kind == ModelKind::Cnn && c.model.conv) a.conv = *c.model.conv;
  if (c.model.hidden && kind == model_kind_from_string(c.model.kind)) a.hidden = *c.model.hidden;
  return a;
}

Model initial_model(const ExperimentConfig& c, ModelKind kind, const Dataset& like) {
  Rng init = stream(c, kind == ModelKind::Cnn ? kCnnInit : kMlpInit);
  return build_model(architecture(c, kind, like), init);
}

metrics::MetricsReport evaluate_model(const Model& model, const Dataset& test) {
  const auto pred = predict(model, test.images());
  return metrics::evaluate(test.labels(), pred, test.classes());
}

namespace {

TrainConfig train_config(const ExperimentConfig& c) {
  TrainConfig t = c.train;
  t.seed = stream(c, kTrainShuffle).next_u64();
  return t;
}

selftrain::SelfTrainConfig selftrain_config(const ExperimentConfig& c) {
  selftrain::SelfTrainConfig s = c.selftrain;
  s.train = train_config(c);
  s.seed = stream(c, kSelfTrain).next_u64();
  s.validation_fraction = c.split.validation_fraction;
  return s;
}

SelfTrainRun selftrain_on(const ExperimentConfig& c, const PreparedData& data,
                          const Dataset& unlabeled) {
  const Model init = initial_model(c, model_kind_from_string(c.model.kind), data.train);
  SelfTrainRun run{selftrain::run_self_training(init, data.train, unlabeled, selftrain_config(c),
                                                data.validation),
                   {}};
  run.test_report = evaluate_model(run.result.model, data.test);
  return run;
}

std::size_t total_promoted(const selftrain::SelfTrainState& s) {
  std::size_t n = 0;
  for (const auto& r : s.rounds) n += r.promoted.size();
  return n;
}

// Collects files and writes them in one pass once a command has finished.
class Outputs {
 public:
  explicit Outputs(const ExperimentConfig& c) : root_(c.out) {
    add("config.json", config_to_json(c).dump(2) + "\n");
  }
  void add(const std::string& rel, std::string contents) {
    files_.emplace_back(rel, std::move(contents));
  }
  void flush() const {
    for (const auto& [rel, contents] : files_) io::write_file_atomic(root_ / rel, contents);
  }

 private:
  fs::path root_;
  std::vector<std::pair<std::string, std::string>> files_;
};

std::string sealed_truth_csv(const SealedTruth& truth) {
  io::CsvWriter csv({"sample_id", "label"});
  for (const auto& [id, label] : truth.entries()) csv.row(id, label);
  return csv.str();
}

std::string per_class_csv(const metrics::MetricsReport& r) {
  io::CsvWriter csv({"class", "precision", "recall", "f1", "support"});
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    csv.row(k, m.precision, m.recall, m.f1, m.support);
  }
  return csv.str();
}

// Grades promotions against the sealed labels; evaluation side only.
std::string pseudo_label_quality_csv(const selftrain::SelfTrainState& s, const SealedTruth& truth) {
  io::CsvWriter csv({"round", "n_promoted", "n_correct", "precision"});
  for (const auto& r : s.rounds) {
    std::size_t ok = 0;
    for (const auto& p : r.promoted) ok += truth.label_of(p.id) == p.label;
    const double prec = r.promoted.empty() ? 0.0
                                           : static_cast<double>(ok) /
                                                 static_cast<double>(r.promoted.size());
    csv.row(r.round, r.promoted.size(), ok, prec);
  }
  return csv.str();
}

}  // namespace

SelfTrainRun run_selftrain(const ExperimentConfig& c, const PreparedData& data) {
  return selftrain_on(c, data, data.unlabeled);
}

metrics::MetricsReport run_supervised(const ExperimentConfig& c, const PreparedData& data,
                                      ModelKind kind, std::size_t epochs) {
  Model m = initial_model(c, kind, data.train);
  TrainConfig t = train_config(c);
  t.seed = selftrain::round_train_seed(t.seed, 0);
  t.epochs = epochs;
  train_supervised(m, data.train.images(), data.train.labels(), t);
  return evaluate_model(m, data.test);
}

void cmd_selftrain(const ExperimentConfig& c) {
  const PreparedData data = prepare_data(c);
  const SelfTrainRun run = run_selftrain(c, data);
  const auto& state = run.result.state;

  Outputs out(c);
  out.add("manifest.json", data.manifest.dump(2) + "\n");
  out.add("logs/sealed_truth.csv", sealed_truth_csv(data.truth));
  out.add("metrics/round_metrics.csv", selftrain::round_metrics_csv(state));
  out.add("logs/promotions.csv", selftrain::promotion_log_csv(state));
  out.add("figures-data/loss_trace.csv", selftrain::loss_trace_csv(state));
  const std::vector<metrics::ReportRow> rows{{"cnn-selftrain", run.test_report}};
  out.add("metrics/report.csv", metrics::report_csv(rows));
  out.add("metrics/per_class.csv", per_class_csv(run.test_report));
  out.add("metrics/pseudo_label_quality.csv", pseudo_label_quality_csv(state, data.truth));
  const auto ckpt = checkpoint::serialize(run.result.model);
  out.add("checkpoints/final.ckpt", std::string(ckpt.begin(), ckpt.end()));
  out.flush();
}

void cmd_compare(const ExperimentConfig& c) {
  const PreparedData data = prepare_data(c);
  const SelfTrainRun st = run_selftrain(c, data);
  // Baselines get the same total number of epochs the self-training run used.
  const std::size_t budget = c.train.epochs * st.result.state.rounds.size();
  const std::vector<metrics::ReportRow> rows{
      {"cnn-selftrain", st.test_report},
      {"cnn-supervised-only", run_supervised(c, data, ModelKind::Cnn, budget)},
      {"mlp", run_supervised(c, data, ModelKind::Mlp, budget)}};
  Outputs out(c);
  out.add("manifest.json", data.manifest.dump(2) + "\n");
  out.add("metrics/compare.csv", metrics::report_csv(rows));
  out.flush();
}

void cmd_noise_sweep(const ExperimentConfig& c) {
  const PreparedData data = prepare_data(c);
  std::vector<double> levels = c.noise_levels;
  std::sort(levels.begin(), levels.end());
  const Rng noise_rng = stream(c, kNoise);
  io::CsvWriter csv({"sigma", "acc", "macro_recall", "macro_f1", "n_promoted"});
  for (double sigma : levels) {
    const Dataset noisy = inject_noise(data.unlabeled, sigma, noise_rng);
    const SelfTrainRun run = selftrain_on(c, data, noisy);
    csv.row(sigma, run.test_report.accuracy, run.test_report.macro_recall,
            run.test_report.macro_f1, total_promoted(run.result.state));
  }
  Outputs out(c);
  out.add("manifest.json", data.manifest.dump(2) + "\n");
  out.add("metrics/noise_sweep.csv", csv.str());
  out.flush();
}

void cmd_cv(const ExperimentConfig& c) {
  const PreparedData base = prepare_data(c);
  Dataset whole = merge(merge(base.train, base.validation), base.test);
  {
    // Restore the sealed labels: folds re-split every sample.
    Dataset with_truth(whole.classes(), whole.provenance());
    for (const auto& s : whole.samples()) with_truth.add(s);
    for (Sample s : base.unlabeled.samples()) {
      s.label = base.truth.label_of(s.id);
      s.label_kind = LabelKind::True;
      with_truth.add(std::move(s));
    }
    whole = std::move(with_truth);
  }
  Rng fold_rng = stream(c, kFolds);
  const auto folds = kfold_split(whole, c.cv_k, fold_rng);

  io::CsvWriter fold_csv({"sample_id", "fold"});
  {
    std::vector<std::pair<std::size_t, std::size_t>> assign;
    for (std::size_t f = 0; f < folds.size(); ++f)
      for (auto id : folds[f]) assign.emplace_back(id, f);
    std::sort(assign.begin(), assign.end());
    for (const auto& [id, f] : assign) fold_csv.row(id, f);
  }

  io::CsvWriter csv({"fold", "acc", "macro_recall", "macro_f1", "n", "acc_std",
                     "macro_recall_std", "macro_f1_std"});
  std::vector<metrics::MetricsReport> reports;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::set<std::size_t> held(folds[f].begin(), folds[f].end());
    std::vector<std::size_t> rest;
    for (const auto& s : whole.samples())
      if (!held.count(s.id)) rest.push_back(s.id);
    PreparedData d;
    d.classes = whole.classes();
    d.test = whole.subset(folds[f]);
    Rng split_rng = Rng(c.seed).split(kFolds).split(1 + f);
    SplitResult split = stratified_split(whole.subset(rest), c.split.labeled_per_class, split_rng);
    Holdout tv = stratified_holdout(split.labeled, c.split.validation_fraction, split_rng);
    d.train = std::move(tv.kept);
    d.validation = std::move(tv.held);
    d.unlabeled = std::move(split.unlabeled);
    const SelfTrainRun run = run_selftrain(c, d);
    reports.push_back(run.test_report);
    csv.row(std::to_string(f), run.test_report.accuracy, run.test_report.macro_recall,
            run.test_report.macro_f1, run.test_report.n, std::string(), std::string(),
            std::string());
  }
  auto mean_std = [&](auto field) {
    double mean = 0.0;
    for (const auto& r : reports) mean += field(r);
    mean /= static_cast<double>(reports.size());
    double var = 0.0;
    for (const auto& r : reports) var += (field(r) - mean) * (field(r) - mean);
    var /= static_cast<double>(reports.size() - 1);
    return std::pair{mean, std::sqrt(var)};
  };
  const auto acc = mean_std([](const auto& r) { return r.accuracy; });
  const auto rec = mean_std([](const auto& r) { return r.macro_recall; });
  const auto f1 = mean_std([](const auto& r) { return r.macro_f1; });
  std::size_t n = 0;
  for (const auto& r : reports) n += r.n;
  csv.row(std::string("mean"), acc.first, rec.first, f1.first, n, acc.second, rec.second,
          f1.second);

  Outputs out(c);
  out.add("manifest.json", base.manifest.dump(2) + "\n");
  out.add("metrics/cv.csv", csv.str());
  out.add("logs/folds.csv", fold_csv.str());
  out.flush();
}

namespace {

Model load_matching_checkpoint(const ExperimentConfig& c, const Dataset& like) {
  Model m = checkpoint::load(c.checkpoint);
  if (m.input_shape() != like.image_shape() || m.arch().classes != like.classes()) {
    throw ValidationError("checkpoint expects " + shape_string(m.input_shape()) + " images over " +
                          std::to_string(m.arch().classes) + " classes; dataset has " +
                          shape_string(like.image_shape()) + " over " +
                          std::to_string(like.classes()));
  }
  return m;
}

}  // namespace

void cmd_embed(const ExperimentConfig& c) {
  const PreparedData data = prepare_data(c);
  const Model model = load_matching_checkpoint(c, data.train);

  Dataset pool = merge(data.train, data.unlabeled);
  std::vector<std::size_t> ids = pool.ids();
  std::sort(ids.begin(), ids.end());
  if (ids.size() < c.embed.samples) {
    throw ValidationError("embed.samples exceeds the " + std::to_string(ids.size()) +
                          " available samples");
  }
  ids.resize(c.embed.samples);
  const Dataset chosen = pool.subset(ids);
  const Tensor images = chosen.images();
  const Tensor feats = extract_features(model, images, c.embed.layer);
  const auto pred = predict(model, images);

  interpret::TsneConfig tc;
  tc.perplexity = c.embed.perplexity;
  tc.iterations = c.embed.iterations;
  tc.learning_rate = c.embed.learning_rate;
  tc.seed = stream(c, kTsne).next_u64();
  const std::size_t n = chosen.size(), d = feats.size() / n;
  const interpret::Embedding2D emb = interpret::tsne_embed(feats.values(), n, d, tc);

  io::CsvWriter csv({"sample_id", "x", "y", "true_or_pseudo_label", "label_kind"});
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = chosen[i];
    const bool known = s.label.has_value();
    csv.row(s.id, emb.coords[2 * i], emb.coords[2 * i + 1], known ? *s.label : pred[i],
            std::string(known ? "true" : "pseudo"));
  }
  io::CsvWriter kl({"iteration", "kl"});
  for (const auto& p : emb.kl_trace) kl.row(p.iteration, p.kl);

  Outputs out(c);
  out.add("figures-data/embedding.csv", csv.str());
  out.add("figures-data/embedding_kl.csv", kl.str());
  out.flush();
}

namespace {

std::string last_conv_activation(const Model& m) {
  std::string name;
  const auto& layers = m.layers();
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::Relu && layers[i - 1].kind == LayerKind::Conv) {
      name = layers[i].name;
    }
  }
  if (name.empty()) throw LayerTypeError("model has no convolutional feature map for grad-cam");
  return name;
}

}  // namespace

void cmd_cam(const ExperimentConfig& c) {
  const PreparedData data = prepare_data(c);
  const Model model = load_matching_checkpoint(c, data.test);
  const std::string layer = c.cam.layer.empty() ? last_conv_activation(model) : c.cam.layer;
  const std::size_t count = std::min(c.cam.samples, data.test.size());
  const Shape& shape = data.test.image_shape();

  Outputs out(c);
  io::CsvWriter index({"sample_id", "true_label", "predicted", "target", "pgm", "csv"});
  for (std::size_t i = 0; i < count; ++i) {
    const Sample& s = data.test[i];
    Shape batch{1, shape[0], shape[1], shape[2]};
    const std::size_t predicted = predict(model, s.image.reshaped(batch))[0];
    const std::size_t target = c.cam.target.value_or(predicted);
    const interpret::CamMap cam = interpret::grad_cam(model, s.image, target, layer);
    const auto up = interpret::upsample_bilinear(cam.values, cam.height, cam.width, shape[1], shape[2]);
    const std::string stem = "figures-data/cam/cam_" + std::to_string(s.id);
    io::CsvWriter values({"y", "x", "value"});
    for (std::size_t y = 0; y < shape[1]; ++y)
      for (std::size_t x = 0; x < shape[2]; ++x) values.row(y, x, up[y * shape[2] + x]);
    out.add(stem + ".pgm", interpret::to_pgm(up, shape[1], shape[2]));
    out.add(stem + ".csv", values.str());
    index.row(s.id, *s.label, predicted, target, "cam_" + std::to_string(s.id) + ".pgm",
              "cam_" + std::to_string(s.id) + ".csv");
  }
  out.add("figures-data/cam/index.csv", index.str());
  out.flush();
}

bool cmd_gradcheck(const ExperimentConfig& c) {
  constexpr double kTolerance = 1e-4;
  constexpr std::uint64_t kSeeds = 20;
  struct Check {
    std::string name;
    std::function<double(Rng&)> run;
  };
  const std::vector<Check> checks = {
      {"conv2d", [](Rng& r) { return gradcheck::check_conv2d({1, 2, 5, 5}, {3, 2, 3, 3}, 1, 1, r); }},
      {"dense", [](Rng& r) { return gradcheck::check_dense(4, 6, 5, r); }},
      {"relu", [](Rng& r) { return gradcheck::check_relu({4, 6}, r); }},
      {"maxpool2", [](Rng& r) { return gradcheck::check_maxpool2({1, 2, 4, 4}, r); }},
      {"softmax_crossentropy", [](Rng& r) { return gradcheck::check_softmax_crossentropy(3, 10, r); }},
      {"tiny_cnn",
       [](Rng& r) {
         ArchDescriptor a;
         a.channels = 1;
         a.height = 8;
         a.width = 8;
         a.classes = 2;
         a.conv = {ConvBlock{2, 3, 1, 1, true}};
         a.hidden = {4};
         const Model m = build_cnn(a, r);
         Tensor x({3, 1, 8, 8});
         for (auto& v : x.values()) v = r.uniform();
         const std::vector<std::size_t> y{0, 1, 1};
         return model_gradient_check(m, x, y);
       }},
  };
  io::CsvWriter csv({"check", "seeds", "max_rel_error", "pass"});
  bool ok = true;
  for (const auto& chk : checks) {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < kSeeds; ++s) {
      Rng r = Rng(c.seed).split(s);
      worst = std::max(worst, chk.run(r));
    }
    const bool pass = worst < kTolerance;
    ok = ok && pass;
    csv.row(chk.name, kSeeds, worst, pass ? 1 : 0);
  }
  Outputs out(c);
  out.add("metrics/gradcheck.csv", csv.str());
  out.flush();
  return ok;
}

}  // namespace pseudolab::experiment
