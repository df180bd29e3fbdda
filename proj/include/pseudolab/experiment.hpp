#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pseudolab/data.hpp"
#include "pseudolab/metrics.hpp"
#include "pseudolab/model.hpp"
#include "pseudolab/selftrain.hpp"

namespace pseudolab::experiment {

struct DatasetConfig {
  std::string source = "synth";  // synth | cifar10
  SynthSpec synth;               // per_class is derived from the split sizes
  std::vector<std::string> cifar_train_files;
  std::vector<std::string> cifar_test_files;  // empty: carve the test set from train
  std::vector<std::size_t> cifar_classes;     // empty: all ten, otherwise relabeled 0..k-1
};

struct SplitConfig {
  std::size_t labeled_per_class = 50;
  std::size_t unlabeled_per_class = 500;  // 0 with cifar10: everything left over
  std::size_t test_per_class = 100;
  double validation_fraction = 0.1;
};

struct ModelConfig {
  std::string kind = "cnn";
  std::optional<std::vector<ConvBlock>> conv;
  std::optional<std::vector<std::size_t>> hidden;
};

struct EmbedConfig {
  std::size_t samples = 200;
  std::string layer = "flatten";
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
};

struct CamConfig {
  std::size_t samples = 4;
  std::string layer;                  // empty: activation of the last conv block
  std::optional<std::size_t> target;  // empty: the predicted class
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out = "out";
  DatasetConfig dataset;
  SplitConfig split;
  ModelConfig model;
  TrainConfig train;  // seed derived from `seed`
  selftrain::SelfTrainConfig selftrain;
  std::vector<double> noise_levels = {0.0, 0.1, 0.2, 0.3, 0.5};
  std::size_t cv_k = 5;
  EmbedConfig embed;
  CamConfig cam;
  std::string checkpoint;  // embed / cam input
};

// Unknown keys and wrong types raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

// Invariant and path checks run before anything is written.
void validate_config(const ExperimentConfig& c, const std::string& command);

struct PreparedData {
  Dataset train;       // labeled portion used for gradient steps
  Dataset validation;  // carved from the labeled split
  Dataset unlabeled;
  SealedTruth truth;   // labels of `unlabeled`; evaluation only
  Dataset test;
  std::size_t classes = 0;
  nlohmann::json manifest;
};

PreparedData prepare_data(const ExperimentConfig& c);
ArchDescriptor architecture(const ExperimentConfig& c, ModelKind kind, const Dataset& like);
Model initial_model(const ExperimentConfig& c, ModelKind kind, const Dataset& like);

metrics::MetricsReport evaluate_model(const Model& model, const Dataset& test);

struct SelfTrainRun {
  selftrain::SelfTrainResult result;
  metrics::MetricsReport test_report;
};

SelfTrainRun run_selftrain(const ExperimentConfig& c, const PreparedData& data);

// Supervised training on `data.train` with an explicit epoch budget.
metrics::MetricsReport run_supervised(const ExperimentConfig& c, const PreparedData& data,
                                      ModelKind kind, std::size_t epochs);

// Commands. Each writes under c.out and returns normally or throws.
void cmd_selftrain(const ExperimentConfig& c);
void cmd_compare(const ExperimentConfig& c);
void cmd_noise_sweep(const ExperimentConfig& c);
void cmd_cv(const ExperimentConfig& c);
void cmd_embed(const ExperimentConfig& c);
void cmd_cam(const ExperimentConfig& c);
// Returns false when any check exceeds the tolerance.
bool cmd_gradcheck(const ExperimentConfig& c);

}  // namespace pseudolab::experiment
