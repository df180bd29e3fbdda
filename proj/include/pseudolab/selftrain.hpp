#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pseudolab/data.hpp"
#include "pseudolab/model.hpp"

// Iterative self-training: train on L, pseudo-label U, promote confident
// samples into L, repeat. Nothing here can see a SealedTruth.
namespace pseudolab::selftrain {

struct SelfTrainConfig {
  double tau = 0.95;  // inclusive: confidence >= tau is promoted
  std::size_t max_rounds = 10;
  double plateau_epsilon = 0.001;
  std::size_t plateau_patience = 2;
  std::optional<std::size_t> per_class_cap;
  bool cold_start = false;  // re-initialize parameters every round
  double validation_fraction = 0.1;  // carved from L when no validation set is given
  std::uint64_t seed = 0;  // cold-start init and validation carve
  TrainConfig train;
};

// Throws ConfigError unless 1/classes < tau <= 1 and the counts are positive.
void validate(const SelfTrainConfig& config, std::size_t classes);

struct PseudoLabel {
  std::size_t id = 0;
  std::size_t label = 0;
  double confidence = 0.0;
  std::vector<double> probs;  // the row the label was read from
};

// Argmax of each row (ties to the lowest class) and its probability.
std::vector<PseudoLabel> pseudo_label_rows(std::span<const std::size_t> ids, const Tensor& probs);
std::vector<PseudoLabel> pseudo_label(const Model& model, const Dataset& unlabeled);

// Entries with confidence >= tau, at most `per_class_cap` per pseudo-class
// (highest confidence first, ties to the lower id), sorted by descending
// confidence then ascending id.
std::vector<PseudoLabel> select_confident(std::span<const PseudoLabel> candidates, double tau,
                                          std::optional<std::size_t> per_class_cap);

// True iff each of the last `patience` entries improves on the best earlier
// value by less than epsilon. Needs patience + 1 entries to ever fire.
bool plateau_check(std::span<const double> trace, double epsilon, std::size_t patience);

// Shuffle seed used by train_supervised in a given round.
std::uint64_t round_train_seed(std::uint64_t base, std::size_t round);

enum class StopReason { Cap, Plateau, Exhausted, NoSelection };
std::string to_string(StopReason reason);

struct Promotion {
  std::size_t id = 0;
  std::size_t label = 0;
  double confidence = 0.0;
  std::vector<double> probs;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> labeled_ids;    // L trained on this round
  std::vector<std::size_t> unlabeled_ids;  // U at the start of the round
  std::vector<Promotion> promoted;         // moved U -> L after training
  double val_accuracy = 0.0;
  std::vector<double> epoch_loss;

  double mean_epoch_loss() const;
};

struct SelfTrainState {
  std::vector<RoundRecord> rounds;
  StopReason stop_reason = StopReason::Cap;
  std::vector<std::size_t> final_labeled_ids;
  std::vector<std::size_t> final_unlabeled_ids;
};

struct SelfTrainResult {
  Model model;
  SelfTrainState state;
  Dataset labeled;     // final L including pseudo-labeled samples
  Dataset validation;  // the set the plateau rule measured
};

// `labeled` must carry labels, `unlabeled` must not. When `validation` is
// absent a stratified validation_fraction of `labeled` is held out.
SelfTrainResult run_self_training(const Model& initial, const Dataset& labeled,
                                  const Dataset& unlabeled, const SelfTrainConfig& config,
                                  const std::optional<Dataset>& validation = std::nullopt);

// round,labeled,unlabeled,n_promoted,val_accuracy,mean_epoch_loss plus a
// "# stop_reason: <reason>" footer line.
std::string round_metrics_csv(const SelfTrainState& state);
// round,sample_id,pseudo_label,confidence
std::string promotion_log_csv(const SelfTrainState& state);
// round,epoch,mean_loss
std::string loss_trace_csv(const SelfTrainState& state);

}  // namespace pseudolab::selftrain
