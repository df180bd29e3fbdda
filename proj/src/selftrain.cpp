#include "pseudolab/selftrain.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "pseudolab/error.hpp"
#include "pseudolab/io.hpp"

namespace pseudolab::selftrain {

void validate(const SelfTrainConfig& c, std::size_t classes) {
  if (classes < 2) throw ConfigError("self-training needs at least 2 classes");
  if (!(c.tau > 1.0 / static_cast<double>(classes)) || !(c.tau <= 1.0)) {
    throw ConfigError("tau must lie in (1/" + std::to_string(classes) + ", 1], got " +
                      io::format_double(c.tau));
  }
  if (c.max_rounds == 0) throw ConfigError("max_rounds must be positive");
  if (c.plateau_patience == 0) throw ConfigError("plateau_patience must be positive");
  if (!(c.plateau_epsilon >= 0.0)) throw ConfigError("plateau_epsilon must be non-negative");
  if (c.per_class_cap && *c.per_class_cap == 0) throw ConfigError("per_class_cap must be positive");
  if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must be in (0, 1)");
  }
}

std::vector<PseudoLabel> pseudo_label_rows(std::span<const std::size_t> ids, const Tensor& probs) {
  if (ids.empty()) return {};
  if (probs.rank() != 2 || probs.dim(0) != ids.size()) {
    throw DimensionError("pseudo_label: " + std::to_string(ids.size()) + " ids for probabilities " +
                         shape_string(probs.shape()));
  }
  const std::size_t c = probs.dim(1);
  std::vector<PseudoLabel> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* row = probs.data() + i * c;
    const std::size_t best = static_cast<std::size_t>(std::max_element(row, row + c) - row);
    out.push_back(PseudoLabel{ids[i], best, row[best], std::vector<double>(row, row + c)});
  }
  return out;
}

std::vector<PseudoLabel> pseudo_label(const Model& model, const Dataset& unlabeled) {
  if (unlabeled.empty()) return {};
  const auto ids = unlabeled.ids();
  return pseudo_label_rows(ids, predict_proba(model, unlabeled.images()));
}

namespace {

bool more_confident(const PseudoLabel& a, const PseudoLabel& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return a.id < b.id;
}

}  // namespace

std::vector<PseudoLabel> select_confident(std::span<const PseudoLabel> candidates, double tau,
                                          std::optional<std::size_t> per_class_cap) {
  std::vector<PseudoLabel> kept;
  for (const auto& p : candidates)
    if (p.confidence >= tau) kept.push_back(p);
  std::sort(kept.begin(), kept.end(), more_confident);
  if (!per_class_cap) return kept;
  std::map<std::size_t, std::size_t> taken;
  std::vector<PseudoLabel> capped;
  for (auto& p : kept) {
    if (taken[p.label]++ < *per_class_cap) capped.push_back(std::move(p));
  }
  return capped;
}

bool plateau_check(std::span<const double> trace, double epsilon, std::size_t patience) {
  if (trace.empty()) throw ValidationError("plateau_check needs a non-empty trace");
  if (patience == 0 || trace.size() < patience + 1) return false;
  for (std::size_t r = trace.size() - patience; r < trace.size(); ++r) {
    const double best = *std::max_element(trace.begin(), trace.begin() + r);
    if (!(trace[r] - best < epsilon)) return false;
  }
  return true;
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::Cap: return "cap";
    case StopReason::Plateau: return "plateau";
    case StopReason::Exhausted: return "exhausted";
    case StopReason::NoSelection: return "no-selection";
  }
  return "cap";
}

double RoundRecord::mean_epoch_loss() const {
  if (epoch_loss.empty()) return 0.0;
  return std::accumulate(epoch_loss.begin(), epoch_loss.end(), 0.0) /
         static_cast<double>(epoch_loss.size());
}

namespace {

double accuracy_on(const Model& model, const Dataset& data) {
  const auto truth = data.labels();
  const auto pred = predict(model, data.images());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += truth[i] == pred[i];
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

void check_partition(const Dataset& l, const Dataset& u, std::size_t total, std::size_t round) {
  if (l.size() + u.size() != total) {
    throw std::logic_error("round " + std::to_string(round) + ": |L| + |U| changed");
  }
  for (const auto& s : u.samples()) {
    if (l.contains(s.id)) {
      throw std::logic_error("round " + std::to_string(round) + ": sample " +
                             std::to_string(s.id) + " in both L and U");
    }
  }
}

}  // namespace

std::uint64_t round_train_seed(std::uint64_t base, std::size_t round) {
  return Rng(base).split(round).next_u64();
}

SelfTrainResult run_self_training(const Model& initial, const Dataset& labeled,
                                  const Dataset& unlabeled, const SelfTrainConfig& config,
                                  const std::optional<Dataset>& validation) {
  const std::size_t classes = initial.arch().classes;
  validate(config, classes);
  if (labeled.empty()) throw ValidationError("self-training needs a non-empty labeled set");
  for (const auto& s : labeled.samples()) {
    if (!s.label) throw ValidationError("labeled sample " + std::to_string(s.id) + " has no label");
  }
  for (const auto& s : unlabeled.samples()) {
    if (s.label) {
      throw ValidationError("unlabeled sample " + std::to_string(s.id) + " still carries a label");
    }
    if (labeled.contains(s.id)) {
      throw ValidationError("sample " + std::to_string(s.id) + " is in both L and U");
    }
  }

  Dataset l = labeled;
  Dataset val;
  if (validation) {
    for (const auto& s : validation->samples()) {
      if (labeled.contains(s.id) || unlabeled.contains(s.id)) {
        throw ValidationError("validation sample " + std::to_string(s.id) + " overlaps L or U");
      }
    }
    if (validation->empty()) throw ValidationError("validation set is empty");
    val = *validation;
  } else {
    Rng carve = Rng(config.seed).split(0x7661);
    Holdout h = stratified_holdout(labeled, config.validation_fraction, carve);
    l = std::move(h.kept);
    val = std::move(h.held);
  }
  Dataset u = unlabeled;
  const std::size_t total = l.size() + u.size();

  Model model = initial;
  SelfTrainState state;
  std::vector<double> val_trace;
  for (std::size_t round = 0;; ++round) {
    check_partition(l, u, total, round);
    RoundRecord rec;
    rec.round = round;
    rec.labeled_ids = l.ids();
    rec.unlabeled_ids = u.ids();

    if (config.cold_start && round > 0) {
      Rng init = Rng(config.seed).split(0x1000 + round);
      model = build_model(initial.arch(), init);
    }
    TrainConfig tc = config.train;
    tc.seed = round_train_seed(config.train.seed, round);
    rec.epoch_loss = train_supervised(model, l.images(), l.labels(), tc).epoch_loss;
    rec.val_accuracy = accuracy_on(model, val);
    val_trace.push_back(rec.val_accuracy);

    std::optional<StopReason> stop;
    if (u.empty()) {
      stop = StopReason::Exhausted;
    } else if (plateau_check(val_trace, config.plateau_epsilon, config.plateau_patience)) {
      stop = StopReason::Plateau;
    } else if (round + 1 >= config.max_rounds) {
      stop = StopReason::Cap;
    } else {
      const auto candidates = pseudo_label(model, u);
      const auto chosen = select_confident(candidates, config.tau, config.per_class_cap);
      if (chosen.empty()) {
        stop = StopReason::NoSelection;
      } else {
        std::set<std::size_t> moved;
        for (const auto& p : chosen) {
          rec.promoted.push_back(Promotion{p.id, p.label, p.confidence, p.probs});
          moved.insert(p.id);
        }
        std::map<std::size_t, std::size_t> label_of;
        for (const auto& p : chosen) label_of[p.id] = p.label;
        Dataset next_u(u.classes(), u.provenance());
        for (const auto& s : u.samples()) {
          if (moved.count(s.id)) {
            Sample ps = s;
            ps.label = label_of[s.id];
            ps.label_kind = LabelKind::Pseudo;
            l.add(std::move(ps));
          } else {
            next_u.add(s);
          }
        }
        u = std::move(next_u);
      }
    }
    state.rounds.push_back(std::move(rec));
    if (stop) {
      state.stop_reason = *stop;
      break;
    }
  }
  check_partition(l, u, total, state.rounds.size());
  state.final_labeled_ids = l.ids();
  state.final_unlabeled_ids = u.ids();
  return SelfTrainResult{std::move(model), std::move(state), std::move(l), std::move(val)};
}

std::string round_metrics_csv(const SelfTrainState& state) {
  io::CsvWriter csv(
      {"round", "labeled", "unlabeled", "n_promoted", "val_accuracy", "mean_epoch_loss"});
  for (const auto& r : state.rounds) {
    csv.row(r.round, r.labeled_ids.size(), r.unlabeled_ids.size(), r.promoted.size(),
            r.val_accuracy, r.mean_epoch_loss());
  }
  csv.raw_line("# stop_reason: " + to_string(state.stop_reason));
  return csv.str();
}

std::string promotion_log_csv(const SelfTrainState& state) {
  io::CsvWriter csv({"round", "sample_id", "pseudo_label", "confidence"});
  for (const auto& r : state.rounds)
    for (const auto& p : r.promoted) csv.row(r.round, p.id, p.label, p.confidence);
  return csv.str();
}

std::string loss_trace_csv(const SelfTrainState& state) {
  io::CsvWriter csv({"round", "epoch", "mean_loss"});
  for (const auto& r : state.rounds)
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) csv.row(r.round, e, r.epoch_loss[e]);
  return csv.str();
}

}  // namespace pseudolab::selftrain
