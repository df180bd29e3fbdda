#include "pseudolab/cli.hpp"

#include <algorithm>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/experiment.hpp"

namespace pseudolab::cli {

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> tau;
  std::optional<std::size_t> max_rounds;
  std::optional<std::size_t> labeled_per_class;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::size_t> per_class_cap;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> k;
  std::vector<double> noise_levels;
  bool cold_start = false;
};

void add_options(CLI::App& cmd, Overrides& o) {
  cmd.add_option("--config", o.config, "JSON experiment config");
  cmd.add_option("--seed", o.seed, "run seed");
  cmd.add_option("--out", o.out, "output directory");
  cmd.add_option("--tau", o.tau, "confidence threshold in (0, 1]");
  cmd.add_option("--max-rounds", o.max_rounds, "self-training round cap");
  cmd.add_option("--labeled-per-class", o.labeled_per_class, "labeled samples per class");
  cmd.add_option("--epochs", o.epochs, "epochs per round");
  cmd.add_option("--batch-size", o.batch_size, "mini-batch size");
  cmd.add_option("--lr", o.lr, "learning rate");
  cmd.add_option("--per-class-cap", o.per_class_cap, "max promotions per class per round");
  cmd.add_option("--checkpoint", o.checkpoint, "model checkpoint (embed, cam)");
  cmd.add_option("--k", o.k, "number of folds (cv)");
  cmd.add_option("--noise-levels", o.noise_levels, "noise sigmas (noise-sweep)")->delimiter(',');
  cmd.add_flag("--cold-start", o.cold_start, "re-initialize the model every round");
}

experiment::ExperimentConfig resolve(const Overrides& o) {
  experiment::ExperimentConfig c =
      o.config.empty() ? experiment::ExperimentConfig{} : experiment::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.tau) c.selftrain.tau = *o.tau;
  if (o.max_rounds) c.selftrain.max_rounds = *o.max_rounds;
  if (o.labeled_per_class) c.split.labeled_per_class = *o.labeled_per_class;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.lr) c.train.learning_rate = *o.lr;
  if (o.per_class_cap) c.selftrain.per_class_cap = *o.per_class_cap;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.k) c.cv_k = *o.k;
  if (!o.noise_levels.empty()) c.noise_levels = o.noise_levels;
  if (o.cold_start) c.selftrain.cold_start = true;
  return c;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised self-training for small image classifiers", "pseudolab"};
  app.require_subcommand(1);
  Overrides o;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"selftrain", "run the self-training loop and write metrics, logs and a checkpoint"},
      {"compare", "self-training CNN vs supervised-only CNN vs MLP"},
      {"noise-sweep", "self-training with Gaussian noise added to the unlabeled pool"},
      {"cv", "stratified k-fold cross-validation of the self-training pipeline"},
      {"embed", "t-SNE embedding of features from a checkpoint"},
      {"cam", "Grad-CAM heatmaps from a checkpoint"},
      {"gradcheck", "finite-difference checks of every backward pass"},
  };
  for (const auto& [name, help] : commands) add_options(*app.add_subcommand(name, help), o);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run 'pseudolab --help' for usage\n";
    return kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  experiment::ExperimentConfig config;
  try {
    config = resolve(o);
    experiment::validate_config(config, command);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (command == "selftrain") experiment::cmd_selftrain(config);
    else if (command == "compare") experiment::cmd_compare(config);
    else if (command == "noise-sweep") experiment::cmd_noise_sweep(config);
    else if (command == "cv") experiment::cmd_cv(config);
    else if (command == "embed") experiment::cmd_embed(config);
    else if (command == "cam") experiment::cmd_cam(config);
    else if (!experiment::cmd_gradcheck(config)) {
      err << "gradcheck: at least one check exceeded the tolerance, see "
          << config.out << "/metrics/gradcheck.csv\n";
      return kExitRuntime;
    }
  } catch (const std::exception& e) {
    err << command << " failed: " << e.what() << "\n";
    return kExitRuntime;
  }
  out << command << ": wrote " << config.out << "\n";
  return kExitOk;
}

}  // namespace pseudolab::cli
