#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "pseudolab/cli.hpp"
#include "pseudolab/data.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/experiment.hpp"
#include "pseudolab/gradcheck.hpp"
#include "pseudolab/interpret.hpp"
#include "pseudolab/io.hpp"
#include "pseudolab/metrics.hpp"

using namespace pseudolab;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 30.0;
constexpr double kAlgebraSeconds = 120.0;
constexpr double kDeskRunSeconds = 300.0;
constexpr double kExampleTolerance = 1e-9;
constexpr double kAffinityTolerance = 1e-10;
constexpr double kPatchMass = 0.70;
constexpr std::size_t kPairedSeeds = 5;
constexpr std::size_t kCamImages = 12;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

double cpu_seconds(std::clock_t since) {
  return static_cast<double>(std::clock() - since) / CLOCKS_PER_SEC;
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
    rows.push_back(cells);
  }
  return rows;
}

struct Scratch {
  fs::path root = fs::temp_directory_path() / ("pseudolab_accept_" + std::to_string(::getpid()));
  Scratch() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Scratch() { fs::remove_all(root); }
};

const fs::path& scratch() {
  static const Scratch s;
  return s.root;
}

// ---- 1 ----

Outcome gradient_correctness() {
  experiment::ExperimentConfig c;
  c.seed = 11;
  c.out = (scratch() / "gradcheck").string();
  const std::clock_t t0 = std::clock();
  const bool ok = experiment::cmd_gradcheck(c);
  const double secs = cpu_seconds(t0);
  const auto rows = csv_rows(fs::path(c.out) / "metrics/gradcheck.csv");
  double worst = 0.0;
  std::size_t seeds = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    worst = std::max(worst, std::stod(rows[i][2]));
    seeds = std::stoul(rows[i][1]);
  }
  const bool pass = ok && rows.size() == 7 && seeds >= 20 && worst < kGradTolerance && secs < kGradSeconds;
  return {pass, std::to_string(rows.size() - 1) + " checks x " + std::to_string(seeds) +
                    " seeds, max rel error " + fmt(worst, 3) + " (< " + fmt(kGradTolerance) + "), " +
                    fmt(secs, 3) + " s CPU (< " + fmt(kGradSeconds) + ")"};
}

// ---- 2 ----

experiment::ExperimentConfig algebra_config() {
  experiment::ExperimentConfig c;
  c.seed = 21;
  c.dataset.synth.classes = 2;
  c.dataset.synth.channels = 1;
  c.dataset.synth.height = 8;
  c.dataset.synth.width = 8;
  c.dataset.synth.separation = 0.6;
  c.dataset.synth.noise = 0.15;
  c.split.labeled_per_class = 10;
  c.split.unlabeled_per_class = 200;
  c.split.test_per_class = 20;
  c.model.conv = std::vector<ConvBlock>{ConvBlock{4, 3, 1, 1, true}, ConvBlock{4, 3, 1, 1, true}};
  c.model.hidden = std::vector<std::size_t>{16};
  c.train.epochs = 20;
  c.train.batch_size = 8;
  c.train.learning_rate = 0.1;
  c.selftrain.tau = 0.9;
  c.selftrain.max_rounds = 10;
  c.selftrain.per_class_cap = 8;
  c.selftrain.plateau_patience = 100;
  return c;
}

Outcome set_algebra() {
  const auto c = algebra_config();
  experiment::validate_config(c, "selftrain");
  const std::clock_t t0 = std::clock();
  const auto data = experiment::prepare_data(c);
  const auto run = experiment::run_selftrain(c, data);
  const double secs = cpu_seconds(t0);
  const auto& rounds = run.result.state.rounds;

  bool ok = rounds.size() == 10;
  const std::size_t total = rounds.front().labeled_ids.size() + rounds.front().unlabeled_ids.size();
  std::size_t prev = 0, promoted = 0;
  double min_conf = 1.0;
  for (const auto& r : rounds) {
    const std::set<std::size_t> l(r.labeled_ids.begin(), r.labeled_ids.end());
    for (auto id : r.unlabeled_ids) ok = ok && !l.count(id);
    ok = ok && l.size() == r.labeled_ids.size();
    ok = ok && r.labeled_ids.size() + r.unlabeled_ids.size() == total;
    ok = ok && r.labeled_ids.size() >= prev;
    prev = r.labeled_ids.size();
    for (const auto& p : r.promoted) {
      min_conf = std::min(min_conf, p.confidence);
      ok = ok && p.confidence >= c.selftrain.tau;
      ++promoted;
    }
  }
  ok = ok && promoted > 0 && secs < kAlgebraSeconds;
  return {ok, std::to_string(rounds.size()) + " rounds, |L|+|U| = " + std::to_string(total) + ", " +
                  std::to_string(promoted) + " promotions, min confidence " + fmt(min_conf) +
                  " (tau " + fmt(c.selftrain.tau) + "), " + fmt(secs, 3) + " s CPU (< " +
                  fmt(kAlgebraSeconds) + ")"};
}

// ---- 3, 4 ----

struct DeskRun {
  double selftrain = 0, supervised = 0, mlp = 0;
  double first_loss = 0, last_loss = 0;
  double slowest = 0;
};

const std::vector<DeskRun>& desk_runs() {
  static const std::vector<DeskRun> runs = [] {
    std::vector<DeskRun> out;
    for (std::uint64_t seed = 1; seed <= kPairedSeeds; ++seed) {
      experiment::ExperimentConfig c;
      c.seed = seed;
      experiment::validate_config(c, "compare");
      const auto data = experiment::prepare_data(c);
      DeskRun d;
      std::clock_t t0 = std::clock();
      const auto st = experiment::run_selftrain(c, data);
      d.slowest = cpu_seconds(t0);
      d.selftrain = st.test_report.accuracy;
      const auto& loss = st.result.state.rounds.front().epoch_loss;
      d.first_loss = loss.front();
      d.last_loss = loss.back();
      const std::size_t budget = c.train.epochs * st.result.state.rounds.size();
      t0 = std::clock();
      d.supervised = experiment::run_supervised(c, data, ModelKind::Cnn, budget).accuracy;
      d.slowest = std::max(d.slowest, cpu_seconds(t0));
      t0 = std::clock();
      d.mlp = experiment::run_supervised(c, data, ModelKind::Mlp, budget).accuracy;
      d.slowest = std::max(d.slowest, cpu_seconds(t0));
      std::cout << "  seed " << seed << ": selftrain " << fmt(d.selftrain) << ", supervised "
                << fmt(d.supervised) << ", mlp " << fmt(d.mlp) << ", rounds "
                << st.result.state.rounds.size() << ", slowest run " << fmt(d.slowest, 3) << " s\n"
                << std::flush;
      out.push_back(d);
    }
    return out;
  }();
  return runs;
}

Outcome ordering() {
  const auto& runs = desk_runs();
  double st = 0, sup = 0, mlp = 0, slowest = 0;
  for (const auto& r : runs) {
    st += r.selftrain;
    sup += r.supervised;
    mlp += r.mlp;
    slowest = std::max(slowest, r.slowest);
  }
  const double n = static_cast<double>(runs.size());
  st /= n;
  sup /= n;
  mlp /= n;
  const bool pass = st >= sup && st >= mlp && slowest < kDeskRunSeconds;
  return {pass, "mean acc over " + std::to_string(runs.size()) + " seeds: cnn-selftrain " + fmt(st) +
                    ", cnn-supervised-only " + fmt(sup) + ", mlp " + fmt(mlp) + "; slowest run " +
                    fmt(slowest, 3) + " s CPU (< " + fmt(kDeskRunSeconds) + ")"};
}

Outcome loss_descent() {
  std::size_t good = 0;
  std::string trace;
  for (const auto& r : desk_runs()) {
    good += r.last_loss < r.first_loss;
    trace += " " + fmt(r.first_loss, 3) + "->" + fmt(r.last_loss, 3);
  }
  return {good >= 4, std::to_string(good) + "/" + std::to_string(desk_runs().size()) +
                         " seeds descend in round 0 (need 4):" + trace};
}

// ---- 5 ----

Outcome noise_robustness() {
  double clean = 0, noisy = 0, slowest = 0;
  bool ordered = true;
  for (std::uint64_t seed = 1; seed <= kPairedSeeds; ++seed) {
    experiment::ExperimentConfig c;
    c.seed = seed;
    c.noise_levels = {0.5, 0.0};
    c.out = (scratch() / ("noise_" + std::to_string(seed))).string();
    experiment::validate_config(c, "noise-sweep");
    const std::clock_t t0 = std::clock();
    experiment::cmd_noise_sweep(c);
    slowest = std::max(slowest, cpu_seconds(t0) / 2.0);
    const auto rows = csv_rows(fs::path(c.out) / "metrics/noise_sweep.csv");
    if (rows.size() != 3) throw ValidationError("noise sweep wrote " + std::to_string(rows.size()) + " rows");
    ordered = ordered && std::stod(rows[1][0]) < std::stod(rows[2][0]);
    clean += std::stod(rows[1][1]);
    noisy += std::stod(rows[2][1]);
    std::cout << "  seed " << seed << ": sigma 0 acc " << rows[1][1] << " (" << rows[1][4]
              << " promoted), sigma 0.5 acc " << rows[2][1] << " (" << rows[2][4] << " promoted)\n"
              << std::flush;
  }
  clean /= kPairedSeeds;
  noisy /= kPairedSeeds;
  return {ordered && clean >= noisy && slowest < kDeskRunSeconds,
          "mean acc sigma 0 " + fmt(clean) + " vs sigma 0.5 " + fmt(noisy) + " over " +
              std::to_string(kPairedSeeds) + " seeds; mean run " + fmt(slowest, 3) + " s CPU"};
}

// ---- 6 ----

Outcome metrics_oracle() {
  Rng rng(606);
  std::size_t agree = 0;
  const std::size_t trials = 200;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t classes = 2 + rng.below(8);
    const std::size_t n = 1 + rng.below(80);
    std::vector<std::size_t> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.below(classes);
      p[i] = rng.uniform() < 0.5 ? t[i] : rng.below(classes);
    }
    const auto r = metrics::evaluate(t, p, classes);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += t[i] == p[i];
    bool same = r.accuracy == static_cast<double>(correct) / static_cast<double>(n);
    double rec = 0, f1 = 0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += p[i] == k && t[i] == k;
        fp += p[i] == k && t[i] != k;
        fn += p[i] != k && t[i] == k;
      }
      const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
      const double f = prec + recall > 0 ? 2 * prec * recall / (prec + recall) : 0.0;
      same = same && r.per_class[k].precision == prec && r.per_class[k].recall == recall &&
             r.per_class[k].f1 == f;
      if (tp + fn > 0) {
        ++present;
        rec += recall;
        f1 += f;
      }
    }
    same = same && r.macro_recall == rec / static_cast<double>(present) &&
           r.macro_f1 == f1 / static_cast<double>(present);
    agree += same;
  }
  metrics::ConfusionMatrix cm(2);
  cm.add(0, 0);
  cm.add(0, 1);
  cm.add(1, 1, 2);
  const auto w = metrics::compute_report(cm);
  const bool example = std::abs(w.accuracy - 0.75) < kExampleTolerance &&
                       std::abs(w.macro_recall - 0.75) < kExampleTolerance &&
                       std::abs(w.macro_f1 - 11.0 / 15.0) < kExampleTolerance;
  return {agree == trials && example,
          std::to_string(agree) + "/" + std::to_string(trials) + " random instances exact; example acc " +
              fmt(w.accuracy, 10) + ", macro recall " + fmt(w.macro_recall, 10) + ", macro F1 " +
              fmt(w.macro_f1, 10)};
}

// ---- 7 ----

Outcome tsne() {
  const std::size_t per = 30, d = 10, n = 2 * per;
  double worst_sym = 0, worst_sum = 0;
  std::size_t descend = 0, separate = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(700 + seed);
    std::vector<double> x(n * d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i * d + j] = (i < per ? 0.0 : 20.0) + 0.5 * rng.normal();

    const auto p = interpret::joint_affinities(x, n, d, 10.0);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        worst_sym = std::max(worst_sym, std::abs(p[i * n + j] - p[j * n + i]));
        sum += p[i * n + j];
      }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));

    interpret::TsneConfig c;
    c.perplexity = 10;
    c.iterations = 300;
    c.seed = seed;
    const auto e = interpret::tsne_embed(x, n, d, c);
    const auto first = std::find_if(e.kl_trace.begin(), e.kl_trace.end(),
                                    [&](const auto& k) { return k.iteration > e.exaggeration_end; });
    descend += first != e.kl_trace.end() && e.kl_trace.back().kl <= first->kl;

    double intra = 0, inter = 0;
    std::size_t ni = 0, nx = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dist = std::hypot(e.coords[2 * i] - e.coords[2 * j],
                                       e.coords[2 * i + 1] - e.coords[2 * j + 1]);
        if ((i < per) == (j < per)) intra += dist, ++ni;
        else inter += dist, ++nx;
      }
    separate += inter / static_cast<double>(nx) > intra / static_cast<double>(ni);
  }
  const bool pass = worst_sym <= kAffinityTolerance && worst_sum <= kAffinityTolerance &&
                    descend >= 9 && separate >= 9;
  return {pass, "P asymmetry " + fmt(worst_sym, 3) + ", |sum-1| " + fmt(worst_sum, 3) + "; KL descent " +
                    std::to_string(descend) + "/10, clusters apart " + std::to_string(separate) + "/10"};
}

// ---- 8 ----

Outcome grad_cam() {
  SynthSpec spec;
  spec.classes = 4;
  spec.channels = 1;
  spec.height = 16;
  spec.width = 16;
  spec.per_class = 80;
  spec.separation = 0.8;
  spec.noise = 0.1;
  spec.background = 0.0;
  spec.patch_fraction = 1.0;
  Rng rng(808);
  Rng data_rng = rng.split(1), init_rng = rng.split(2);
  const Dataset all = synth_dataset(spec, data_rng);
  Holdout h = stratified_take(all, 5, data_rng);
  const Dataset& test = h.held;
  const Dataset& train = h.kept;

  Model m = build_cnn(default_cnn_arch(1, 16, 16, 4), init_rng);
  TrainConfig tc;
  tc.epochs = 15;
  tc.seed = 809;
  const auto labels = train.labels();
  train_supervised(m, train.images(), labels, tc);
  const auto test_labels = test.labels();
  const auto pred = predict(m, test.images());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test_labels[i];

  std::string layer;
  for (std::size_t i = 1; i < m.layers().size(); ++i)
    if (m.layers()[i].kind == LayerKind::Relu && m.layers()[i - 1].kind == LayerKind::Conv)
      layer = m.layers()[i].name;
  const std::size_t li = m.layer_index(layer);

  double worst_fd = 0.0;
  std::size_t checked = 0;
  bool linear = true;
  std::vector<double> masses;
  for (std::size_t i = 0; i < std::min(kCamImages, test.size()); ++i) {
    const Tensor& img = test[i].image;
    const std::size_t target = pred[i];
    const auto lg = interpret::logit_gradient(m, img, target, layer);
    if (i < 2) {
      Shape bs{1};
      for (auto e : lg.activations.shape()) bs.push_back(e);
      const Tensor batch = lg.activations.reshaped(bs);
      for (std::size_t j = 0; j < batch.size(); ++j) {
        if (std::abs(batch[j]) < 1e-3) continue;  // rectified zeros have no derivative
        ++checked;
        Tensor up = batch, down = batch;
        up[j] += gradcheck::kStep;
        down[j] -= gradcheck::kStep;
        const double numeric = (m.forward_from(li, up).at({0, target}) -
                                m.forward_from(li, down).at({0, target})) /
                               (2 * gradcheck::kStep);
        worst_fd = std::max(worst_fd, gradcheck::relative_error(lg.grads[j], numeric));
      }
    }
    auto w = interpret::channel_weights(lg.grads);
    const auto base = interpret::weighted_sum(lg.activations, w);
    for (auto& v : w) v *= 4.0;
    const auto scaled = interpret::weighted_sum(lg.activations, w);
    for (std::size_t j = 0; j < base.size(); ++j) linear = linear && scaled[j] == 4.0 * base[j];

    const auto cam = interpret::grad_cam(m, img, target, layer);
    const auto up = interpret::upsample_bilinear(cam.values, cam.height, cam.width, 16, 16);
    const PatchBox box = synth_patch_box(spec, *test[i].label);
    double inside = 0, total = 0;
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        total += up[y * 16 + x];
        if (y >= box.y0 && y < box.y1 && x >= box.x0 && x < box.x1) inside += up[y * 16 + x];
      }
    masses.push_back(total > 0 ? inside / total : 0.0);
  }
  const std::size_t above =
      static_cast<std::size_t>(std::count_if(masses.begin(), masses.end(), [](double v) { return v >= kPatchMass; }));
  const double mean = std::accumulate(masses.begin(), masses.end(), 0.0) / static_cast<double>(masses.size());
  const double lo = *std::min_element(masses.begin(), masses.end());
  const bool pass = worst_fd < kGradTolerance && checked > 20 && linear && above >= 10;
  return {pass, "layer " + layer + ", test acc " + fmt(static_cast<double>(correct) / static_cast<double>(pred.size())) +
                    "; fd rel error " + fmt(worst_fd, 3) + " over " + std::to_string(checked) +
                    " entries; linearity " + (linear ? "exact" : "broken") + "; patch mass >= " +
                    fmt(kPatchMass) + " on " + std::to_string(above) + "/" + std::to_string(masses.size()) +
                    " images (need 10), mean " + fmt(mean, 3) + ", min " + fmt(lo, 3)};
}

// ---- 9 ----

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.what();
  }
  return {};
}

Outcome cifar_parser() {
  Rng rng(909);
  std::vector<std::uint8_t> bytes(5 * kCifarRecordBytes);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(i % kCifarRecordBytes == 0 ? rng.below(10) : rng.below(256));
  const bool round_trip = serialize_cifar10_bin(parse_cifar10_bin(bytes)) == bytes;

  auto truncated = bytes;
  truncated.resize(2 * kCifarRecordBytes + 100);
  const bool trunc = error_of([&] { parse_cifar10_bin(truncated); }).find("offset 6146") != std::string::npos;
  auto corrupt = bytes;
  corrupt[3 * kCifarRecordBytes] = 10;
  const std::string cm = error_of([&] { parse_cifar10_bin(corrupt); });
  const bool bad = cm.find("record 3") != std::string::npos && cm.find("offset 9219") != std::string::npos;

  // 60,000 records, parsed in 10,000-record slices so one slice of doubles is resident at a time.
  const std::size_t records = 60000, slice = 10000;
  std::vector<std::uint8_t> full(records * kCifarRecordBytes);
  for (std::size_t r = 0; r < records; ++r) {
    full[r * kCifarRecordBytes] = static_cast<std::uint8_t>(r % 10);
    for (std::size_t i = 1; i < kCifarRecordBytes; ++i)
      full[r * kCifarRecordBytes + i] = static_cast<std::uint8_t>((r * 31 + i) & 0xff);
  }
  std::vector<std::size_t> per_class(10, 0);
  std::size_t parsed = 0;
  bool ids_ok = true;
  for (std::size_t first = 0; first < records; first += slice) {
    const std::span<const std::uint8_t> part(full.data() + first * kCifarRecordBytes, slice * kCifarRecordBytes);
    const Dataset d = parse_cifar10_bin(part, first);
    for (std::size_t i = 0; i < d.size(); ++i) {
      ++per_class[*d[i].label];
      ids_ok = ids_ok && d[i].id == first + i;
    }
    parsed += d.size();
  }
  const bool even = std::all_of(per_class.begin(), per_class.end(), [](std::size_t v) { return v == 6000; });
  return {round_trip && trunc && bad && even && ids_ok && parsed == records,
          std::string("round trip ") + (round_trip ? "equal" : "differs") + ", truncation offset " +
              (trunc ? "exact" : "wrong") + ", corrupt record offset " + (bad ? "exact" : "wrong") + "; " +
              std::to_string(parsed) + " records, per class " + std::to_string(*std::min_element(per_class.begin(), per_class.end())) +
              ".." + std::to_string(*std::max_element(per_class.begin(), per_class.end()))};
}

// ---- 10 ----

const char* kTinyConfig = R"({
  "seed": 3,
  "dataset": {"synth": {"classes": 2, "channels": 1, "height": 8, "width": 8,
                        "separation": 0.6, "noise": 0.15}},
  "split": {"labeled_per_class": 10, "unlabeled_per_class": 40, "test_per_class": 10},
  "model": {"conv": [{"out_channels": 4}, {"out_channels": 4}], "hidden": [16]},
  "train": {"epochs": 20, "batch_size": 8, "learning_rate": 0.1},
  "selftrain": {"tau": 0.9, "max_rounds": 4, "per_class_cap": 15},
  "noise": {"levels": [0.0, 0.3]},
  "cv": {"k": 3},
  "embed": {"samples": 20, "perplexity": 5, "iterations": 120},
  "cam": {"samples": 3}
})";

std::map<std::string, std::string> outputs(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".csv" || ext == ".pgm"))
      files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

Outcome determinism() {
  const fs::path cfg = scratch() / "tiny.json";
  io::write_file_atomic(cfg, kTinyConfig);
  const fs::path ckpt = scratch() / "det_selftrain_a" / "checkpoints" / "final.ckpt";
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const std::string cmd : {"selftrain", "compare", "noise-sweep", "cv", "embed", "cam", "gradcheck"}) {
    std::map<std::string, std::string> seen[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = scratch() / ("det_" + cmd + (rep ? "_b" : "_a"));
      std::vector<std::string> args{cmd, "--config", cfg.string(), "--out", out.string()};
      if (cmd == "embed" || cmd == "cam") args.insert(args.end(), {"--checkpoint", ckpt.string()});
      std::ostringstream so, se;
      if (cli::run(args, so, se) != cli::kExitOk) return {false, cmd + " failed: " + se.str()};
      seen[rep] = outputs(out);
    }
    if (seen[0].empty() || seen[0] != seen[1]) differing.push_back(cmd);
    compared += seen[0].size();
  }
  std::string detail = "7 commands run twice, " + std::to_string(compared) + " csv/pgm files compared";
  if (!differing.empty()) {
    detail += "; differing:";
    for (const auto& d : differing) detail += " " + d;
  } else {
    detail += ", all byte-identical";
  }
  return {differing.empty(), detail};
}

}  // namespace

// With arguments, only the listed criterion numbers run.
int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"self-training set algebra", set_algebra},
      {"ordering on the desk preset", ordering},
      {"round-0 loss descent", loss_descent},
      {"noise robustness", noise_robustness},
      {"metrics oracle equivalence", metrics_oracle},
      {"t-SNE affinities and descent", tsne},
      {"Grad-CAM gradients and patch mass", grad_cam},
      {"CIFAR-10 parser", cifar_parser},
      {"CLI determinism", determinism},
  };
  std::set<std::size_t> only;
  for (int a = 1; a < argc; ++a) only.insert(std::stoul(argv[a]));
  std::size_t failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    ++ran;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": "
              << o.detail << "\n"
              << std::flush;
  }
  std::cout << ran - failed << "/" << ran << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
