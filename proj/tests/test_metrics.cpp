#include "doctest.h"

#include <cmath>

#include "pseudolab/error.hpp"
#include "pseudolab/metrics.hpp"
#include "pseudolab/rng.hpp"

using namespace pseudolab;
using namespace pseudolab::metrics;

namespace {

// Straight per-sample tally, independent of the confusion matrix.
MetricsReport tally(const std::vector<std::size_t>& t, const std::vector<std::size_t>& p,
                    std::size_t classes) {
  MetricsReport r;
  r.n = t.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < t.size(); ++i) correct += t[i] == p[i];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(t.size());
  std::size_t present = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (p[i] == k && t[i] == k) ++tp;
      if (p[i] == k && t[i] != k) ++fp;
      if (p[i] != k && t[i] == k) ++fn;
    }
    ClassMetrics m;
    m.support = tp + fn;
    m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.per_class.push_back(m);
    if (m.support > 0) {
      ++present;
      r.macro_precision += m.precision;
      r.macro_recall += m.recall;
      r.macro_f1 += m.f1;
    }
  }
  r.macro_precision /= static_cast<double>(present);
  r.macro_recall /= static_cast<double>(present);
  r.macro_f1 /= static_cast<double>(present);
  return r;
}

}  // namespace

TEST_CASE("worked two-class example") {
  ConfusionMatrix cm(2);
  cm.add(0, 0);
  cm.add(0, 1);
  cm.add(1, 1, 2);
  const MetricsReport r = compute_report(cm);
  CHECK(r.accuracy == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(std::abs(r.macro_recall - 0.75) < 1e-9);
  CHECK(std::abs(r.macro_f1 - 11.0 / 15.0) < 1e-9);
  CHECK(r.per_class[0].precision == 1.0);
  CHECK(r.per_class[1].precision == doctest::Approx(2.0 / 3.0));
  CHECK(r.micro_f1 == r.accuracy);
}

TEST_CASE("confusion matrix invariants") {
  const std::vector<std::size_t> t{0, 1, 2, 2, 1};
  const std::vector<std::size_t> p{0, 2, 2, 1, 1};
  const ConfusionMatrix cm = confusion_matrix(t, p, 3);
  CHECK(cm.total() == 5);
  CHECK(cm.trace() == 3);
  CHECK(cm.at(1, 2) == 1);
  CHECK(cm.row_sum(2) == 2);
  CHECK(cm.col_sum(1) == 2);
  CHECK_THROWS_AS(confusion_matrix(t, std::vector<std::size_t>{0}, 3), ValidationError);
  CHECK_THROWS_AS(confusion_matrix(t, p, 2), ValidationError);
  CHECK_THROWS_AS(compute_report(ConfusionMatrix(3)), ValidationError);
}

TEST_CASE("perfect and zero-denominator cases") {
  const std::vector<std::size_t> t{0, 1, 2};
  const MetricsReport perfect = evaluate(t, t, 3);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);
  // Class 2 is never predicted: its precision and F1 are 0 rather than NaN.
  const MetricsReport r = evaluate(t, std::vector<std::size_t>{0, 1, 1}, 3);
  CHECK(r.per_class[2].precision == 0.0);
  CHECK(r.per_class[2].f1 == 0.0);
  CHECK(std::isfinite(r.macro_f1));
}

TEST_CASE("report matches a brute-force tally exactly") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t classes = 2 + rng.below(6);
    const std::size_t n = 1 + rng.below(60);
    std::vector<std::size_t> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.below(classes);
      p[i] = rng.uniform() < 0.6 ? t[i] : rng.below(classes);
    }
    const MetricsReport got = evaluate(t, p, classes);
    const MetricsReport want = tally(t, p, classes);
    REQUIRE(got.n == want.n);
    REQUIRE(got.accuracy == want.accuracy);
    REQUIRE(got.macro_precision == want.macro_precision);
    REQUIRE(got.macro_recall == want.macro_recall);
    REQUIRE(got.macro_f1 == want.macro_f1);
    for (std::size_t k = 0; k < classes; ++k) {
      REQUIRE(got.per_class[k].precision == want.per_class[k].precision);
      REQUIRE(got.per_class[k].recall == want.per_class[k].recall);
      REQUIRE(got.per_class[k].f1 == want.per_class[k].f1);
      REQUIRE(got.per_class[k].support == want.per_class[k].support);
    }
    for (double v : {got.accuracy, got.macro_recall, got.macro_f1}) REQUIRE((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("report csv schema") {
  const std::vector<std::size_t> t{0, 1, 1, 0};
  const std::vector<ReportRow> rows{{"a", evaluate(t, t, 2)},
                                    {"b", evaluate(t, std::vector<std::size_t>{0, 0, 1, 0}, 2)}};
  const std::string csv = report_csv(rows);
  CHECK(csv.rfind("setting,acc,macro_recall,macro_f1,n\n", 0) == 0);
  CHECK(csv.find("a,1,1,1,4\n") != std::string::npos);
  CHECK(csv.find("b,0.75,0.75,") != std::string::npos);
}
