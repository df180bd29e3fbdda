#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pseudolab::metrics {

// counts[t][p]: samples of true class t predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes)
      : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  void add(std::size_t truth, std::size_t pred, std::size_t count = 1);
  std::size_t total() const;
  std::size_t trace() const;
  std::size_t row_sum(std::size_t truth) const;
  std::size_t col_sum(std::size_t pred) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

// Throws ValidationError on length mismatch or labels >= classes.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                 std::span<const std::size_t> pred, std::size_t classes);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // true samples of the class
};

struct MetricsReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  // Single-label micro averages all equal accuracy; emitted for transparency.
  double micro_precision = 0.0;
  double micro_recall = 0.0;
  double micro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  std::size_t n = 0;
};

// Zero denominators give 0. Macro averages run over classes with support > 0.
// Throws ValidationError for an empty matrix.
MetricsReport compute_report(const ConfusionMatrix& cm);

MetricsReport evaluate(std::span<const std::size_t> truth, std::span<const std::size_t> pred,
                       std::size_t classes);

struct ReportRow {
  std::string setting;
  MetricsReport report;
};

// setting,acc,macro_recall,macro_f1,n
std::string report_csv(std::span<const ReportRow> rows);

}  // namespace pseudolab::metrics
