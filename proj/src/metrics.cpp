#include "pseudolab/metrics.hpp"

#include "pseudolab/error.hpp"
#include "pseudolab/io.hpp"

namespace pseudolab::metrics {

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::size_t count) {
  if (truth >= classes_ || pred >= classes_) {
    throw ValidationError("confusion matrix entry (" + std::to_string(truth) + ", " +
                          std::to_string(pred) + ") outside " + std::to_string(classes_) +
                          " classes");
  }
  counts_[truth * classes_ + pred] += count;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < classes_; ++i) s += at(i, i);
  return s;
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < classes_; ++t) s += at(t, pred);
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                 std::span<const std::size_t> pred, std::size_t classes) {
  if (truth.size() != pred.size()) {
    throw ValidationError("confusion matrix: " + std::to_string(truth.size()) + " true labels vs " +
                          std::to_string(pred.size()) + " predictions");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return cm;
}

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport compute_report(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw ValidationError("cannot report metrics for an empty confusion matrix");
  MetricsReport r;
  r.n = total;
  r.accuracy = ratio(cm.trace(), total);
  r.micro_precision = r.micro_recall = r.micro_f1 = r.accuracy;
  std::size_t present = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    ClassMetrics m;
    m.support = cm.row_sum(c);
    m.recall = ratio(cm.at(c, c), m.support);
    m.precision = ratio(cm.at(c, c), cm.col_sum(c));
    const double pr = m.precision + m.recall;
    m.f1 = pr == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / pr;
    if (m.support > 0) {
      ++present;
      r.macro_precision += m.precision;
      r.macro_recall += m.recall;
      r.macro_f1 += m.f1;
    }
    r.per_class.push_back(m);
  }
  r.macro_precision /= static_cast<double>(present);
  r.macro_recall /= static_cast<double>(present);
  r.macro_f1 /= static_cast<double>(present);
  return r;
}

MetricsReport evaluate(std::span<const std::size_t> truth, std::span<const std::size_t> pred,
                       std::size_t classes) {
  return compute_report(confusion_matrix(truth, pred, classes));
}

std::string report_csv(std::span<const ReportRow> rows) {
  io::CsvWriter csv({"setting", "acc", "macro_recall", "macro_f1", "n"});
  for (const auto& row : rows) {
    csv.row(row.setting, row.report.accuracy, row.report.macro_recall, row.report.macro_f1,
            row.report.n);
  }
  return csv.str();
}

}  // namespace pseudolab::metrics
