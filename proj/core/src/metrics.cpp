#include "hsimamba/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "hsimamba/errors.hpp"

namespace hsimamba::eval {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ValidationError("confusion matrix needs at least one class");
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::vector<std::uint64_t> counts)
    : classes_(classes), counts_(std::move(counts)) {
  if (classes == 0) throw ValidationError("confusion matrix needs at least one class");
  if (counts_.size() != classes * classes) {
    throw ValidationError("confusion matrix needs " + std::to_string(classes * classes) + " counts, got " +
                          std::to_string(counts_.size()));
  }
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::size_t classes, std::span<const int> truth,
                                                  std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ValidationError("truth and prediction counts differ");
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
  return m;
}

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t count) {
  const auto c = static_cast<int>(classes_);
  if (truth < 0 || truth >= c || predicted < 0 || predicted >= c) {
    throw ValidationError("class id out of range for a " + std::to_string(classes_) + "-class confusion matrix");
  }
  counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(predicted)] += count;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < classes_; ++j) s += at(c, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < classes_; ++i) s += at(i, c);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t c = 0; c < classes_; ++c) s += at(c, c);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto v : counts_) s += v;
  return s;
}

Metrics metrics_from_confusion(const ConfusionMatrix& m) {
  const std::uint64_t total = m.total();
  if (total == 0) throw ValidationError("metrics of an all-zero confusion matrix are undefined");
  const double n = static_cast<double>(total);

  Metrics out;
  out.overall_accuracy = static_cast<double>(m.trace()) / n;

  double recall_sum = 0.0, pe = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < m.classes(); ++c) {
    const std::uint64_t row = m.row_sum(c);
    pe += static_cast<double>(row) * static_cast<double>(m.col_sum(c));
    if (row == 0) {
      out.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      out.excluded_classes.push_back(c);
      continue;
    }
    const double recall = static_cast<double>(m.at(c, c)) / static_cast<double>(row);
    out.per_class.push_back(recall);
    recall_sum += recall;
    ++counted;
  }
  out.average_accuracy = recall_sum / static_cast<double>(counted);
  pe /= n * n;
  if (pe >= 1.0) {
    out.kappa = out.overall_accuracy >= 1.0 ? 1.0 : 0.0;
  } else {
    out.kappa = (out.overall_accuracy - pe) / (1.0 - pe);
  }
  return out;
}

}  // namespace hsimamba::eval
