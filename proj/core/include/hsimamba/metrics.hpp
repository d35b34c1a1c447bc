#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hsimamba::eval {

/// C x C counts; rows are true classes, columns predictions (both 0-based).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  ConfusionMatrix(std::size_t classes, std::vector<std::uint64_t> counts);

  static ConfusionMatrix from_predictions(std::size_t classes, std::span<const int> truth,
                                          std::span<const int> predicted);

  void add(int truth, int predicted, std::uint64_t count = 1);

  std::size_t classes() const noexcept { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t col_sum(std::size_t c) const;
  std::uint64_t trace() const;
  std::uint64_t total() const;
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct Metrics {
  double overall_accuracy = 0.0;
  double average_accuracy = 0.0;
  double kappa = 0.0;
  /// Per-class recall in class order; NaN for classes with no true samples.
  std::vector<double> per_class;
  /// 0-based classes left out of AA because their row is empty.
  std::vector<std::size_t> excluded_classes;
};

/// OA = trace / total, AA = mean recall over non-empty rows,
/// Kappa = (OA - pe) / (1 - pe) with pe = sum(row_c * col_c) / total^2.
/// When pe == 1 (a single class everywhere) Kappa is reported as 1 if OA is 1.
Metrics metrics_from_confusion(const ConfusionMatrix& m);

}  // namespace hsimamba::eval
