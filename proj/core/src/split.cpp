#include <algorithm>
#include <cmath>
#include <random>

#include "hsimamba/data.hpp"
#include "hsimamba/errors.hpp"

namespace hsimamba::data {

std::size_t train_count(std::size_t class_total, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("train fraction must lie in (0, 1]");
  if (class_total == 0) return 0;
  // The epsilon keeps exact halves like 1330 * 0.05 = 66.5 rounding up.
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(class_total) + 0.5 + 1e-9));
  return std::clamp<std::size_t>(n, 1, class_total);
}

SplitSpec stratified_split(std::span<const int> labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("train fraction must lie in (0, 1]");
  int max_label = 0;
  for (int l : labels) {
    if (l < 1) throw ValidationError("split labels must be class ids >= 1");
    max_label = std::max(max_label, l);
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i] - 1)].push_back(i);

  SplitSpec split;
  split.fraction = fraction;
  split.seed = seed;
  std::mt19937_64 rng(seed);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t n_train = train_count(members.size(), fraction);
    split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
    split.train_per_class.push_back(n_train);
    split.test_per_class.push_back(members.size() - n_train);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace hsimamba::data
