#include "hsimamba/data.hpp"
#include "hsimamba/errors.hpp"

namespace hsimamba::data {

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto len = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t period = 2 * (len - 1);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < len ? m : period - m);
}

Tensor extract_patch(const ReducedCube& reduced, std::size_t row, std::size_t col, std::size_t patch_size) {
  if (patch_size % 2 == 0) throw ValidationError("patch size must be odd, got " + std::to_string(patch_size));
  if (row >= reduced.height || col >= reduced.width) throw ValidationError("patch centre outside the image");
  const std::size_t d = reduced.components;
  const auto half = static_cast<std::ptrdiff_t>(patch_size / 2);
  Tensor patch({patch_size, patch_size, d});
  for (std::size_t i = 0; i < patch_size; ++i) {
    const std::size_t r = reflect_index(static_cast<std::ptrdiff_t>(row) + static_cast<std::ptrdiff_t>(i) - half,
                                        reduced.height);
    for (std::size_t j = 0; j < patch_size; ++j) {
      const std::size_t c = reflect_index(static_cast<std::ptrdiff_t>(col) + static_cast<std::ptrdiff_t>(j) - half,
                                          reduced.width);
      const double* src = reduced.scores.data().data() + (r * reduced.width + c) * d;
      double* dst = patch.data().data() + (i * patch_size + j) * d;
      std::copy(src, src + d, dst);
    }
  }
  return patch;
}

PatchSet extract_patches(const ReducedCube& reduced, std::span<const std::uint16_t> labels, std::size_t patch_size) {
  if (patch_size % 2 == 0) throw ValidationError("patch size must be odd, got " + std::to_string(patch_size));
  if (labels.size() != reduced.height * reduced.width) throw ValidationError("label map does not match image size");
  PatchSet set;
  set.patch_size = patch_size;
  for (std::size_t r = 0; r < reduced.height; ++r)
    for (std::size_t c = 0; c < reduced.width; ++c) {
      const std::uint16_t l = labels[r * reduced.width + c];
      if (l == 0) continue;
      set.patches.push_back(extract_patch(reduced, r, c, patch_size));
      set.labels.push_back(l);
      set.rows.push_back(r);
      set.cols.push_back(c);
    }
  if (set.patches.empty()) throw ValidationError("no labeled pixels to extract patches from");
  return set;
}

}  // namespace hsimamba::data
