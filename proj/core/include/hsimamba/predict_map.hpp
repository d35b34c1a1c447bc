#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hsimamba/checkpoint.hpp"
#include "hsimamba/data.hpp"
#include "hsimamba/trainer.hpp"

namespace hsimamba::train {

using Rgb = std::array<std::uint8_t, 3>;

/// Fixed colour for class id c (1-based); class 0 is black. Colours are
/// distinct for every class up to 65535.
Rgb palette_color(std::size_t class_id);

/// H x W grid of predicted 1-based class ids, row-major.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;
};

/// Classifies every pixel of the reduced cube via its patch.
LabelMap predict_map(const Predictor& predictor, const data::ReducedCube& reduced, std::size_t patch_size);
LabelMap predict_map(const ModelCheckpoint& ckpt, const data::HsiCube& cube);

/// Binary P6 pixmap of the map under palette_color.
std::vector<std::uint8_t> encode_ppm(const LabelMap& map);
void write_ppm(const LabelMap& map, const std::filesystem::path& path);

struct Pixmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Rgb> pixels;
};
Pixmap decode_ppm(std::span<const std::uint8_t> bytes);

/// Inverts palette_color for the first `classes` ids; unknown colours throw.
LabelMap labels_from_pixmap(const Pixmap& pixmap, std::size_t classes);

/// The label grid as a one-band HSIC cube whose trailer carries the palette.
data::HsiCube label_map_cube(const LabelMap& map, const std::vector<std::string>& class_names);

}  // namespace hsimamba::train
