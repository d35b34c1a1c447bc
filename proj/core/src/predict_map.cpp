#include "hsimamba/predict_map.hpp"

#include <cctype>
#include <fstream>
#include <map>

#include <json.hpp>

#include "hsimamba/errors.hpp"

namespace hsimamba::train {

namespace {

constexpr std::array<Rgb, 16> kBase{{{230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
                                     {245, 130, 48},  {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
                                     {210, 245, 60},  {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
                                     {170, 110, 40},  {255, 250, 200}, {128, 0, 0},    {170, 255, 195}}};

std::size_t parse_number(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw IoError(IoErrorKind::bad_trailer, "malformed PPM header");
  std::size_t v = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
  return v;
}

}  // namespace

Rgb palette_color(std::size_t class_id) {
  if (class_id == 0) return {0, 0, 0};
  const std::size_t i = class_id - 1;
  if (i < kBase.size()) return kBase[i];
  // Remaining ids: (low byte, high byte, 129); no base colour has blue 129.
  const std::size_t j = i - kBase.size();
  return {static_cast<std::uint8_t>(j & 0xff), static_cast<std::uint8_t>((j >> 8) & 0xff), 129};
}

LabelMap predict_map(const Predictor& predictor, const data::ReducedCube& reduced, std::size_t patch_size) {
  LabelMap map{reduced.height, reduced.width, std::vector<std::uint16_t>(reduced.height * reduced.width)};
  constexpr std::size_t kChunk = 128;
  std::vector<Tensor> batch;
  std::vector<std::size_t> pixels;
  auto flush = [&] {
    if (batch.empty()) return;
    const auto pred = predictor(batch, pixels);
    if (pred.size() != batch.size()) throw ValidationError("predictor returned the wrong number of labels");
    for (std::size_t i = 0; i < pred.size(); ++i) map.labels[pixels[i]] = static_cast<std::uint16_t>(pred[i] + 1);
    batch.clear();
    pixels.clear();
  };
  for (std::size_t r = 0; r < reduced.height; ++r)
    for (std::size_t c = 0; c < reduced.width; ++c) {
      batch.push_back(data::extract_patch(reduced, r, c, patch_size));
      pixels.push_back(r * reduced.width + c);
      if (batch.size() == kChunk) flush();
    }
  flush();
  return map;
}

LabelMap predict_map(const ModelCheckpoint& ckpt, const data::HsiCube& cube) {
  if (cube.num_classes() != ckpt.num_classes()) {
    throw ValidationError("dataset has " + std::to_string(cube.num_classes()) + " classes but the checkpoint has " +
                          std::to_string(ckpt.num_classes()));
  }
  const auto reduced = data::pca_reduce(cube, ckpt.config.pca_dim);
  return predict_map(model_predictor(ckpt.model), reduced, ckpt.config.patch_size);
}

std::vector<std::uint8_t> encode_ppm(const LabelMap& map) {
  const std::string header = "P6\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + map.labels.size() * 3);
  for (std::uint16_t l : map.labels) {
    const Rgb c = palette_color(l);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

void write_ppm(const LabelMap& map, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(map);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoErrorKind::write_failed, "failed writing " + path.string());
}

Pixmap decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw IoError(IoErrorKind::bad_magic, "not a P6 pixmap");
  std::size_t pos = 2;
  Pixmap pm;
  pm.width = parse_number(bytes, pos);
  pm.height = parse_number(bytes, pos);
  const std::size_t maxval = parse_number(bytes, pos);
  if (maxval != 255) throw IoError(IoErrorKind::bad_version, "only 8-bit pixmaps are supported");
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos || bytes.size() - pos < pm.width * pm.height * 3) {
    throw IoError(IoErrorKind::truncated_payload, "pixmap raster is truncated");
  }
  pm.pixels.resize(pm.width * pm.height);
  for (auto& px : pm.pixels) {
    px = {bytes[pos], bytes[pos + 1], bytes[pos + 2]};
    pos += 3;
  }
  return pm;
}

LabelMap labels_from_pixmap(const Pixmap& pixmap, std::size_t classes) {
  std::map<Rgb, std::uint16_t> inverse;
  for (std::size_t c = 0; c <= classes; ++c) inverse.emplace(palette_color(c), static_cast<std::uint16_t>(c));
  LabelMap map{pixmap.height, pixmap.width, {}};
  map.labels.reserve(pixmap.pixels.size());
  for (const Rgb& px : pixmap.pixels) {
    const auto it = inverse.find(px);
    if (it == inverse.end()) throw ValidationError("pixmap contains a colour outside the palette");
    map.labels.push_back(it->second);
  }
  return map;
}

data::HsiCube label_map_cube(const LabelMap& map, const std::vector<std::string>& class_names) {
  data::HsiCube cube;
  cube.height = map.height;
  cube.width = map.width;
  cube.bands = 1;
  cube.labels = map.labels;
  cube.radiance.assign(map.labels.begin(), map.labels.end());
  cube.class_names = class_names;
  nlohmann::json palette = nlohmann::json::array();
  for (std::size_t c = 0; c <= class_names.size(); ++c) {
    const Rgb rgb = palette_color(c);
    palette.push_back({rgb[0], rgb[1], rgb[2]});
  }
  cube.provenance = nlohmann::json{{"kind", "prediction_map"}, {"palette", palette}}.dump();
  return cube;
}

}  // namespace hsimamba::train
