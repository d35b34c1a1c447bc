#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <json.hpp>

#include "hsimamba/data.hpp"
#include "hsimamba/errors.hpp"

namespace hsimamba::data {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'I', 'C'};
constexpr std::uint32_t kVersion = 1;
// Sanity bound on H*W*V; larger headers are treated as corrupt.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::uint64_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw IoError(IoErrorKind::truncated_payload, std::string("truncated payload while reading ") + what);
    }
  }
  std::uint16_t u16() {
    need(2, "label");
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void HsiCube::validate() const {
  if (height == 0 || width == 0 || bands == 0) throw ValidationError("cube extents must be positive");
  if (radiance.size() != height * width * bands) throw ValidationError("radiance size does not match H*W*V");
  if (labels.size() != height * width) throw ValidationError("label map size does not match H*W");
  for (float v : radiance) {
    if (!std::isfinite(v)) throw ValidationError("radiance contains a non-finite value");
  }
  for (std::uint16_t l : labels) {
    if (l > class_names.size()) {
      throw ValidationError("label " + std::to_string(l) + " exceeds class count " +
                            std::to_string(class_names.size()));
    }
  }
}

std::vector<std::uint8_t> encode_cube(const HsiCube& cube) {
  cube.validate();
  for (std::size_t e : {cube.height, cube.width, cube.bands}) {
    if (e > std::numeric_limits<std::uint32_t>::max()) throw ValidationError("cube extent exceeds 32 bits");
  }
  std::vector<std::uint8_t> out;
  out.reserve(24 + cube.radiance.size() * 4 + cube.labels.size() * 2 + 256);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(cube.height));
  put_u32(out, static_cast<std::uint32_t>(cube.width));
  put_u32(out, static_cast<std::uint32_t>(cube.bands));
  for (std::size_t b = 0; b < cube.bands; ++b)
    for (std::size_t r = 0; r < cube.height; ++r)
      for (std::size_t c = 0; c < cube.width; ++c) put_u32(out, std::bit_cast<std::uint32_t>(cube.at(r, c, b)));
  for (std::uint16_t l : cube.labels) put_u16(out, l);

  nlohmann::json trailer;
  trailer["class_names"] = cube.class_names;
  trailer["provenance"] = nlohmann::json::parse(cube.provenance.empty() ? "{}" : cube.provenance);
  const std::string text = trailer.dump();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  return out;
}

HsiCube decode_cube(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError(IoErrorKind::bad_magic, "bad magic: not an HSIC file");
  }
  in.take(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kVersion) {
    throw IoError(IoErrorKind::bad_version, "unsupported HSIC version " + std::to_string(version));
  }
  const std::uint64_t h = in.u32("height"), w = in.u32("width"), v = in.u32("bands");
  if (h == 0 || w == 0 || v == 0) throw IoError(IoErrorKind::extent_overflow, "extent overflow: zero extent in header");
  if (h * w > kMaxElements || h * w * v > kMaxElements) {
    throw IoError(IoErrorKind::extent_overflow, "extent overflow: " + std::to_string(h) + "x" + std::to_string(w) +
                                                    "x" + std::to_string(v) + " is too large");
  }
  HsiCube cube;
  cube.height = h;
  cube.width = w;
  cube.bands = v;
  in.need(h * w * v * 4 + h * w * 2, "radiance and labels");
  cube.radiance.resize(h * w * v);
  for (std::size_t b = 0; b < v; ++b)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        cube.radiance[(r * w + c) * v + b] = std::bit_cast<float>(in.u32("radiance"));
      }
  cube.labels.resize(h * w);
  for (auto& l : cube.labels) l = in.u16();
  const std::uint32_t len = in.u32("trailer length");
  const auto text = in.take(len, "trailer");
  try {
    const auto trailer = nlohmann::json::parse(text.begin(), text.end());
    cube.class_names = trailer.at("class_names").get<std::vector<std::string>>();
    cube.provenance = trailer.contains("provenance") ? trailer["provenance"].dump() : "{}";
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::bad_trailer, std::string("malformed HSIC trailer: ") + e.what());
  }
  try {
    cube.validate();
  } catch (const ValidationError& e) {
    throw IoError(IoErrorKind::bad_trailer, std::string("inconsistent HSIC payload: ") + e.what());
  }
  return cube;
}

void save_cube(const HsiCube& cube, const std::filesystem::path& path) {
  const auto bytes = encode_cube(cube);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoErrorKind::write_failed, "failed writing " + path.string());
}

HsiCube load_cube(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_cube(bytes);
}

}  // namespace hsimamba::data
