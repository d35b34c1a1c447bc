#include "hsimamba/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "hsimamba/errors.hpp"

namespace hsimamba::train {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "hsimamba-checkpoint-1";

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ckpt) {
  json header;
  header["format"] = kFormat;
  header["config"] = json::parse(to_json(ckpt.config));
  header["class_names"] = ckpt.class_names;
  header["metadata"] = {{"epoch", ckpt.metadata.epoch},
                        {"final_loss", ckpt.metadata.final_loss},
                        {"seed", ckpt.metadata.seed}};
  json tensors = json::array();
  // Running statistics are visited as temporaries, so copy values here.
  std::vector<double> payload;
  model::visit_tensors(ckpt.model.params(), [&](const std::string& name, const Tensor& t, bool trainable) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"trainable", trainable}});
    payload.insert(payload.end(), t.values().begin(), t.values().end());
  });
  header["tensors"] = std::move(tensors);

  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (double v : payload) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw IoError(IoErrorKind::truncated_payload, "checkpoint is shorter than its header length");
  const std::uint64_t len = get_u64(bytes, 0);
  if (len > bytes.size() - 8) throw IoError(IoErrorKind::truncated_payload, "checkpoint header is truncated");

  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::bad_magic, std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != kFormat) {
    throw IoError(IoErrorKind::bad_version, "unrecognised checkpoint format");
  }

  try {
    const TrainConfig config = parse_train_config(header.at("config").dump());
    auto class_names = header.at("class_names").get<std::vector<std::string>>();
    const auto& meta = header.at("metadata");
    TrainingMetadata metadata;
    metadata.epoch = meta.at("epoch").get<std::size_t>();
    metadata.final_loss = meta.at("final_loss").get<double>();
    metadata.seed = meta.at("seed").get<std::uint64_t>();

    const auto mc = config.model_config(class_names.size());
    model::ModelParams params = model::ModelParams::init(mc, 0);

    const auto& declared = header.at("tensors");
    std::uint64_t expected = 0;
    for (const auto& t : declared) expected += shape_size(t.at("shape").get<Shape>());
    if (bytes.size() - 8 - len != expected * 8) {
      throw IoError(IoErrorKind::truncated_payload, "checkpoint payload holds " +
                                                        std::to_string((bytes.size() - 8 - len) / 8) +
                                                        " values but the header declares " + std::to_string(expected));
    }

    std::size_t index = 0, pos = 8 + len;
    model::visit_tensors(params, [&](const std::string& name, Tensor& t, bool) {
      if (index >= declared.size()) throw IoError(IoErrorKind::bad_trailer, "checkpoint is missing tensor " + name);
      const auto& d = declared[index++];
      if (d.at("name").get<std::string>() != name || d.at("shape").get<Shape>() != t.shape()) {
        throw IoError(IoErrorKind::bad_trailer, "checkpoint tensor " + d.at("name").get<std::string>() +
                                                    " does not match the model's " + name + " " +
                                                    shape_string(t.shape()));
      }
      for (auto& v : t.data()) {
        v = std::bit_cast<double>(get_u64(bytes, pos));
        pos += 8;
      }
    });
    if (index != declared.size()) throw IoError(IoErrorKind::bad_trailer, "checkpoint declares extra tensors");
    return ModelCheckpoint{config, std::move(class_names), metadata, model::Model(mc, std::move(params))};
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::bad_trailer, std::string("malformed checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoErrorKind::write_failed, "failed writing " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace hsimamba::train
