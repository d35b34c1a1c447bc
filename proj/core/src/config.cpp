#include "hsimamba/config.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "hsimamba/errors.hpp"

namespace hsimamba::train {

namespace {

using nlohmann::json;

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{"dataset", "patch_size", "pca_dim",   "route",     "embed_dim",
                                          "depth",   "state_size", "expansion", "epochs",    "batch_size",
                                          "learning_rate", "seed", "train_fraction"};
  return keys;
}

std::size_t get_count(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ValidationError(std::string("config field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

void TrainConfig::validate() const {
  if (patch_size == 0 || patch_size % 2 == 0) throw ValidationError("patch_size must be odd and positive");
  if (pca_dim == 0) throw ValidationError("pca_dim must be positive");
  if (embed_dim == 0 || state_size == 0 || expansion == 0) {
    throw ValidationError("embed_dim, state_size and expansion must be positive");
  }
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw ValidationError("learning_rate must be finite and >= 0");
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ValidationError("train_fraction must lie in (0, 1]");
}

model::ModelConfig TrainConfig::model_config(std::size_t num_classes) const {
  model::ModelConfig m;
  m.patch_size = patch_size;
  m.bands = pca_dim;
  m.embed_dim = embed_dim;
  m.depth = depth;
  m.state_size = state_size;
  m.expansion = expansion;
  m.num_classes = num_classes;
  m.route = route;
  m.validate();
  return m;
}

TrainConfig parse_train_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known_keys().contains(item.key())) throw ValidationError("unknown config key '" + item.key() + "'");
  }

  TrainConfig c;
  try {
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("patch_size")) c.patch_size = get_count(j, "patch_size");
    if (j.contains("pca_dim")) c.pca_dim = get_count(j, "pca_dim");
    if (j.contains("route")) {
      const auto& r = j.at("route");
      c.route = r.is_number_integer() ? routes::route_from_number(r.get<int>())
                                      : routes::parse_route(r.get<std::string>());
    }
    if (j.contains("embed_dim")) c.embed_dim = get_count(j, "embed_dim");
    if (j.contains("depth")) c.depth = get_count(j, "depth");
    if (j.contains("state_size")) c.state_size = get_count(j, "state_size");
    if (j.contains("expansion")) c.expansion = get_count(j, "expansion");
    if (j.contains("epochs")) c.epochs = get_count(j, "epochs");
    if (j.contains("batch_size")) c.batch_size = get_count(j, "batch_size");
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("train_fraction")) c.train_fraction = j.at("train_fraction").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_train_config(text);
}

std::string to_json(const TrainConfig& c) {
  json j;
  j["dataset"] = c.dataset;
  j["patch_size"] = c.patch_size;
  j["pca_dim"] = c.pca_dim;
  j["route"] = static_cast<int>(c.route);
  j["embed_dim"] = c.embed_dim;
  j["depth"] = c.depth;
  j["state_size"] = c.state_size;
  j["expansion"] = c.expansion;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["train_fraction"] = c.train_fraction;
  return j.dump();
}

}  // namespace hsimamba::train
