#include "fpliif/config_io.hpp"

#include <fstream>
#include <initializer_list>
#include <string>

#include "fpliif/errors.hpp"

namespace fpliif {

namespace {

void reject_unknown(const Json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + "." + key + ": " + e.what());
  }
}

}  // namespace

void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"in_channels", c.in_channels},
           {"base_width", c.base_width},
           {"group_sizes", c.group_sizes},
           {"rcmlp_dims", c.rcmlp_dims},
           {"head_width", c.head_width},
           {"head_depth", c.head_depth},
           {"num_classes", c.num_classes},
           {"decode_mode", to_string(c.decode_mode)},
           {"input_resolution", c.input_resolution},
           {"input_mean", c.input_mean},
           {"input_std", c.input_std}};
}

void from_json(const Json& j, ModelConfig& c) {
  constexpr const char* what = "model config";
  reject_unknown(j,
                 {"in_channels", "base_width", "group_sizes", "rcmlp_dims", "head_width",
                  "head_depth", "num_classes", "decode_mode", "input_resolution", "input_mean",
                  "input_std"},
                 what);
  read(j, "in_channels", c.in_channels, what);
  read(j, "base_width", c.base_width, what);
  read(j, "group_sizes", c.group_sizes, what);
  read(j, "rcmlp_dims", c.rcmlp_dims, what);
  read(j, "head_width", c.head_width, what);
  read(j, "head_depth", c.head_depth, what);
  read(j, "num_classes", c.num_classes, what);
  std::string mode = to_string(c.decode_mode);
  read(j, "decode_mode", mode, what);
  c.decode_mode = decode_mode_from_string(mode);
  read(j, "input_resolution", c.input_resolution, what);
  read(j, "input_mean", c.input_mean, what);
  read(j, "input_std", c.input_std, what);
}

void to_json(Json& j, const LossConfig& c) {
  j = Json{{"lambda", c.lambda},
           {"tau", c.tau},
           {"include_background_in_loss", c.include_background_in_loss}};
}

void from_json(const Json& j, LossConfig& c) {
  constexpr const char* what = "loss config";
  reject_unknown(j, {"lambda", "tau", "include_background_in_loss"}, what);
  read(j, "lambda", c.lambda, what);
  read(j, "tau", c.tau, what);
  read(j, "include_background_in_loss", c.include_background_in_loss, what);
}

void to_json(Json& j, const Range& r) { j = Json::array({r.lo, r.hi}); }

void from_json(const Json& j, Range& r) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("range: expected [lo, hi]");
  r.lo = j[0].get<double>();
  r.hi = j[1].get<double>();
  if (r.lo > r.hi) throw ConfigError("range: lo exceeds hi");
}

void to_json(Json& j, const AugmentPolicy& p) {
  j = Json{{"rotation_deg", p.rotation_deg}, {"shear_deg", p.shear_deg},
           {"scale", p.scale},               {"crop", p.crop},
           {"brightness", p.brightness},     {"contrast", p.contrast},
           {"saturation", p.saturation},     {"hue", p.hue}};
}

void from_json(const Json& j, AugmentPolicy& p) {
  constexpr const char* what = "augment policy";
  reject_unknown(j,
                 {"rotation_deg", "shear_deg", "scale", "crop", "brightness", "contrast",
                  "saturation", "hue"},
                 what);
  read(j, "rotation_deg", p.rotation_deg, what);
  read(j, "shear_deg", p.shear_deg, what);
  read(j, "scale", p.scale, what);
  read(j, "crop", p.crop, what);
  read(j, "brightness", p.brightness, what);
  read(j, "contrast", p.contrast, what);
  read(j, "saturation", p.saturation, what);
  read(j, "hue", p.hue, what);
}

void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"initial_lr", c.initial_lr},
           {"decay_factor", c.decay_factor},
           {"decay_every", c.decay_every},
           {"min_lr", c.min_lr},
           {"loss", c.loss},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every},
           {"augment", c.augment},
           {"augment_policy", c.augment_policy},
           {"eval_batch", c.eval_batch},
           {"deterministic", c.deterministic},
           {"threads", c.threads}};
}

void from_json(const Json& j, TrainConfig& c) {
  constexpr const char* what = "train config";
  reject_unknown(j,
                 {"epochs", "batch_size", "initial_lr", "decay_factor", "decay_every", "min_lr",
                  "loss", "seed", "checkpoint_every", "augment", "augment_policy", "eval_batch",
                  "deterministic", "threads"},
                 what);
  read(j, "epochs", c.epochs, what);
  read(j, "batch_size", c.batch_size, what);
  read(j, "initial_lr", c.initial_lr, what);
  read(j, "decay_factor", c.decay_factor, what);
  read(j, "decay_every", c.decay_every, what);
  read(j, "min_lr", c.min_lr, what);
  if (j.contains("loss")) from_json(j.at("loss"), c.loss);
  read(j, "seed", c.seed, what);
  read(j, "checkpoint_every", c.checkpoint_every, what);
  read(j, "augment", c.augment, what);
  if (j.contains("augment_policy")) from_json(j.at("augment_policy"), c.augment_policy);
  read(j, "eval_batch", c.eval_batch, what);
  read(j, "deterministic", c.deterministic, what);
  read(j, "threads", c.threads, what);
}

RunFileConfig read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  reject_unknown(j, {"model", "train"}, "config file");
  RunFileConfig out;
  if (j.contains("model")) from_json(j.at("model"), out.model);
  if (j.contains("train")) from_json(j.at("train"), out.train);
  return out;
}

}  // namespace fpliif
