#include "cardio/config.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "cardio/embedding.hpp"
#include "cardio/json_io.hpp"

namespace cardio {

void ModelConfig::validate() const {
  if (classes < 2) throw Error("config: classes must be at least 2");
  if (timestamps == 0 || channels == 0) throw Error("config: timestamps and channels must be positive");
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw Error("config: d_model (" + std::to_string(d_model) + ") must be a positive multiple of heads (" +
                std::to_string(heads) + ")");
  }
  if (d_model % 2 != 0) throw Error("config: d_model must be even for the sinusoidal table");
  if (ff_width == 0) throw Error("config: ff_width must be positive");
  if (augmentations.empty()) throw Error("config: augmentation pool must not be empty");
  if (dropout < 0.0 || dropout >= 1.0 || attention_dropout < 0.0 || attention_dropout >= 1.0) {
    throw Error("config: dropout rates must lie in [0, 1)");
  }
  const auto gran = GranularityConfig::from_lengths(timestamps, patch_lengths);
  if (positional_rows != 0 && positional_rows < gran.max_patches() + 1) {
    throw Error("config: positional table has " + std::to_string(positional_rows) +
                " rows but routers need " + std::to_string(gran.max_patches() + 1));
  }
}

std::size_t ModelConfig::resolved_positional_rows() const {
  if (positional_rows != 0) return positional_rows;
  return GranularityConfig::from_lengths(timestamps, patch_lengths).total_patches() + 1;
}

std::string to_string(HeadPooling p) { return p == HeadPooling::mean ? "mean" : "flatten"; }
std::string to_string(PatchEncoder e) { return e == PatchEncoder::residual ? "residual" : "linear"; }

HeadPooling parse_head_pooling(const std::string& text) {
  if (text == "mean") return HeadPooling::mean;
  if (text == "flatten") return HeadPooling::flatten;
  throw Error("config: head pooling must be 'mean' or 'flatten', got '" + text + "'");
}

PatchEncoder parse_patch_encoder(const std::string& text) {
  if (text == "residual") return PatchEncoder::residual;
  if (text == "linear") return PatchEncoder::linear;
  throw Error("config: patch encoder must be 'residual' or 'linear', got '" + text + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::string body = text;
  body.erase(std::remove_if(body.begin(), body.end(),
                            [](char c) { return c == '{' || c == '}' || c == ' '; }),
             body.end());
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    const std::size_t comma = std::min(body.find(',', pos), body.size());
    const std::string item = body.substr(pos, comma - pos);
    std::size_t v = 0;
    auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw Error("config: bad integer list '" + text + "'");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

namespace {
bool ptb_shaped(std::size_t classes, std::size_t channels, std::size_t timestamps) {
  return classes == 2 && channels == 15 && timestamps == 300;
}
}  // namespace

std::vector<AugmentationSpec> default_augmentation_pool(std::size_t classes, std::size_t channels,
                                                        std::size_t timestamps) {
  if (ptb_shaped(classes, channels, timestamps)) return parse_augmentation_pool("{drop0.5}");
  return parse_augmentation_pool("{jitter0.2, scale0.2, drop0.5}");
}

std::size_t default_batch_size(std::size_t classes, std::size_t channels, std::size_t timestamps) {
  return ptb_shaped(classes, channels, timestamps) ? 32 : 16;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const ModelConfig& c) {
  return {{"timestamps", c.timestamps},
          {"channels", c.channels},
          {"classes", c.classes},
          {"patch_lengths", c.patch_lengths},
          {"d_model", c.d_model},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ff_width", c.ff_width},
          {"positional_rows", c.positional_rows},
          {"augmentations", format_augmentation_pool(c.augmentations)},
          {"head_pooling", to_string(c.head_pooling)},
          {"head_includes_routers", c.head_includes_routers},
          {"patch_encoder", to_string(c.patch_encoder)},
          {"dropout", c.dropout},
          {"attention_dropout", c.attention_dropout},
          {"attention_scale_multiplier", c.attention_scale_multiplier}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "timestamps", "channels",      "classes",       "patch_lengths",
      "d_model",    "layers",        "heads",         "ff_width",
      "positional_rows", "augmentations", "head_pooling", "head_includes_routers",
      "patch_encoder",   "dropout",       "attention_dropout", "attention_scale_multiplier"};
  if (!j.is_object()) throw FormatError("model config: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw FormatError("model config: unknown key '" + key + "'");
  }
  ModelConfig c;
  try {
    c.timestamps = j.value("timestamps", c.timestamps);
    c.channels = j.value("channels", c.channels);
    c.classes = j.value("classes", c.classes);
    c.patch_lengths = j.value("patch_lengths", c.patch_lengths);
    c.d_model = j.value("d_model", c.d_model);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ff_width = j.value("ff_width", c.ff_width);
    c.positional_rows = j.value("positional_rows", c.positional_rows);
    if (j.contains("augmentations")) {
      c.augmentations = parse_augmentation_pool(j["augmentations"].get<std::string>());
    }
    if (j.contains("head_pooling")) c.head_pooling = parse_head_pooling(j["head_pooling"]);
    c.head_includes_routers = j.value("head_includes_routers", c.head_includes_routers);
    if (j.contains("patch_encoder")) c.patch_encoder = parse_patch_encoder(j["patch_encoder"]);
    c.dropout = j.value("dropout", c.dropout);
    c.attention_dropout = j.value("attention_dropout", c.attention_dropout);
    c.attention_scale_multiplier = j.value("attention_scale_multiplier", c.attention_scale_multiplier);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  return c;
}

}  // namespace cardio
