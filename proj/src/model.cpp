#include "cardio/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cardio/binary.hpp"
#include "cardio/json_io.hpp"

namespace cardio {

namespace fs = std::filesystem;
using nlohmann::json;

template <typename T>
Cardioformer<T>::Cardioformer(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  granularity_ = GranularityConfig::from_lengths(config_.timestamps, config_.patch_lengths);
}

template <typename T>
std::size_t Cardioformer<T>::representation_width() const {
  const std::size_t D = config_.d_model, n = granularity_.size();
  std::size_t width = config_.head_pooling == HeadPooling::mean ? n * D : granularity_.total_patches() * D;
  if (config_.head_includes_routers) width += n * D;
  return width;
}

template <typename T>
ParameterStore<T> Cardioformer<T>::init_parameters(std::uint64_t seed) const {
  Rng rng(seed);
  ParameterStore<T> store;
  init_embedding_parameters(store, config_, rng);
  for (std::size_t m = 0; m < config_.layers; ++m) {
    init_layer_parameters(store, m, config_.d_model, config_.ff_width, rng);
  }
  store.add("head.weight", xavier_uniform<T>(representation_width(), config_.classes, rng),
            ParamKind::trainable);
  store.add("head.bias", Tensor<T>({config_.classes}), ParamKind::trainable);
  return store;
}

template <typename T>
std::vector<GranularityBundle<T>> Cardioformer<T>::encode(ParameterBinding<T>& params,
                                                          Var<T> windows, Mode mode, Rng* rng,
                                                          AttentionProbe* probe,
                                                          std::size_t layers) const {
  const bool training = mode == Mode::train;
  auto bundles = embed(params, windows, config_, granularity_, EmbeddingContext{training});
  const LayerContext ctx{config_.heads, config_.attention_scale_multiplier, config_.dropout,
                         config_.attention_dropout, training, rng, probe};
  for (std::size_t m = 0; m < std::min(layers, config_.layers); ++m) {
    bundles = encoder_layer(params, m, bundles, ctx);
  }
  return bundles;
}

template <typename T>
Var<T> Cardioformer<T>::classify(ParameterBinding<T>& params,
                                 const std::vector<GranularityBundle<T>>& bundles) const {
  Graph<T>& graph = *bundles.front().sequence.graph();
  typename Graph<T>::Scope scope(graph, "head");
  const std::size_t B = bundles.front().sequence.shape()[0], D = config_.d_model;
  std::vector<Var<T>> parts;
  for (const auto& b : bundles) {
    if (config_.head_pooling == HeadPooling::mean) {
      parts.push_back(mean(b.token_rows(), 1));
    } else {
      parts.push_back(reshape(b.token_rows(), {B, b.tokens * D}));
    }
  }
  if (config_.head_includes_routers) {
    for (const auto& b : bundles) parts.push_back(reshape(b.router(), {B, D}));
  }
  Var<T> h = parts.size() == 1 ? parts.front() : concat(parts, 1);
  return conv1x1(h, params("head.weight"), params("head.bias"));
}

template <typename T>
Var<T> Cardioformer<T>::forward(ParameterBinding<T>& params, const Tensor<T>& windows, Mode mode,
                                Rng* rng, AttentionProbe* probe) const {
  const Shape& s = windows.shape();
  if (s.size() != 3 || s[1] != config_.timestamps || s[2] != config_.channels) {
    throw ShapeError("forward: expected windows [B, " + std::to_string(config_.timestamps) + ", " +
                     std::to_string(config_.channels) + "], got " + shape_string(s));
  }
  if (mode == Mode::train && rng == nullptr) throw Error("forward: train mode requires an rng");
  Graph<T>& graph = params.graph();
  Var<T> input;
  if (mode == Mode::train) {
    const std::size_t B = s[0], per = s[1] * s[2];
    Tensor<T> augmented(s);
    for (std::size_t b = 0; b < B; ++b) {
      Tensor<T> w({s[1], s[2]}, std::vector<T>(windows.data() + b * per, windows.data() + (b + 1) * per));
      const Tensor<T> a = select_and_apply(w, config_.augmentations, *rng, true);
      std::copy(a.data(), a.data() + per, augmented.data() + b * per);
    }
    input = graph.constant(std::move(augmented));
  } else {
    input = graph.constant(windows);
  }
  return classify(params, encode(params, input, mode, rng, probe));
}

template <typename T>
Tensor<T> Cardioformer<T>::predict(ParameterStore<T>& params, const Tensor<T>& windows) const {
  Graph<T> graph;
  ParameterBinding<T> binding(graph, params);
  return forward(binding, windows, Mode::eval, nullptr).value();
}

template <typename T>
Tensor<T> stack_windows(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error("stack_windows: empty batch");
  const Shape& ws = samples.at(indices.front()).window.shape();
  const std::size_t per = element_count(ws);
  Tensor<T> out({indices.size(), ws[0], ws[1]});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& w = samples.at(indices[b]).window;
    if (w.shape() != ws) {
      throw ShapeError("stack_windows: sample '" + samples[indices[b]].id + "' has shape " +
                       shape_string(w.shape()) + ", expected " + shape_string(ws));
    }
    std::transform(w.data(), w.data() + per, out.data() + b * per,
                   [](float v) { return static_cast<T>(v); });
  }
  return out;
}

std::vector<std::vector<double>> softmax_rows(const Tensor<float>& logits) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<std::vector<double>> out(B, std::vector<double>(K));
  for (std::size_t b = 0; b < B; ++b) {
    double mx = logits(b, 0);
    for (std::size_t k = 1; k < K; ++k) mx = std::max<double>(mx, logits(b, k));
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += out[b][k] = std::exp(logits(b, k) - mx);
    for (auto& v : out[b]) v /= z;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kMagic = "CARDIOFORMER-CKPT";
constexpr int kVersion = 1;

std::string kind_name(ParamKind k) { return k == ParamKind::trainable ? "trainable" : "buffer"; }

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  const auto& entries = ckpt.parameters.entries();
  const bool has_moments = !ckpt.adam_m.empty();
  if (has_moments && (ckpt.adam_m.size() != entries.size() || ckpt.adam_v.size() != entries.size())) {
    throw Error("save_checkpoint: optimizer moments do not match the parameters");
  }
  json directory = json::array();
  std::vector<const Tensor<float>*> payloads;
  std::size_t offset = 0;
  auto add = [&](const std::string& name, const std::string& kind, const Tensor<float>& t) {
    directory.push_back({{"name", name}, {"kind", kind}, {"shape", t.shape()}, {"offset", offset},
                         {"count", t.size()}});
    payloads.push_back(&t);
    offset += t.size() * 4;
  };
  for (const auto& e : entries) add(e.name, kind_name(e.kind), e.value);
  if (has_moments) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].kind != ParamKind::trainable) continue;
      add("adam.m/" + entries[i].name, "adam_m", ckpt.adam_m[i]);
      add("adam.v/" + entries[i].name, "adam_v", ckpt.adam_v[i]);
    }
  }
  const json header = {{"config", to_json(ckpt.config)},
                       {"state",
                        {{"epoch", ckpt.state.epoch},
                         {"best_val_f1", ckpt.state.best_val_f1},
                         {"seed", ckpt.state.seed},
                         {"adam_step", ckpt.state.adam_step}}},
                       {"tensors", directory},
                       {"payload_bytes", offset}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("save_checkpoint: cannot open " + path.string());
  out << kMagic << ' ' << kVersion << '\n' << text.size() << '\n' << text;
  for (const auto* t : payloads) {
    const auto bytes = encode_le_f32(t->values());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw Error("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint " + path.string() + ": cannot open");
  const std::string where = "checkpoint " + path.string();

  std::string magic_line;
  std::getline(in, magic_line);
  std::istringstream ml(magic_line);
  std::string magic;
  int version = 0;
  ml >> magic >> version;
  if (magic != kMagic) throw FormatError(where + ": not a checkpoint file");
  if (version != kVersion) {
    throw FormatError(where + ": version mismatch (file " + std::to_string(version) + ", expected " +
                      std::to_string(kVersion) + ")");
  }
  std::string length_line;
  std::getline(in, length_line);
  std::size_t header_len = 0;
  try {
    header_len = std::stoull(length_line);
  } catch (const std::exception&) {
    throw FormatError(where + ": bad header length");
  }
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw FormatError(where + ": truncated header");
  }
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(where + ": corrupt header: " + e.what());
  }

  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Checkpoint ckpt;
  try {
    ckpt.config = model_config_from_json(header.at("config"));
    const json& st = header.at("state");
    ckpt.state.epoch = st.at("epoch").get<std::size_t>();
    ckpt.state.best_val_f1 = st.at("best_val_f1").get<double>();
    ckpt.state.seed = st.at("seed").get<std::uint64_t>();
    ckpt.state.adam_step = st.at("adam_step").get<std::uint64_t>();
    if (payload.size() != header.at("payload_bytes").get<std::size_t>()) {
      throw FormatError(where + ": payload is " + std::to_string(payload.size()) + " bytes, header says " +
                        std::to_string(header.at("payload_bytes").get<std::size_t>()) + " (truncated?)");
    }
    std::map<std::string, Tensor<float>> moments;
    for (const json& d : header.at("tensors")) {
      const auto name = d.at("name").get<std::string>();
      const auto kind = d.at("kind").get<std::string>();
      const auto shape = d.at("shape").get<Shape>();
      const auto off = d.at("offset").get<std::size_t>();
      const auto count = d.at("count").get<std::size_t>();
      if (count != element_count(shape)) {
        throw FormatError(where + ": tensor '" + name + "' has " + std::to_string(count) +
                          " elements for shape " + shape_string(shape));
      }
      if (off > payload.size() || count * 4 > payload.size() - off) {
        throw FormatError(where + ": tensor '" + name + "' extends past the end of the file");
      }
      Tensor<float> t(shape, decode_le_f32(std::span<const char>(payload.data() + off, count * 4)));
      if (kind == "trainable" || kind == "buffer") {
        ckpt.parameters.add(name, std::move(t), kind == "trainable" ? ParamKind::trainable : ParamKind::buffer);
      } else if (kind == "adam_m" || kind == "adam_v") {
        moments.emplace(name, std::move(t));
      } else {
        throw FormatError(where + ": tensor '" + name + "' has unknown kind '" + kind + "'");
      }
    }
    if (!moments.empty()) {
      for (const auto& e : ckpt.parameters.entries()) {
        if (e.kind != ParamKind::trainable) {
          ckpt.adam_m.emplace_back();
          ckpt.adam_v.emplace_back();
          continue;
        }
        for (auto [prefix, target] : {std::pair{"adam.m/", &ckpt.adam_m}, std::pair{"adam.v/", &ckpt.adam_v}}) {
          auto it = moments.find(prefix + e.name);
          if (it == moments.end()) throw FormatError(where + ": missing tensor '" + prefix + e.name + "'");
          if (it->second.shape() != e.value.shape()) {
            throw FormatError(where + ": shape mismatch for '" + it->first + "'");
          }
          target->push_back(std::move(it->second));
        }
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(where + ": malformed header: " + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(where + ": " + e.what());
  }

  // Every tensor the architecture expects must be present with its shape.
  const auto expected = Cardioformer<float>(ckpt.config).init_parameters(0);
  for (const auto& e : expected.entries()) {
    if (!ckpt.parameters.contains(e.name)) throw FormatError(where + ": missing tensor '" + e.name + "'");
    const auto& got = ckpt.parameters.get(e.name);
    if (got.shape() != e.value.shape()) {
      throw FormatError(where + ": shape mismatch for '" + e.name + "': file " + shape_string(got.shape()) +
                        ", expected " + shape_string(e.value.shape()));
    }
  }
  if (ckpt.parameters.size() != expected.size()) {
    throw FormatError(where + ": unexpected extra tensors");
  }
  return ckpt;
}

void check_compatible(const ModelConfig& config, const DatasetManifest& manifest) {
  if (config.classes != manifest.classes) {
    throw Error("class count mismatch: checkpoint has K=" + std::to_string(config.classes) +
                ", dataset '" + manifest.name + "' has K=" + std::to_string(manifest.classes));
  }
  if (config.timestamps != manifest.timestamps) {
    throw Error("window length mismatch: checkpoint has T=" + std::to_string(config.timestamps) +
                ", dataset has T=" + std::to_string(manifest.timestamps));
  }
  if (config.channels != manifest.channels) {
    throw Error("channel count mismatch: checkpoint has C=" + std::to_string(config.channels) +
                ", dataset has C=" + std::to_string(manifest.channels));
  }
}

template class Cardioformer<float>;
template class Cardioformer<double>;
template Tensor<float> stack_windows<float>(const std::vector<Sample>&, std::span<const std::size_t>);
template Tensor<double> stack_windows<double>(const std::vector<Sample>&, std::span<const std::size_t>);

}  // namespace cardio
