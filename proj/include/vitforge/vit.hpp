#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vitforge/autodiff.hpp"
#include "vitforge/rng.hpp"

namespace vitforge {

/// Architecture hyperparameters. Defaults are ViT-Base/16 at 224 pixels.
struct ViTConfig {
  std::uint32_t image_size = 224;
  std::uint32_t channels = 3;
  std::uint32_t patch_size = 16;
  std::uint32_t hidden_dim = 768;
  std::uint32_t mlp_dim = 3072;
  std::uint32_t num_heads = 12;
  std::uint32_t num_layers = 12;
  std::uint32_t num_classes = 2;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const {
    return std::size_t{patch_size} * patch_size * channels;
  }
  std::size_t head_dim() const { return hidden_dim / num_heads; }

  /// Throws ValidationError unless every extent is positive, the image tiles
  /// into whole patches and the hidden size splits evenly across heads.
  void validate() const;

  bool operator==(const ViTConfig&) const = default;
};

/// Layer-norm epsilon used throughout the encoder.
inline constexpr double kLayerNormEps = 1e-6;

/// Dotted parameter names.
namespace param_names {
inline constexpr std::string_view kPatchWeight = "embed.patch.weight";
inline constexpr std::string_view kPatchBias = "embed.patch.bias";
inline constexpr std::string_view kPosition = "embed.position";
inline constexpr std::string_view kClassToken = "embed.class_token";
inline constexpr std::string_view kFinalScale = "final_norm.scale";
inline constexpr std::string_view kFinalShift = "final_norm.shift";
inline constexpr std::string_view kHeadWeight = "head.weight";
inline constexpr std::string_view kHeadBias = "head.bias";

/// "encoder.<layer>.<leaf>", e.g. encoder.3.attn.w_q.
std::string layer(std::size_t layer, std::string_view leaf);

bool is_head(std::string_view name);
}  // namespace param_names

/// Name and shape of every parameter for a config, in sorted name order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ViTConfig& config);

template <typename T>
struct Parameter {
  Tensor<T> value;
  bool trainable = true;

  bool operator==(const Parameter&) const = default;
};

/// Named parameter set, iterated in sorted name order.
template <typename T>
class ModelParams {
 public:
  using Map = std::map<std::string, Parameter<T>, std::less<>>;

  void add(std::string name, Tensor<T> value, bool trainable = true) {
    auto [it, inserted] = params_.emplace(std::move(name), Parameter<T>{std::move(value), trainable});
    if (!inserted) throw ValidationError("duplicate parameter name " + it->first);
  }

  bool contains(std::string_view name) const { return params_.find(name) != params_.end(); }

  Parameter<T>& at(std::string_view name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter " + std::string(name));
    return it->second;
  }
  const Parameter<T>& at(std::string_view name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter " + std::string(name));
    return it->second;
  }

  Tensor<T>& value(std::string_view name) { return at(name).value; }
  const Tensor<T>& value(std::string_view name) const { return at(name).value; }

  void erase(std::string_view name) {
    auto it = params_.find(name);
    if (it != params_.end()) params_.erase(it);
  }

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>(), p.trainable);
    return out;
  }

  bool operator==(const ModelParams&) const = default;

 private:
  Map params_;
};

template <typename T>
std::size_t count_parameters(const ModelParams<T>& params, bool trainable_only = false) {
  std::size_t n = 0;
  for (const auto& [name, p] : params)
    if (!trainable_only || p.trainable) n += p.value.size();
  return n;
}

/// All parameters zero except layer-norm scales, which are one.
template <typename T>
ModelParams<T> zero_params(const ViTConfig& config) {
  config.validate();
  ModelParams<T> params;
  for (auto& [name, shape] : parameter_shapes(config)) {
    const bool is_scale = name.ends_with(".scale");
    params.add(name, Tensor<T>(shape, is_scale ? T{1} : T{0}));
  }
  return params;
}

/// Truncated-normal (σ = 0.02, cut at 2σ) projections and embeddings, zero
/// biases and head, unit layer-norm scales. Draws happen in sorted name
/// order.
template <typename T>
ModelParams<T> init_params(const ViTConfig& config, Rng& rng) {
  ModelParams<T> params = zero_params<T>(config);
  for (auto& [name, p] : params) {
    if (param_names::is_head(name)) continue;
    const bool random = name == param_names::kPatchWeight || name == param_names::kPosition ||
                        name == param_names::kClassToken || name.find(".w_") != std::string::npos;
    if (!random) continue;
    for (T& v : p.value.data()) v = static_cast<T>(rng.truncated_normal(0.02));
  }
  return params;
}

/// Checks that params hold exactly the names and shapes the config implies.
template <typename T>
void validate_params(const ModelParams<T>& params, const ViTConfig& config) {
  config.validate();
  const auto expected = parameter_shapes(config);
  for (const auto& [name, shape] : expected) {
    if (!params.contains(name)) throw ValidationError("missing parameter " + name);
    const auto& actual = params.value(name).shape();
    if (actual != shape) {
      throw ShapeError("parameter " + name + " has shape " + shape_str(actual) +
                       ", config implies " + shape_str(shape));
    }
  }
  if (params.size() != expected.size()) {
    for (const auto& [name, p] : params) {
      bool found = false;
      for (const auto& e : expected) found = found || e.first == name;
      if (!found) throw ValidationError("unexpected parameter " + name);
    }
  }
}

/// Splits a C×H×W image into N = (H/P)·(W/P) patches. Patches are ordered
/// row-major over the grid; each row flattens its patch as (py, px, c), the
/// layout of an HWIO convolution kernel.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
  if (image.rank() != 3) {
    throw ShapeError("patchify: expected C×H×W image, got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: image " + shape_str(image.shape()) +
                     " does not tile into " + std::to_string(patch) + "-pixel patches");
  }
  const std::size_t gh = h / patch, gw = w / patch;
  Tensor<T> out({gh * gw, patch * patch * c});
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      T* row = out.data().data() + (gy * gw + gx) * out.dim(1);
      std::size_t k = 0;
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (std::size_t ch = 0; ch < c; ++ch)
            row[k++] = image.at(ch, gy * patch + py, gx * patch + px);
    }
  return out;
}

/// Inverse of patchify: scatters N×(P·P·C) rows back into a C×H×W image.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, const Shape& image_shape, std::size_t patch) {
  const std::size_t c = image_shape.at(0), h = image_shape.at(1), w = image_shape.at(2);
  const std::size_t gw = w / patch;
  if (patches.rank() != 2 || patches.dim(0) != (h / patch) * gw || patches.dim(1) != patch * patch * c) {
    throw ShapeError("unpatchify: patches " + shape_str(patches.shape()) + " do not tile image " +
                     shape_str(image_shape));
  }
  Tensor<T> image(image_shape);
  for (std::size_t n = 0; n < patches.dim(0); ++n) {
    const T* row = patches.data().data() + n * patches.dim(1);
    const std::size_t gy = n / gw, gx = n % gw;
    std::size_t k = 0;
    for (std::size_t py = 0; py < patch; ++py)
      for (std::size_t px = 0; px < patch; ++px)
        for (std::size_t ch = 0; ch < c; ++ch) image.at(ch, gy * patch + py, gx * patch + px) = row[k++];
  }
  return image;
}

/// Parameters bound to a tape as leaf variables.
template <typename T>
class BoundParams {
 public:
  BoundParams(Tape<T>& tape, const ModelParams<T>& params) : tape_(&tape) {
    for (const auto& [name, p] : params) vars_.emplace(name, tape.parameter(name, p.value, p.trainable));
  }

  const Var<T>& operator()(std::string_view name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ValidationError("unbound parameter " + std::string(name));
    return it->second;
  }
  const Var<T>& layer(std::size_t l, std::string_view leaf) const {
    return (*this)(param_names::layer(l, leaf));
  }
  Tape<T>& tape() const { return *tape_; }

 private:
  Tape<T>* tape_;
  std::map<std::string, Var<T>, std::less<>> vars_;
};

/// Differentiable model graph. Every function records onto the tape that
/// owns its inputs.
namespace vit {

/// Token matrix: class token row followed by projected patches, plus the
/// positional embedding.
template <typename T>
Var<T> embed(const Var<T>& patches, const BoundParams<T>& p) {
  using namespace param_names;
  Var<T> projected = ad::linear(patches, p(kPatchWeight), p(kPatchBias));
  Var<T> tokens = ad::concat_rows<T>({p(kClassToken), projected});
  return ad::add(tokens, p(kPosition));
}

/// softmax(QKᵀ/√d_k)·V for one head, Q = x·w_q + b_q and likewise for K, V.
template <typename T>
Var<T> attention_head(const Var<T>& x, const Var<T>& w_q, const Var<T>& b_q,
                      const Var<T>& w_k, const Var<T>& b_k, const Var<T>& w_v,
                      const Var<T>& b_v) {
  Var<T> q = ad::linear(x, w_q, b_q);
  Var<T> k = ad::linear(x, w_k, b_k);
  Var<T> v = ad::linear(x, w_v, b_v);
  const T inv_sqrt_dk = T{1} / std::sqrt(static_cast<T>(w_q.value().dim(1)));
  return ad::attention(q, k, v, inv_sqrt_dk);
}

template <typename T>
Var<T> multi_head_self_attention(const Var<T>& z, const BoundParams<T>& p, std::size_t l,
                                 const ViTConfig& config) {
  const std::size_t dk = config.head_dim();
  const auto& wq = p.layer(l, "attn.w_q");
  const auto& wk = p.layer(l, "attn.w_k");
  const auto& wv = p.layer(l, "attn.w_v");
  const auto& bq = p.layer(l, "attn.b_q");
  const auto& bk = p.layer(l, "attn.b_k");
  const auto& bv = p.layer(l, "attn.b_v");
  std::vector<Var<T>> heads;
  heads.reserve(config.num_heads);
  for (std::size_t h = 0; h < config.num_heads; ++h) {
    const std::size_t lo = h * dk, hi = lo + dk;
    heads.push_back(attention_head(z, ad::slice_cols(wq, lo, hi), ad::slice_vector(bq, lo, hi),
                                   ad::slice_cols(wk, lo, hi), ad::slice_vector(bk, lo, hi),
                                   ad::slice_cols(wv, lo, hi), ad::slice_vector(bv, lo, hi)));
  }
  Var<T> merged = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
  return ad::linear(merged, p.layer(l, "attn.w_o"), p.layer(l, "attn.b_o"));
}

/// linear(D→mlp_dim) → GELU → linear(mlp_dim→D).
template <typename T>
Var<T> mlp(const Var<T>& z, const BoundParams<T>& p, std::size_t l) {
  Var<T> hidden = ad::gelu(ad::linear(z, p.layer(l, "mlp.w_1"), p.layer(l, "mlp.b_1")));
  return ad::linear(hidden, p.layer(l, "mlp.w_2"), p.layer(l, "mlp.b_2"));
}

/// Pre-norm residual block: z' = MSA(LN1(z)) + z, out = MLP(LN2(z')) + z'.
template <typename T>
Var<T> encoder_block(const Var<T>& z, const BoundParams<T>& p, std::size_t l,
                     const ViTConfig& config) {
  const T eps = static_cast<T>(kLayerNormEps);
  Var<T> n1 = ad::layer_norm(z, p.layer(l, "ln1.scale"), p.layer(l, "ln1.shift"), eps);
  Var<T> mid = ad::add(multi_head_self_attention(n1, p, l, config), z);
  Var<T> n2 = ad::layer_norm(mid, p.layer(l, "ln2.scale"), p.layer(l, "ln2.shift"), eps);
  return ad::add(mlp(n2, p, l), mid);
}

/// Final-norm class-token representation (1×D) for one C×H×W image.
template <typename T>
Var<T> patchify(const Var<T>& image, std::size_t patch) {
  return image.tape().record(vitforge::patchify(image.value(), patch), {image},
                             [image, patch](Tape<T>& tape, const Tensor<T>&, const Tensor<T>& g) {
                               tape.accumulate_grad(image, unpatchify(g, image.value().shape(), patch));
                             });
}

template <typename T>
Var<T> class_features(const Var<T>& image, const BoundParams<T>& p, const ViTConfig& config) {
  Var<T> patches = patchify(image, config.patch_size);
  if (patches.value().dim(1) != config.patch_dim()) {
    throw ShapeError("image " + shape_str(image.value().shape()) +
                     " does not match the configured channel count");
  }
  Var<T> z = embed(patches, p);
  for (std::size_t l = 0; l < config.num_layers; ++l) z = encoder_block(z, p, l, config);
  Var<T> cls = ad::slice_rows(z, 0, 1);
  return ad::layer_norm(cls, p(param_names::kFinalScale), p(param_names::kFinalShift),
                        static_cast<T>(kLayerNormEps));
}

/// 1×K logits for one image.
template <typename T>
Var<T> logits(const Var<T>& image, const BoundParams<T>& p, const ViTConfig& config) {
  return ad::linear(class_features(image, p, config), p(param_names::kHeadWeight),
                    p(param_names::kHeadBias));
}

}  // namespace vit

/// Plain-tensor entry points. Each evaluates the corresponding graph on a
/// non-recording tape.

template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const ModelParams<T>& params) {
  Tape<T> tape(false);
  BoundParams<T> p(tape, params);
  return vit::embed(tape.constant(patches), p).value();
}

template <typename T>
Tensor<T> attention_head(const Tensor<T>& x, const Tensor<T>& w_q, const Tensor<T>& w_k,
                         const Tensor<T>& w_v) {
  if (x.rank() != 2 || w_q.rank() != 2 || w_q.shape() != w_k.shape() ||
      w_q.shape() != w_v.shape() || w_q.dim(0) != x.dim(1)) {
    throw ShapeError("attention_head: incompatible shapes x" + shape_str(x.shape()) + " w" +
                     shape_str(w_q.shape()));
  }
  Tape<T> tape(false);
  Var<T> zero = tape.constant(Tensor<T>({w_q.dim(1)}));
  return vit::attention_head(tape.constant(x), tape.constant(w_q), zero, tape.constant(w_k), zero,
                             tape.constant(w_v), zero)
      .value();
}

template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& z, const ModelParams<T>& params,
                                    std::size_t layer, const ViTConfig& config) {
  Tape<T> tape(false);
  BoundParams<T> p(tape, params);
  return vit::multi_head_self_attention(tape.constant(z), p, layer, config).value();
}

template <typename T>
Tensor<T> encoder_block(const Tensor<T>& z, const ModelParams<T>& params, std::size_t layer,
                        const ViTConfig& config) {
  if (layer >= config.num_layers) {
    throw ValidationError("encoder_block: layer " + std::to_string(layer) + " of " +
                          std::to_string(config.num_layers));
  }
  Tape<T> tape(false);
  BoundParams<T> p(tape, params);
  return vit::encoder_block(tape.constant(z), p, layer, config).value();
}

namespace detail {
template <typename T, typename Fn>
Tensor<T> per_image(const Tensor<T>& images, const ModelParams<T>& params,
                    const ViTConfig& config, std::size_t width, Fn&& fn) {
  if (images.rank() != 4) {
    throw ShapeError("expected B×C×H×W batch, got " + shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0);
  const std::size_t per = images.size() / b;
  const Shape image_shape{images.dim(1), images.dim(2), images.dim(3)};
  Tensor<T> out({b, width});
  for (std::size_t i = 0; i < b; ++i) {
    Tensor<T> image(image_shape, std::vector<T>(images.data().begin() + i * per,
                                                images.data().begin() + (i + 1) * per));
    try {
      Tape<T> tape(false);
      BoundParams<T> p(tape, params);
      const Tensor<T>& row = fn(tape.constant(std::move(image)), p).value();
      std::copy(row.data().begin(), row.data().end(), out.data().begin() + i * width);
    } catch (const ShapeError& e) {
      throw ShapeError("sample " + std::to_string(i) + ": " + e.what());
    }
  }
  (void)config;
  return out;
}
}  // namespace detail

/// B×K logits. Images are processed independently, so each row depends only
/// on its own image.
template <typename T>
Tensor<T> forward(const Tensor<T>& images, const ModelParams<T>& params, const ViTConfig& config) {
  return detail::per_image(images, params, config, config.num_classes,
                           [&](const Var<T>& image, const BoundParams<T>& p) {
                             return vit::logits(image, p, config);
                           });
}

/// B×D final-norm class-token features (the head's input).
template <typename T>
Tensor<T> encode(const Tensor<T>& images, const ModelParams<T>& params, const ViTConfig& config) {
  return detail::per_image(images, params, config, config.hidden_dim,
                           [&](const Var<T>& image, const BoundParams<T>& p) {
                             return vit::class_features(image, p, config);
                           });
}

}  // namespace vitforge
