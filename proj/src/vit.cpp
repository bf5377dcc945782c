#include "vitforge/vit.hpp"

#include <algorithm>

namespace vitforge {

void ViTConfig::validate() const {
  auto positive = [](std::uint32_t v, const char* what) {
    if (v == 0) throw ValidationError(std::string("ViTConfig: ") + what + " must be positive");
  };
  positive(image_size, "image_size");
  positive(channels, "channels");
  positive(patch_size, "patch_size");
  positive(hidden_dim, "hidden_dim");
  positive(mlp_dim, "mlp_dim");
  positive(num_heads, "num_heads");
  positive(num_layers, "num_layers");
  positive(num_classes, "num_classes");
  if (image_size % patch_size != 0) {
    throw ValidationError("ViTConfig: image_size " + std::to_string(image_size) +
                          " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (hidden_dim % num_heads != 0) {
    throw ValidationError("ViTConfig: hidden_dim " + std::to_string(hidden_dim) +
                          " is not divisible by num_heads " + std::to_string(num_heads));
  }
}

namespace param_names {

std::string layer(std::size_t layer, std::string_view leaf) {
  return "encoder." + std::to_string(layer) + "." + std::string(leaf);
}

bool is_head(std::string_view name) { return name.starts_with("head."); }

}  // namespace param_names

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ViTConfig& config) {
  config.validate();
  using namespace param_names;
  const std::size_t d = config.hidden_dim, m = config.mlp_dim;
  std::vector<std::pair<std::string, Shape>> shapes{
      {std::string(kPatchWeight), {config.patch_dim(), d}},
      {std::string(kPatchBias), {d}},
      {std::string(kPosition), {config.tokens(), d}},
      {std::string(kClassToken), {1, d}},
      {std::string(kFinalScale), {d}},
      {std::string(kFinalShift), {d}},
      {std::string(kHeadWeight), {d, config.num_classes}},
      {std::string(kHeadBias), {config.num_classes}},
  };
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    for (const char* w : {"attn.w_q", "attn.w_k", "attn.w_v", "attn.w_o"})
      shapes.emplace_back(layer(l, w), Shape{d, d});
    for (const char* b : {"attn.b_q", "attn.b_k", "attn.b_v", "attn.b_o", "ln1.scale",
                          "ln1.shift", "ln2.scale", "ln2.shift", "mlp.b_2"})
      shapes.emplace_back(layer(l, b), Shape{d});
    shapes.emplace_back(layer(l, "mlp.w_1"), Shape{d, m});
    shapes.emplace_back(layer(l, "mlp.b_1"), Shape{m});
    shapes.emplace_back(layer(l, "mlp.w_2"), Shape{m, d});
  }
  std::sort(shapes.begin(), shapes.end());
  return shapes;
}

}  // namespace vitforge
