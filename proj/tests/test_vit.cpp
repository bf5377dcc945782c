#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support/gradcheck.hpp"
#include "support/toy.hpp"
#include "vitforge/vit.hpp"

using namespace vitforge;
using namespace vitforge::testing;

namespace {

ViTConfig grad_config() {
  ViTConfig c = tiny_config(2);
  c.hidden_dim = 16;
  c.mlp_dim = 32;
  return c;
}

Tensor<double> random_image(const ViTConfig& c, Rng& rng, double lo = -1, double hi = 1) {
  return random_tensor({c.channels, c.image_size, c.image_size}, rng, lo, hi);
}

// exp-normalize written out with loops, independent of the library kernels.
Tensor<double> naive_attention(const Tensor<double>& x, const Tensor<double>& wq,
                               const Tensor<double>& wk, const Tensor<double>& wv) {
  const std::size_t t = x.dim(0), d = x.dim(1), dk = wq.dim(1);
  auto project = [&](const Tensor<double>& w) {
    Tensor<double> out({t, dk});
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < dk; ++j) {
        double s = 0;
        for (std::size_t m = 0; m < d; ++m) s += x.at(i, m) * w.at(m, j);
        out.at(i, j) = s;
      }
    return out;
  };
  const auto q = project(wq), k = project(wk), v = project(wv);
  Tensor<double> out({t, dk});
  for (std::size_t i = 0; i < t; ++i) {
    std::vector<double> w(t);
    double total = 0;
    for (std::size_t j = 0; j < t; ++j) {
      double s = 0;
      for (std::size_t m = 0; m < dk; ++m) s += q.at(i, m) * k.at(j, m);
      w[j] = std::exp(s / std::sqrt(static_cast<double>(dk)));
      total += w[j];
    }
    for (std::size_t j = 0; j < t; ++j)
      for (std::size_t m = 0; m < dk; ++m) out.at(i, m) += w[j] / total * v.at(j, m);
  }
  return out;
}

Tensor<double> permute_rows(const Tensor<double>& m, const std::vector<std::size_t>& perm,
                            std::size_t offset = 0) {
  Tensor<double> out = m;
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < m.dim(1); ++c) out.at(offset + i, c) = m.at(offset + perm[i], c);
  return out;
}

std::vector<std::size_t> reversed_with_swap(std::size_t n) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = n - 1 - i;
  if (n > 2) std::swap(perm[0], perm[1]);
  return perm;
}

Tensor<double> encoder_stack(const Tensor<double>& patches, const ModelParams<double>& params,
                             const ViTConfig& c) {
  Tensor<double> z = embed(patches, params);
  for (std::size_t l = 0; l < c.num_layers; ++l) z = encoder_block(z, params, l, c);
  return z;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("patchify shapes") {
  CHECK(patchify(Tensor<float>({3, 224, 224}), 16).shape() == Shape{196, 768});
  CHECK(patchify(Tensor<float>({3, 32, 32}), 32).shape() == Shape{1, 3072});
  CHECK_THROWS_AS(patchify(Tensor<float>({3, 225, 224}), 16), ShapeError);
  CHECK_THROWS_AS(patchify(Tensor<float>({32, 32}), 16), ShapeError);
}

TEST_CASE("patchify flattens each patch as (row, column, channel)") {
  Tensor<double> image({2, 4, 4});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) image.at(c, y, x) = 100 * c + 10 * y + x;
  const auto p = patchify(image, 2);
  REQUIRE(p.shape() == Shape{4, 8});
  // patch 1 is grid cell (0, 1): pixels y∈{0,1}, x∈{2,3}
  const std::vector<double> expected{2, 102, 3, 103, 12, 112, 13, 113};
  for (std::size_t k = 0; k < 8; ++k) CHECK(p.at(1, k) == expected[k]);
  CHECK(p.at(3, 0) == 22);
  CHECK(unpatchify(p, image.shape(), 2) == image);
  CHECK_THROWS_AS(unpatchify(p, Shape{2, 4, 6}, 2), ShapeError);
}

TEST_CASE("embed examples") {
  const ViTConfig c = tiny_config();
  Rng rng(1);
  ModelParams<double> params = zero_params<double>(c);
  const std::size_t n = c.num_patches(), d = c.hidden_dim;
  auto& bias = params.value(param_names::kPatchBias);
  for (double& v : bias.data()) v = rng.uniform(-1, 1);

  const Tensor<double> zero_patches({n, c.patch_dim()});
  auto z = embed(zero_patches, params);
  REQUIRE(z.shape() == Shape{n + 1, d});
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(z.at(0, j) == 0.0);
    for (std::size_t i = 1; i <= n; ++i) CHECK(z.at(i, j) == bias[j]);
  }

  auto& pos = params.value(param_names::kPosition);
  for (double& v : pos.data()) v = rng.uniform(-1, 1);
  z = embed(zero_patches, params);
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(z.at(0, j) == pos.at(0, j));
    for (std::size_t i = 1; i <= n; ++i) CHECK(z.at(i, j) == bias[j] + pos.at(i, j));
  }

  auto& cls = params.value(param_names::kClassToken);
  for (double& v : cls.data()) v = rng.uniform(-1, 1);
  for (double& v : params.value(param_names::kPatchWeight).data()) v = rng.uniform(-1, 1);
  const auto a = embed(random_tensor({n, c.patch_dim()}, rng), params);
  const auto b = embed(random_tensor({n, c.patch_dim()}, rng), params);
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(a.at(0, j) == cls[j] + pos.at(0, j));
    CHECK(b.at(0, j) == a.at(0, j));
  }
  CHECK_THROWS_AS(embed(Tensor<double>({n, c.patch_dim() + 1}), params), ShapeError);
}

TEST_CASE("attention_head examples") {
  Rng rng(2);
  const auto wq = random_tensor({8, 2}, rng), wk = random_tensor({8, 2}, rng), wv = random_tensor({8, 2}, rng);

  const auto one = random_tensor({1, 8}, rng);
  CHECK(attention_head(one, wq, wk, wv) == matmul(one, wv));

  Tensor<double> twins({2, 8});
  for (std::size_t j = 0; j < 8; ++j) twins.at(0, j) = twins.at(1, j) = one[j];
  const auto out = attention_head(twins, wq, wk, wv);
  const auto value = matmul(one, wv);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 2; ++j) CHECK(out.at(r, j) == doctest::Approx(value[j]).epsilon(1e-15));

  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_tensor({4, 8}, rng, -2, 2);
    CHECK(max_abs_diff(attention_head(x, wq, wk, wv), naive_attention(x, wq, wk, wv)) < 1e-10);
  }
  CHECK_THROWS_AS(attention_head(random_tensor({4, 7}, rng), wq, wk, wv), ShapeError);
}

TEST_CASE("multi-head attention examples") {
  Rng rng(3);
  ViTConfig c = grad_config();
  const std::size_t t = c.tokens(), d = c.hidden_dim;

  SUBCASE("one head is attention followed by the output projection") {
    c.num_heads = 1;
    auto params = random_params(c, rng);
    for (const char* b : {"attn.b_q", "attn.b_k", "attn.b_v"})
      params.value(param_names::layer(0, b)).fill(0.0);
    const auto z = random_tensor({t, d}, rng);
    const auto head = attention_head(z, params.value("encoder.0.attn.w_q"), params.value("encoder.0.attn.w_k"),
                                     params.value("encoder.0.attn.w_v"));
    const auto expected =
        add_row_vector(matmul(head, params.value("encoder.0.attn.w_o")), params.value("encoder.0.attn.b_o"));
    CHECK(multi_head_self_attention(z, params, 0, c) == expected);
  }

  SUBCASE("a head with zero projections contributes a zero block") {
    auto params = random_params(c, rng);
    const std::size_t dk = c.head_dim();
    for (const char* w : {"attn.w_q", "attn.w_k", "attn.w_v"}) {
      auto& m = params.value(param_names::layer(0, w));
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t j = dk; j < d; ++j) m.at(r, j) = 0;
    }
    for (const char* b : {"attn.b_q", "attn.b_k", "attn.b_v", "attn.b_o"})
      params.value(param_names::layer(0, b)).fill(0.0);
    auto& wo = params.value("encoder.0.attn.w_o");
    wo.fill(0.0);
    for (std::size_t i = 0; i < d; ++i) wo.at(i, i) = 1;
    const auto out = multi_head_self_attention(random_tensor({t, d}, rng), params, 0, c);
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t j = dk; j < d; ++j) CHECK(out.at(r, j) == 0.0);
      double first = 0;
      for (std::size_t j = 0; j < dk; ++j) first += std::abs(out.at(r, j));
      CHECK(first > 0);
    }
  }

  SUBCASE("permuting tokens after the class row permutes outputs") {
    c.image_size = 64;  // 16 patches
    const auto params = random_params(c, rng);
    const std::size_t tokens = c.tokens();
    const auto z = random_tensor({tokens, d}, rng);
    const auto perm = reversed_with_swap(tokens - 1);
    const auto out = multi_head_self_attention(z, params, 0, c);
    const auto out_perm = multi_head_self_attention(permute_rows(z, perm, 1), params, 0, c);
    CHECK(out_perm == permute_rows(out, perm, 1));
  }
}

TEST_CASE("encoder_block examples") {
  Rng rng(4);
  const ViTConfig c = grad_config();
  const std::size_t t = c.tokens(), d = c.hidden_dim;

  SUBCASE("zero weights and zero norm scales give the identity") {
    auto params = zero_params<double>(c);
    params.value("encoder.0.ln1.scale").fill(0.0);
    params.value("encoder.0.ln2.scale").fill(0.0);
    const auto z = random_tensor({t, d}, rng);
    CHECK(encoder_block(z, params, 0, c) == z);
  }

  SUBCASE("matches the hand-sequenced composition") {
    const auto params = random_params(c, rng);
    const auto z = random_tensor({t, d}, rng);
    auto v = [&](const char* leaf) { return params.value(param_names::layer(1, leaf)); };
    const auto n1 = layer_norm(z, v("ln1.scale"), v("ln1.shift"), kLayerNormEps);
    const auto mid = add(multi_head_self_attention(n1, params, 1, c), z);
    const auto n2 = layer_norm(mid, v("ln2.scale"), v("ln2.shift"), kLayerNormEps);
    const auto hidden = gelu(add_row_vector(matmul(n2, v("mlp.w_1")), v("mlp.b_1")));
    const auto expected = add(add_row_vector(matmul(hidden, v("mlp.w_2")), v("mlp.b_2")), mid);
    CHECK(max_abs_diff(encoder_block(z, params, 1, c), expected) <= 1e-12);
  }

  SUBCASE("layer norm breaks homogeneity") {
    const auto params = random_params(c, rng);
    const auto z = random_tensor({t, d}, rng);
    const auto once = encoder_block(z, params, 0, c);
    const auto twice = encoder_block(scale(z, 2.0), params, 0, c);
    CHECK(max_abs_diff(twice, scale(once, 2.0)) > 1e-3);
  }

  CHECK_THROWS_AS(encoder_block(Tensor<double>({t, d}), random_params(c, rng), 2, c), ValidationError);
}

TEST_CASE("forward is batch-independent and deterministic") {
  Rng rng(5);
  const ViTConfig c = tiny_config(3);
  const auto params = init_params<double>(c, rng);
  const std::size_t per = c.channels * c.image_size * c.image_size;
  Tensor<double> batch({3, c.channels, c.image_size, c.image_size});
  for (double& v : batch.data()) v = rng.uniform(-1, 1);
  std::copy_n(batch.data().begin(), per, batch.data().begin() + 2 * per);

  const auto logits = forward(batch, params, c);
  REQUIRE(logits.shape() == Shape{3, 3});
  for (std::size_t k = 0; k < 3; ++k) CHECK(logits.at(0, k) == logits.at(2, k));
  CHECK(forward(batch, params, c) == logits);

  for (std::size_t i = 0; i < 3; ++i) {
    Tensor<double> single({1, c.channels, c.image_size, c.image_size},
                          std::vector<double>(batch.data().begin() + i * per, batch.data().begin() + (i + 1) * per));
    const auto row = forward(single, params, c);
    for (std::size_t k = 0; k < 3; ++k) CHECK(row[k] == logits.at(i, k));
  }
}

TEST_CASE("forward reports the offending sample") {
  const ViTConfig c = tiny_config();
  Rng rng(6);
  const auto params = init_params<double>(c, rng);
  try {
    forward(Tensor<double>({2, 1, 32, 32}), params, c);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).starts_with("sample 0: "));
  }
  CHECK_THROWS_AS(forward(Tensor<double>({3, 32, 32}), params, c), ShapeError);
}

TEST_CASE("parameter counts") {
  ViTConfig base;
  base.num_classes = 2;
  auto params = zero_params<float>(base);
  CHECK(count_parameters(params) == 85'798'656u + 768u * 2 + 2);
  for (auto& [name, p] : params) p.trainable = param_names::is_head(name);
  CHECK(count_parameters(params, true) == 1'538u);

  std::size_t head = 0, backbone = 0;
  for (const auto& [name, shape] : parameter_shapes(base))
    (param_names::is_head(name) ? head : backbone) += shape_numel(shape);
  CHECK(backbone == 85'798'656u);
  CHECK(head == 1'538u);

  CHECK(count_parameters(ModelParams<float>{}) == 0);
}

TEST_CASE("config validation") {
  ViTConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.image_size = 40;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.num_classes = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("validate_params catches missing, extra and misshapen tensors") {
  const ViTConfig c = tiny_config();
  auto params = zero_params<float>(c);
  CHECK_NOTHROW(validate_params(params, c));
  params.add("extra", Tensor<float>({1}));
  CHECK_THROWS_AS(validate_params(params, c), ValidationError);
  params.erase("extra");
  params.value(param_names::kHeadBias) = Tensor<float>({3});
  CHECK_THROWS_AS(validate_params(params, c), ShapeError);
  params.erase(param_names::kHeadBias);
  CHECK_THROWS_AS(validate_params(params, c), ValidationError);
}

TEST_CASE("without positional embeddings the encoder is permutation-equivariant") {
  Rng rng(7);
  ViTConfig c = grad_config();
  c.image_size = 64;
  auto params = random_params(c, rng);
  params.value(param_names::kPosition).fill(0.0);
  const std::size_t n = c.num_patches();
  const auto patches = random_tensor({n, c.patch_dim()}, rng);
  const auto perm = reversed_with_swap(n);
  const auto z = encoder_stack(patches, params, c);
  const auto zp = encoder_stack(permute_rows(patches, perm), params, c);
  CHECK(zp == permute_rows(z, perm, 1));

  for (double& v : params.value(param_names::kPosition).data()) v = rng.uniform(-1, 1);
  const auto y = encoder_stack(patches, params, c);
  const auto yp = encoder_stack(permute_rows(patches, perm), params, c);
  CHECK(max_abs_diff(yp, permute_rows(y, perm, 1)) > 1e-6);
}

TEST_CASE("initialized model gives finite logits on wide-range inputs") {
  Rng rng(8);
  const ViTConfig c = tiny_config(2);
  const auto params = init_params<float>(c, rng);
  Tensor<float> batch({4, c.channels, c.image_size, c.image_size});
  for (float& v : batch.data()) v = static_cast<float>(rng.uniform(-3, 3));
  for (float v : forward(batch, params, c).data()) CHECK(std::isfinite(v));
}

TEST_CASE("init_params follows the prescribed scheme") {
  Rng rng(9);
  const ViTConfig c = tiny_config(3);
  const auto params = init_params<double>(c, rng);
  for (const auto& [name, p] : params) {
    const auto values = p.value.data();
    const bool randomized = name == param_names::kPatchWeight || name == param_names::kPosition ||
                            name == param_names::kClassToken || name.find(".w_") != std::string::npos;
    if (name.ends_with(".scale")) {
      CHECK(std::all_of(values.begin(), values.end(), [](double v) { return v == 1.0; }));
    } else if (randomized) {
      CHECK(std::all_of(values.begin(), values.end(), [](double v) { return std::abs(v) <= 0.04; }));
      CHECK(std::any_of(values.begin(), values.end(), [](double v) { return v != 0.0; }));
    } else {
      CHECK(std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; }));
    }
  }
  Rng again(9);
  CHECK(init_params<double>(c, again) == params);
}

TEST_CASE("model block gradients match central differences") {
  Rng rng(10);
  const ViTConfig c = grad_config();
  const auto params = random_params(c, rng);
  const std::size_t t = c.tokens(), d = c.hidden_dim;
  const auto z = random_tensor({t, d}, rng);
  const auto image = random_image(c, rng);
  const std::vector<int> label{1};
  const double tol = 1e-4;

  CHECK(param_grad_error(params, [&](Tape<double>& tape, const BoundParams<double>& p) {
          return vit::attention_head(tape.constant(z), ad::slice_cols(p.layer(0, "attn.w_q"), 0, 8),
                                     ad::slice_vector(p.layer(0, "attn.b_q"), 0, 8),
                                     ad::slice_cols(p.layer(0, "attn.w_k"), 0, 8),
                                     ad::slice_vector(p.layer(0, "attn.b_k"), 0, 8),
                                     ad::slice_cols(p.layer(0, "attn.w_v"), 0, 8),
                                     ad::slice_vector(p.layer(0, "attn.b_v"), 0, 8));
        }) < tol);
  CHECK(param_grad_error(params, [&](Tape<double>& tape, const BoundParams<double>& p) {
          return vit::multi_head_self_attention(tape.constant(z), p, 0, c);
        }) < tol);
  CHECK(param_grad_error(params, [&](Tape<double>& tape, const BoundParams<double>& p) {
          return vit::mlp(tape.constant(z), p, 1);
        }) < tol);
  CHECK(param_grad_error(params, [&](Tape<double>& tape, const BoundParams<double>& p) {
          return vit::embed(tape.constant(patchify(image, c.patch_size)), p);
        }) < tol);
  CHECK(param_grad_error(params, [&](Tape<double>& tape, const BoundParams<double>& p) {
          return vit::encoder_block(tape.constant(z), p, 0, c);
        }) < tol);
  CHECK(param_grad_error(params, [&](Tape<double>& tape, const BoundParams<double>& p) {
          return ad::cross_entropy(vit::logits(tape.constant(image), p, c), label);
        }) < tol);
  CHECK(input_grad_error({z}, [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
          BoundParams<double> p(tape, params);
          return vit::encoder_block(v[0], p, 1, c);
        }) < tol);
  CHECK(input_grad_error({image}, [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
          BoundParams<double> p(tape, params);
          return vit::logits(v[0], p, c);
        }) < tol);
}
