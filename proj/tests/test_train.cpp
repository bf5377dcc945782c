#include <doctest.h>

#include <cmath>

#include "support/fit.hpp"
#include "support/toy.hpp"
#include "vitforge/train.hpp"

using namespace vitforge;
using namespace vitforge::testing;

namespace {

ModelParams<float> two_params() {
  ModelParams<float> p;
  p.add("a", Tensor<float>::matrix({{1.5f, -2.0f}, {0.25f, 8.0f}}));
  p.add("b", Tensor<float>::vector({-0.5f, 3.0f, 1e-3f}));
  return p;
}

GradMap<float> zero_grads(const ModelParams<float>& params) {
  GradMap<float> g;
  for (const auto& [name, p] : params)
    if (p.trainable) g.emplace(name, Tensor<float>(p.value.shape()));
  return g;
}

struct Fixture {
  ViTConfig config = tiny_config(2);
  PreprocessConfig preprocess = PreprocessConfig::for_image_size(32);
};

}  // namespace

TEST_CASE("AdamW with zero gradient") {
  auto params = two_params();
  const auto before = params;
  AdamWState<float> state;
  state.config.lr = 0.1;

  state.config.weight_decay = 0;
  adamw_step(params, zero_grads(params), state);
  CHECK(params == before);

  state.config.weight_decay = 0.01;
  const float factor = static_cast<float>(1.0 - 0.1 * 0.01);
  CHECK(factor == doctest::Approx(0.999f));
  for (int step = 0; step < 3; ++step) {
    auto expected = params;
    for (auto& [name, p] : expected)
      for (float& v : p.value.data()) v *= factor;
    adamw_step(params, zero_grads(params), state);
    CHECK(params == expected);
  }
  CHECK(state.step == 4);
}

TEST_CASE("AdamW first step moves by lr against the gradient sign") {
  ModelParams<double> params;
  params.add("w", Tensor<double>::vector({1.0, -1.0, 0.5, 2.0}));
  const auto g = Tensor<double>::vector({0.3, -4.0, 1e-3, -2e-2});
  AdamWState<double> state;
  state.config.lr = 0.01;
  state.config.weight_decay = 0;
  const auto before = params.value("w");
  adamw_step(params, GradMap<double>{{"w", g}}, state);
  for (std::size_t i = 0; i < 4; ++i) {
    const double a = std::abs(g[i]);
    const double expected = before[i] - 0.01 * g[i] / (a * (1 + 1e-8 / a));
    CHECK(params.value("w")[i] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(params.value("w")[i] == doctest::Approx(before[i] - 0.01 * (g[i] > 0 ? 1 : -1)).epsilon(1e-6));
  }
}

TEST_CASE("AdamW rejects inconsistent gradient maps") {
  auto params = two_params();
  AdamWState<float> state;
  auto grads = zero_grads(params);
  grads.erase("b");
  CHECK_THROWS_AS(adamw_step(params, grads, state), ConsistencyError);

  grads = zero_grads(params);
  grads.emplace("c", Tensor<float>({1}));
  CHECK_THROWS_AS(adamw_step(params, grads, state), ConsistencyError);

  grads = zero_grads(params);
  grads.at("a") = Tensor<float>({4});
  CHECK_THROWS_AS(adamw_step(params, grads, state), ConsistencyError);

  params.at("b").trainable = false;
  grads = zero_grads(params);
  grads.emplace("b", Tensor<float>({3}));
  CHECK_THROWS_AS(adamw_step(params, grads, state), ConsistencyError);
  CHECK(state.step == 0);
}

TEST_CASE("freeze modes") {
  ViTConfig base;
  base.num_classes = 3;
  auto params = zero_params<float>(base);
  set_freeze(params, FreezeMode::head_only);
  CHECK(count_parameters(params, true) == 2'307u);
  set_freeze(params, FreezeMode::full);
  CHECK(count_parameters(params, true) == count_parameters(params));

  CHECK(parse_freeze_mode("head_only") == FreezeMode::head_only);
  CHECK(parse_freeze_mode("full") == FreezeMode::full);
  CHECK(to_string(FreezeMode::full) == "full");
  CHECK_THROWS_AS(parse_freeze_mode("partial"), ValidationError);
}

TEST_CASE("head_only training leaves the backbone bitwise unchanged") {
  Fixture f;
  Rng rng(1);
  auto params = init_params<float>(f.config, rng);
  set_freeze(params, FreezeMode::head_only);
  const auto snapshot = params;
  AdamWState<float> state;
  state.config.lr = 1e-2;
  const auto data = toy_images(4);
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    images.push_back(preprocess_eval(data.image(i), f.preprocess));
    labels.push_back(data.label(i));
  }
  for (int step = 0; step < 100; ++step) train_step(params, state, f.config, images, labels);
  CHECK(state.step == 100);
  bool head_moved = false;
  for (const auto& [name, p] : params) {
    if (param_names::is_head(name)) {
      head_moved = head_moved || !(p.value == snapshot.value(name));
    } else {
      CHECK_MESSAGE(p.value == snapshot.value(name), name);
    }
  }
  CHECK(head_moved);
  CHECK(state.m.size() == 2);
}

TEST_CASE("full fine-tune fits the separable toy set within 200 steps") {
  Fixture f;
  Rng rng(derive_seed(0, "init"));
  auto params = init_params<float>(f.config, rng);
  set_freeze(params, FreezeMode::full);
  AdamWState<float> state;
  state.config.lr = 1e-3;
  const auto data = toy_images(16);
  REQUIRE(data.size() == 32);
  const std::size_t steps = steps_to_fit(params, state, f.config, data, f.preprocess, 200);
  CHECK(steps <= 200);
  CHECK(accuracy(params, f.config, data, f.preprocess) == 1.0);
}

TEST_CASE("training loss falls within 50 steps") {
  Fixture f;
  Rng rng(2);
  auto params = init_params<float>(f.config, rng);
  set_freeze(params, FreezeMode::full);
  AdamWState<float> state;
  state.config.lr = 1e-3;
  const auto data = toy_images(16);
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    images.push_back(preprocess_eval(data.image(i), f.preprocess));
    labels.push_back(data.label(i));
  }
  const double initial = train_step(params, state, f.config, images, labels);
  double last = initial;
  for (int step = 1; step < 50; ++step) last = train_step(params, state, f.config, images, labels);
  CHECK(last < initial);
}

TEST_CASE("train records one history row per epoch and is seed-deterministic") {
  Fixture f;
  Rng rng(3);
  const auto initial = init_params<float>(f.config, rng);
  const auto train_set = toy_images(4, "train");
  const auto val_set = toy_images(2, "val");
  TrainPlan plan;
  plan.epochs = 1;
  plan.freeze_mode = FreezeMode::full;
  plan.optimizer.lr = 1e-3;
  plan.preprocess = f.preprocess;
  plan.seed = 17;

  std::vector<EpochRecord> seen;
  const auto one = train(train_set, val_set, initial, f.config, plan,
                         [&](const EpochRecord& r) { seen.push_back(r); });
  REQUIRE(one.history.size() == 1);
  CHECK(seen == one.history);
  CHECK(one.history[0].epoch == 1);
  CHECK(one.steps == 1);
  CHECK(one.best_epoch == 1);

  plan.epochs = 3;
  const auto a = train(train_set, val_set, initial, f.config, plan);
  const auto b = train(train_set, val_set, initial, f.config, plan);
  CHECK(a.history.size() == 3);
  CHECK(a.history == b.history);
  CHECK(a.best_params == b.best_params);
  CHECK(a.best_optimizer == b.best_optimizer);
  CHECK(a.best_epoch == b.best_epoch);
  for (std::size_t e = 0; e < a.history.size(); ++e)
    if (e + 1 < a.best_epoch) CHECK(a.history[e].val_accuracy < a.best_val_accuracy);
}

TEST_CASE("train validates its inputs") {
  Fixture f;
  Rng rng(4);
  const auto initial = init_params<float>(f.config, rng);
  TrainPlan plan;
  plan.epochs = 1;
  plan.preprocess = f.preprocess;
  const auto data = toy_images(2);
  CHECK_THROWS_AS(train(InMemoryImages{}, data, initial, f.config, plan), ValidationError);
  CHECK_THROWS_AS(train(data, data, initial, f.config, plan), ValidationError);

  InMemoryImages one_class;
  one_class.add(solid_image(1.0f), 0, "x");
  one_class.add(solid_image(0.9f), 0, "y");
  CHECK_THROWS_AS(train(one_class, toy_images(1, "val"), initial, f.config, plan), ValidationError);

  plan.epochs = 0;
  CHECK_THROWS_AS(train(data, toy_images(1, "val"), initial, f.config, plan), ValidationError);
}
