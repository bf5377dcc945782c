#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vitforge/data.hpp"
#include "vitforge/vit.hpp"

namespace vitforge {

template <typename T>
using GradMap = std::map<std::string, Tensor<T>, std::less<>>;

/// Mean softmax cross-entropy of B×K logits against class indices.
template <typename T>
T cross_entropy_loss(const Tensor<T>& logits, std::span<const int> labels) {
  Tape<T> tape(false);
  return ad::cross_entropy(tape.constant(logits), labels).value()[0];
}

/// Runs the backward sweep and returns gradients of every trainable
/// parameter bound on the tape.
template <typename T>
GradMap<T> backward(Tape<T>& tape, const Var<T>& loss) {
  tape.backward(loss);
  return tape.parameter_grads();
}

struct AdamWConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  bool operator==(const AdamWConfig&) const = default;
};

template <typename T>
struct AdamWState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor<T>, std::less<>> m;
  std::map<std::string, Tensor<T>, std::less<>> v;

  bool operator==(const AdamWState&) const = default;
};

/// One AdamW update with decoupled weight decay:
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
///   θ ← θ·(1 − lr·λ) − lr·m̂/(√v̂ + ε)
/// `grads` must name exactly the trainable parameters.
template <typename T>
void adamw_step(ModelParams<T>& params, const GradMap<T>& grads, AdamWState<T>& state) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ConsistencyError("gradient for unknown parameter " + name);
    const auto& p = params.at(name);
    if (!p.trainable) throw ConsistencyError("gradient for frozen parameter " + name);
    if (g.shape() != p.value.shape()) {
      throw ConsistencyError("gradient for " + name + " has shape " + shape_str(g.shape()) +
                             ", parameter is " + shape_str(p.value.shape()));
    }
  }
  for (const auto& [name, p] : params)
    if (p.trainable && !grads.contains(name)) throw ConsistencyError("missing gradient for " + name);

  const AdamWConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
  const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
  const T decay = static_cast<T>(1.0 - c.lr * c.weight_decay);

  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    const Tensor<T>& g = grads.find(name)->second;
    auto [mit, m_new] = state.m.try_emplace(name, p.value.shape());
    auto [vi, v_new] = state.v.try_emplace(name, p.value.shape());
    auto theta = p.value.data();
    auto m = mit->second.data();
    auto v = vi->second.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * gd[i];
      v[i] = b2 * v[i] + (T{1} - b2) * gd[i] * gd[i];
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      theta[i] = theta[i] * decay - lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

enum class FreezeMode { head_only, full };

FreezeMode parse_freeze_mode(std::string_view text);
std::string_view to_string(FreezeMode mode);

/// head_only: only head.* trainable. full: everything trainable.
template <typename T>
void set_freeze(ModelParams<T>& params, FreezeMode mode) {
  for (auto& [name, p] : params) p.trainable = mode == FreezeMode::full || param_names::is_head(name);
}

struct TrainPlan {
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  FreezeMode freeze_mode = FreezeMode::head_only;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;
  PreprocessConfig preprocess;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_accuracy = 0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  ModelParams<float> best_params;
  AdamWState<float> best_optimizer;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0;
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
};

/// One optimizer step on a batch of preprocessed images; returns the batch
/// loss before the update.
double train_step(ModelParams<float>& params, AdamWState<float>& state, const ViTConfig& config,
                  std::span<const Tensor<float>> images, std::span<const int> labels);

/// Fraction of samples whose argmax logit (lowest index on ties) equals the
/// label, on the deterministic evaluation path.
double accuracy(const ModelParams<float>& params, const ViTConfig& config, const ImageSource& data,
                const PreprocessConfig& preprocess);

/// Logits for one raw image on the evaluation path.
std::vector<double> predict_logits(const ModelParams<float>& params, const ViTConfig& config,
                                   const Tensor<float>& image, const PreprocessConfig& preprocess);

/// Epoch loop: seeded shuffled minibatches with per-sample augmentation
/// streams (seed = epoch seed XOR sample index), AdamW steps, validation
/// accuracy after each epoch. Returns the snapshot with the best validation
/// accuracy, earliest epoch on ties.
TrainResult train(const ImageSource& train_set, const ImageSource& val_set,
                  const ModelParams<float>& initial, const ViTConfig& config,
                  const TrainPlan& plan,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace vitforge
