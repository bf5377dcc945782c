#pragma once

// Central finite-difference oracle. It only evaluates forward values on
// non-recording tapes; analytic gradients come from the tape under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vitforge/autodiff.hpp"
#include "vitforge/rng.hpp"
#include "vitforge/vit.hpp"

namespace vitforge::testing {

inline constexpr double kFdStep = 1e-5;

/// |a − n| / max(|a|, |n|, floor). The floor keeps entries whose true
/// gradient is ~0 from dividing rounding noise by ~0.
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

using GraphFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// loss = Σ weights ⊙ f(inputs); compares d(loss)/d(inputs) from the tape
/// with central differences. Returns the largest relative error.
inline double input_grad_error(const std::vector<Tensor<double>>& inputs, const GraphFn& f,
                               std::uint64_t seed = 7) {
  Rng rng(seed);
  Tensor<double> weights;
  auto loss_of = [&](const std::vector<Tensor<double>>& xs, bool record, std::vector<Tensor<double>>* grads) {
    Tape<double> tape(record);
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(record ? tape.input(x) : tape.constant(x));
    Var<double> out = f(tape, vars);
    if (weights.empty()) weights = random_tensor(out.value().shape(), rng);
    Var<double> loss = out.value().size() == 1 && out.value().rank() == 1
                           ? out
                           : ad::sum(ad::hadamard(out, tape.constant(weights)));
    if (record) {
      tape.backward(loss);
      for (const auto& v : vars) grads->push_back(tape.grad(v));
    }
    return loss.value()[0];
  };
  std::vector<Tensor<double>> analytic;
  loss_of(inputs, true, &analytic);
  double worst = 0;
  std::vector<Tensor<double>> xs = inputs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < xs[i].size(); ++j) {
      const double orig = xs[i][j];
      xs[i][j] = orig + kFdStep;
      const double up = loss_of(xs, false, nullptr);
      xs[i][j] = orig - kFdStep;
      const double down = loss_of(xs, false, nullptr);
      xs[i][j] = orig;
      worst = std::max(worst, relative_error(analytic[i][j], (up - down) / (2 * kFdStep)));
    }
  }
  return worst;
}

using ModelGraphFn = std::function<Var<double>(Tape<double>&, const BoundParams<double>&)>;

/// As input_grad_error, but differentiates with respect to every trainable
/// parameter of `params` through Tape::parameter_grads.
inline double param_grad_error(ModelParams<double> params, const ModelGraphFn& f, std::uint64_t seed = 11) {
  Rng rng(seed);
  Tensor<double> weights;
  auto eval = [&](bool record, std::map<std::string, Tensor<double>, std::less<>>* grads) {
    Tape<double> tape(record);
    BoundParams<double> bound(tape, params);
    Var<double> out = f(tape, bound);
    if (weights.empty()) weights = random_tensor(out.value().shape(), rng);
    Var<double> loss = out.value().size() == 1 && out.value().rank() == 1
                           ? out
                           : ad::sum(ad::hadamard(out, tape.constant(weights)));
    if (record) {
      tape.backward(loss);
      *grads = tape.parameter_grads();
    }
    return loss.value()[0];
  };
  std::map<std::string, Tensor<double>, std::less<>> analytic;
  eval(true, &analytic);
  double worst = 0;
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    const Tensor<double>& g = analytic.at(name);
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double orig = p.value[j];
      p.value[j] = orig + kFdStep;
      const double up = eval(false, nullptr);
      p.value[j] = orig - kFdStep;
      const double down = eval(false, nullptr);
      p.value[j] = orig;
      worst = std::max(worst, relative_error(g[j], (up - down) / (2 * kFdStep)));
    }
  }
  return worst;
}

/// Every parameter filled with U(−scale, scale); layer-norm scales centered
/// on 1. Gives gradients well away from zero for finite-difference checks.
inline ModelParams<double> random_params(const ViTConfig& config, Rng& rng, double scale = 0.5) {
  ModelParams<double> params = zero_params<double>(config);
  for (auto& [name, p] : params) {
    const double center = name.ends_with(".scale") ? 1.0 : 0.0;
    for (double& v : p.value.data()) v = center + rng.uniform(-scale, scale);
  }
  return params;
}

}  // namespace vitforge::testing
