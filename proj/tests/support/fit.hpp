#pragma once

#include "vitforge/data.hpp"
#include "vitforge/train.hpp"

namespace vitforge::testing {

/// Plain minibatch loop over `data` until every training sample is
/// classified correctly; returns the number of optimizer steps taken.
inline std::size_t steps_to_fit(ModelParams<float>& params, AdamWState<float>& state, const ViTConfig& c,
                                const InMemoryImages& data, const PreprocessConfig& pre, std::size_t max_steps) {
  Rng shuffle(derive_seed(3, "shuffle"));
  std::size_t steps = 0;
  while (steps < max_steps) {
    for (const auto& batch : make_batches(data.size(), 8, shuffle)) {
      std::vector<Tensor<float>> images;
      std::vector<int> labels;
      for (std::size_t i : batch) {
        Rng aug(steps * 131 + i);
        images.push_back(augment_train(data.image(i), aug, pre));
        labels.push_back(data.label(i));
      }
      train_step(params, state, c, images, labels);
      ++steps;
    }
    if (accuracy(params, c, data, pre) == 1.0) return steps;
  }
  return steps + 1;
}

}  // namespace vitforge::testing
