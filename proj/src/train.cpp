#include "vitforge/train.hpp"

#include <set>

#include "vitforge/metrics.hpp"

namespace vitforge {

FreezeMode parse_freeze_mode(std::string_view text) {
  if (text == "head_only") return FreezeMode::head_only;
  if (text == "full") return FreezeMode::full;
  throw ValidationError("freeze_mode must be head_only or full, got '" + std::string(text) + "'");
}

std::string_view to_string(FreezeMode mode) {
  return mode == FreezeMode::full ? "full" : "head_only";
}

double train_step(ModelParams<float>& params, AdamWState<float>& state, const ViTConfig& config,
                  std::span<const Tensor<float>> images, std::span<const int> labels) {
  if (images.empty() || images.size() != labels.size()) {
    throw ValidationError("train_step: need one label per image and a non-empty batch");
  }
  Tape<float> tape;
  BoundParams<float> bound(tape, params);
  std::vector<Var<float>> rows;
  rows.reserve(images.size());
  for (const auto& image : images) rows.push_back(vit::logits(tape.constant(image), bound, config));
  Var<float> loss = ad::cross_entropy(ad::concat_rows(rows), labels);
  const double value = loss.value()[0];
  GradMap<float> grads = backward(tape, loss);
  adamw_step(params, grads, state);
  return value;
}

std::vector<double> predict_logits(const ModelParams<float>& params, const ViTConfig& config,
                                   const Tensor<float>& image, const PreprocessConfig& preprocess) {
  const Tensor<float> x = preprocess_eval(image, preprocess);
  Tape<float> tape(false);
  BoundParams<float> bound(tape, params);
  const Tensor<float>& z = vit::logits(tape.constant(x), bound, config).value();
  return {z.data().begin(), z.data().end()};
}

namespace {

double accuracy_on(const ModelParams<float>& params, const ViTConfig& config,
                   const std::vector<Tensor<float>>& inputs, const std::vector<int>& labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tape<float> tape(false);
    BoundParams<float> bound(tape, params);
    const Tensor<float>& z = vit::logits(tape.constant(inputs[i]), bound, config).value();
    const std::vector<double> row(z.data().begin(), z.data().end());
    if (static_cast<int>(argmax(row)) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

}  // namespace

double accuracy(const ModelParams<float>& params, const ViTConfig& config, const ImageSource& data,
                const PreprocessConfig& preprocess) {
  if (data.size() == 0) throw ValidationError("accuracy: empty dataset");
  std::vector<Tensor<float>> inputs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    inputs.push_back(preprocess_eval(data.image(i), preprocess));
    labels.push_back(data.label(i));
  }
  return accuracy_on(params, config, inputs, labels);
}

TrainResult train(const ImageSource& train_set, const ImageSource& val_set,
                  const ModelParams<float>& initial, const ViTConfig& config,
                  const TrainPlan& plan, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train_set.size() == 0) throw ValidationError("train: empty training set");
  if (val_set.size() == 0) throw ValidationError("train: empty validation set");
  if (plan.epochs == 0) throw ValidationError("train: epochs must be at least 1");
  if (plan.batch_size == 0) throw ValidationError("train: batch_size must be at least 1");
  validate_params(initial, config);

  std::vector<std::size_t> per_class(config.num_classes, 0);
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const int y = train_set.label(i);
    if (y < 0 || static_cast<std::size_t>(y) >= config.num_classes) {
      throw ValidationError("train: label " + std::to_string(y) + " outside [0," +
                            std::to_string(config.num_classes) + ")");
    }
    ++per_class[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < per_class.size(); ++c)
    if (per_class[c] == 0) throw ValidationError("train: class " + std::to_string(c) + " has no training samples");
  std::set<std::string> train_ids;
  for (std::size_t i = 0; i < train_set.size(); ++i) train_ids.insert(train_set.id(i));
  for (std::size_t i = 0; i < val_set.size(); ++i)
    if (train_ids.contains(val_set.id(i)))
      throw ValidationError("train: sample " + val_set.id(i) + " is in both train and validation sets");

  std::vector<Tensor<float>> val_inputs;
  std::vector<int> val_labels;
  for (std::size_t i = 0; i < val_set.size(); ++i) {
    val_inputs.push_back(preprocess_eval(val_set.image(i), plan.preprocess));
    val_labels.push_back(val_set.label(i));
  }

  ModelParams<float> params = initial;
  set_freeze(params, plan.freeze_mode);
  AdamWState<float> state;
  state.config = plan.optimizer;

  const std::uint64_t shuffle_root = derive_seed(plan.seed, "shuffle");
  const std::uint64_t augment_root = derive_seed(plan.seed, "augment");

  TrainResult result;
  result.best_params = params;
  result.best_optimizer = state;
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(shuffle_root, epoch));
    const std::uint64_t epoch_seed = derive_seed(augment_root, epoch);
    double loss_sum = 0;
    for (const auto& batch : make_batches(train_set.size(), plan.batch_size, shuffle_rng)) {
      std::vector<Tensor<float>> images;
      std::vector<int> labels;
      for (std::size_t idx : batch) {
        Rng sample_rng(epoch_seed ^ static_cast<std::uint64_t>(idx));
        images.push_back(augment_train(train_set.image(idx), sample_rng, plan.preprocess));
        labels.push_back(train_set.label(idx));
      }
      loss_sum += train_step(params, state, config, images, labels) * static_cast<double>(batch.size());
      ++result.steps;
    }
    EpochRecord record{epoch, loss_sum / static_cast<double>(train_set.size()),
                       accuracy_on(params, config, val_inputs, val_labels)};
    result.history.push_back(record);
    if (!have_best || record.val_accuracy > result.best_val_accuracy) {
      have_best = true;
      result.best_val_accuracy = record.val_accuracy;
      result.best_epoch = epoch;
      result.best_params = params;
      result.best_optimizer = state;
    }
    if (on_epoch) on_epoch(record);
  }
  return result;
}

}  // namespace vitforge
