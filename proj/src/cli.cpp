#include "vitforge/cli.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "vitforge/checkpoint.hpp"
#include "vitforge/data.hpp"
#include "vitforge/image_io.hpp"
#include "vitforge/metrics.hpp"

namespace fs = std::filesystem;

namespace vitforge::cli {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view text) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError("config: '" + std::string(key) + "' expects an integer, got '" +
                          std::string(text) + "'");
  }
  return v;
}

double parse_double(std::string_view key, std::string_view text) {
  double v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError("config: '" + std::string(key) + "' expects a number, got '" +
                          std::string(text) + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ValidationError("config: '" + std::string(key) + "' expects true/false, got '" +
                        std::string(text) + "'");
}

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    auto u32 = [](std::uint32_t RunConfig::*field) {
      return [field](RunConfig& c, std::string_view k, std::string_view v) {
        c.*field = parse_int<std::uint32_t>(k, v);
      };
    };
    auto size = [](std::size_t RunConfig::*field) {
      return [field](RunConfig& c, std::string_view k, std::string_view v) {
        c.*field = parse_int<std::size_t>(k, v);
      };
    };
    auto model = [](std::uint32_t ViTConfig::*field) {
      return [field](RunConfig& c, std::string_view k, std::string_view v) {
        c.model.*field = parse_int<std::uint32_t>(k, v);
      };
    };
    auto adam = [](double AdamWConfig::*field) {
      return [field](RunConfig& c, std::string_view k, std::string_view v) {
        c.optimizer.*field = parse_double(k, v);
      };
    };
    auto path = [](fs::path RunConfig::*field) {
      return [field](RunConfig& c, std::string_view, std::string_view v) { c.*field = fs::path(v); };
    };
    t["dataset_root"] = path(&RunConfig::dataset_root);
    t["checkpoint_in"] = path(&RunConfig::checkpoint_in);
    t["checkpoint_out"] = path(&RunConfig::checkpoint_out);
    t["output_dir"] = path(&RunConfig::output_dir);
    t["num_classes"] = u32(&RunConfig::num_classes);
    t["positive_class"] = [](RunConfig& c, std::string_view, std::string_view v) {
      c.positive_class = std::string(v);
    };
    t["class_names"] = [](RunConfig& c, std::string_view, std::string_view v) {
      c.class_names.clear();
      std::stringstream ss{std::string(v)};
      for (std::string item; std::getline(ss, item, ',');) c.class_names.push_back(trim(item));
    };
    t["epochs"] = size(&RunConfig::epochs);
    t["batch_size"] = size(&RunConfig::batch_size);
    t["folds"] = size(&RunConfig::folds);
    t["val_fold"] = size(&RunConfig::val_fold);
    t["freeze_mode"] = [](RunConfig& c, std::string_view, std::string_view v) {
      c.freeze_mode = parse_freeze_mode(v);
    };
    t["stratified"] = [](RunConfig& c, std::string_view k, std::string_view v) {
      c.stratified = parse_bool(k, v);
    };
    t["seed"] = [](RunConfig& c, std::string_view k, std::string_view v) {
      c.seed = parse_int<std::uint64_t>(k, v);
    };
    t["lr"] = adam(&AdamWConfig::lr);
    t["beta1"] = adam(&AdamWConfig::beta1);
    t["beta2"] = adam(&AdamWConfig::beta2);
    t["adam_eps"] = adam(&AdamWConfig::eps);
    t["weight_decay"] = adam(&AdamWConfig::weight_decay);
    t["image_size"] = model(&ViTConfig::image_size);
    t["channels"] = model(&ViTConfig::channels);
    t["patch_size"] = model(&ViTConfig::patch_size);
    t["hidden_dim"] = model(&ViTConfig::hidden_dim);
    t["mlp_dim"] = model(&ViTConfig::mlp_dim);
    t["num_heads"] = model(&ViTConfig::num_heads);
    t["num_layers"] = model(&ViTConfig::num_layers);
    t["resize_shorter"] = [](RunConfig& c, std::string_view k, std::string_view v) {
      if (v == "auto") c.resize_shorter.reset();
      else c.resize_shorter = parse_int<std::size_t>(k, v);
    };
    return t;
  }();
  return table;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

nlohmann::ordered_json row_json(const MetricsRow& r) {
  nlohmann::ordered_json j;
  j["fold"] = r.fold;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["sensitivity"] = r.sensitivity;
  j["f1"] = r.f1;
  j["specificity"] = r.specificity;
  j["auc"] = r.auc ? nlohmann::ordered_json(*r.auc) : nlohmann::ordered_json(nullptr);
  j["degenerate"] = r.degenerate;
  return j;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_accuracy\n";
  for (const auto& h : history) {
    out += std::to_string(h.epoch) + "," + format_number(h.train_loss) + "," +
           format_number(h.val_accuracy) + "\n";
  }
  return out;
}

std::string classes_txt(const std::vector<std::string>& classes) {
  std::string out;
  for (const auto& c : classes) out += c + "\n";
  return out;
}

int positive_index(const RunConfig& config, const DatasetIndex& index) {
  return config.positive_class.empty() ? 0 : index.class_index(config.positive_class);
}

/// Starting weights for a dataset with `num_classes` classes: the input
/// checkpoint (head replaced when its class count differs) or a seeded
/// random init.
Checkpoint initial_checkpoint(const RunConfig& config, std::uint32_t num_classes) {
  if (!config.checkpoint_in.empty()) {
    Checkpoint ckpt = load_checkpoint(config.checkpoint_in);
    ckpt.optimizer.reset();
    if (ckpt.config.num_classes != num_classes) {
      Rng rng(derive_seed(config.seed, "head"));
      ckpt = replace_head(ckpt, num_classes, rng);
    }
    return ckpt;
  }
  Checkpoint ckpt;
  ckpt.config = config.model;
  ckpt.config.num_classes = num_classes;
  Rng rng(derive_seed(config.seed, "init"));
  ckpt.params = init_params<float>(ckpt.config, rng);
  return ckpt;
}

std::uint32_t dataset_classes(const RunConfig& config, const DatasetIndex& index) {
  const auto k = static_cast<std::uint32_t>(index.num_classes());
  if (config.num_classes != 0 && config.num_classes != k) {
    throw ValidationError("num_classes = " + std::to_string(config.num_classes) + " but dataset has " +
                          std::to_string(k) + " classes");
  }
  return k;
}

PreprocessConfig preprocess_for(const RunConfig& config, const ViTConfig& model) {
  PreprocessConfig p = PreprocessConfig::for_image_size(model.image_size);
  if (config.resize_shorter) p.resize_shorter = *config.resize_shorter;
  return p;
}

MetricsRow evaluate_on(const ModelParams<float>& params, const ViTConfig& model,
                       const ImageSource& data, const PreprocessConfig& preprocess, int positive,
                       std::string label) {
  std::vector<int> truth;
  for (std::size_t i = 0; i < data.size(); ++i) truth.push_back(data.label(i));
  return evaluate(
      [&](std::size_t i) {
        try {
          return predict_logits(params, model, data.image(i), preprocess);
        } catch (const Error& e) {
          throw Error(data.id(i) + ": " + e.what());
        }
      },
      truth, model.num_classes, positive, std::move(label));
}

void write_report(const fs::path& dir, const MetricsReport& report, const DatasetIndex& index,
                  int positive, bool include_average) {
  nlohmann::ordered_json j;
  j["num_classes"] = index.num_classes();
  j["classes"] = index.classes;
  if (index.num_classes() == 2) j["positive_class"] = index.classes[static_cast<std::size_t>(positive)];
  j["folds"] = nlohmann::ordered_json::array();
  for (const auto& r : report.folds) j["folds"].push_back(row_json(r));
  if (include_average) {
    j["average"] = row_json(report.average);
    write_text(dir / "metrics.csv", metrics_csv(report));
  } else {
    write_text(dir / "metrics.csv", metrics_csv(report.folds.front()));
  }
  write_text(dir / "metrics.json", j.dump(2) + "\n");
}

}  // namespace

PreprocessConfig RunConfig::preprocess() const { return preprocess_for(*this, model); }

TrainPlan RunConfig::plan(std::uint64_t seed_override) const {
  TrainPlan p;
  p.epochs = epochs;
  p.batch_size = batch_size;
  p.freeze_mode = freeze_mode;
  p.optimizer = optimizer;
  p.seed = seed_override;
  p.preprocess = preprocess();
  return p;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ValidationError("config: unknown key '" + std::string(key) + "'");
  it->second(config, key, value);
}

void apply_config_text(RunConfig& config, std::string_view text, std::string_view source) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(std::string(source) + ":" + std::to_string(line_no) +
                            ": expected 'key = value'");
    }
    try {
      apply_setting(config, trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (end == text.size()) break;
  }
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig config;
  apply_config_text(config, ss.str(), path.string());
  return config;
}

int cmd_crossval(const RunConfig& config, std::ostream& out) {
  const DatasetIndex index = load_dataset(config.dataset_root);
  const std::uint32_t k = dataset_classes(config, index);
  const int positive = positive_index(config, index);
  const Checkpoint initial = initial_checkpoint(config, k);
  const PreprocessConfig preprocess = preprocess_for(config, initial.config);

  const std::uint64_t fold_seed = derive_seed(config.seed, "folds");
  const FoldSplit split = config.stratified
                              ? stratified_kfold_split(index.labels(), config.folds, fold_seed)
                              : kfold_split(index.samples.size(), config.folds, fold_seed);
  fs::create_directories(config.output_dir);
  write_text(config.output_dir / "classes.txt", classes_txt(index.classes));

  std::vector<MetricsRow> rows;
  for (std::size_t f = 0; f < split.k; ++f) {
    DatasetImages train_set(index, split.complement(f));
    DatasetImages val_set(index, split.members(f));
    TrainPlan plan = config.plan(derive_seed(derive_seed(config.seed, "train"), f));
    plan.preprocess = preprocess;
    const std::string label = std::to_string(f + 1);
    TrainResult result = train(train_set, val_set, initial.params, initial.config, plan,
                               [&](const EpochRecord& r) {
                                 out << "fold " << label << " epoch " << r.epoch
                                     << " train_loss " << format_number(r.train_loss)
                                     << " val_accuracy " << format_number(r.val_accuracy) << "\n";
                               });
    write_text(config.output_dir / ("history_fold" + label + ".csv"), history_csv(result.history));
    rows.push_back(evaluate_on(result.best_params, initial.config, val_set, preprocess, positive, label));
    out << "fold " << label << " best_epoch " << result.best_epoch << " accuracy "
        << format_number(rows.back().accuracy) << "\n";
  }
  const MetricsReport report = aggregate_folds(std::move(rows));
  write_report(config.output_dir, report, index, positive, true);
  out << "average accuracy " << format_number(report.average.accuracy) << "\n";
  return kOk;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  const DatasetIndex index = load_dataset(config.dataset_root);
  const std::uint32_t k = dataset_classes(config, index);
  const Checkpoint initial = initial_checkpoint(config, k);
  const PreprocessConfig preprocess = preprocess_for(config, initial.config);
  if (config.val_fold >= config.folds) {
    throw ValidationError("val_fold " + std::to_string(config.val_fold) + " must be below folds " +
                          std::to_string(config.folds));
  }
  const std::uint64_t fold_seed = derive_seed(config.seed, "folds");
  const FoldSplit split = config.stratified
                              ? stratified_kfold_split(index.labels(), config.folds, fold_seed)
                              : kfold_split(index.samples.size(), config.folds, fold_seed);
  DatasetImages train_set(index, split.complement(config.val_fold));
  DatasetImages val_set(index, split.members(config.val_fold));
  TrainPlan plan = config.plan(derive_seed(config.seed, "train"));
  plan.preprocess = preprocess;
  TrainResult result = train(train_set, val_set, initial.params, initial.config, plan,
                             [&](const EpochRecord& r) {
                               out << "epoch " << r.epoch << " train_loss " << format_number(r.train_loss)
                                   << " val_accuracy " << format_number(r.val_accuracy) << "\n";
                             });
  fs::create_directories(config.output_dir);
  const fs::path ckpt_path =
      config.checkpoint_out.empty() ? config.output_dir / "model.vitc" : config.checkpoint_out;
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  Checkpoint best{initial.config, std::move(result.best_params), std::move(result.best_optimizer)};
  save_checkpoint(best, ckpt_path);
  write_text(config.output_dir / "history.csv", history_csv(result.history));
  write_text(config.output_dir / "classes.txt", classes_txt(index.classes));
  out << "best_epoch " << result.best_epoch << " val_accuracy "
      << format_number(result.best_val_accuracy) << " checkpoint " << ckpt_path.string() << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
  if (config.checkpoint_in.empty()) throw ValidationError("eval: checkpoint_in is required");
  const DatasetIndex index = load_dataset(config.dataset_root);
  const Checkpoint ckpt = load_checkpoint(config.checkpoint_in);
  if (ckpt.config.num_classes != index.num_classes()) {
    throw ValidationError("eval: checkpoint has " + std::to_string(ckpt.config.num_classes) +
                          " classes, dataset has " + std::to_string(index.num_classes()));
  }
  const int positive = positive_index(config, index);
  DatasetImages all(index);
  MetricsRow row = evaluate_on(ckpt.params, ckpt.config, all, preprocess_for(config, ckpt.config),
                               positive, "eval");
  MetricsReport report;
  report.folds.push_back(row);
  report.average = row;
  fs::create_directories(config.output_dir);
  write_report(config.output_dir, report, index, positive, false);
  out << metrics_csv(row);
  return kOk;
}

int cmd_predict(const RunConfig& config, const std::vector<fs::path>& images, std::ostream& out,
                std::ostream& err) {
  if (config.checkpoint_in.empty()) throw ValidationError("predict: checkpoint_in is required");
  if (images.empty()) throw ValidationError("predict: no image paths given");
  const Checkpoint ckpt = load_checkpoint(config.checkpoint_in);
  std::vector<std::string> names = config.class_names;
  if (names.empty() && !config.dataset_root.empty()) names = load_dataset(config.dataset_root).classes;
  if (names.empty()) {
    std::ifstream in(config.checkpoint_in.parent_path() / "classes.txt");
    for (std::string line; std::getline(in, line);)
      if (!trim(line).empty()) names.push_back(trim(line));
  }
  if (names.empty()) {
    for (std::uint32_t c = 0; c < ckpt.config.num_classes; ++c) names.push_back("class" + std::to_string(c));
  }
  if (names.size() != ckpt.config.num_classes) {
    throw ValidationError("predict: " + std::to_string(names.size()) + " class names for a " +
                          std::to_string(ckpt.config.num_classes) + "-class checkpoint");
  }
  const PreprocessConfig preprocess = preprocess_for(config, ckpt.config);
  std::size_t skipped = 0;
  for (const auto& path : images) {
    Tensor<float> image;
    try {
      image = decode_image(path);
    } catch (const Error& e) {
      err << "warning: skipped " << path.string() << ": " << e.what() << "\n";
      ++skipped;
      continue;
    }
    const auto probs = softmax(predict_logits(ckpt.params, ckpt.config, image, preprocess));
    out << path.string() << '\t' << names[argmax(probs)];
    for (double p : probs) out << '\t' << format_number(p);
    out << '\n';
  }
  if (skipped) {
    err << "skipped " << skipped << " image(s)\n";
    return kSkippedInputs;
  }
  return kOk;
}

int cmd_convert_check(const fs::path& checkpoint, std::ostream& out) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(checkpoint);
  } catch (const IoError& e) {
    throw CheckpointError(CheckpointError::Kind::io, e.what());
  }
  const Checkpoint ckpt = parse_checkpoint(bytes, checkpoint.string());
  const ViTConfig& c = ckpt.config;
  out << "config image_size=" << c.image_size << " channels=" << c.channels
      << " patch_size=" << c.patch_size << " hidden_dim=" << c.hidden_dim << " mlp_dim=" << c.mlp_dim
      << " num_heads=" << c.num_heads << " num_layers=" << c.num_layers
      << " num_classes=" << c.num_classes << "\n";
  for (const auto& e : tensor_manifest(ckpt.params)) {
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << e.checksum;
    out << e.name << ' ' << shape_str(e.shape) << ' ' << hex.str() << '\n';
  }
  const std::size_t total = count_parameters(ckpt.params);
  const std::size_t head = std::size_t{c.hidden_dim} * c.num_classes + c.num_classes;
  out << "parameters " << total << " backbone " << total - head << " head " << head << "\n";
  out << "optimizer_state " << (ckpt.optimizer ? "present" : "absent") << "\n";
  const bool identical = serialize_checkpoint(ckpt) == bytes;
  out << "reserialize " << (identical ? "identical" : "DIFFERENT") << "\n";
  return identical ? kOk : kCheckpoint;
}

int report_error(const std::exception& e, std::ostream& err) {
  int code = kFailure;
  const char* kind = "error";
  if (dynamic_cast<const CheckpointError*>(&e)) {
    code = kCheckpoint;
    kind = "checkpoint error";
  } else if (dynamic_cast<const IngestionError*>(&e) || dynamic_cast<const DecodeError*>(&e)) {
    code = kDataset;
    kind = "dataset error";
  } else if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ShapeError*>(&e)) {
    code = kValidation;
    kind = "invalid input";
  } else if (dynamic_cast<const IoError*>(&e)) {
    code = kFailure;
    kind = "io error";
  }
  err << "vitforge: " << kind << ": " << e.what() << "\n";
  return code;
}

}  // namespace vitforge::cli
