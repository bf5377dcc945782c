#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vitforge/train.hpp"
#include "vitforge/vit.hpp"

namespace vitforge::cli {

/// Every setting of a run. Keys in a config file use the field names below;
/// defaults are the ViT-Base fine-tuning recipe.
struct RunConfig {
  std::filesystem::path dataset_root;
  std::uint32_t num_classes = 0;  // 0: taken from the dataset vocabulary
  std::string positive_class;     // empty: first class of the sorted vocabulary
  std::filesystem::path checkpoint_in;
  std::filesystem::path checkpoint_out;  // empty: <output_dir>/model.vitc
  std::filesystem::path output_dir = "vitforge_out";
  std::vector<std::string> class_names;  // predict only; overrides other sources

  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  FreezeMode freeze_mode = FreezeMode::head_only;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;

  std::size_t folds = 5;
  bool stratified = false;
  std::size_t val_fold = 0;  // train: which fold of the split is held out

  ViTConfig model;                              // num_classes filled at run time
  std::optional<std::size_t> resize_shorter;    // unset: 256/224 of image_size

  PreprocessConfig preprocess() const;
  TrainPlan plan(std::uint64_t seed_override) const;
};

/// Sorted list of accepted keys.
std::vector<std::string> known_keys();

/// Applies one `key = value` assignment; unknown keys and malformed values
/// throw ValidationError.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// Line-oriented `key = value` text; `#` starts a comment.
void apply_config_text(RunConfig& config, std::string_view text, std::string_view source = "config");
RunConfig load_run_config(const std::filesystem::path& path);

/// Process exit codes, one per failure class.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kDataset = 3,
  kCheckpoint = 4,
  kValidation = 5,
  kSkippedInputs = 6,
};

/// Runs k-fold cross-validation; writes metrics.csv, metrics.json,
/// history_fold<i>.csv and classes.txt to output_dir.
int cmd_crossval(const RunConfig& config, std::ostream& out);

/// Trains on all folds but `val_fold`, selecting on the held-out fold; writes
/// the best checkpoint, history.csv and classes.txt.
int cmd_train(const RunConfig& config, std::ostream& out);

/// Evaluates checkpoint_in on every sample of dataset_root; writes
/// metrics.csv (one row, fold "eval") and metrics.json.
int cmd_eval(const RunConfig& config, std::ostream& out);

/// One line per image on `out`: path, predicted class name, then one
/// probability per class, tab-separated. Undecodable images are skipped with
/// a warning on `err`.
int cmd_predict(const RunConfig& config, const std::vector<std::filesystem::path>& images,
                std::ostream& out, std::ostream& err);

/// Loads and validates a checkpoint file, prints its tensor manifest and
/// parameter counts, and checks that re-serializing reproduces the file
/// byte for byte.
int cmd_convert_check(const std::filesystem::path& checkpoint, std::ostream& out);

/// Maps an exception to its exit code and prints a one-line diagnostic.
int report_error(const std::exception& e, std::ostream& err);

}  // namespace vitforge::cli
