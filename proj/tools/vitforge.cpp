#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vitforge/cli.hpp"

namespace fs = std::filesystem;
using namespace vitforge;

int main(int argc, char** argv) {
  CLI::App app{"vitforge: Vision Transformer fine-tuning toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--set", overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--seed", seed, "root seed (overrides the config file)");
  };

  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation with metrics report");
  auto* train = app.add_subcommand("train", "train and save the best checkpoint");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  auto* predict = app.add_subcommand("predict", "classify image files");
  auto* convert_check = app.add_subcommand("convert-check", "validate a checkpoint file");
  for (auto* cmd : {crossval, train, eval, predict}) add_common(cmd);

  std::vector<std::string> images;
  predict->add_option("images", images, "image files")->required();
  std::string checkpoint_file;
  convert_check->add_option("checkpoint", checkpoint_file, "checkpoint to validate")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  try {
    if (convert_check->parsed()) return cli::cmd_convert_check(checkpoint_file, std::cout);

    cli::RunConfig config = config_path.empty() ? cli::RunConfig{} : cli::load_run_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
      cli::apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (app.get_subcommands().front()->count("--seed")) config.seed = seed;

    if (crossval->parsed()) return cli::cmd_crossval(config, std::cout);
    if (train->parsed()) return cli::cmd_train(config, std::cout);
    if (eval->parsed()) return cli::cmd_eval(config, std::cout);
    std::vector<fs::path> paths(images.begin(), images.end());
    return cli::cmd_predict(config, paths, std::cout, std::cerr);
  } catch (const std::exception& e) {
    return cli::report_error(e, std::cerr);
  }
}
