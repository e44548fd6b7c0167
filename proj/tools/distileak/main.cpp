// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment driver: `run <config>`, `validate <config>`, `emit-plots <run-dir>`.
// Exit codes: 0 success, 1 stage or emit failure, 2 invalid config.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "distileak/cli/pipeline.hpp"

namespace dc = distileak::cli;

namespace {

constexpr int kStageFailure = 1;
constexpr int kInvalidConfig = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distileak: distilled-dataset leakage experiments"};
  app.require_subcommand(1);

  std::string config_path, out_override, run_dir;
  CLI::App* run = app.add_subcommand("run", "Execute the configured pipeline");
  run->add_option("config", config_path, "INI configuration")->required();
  run->add_option("--out", out_override, "Override [run] out");
  CLI::App* check = app.add_subcommand("validate", "Parse and validate a configuration");
  check->add_option("config", config_path, "INI configuration")->required();
  CLI::App* plots = app.add_subcommand("emit-plots", "Write plot CSVs for a completed run");
  plots->add_option("run-dir", run_dir, "Output directory of a run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (*plots) {
    try {
      for (const auto& p : dc::emit_plots(run_dir)) std::cout << p.string() << '\n';
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kStageFailure;
    }
  }

  dc::PipelineConfig config;
  try {
    config = dc::load_config(config_path);
  } catch (const dc::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kInvalidConfig;
  }
  if (*check) {
    std::cout << "ok " << dc::config_hash(config) << '\n';
    return 0;
  }
  if (!out_override.empty()) config.out = out_override;
  try {
    dc::run_pipeline(config, std::cerr);
    std::cout << (config.out / "report.json").string() << '\n';
    return 0;
  } catch (const dc::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kStageFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kStageFailure;
  }
}
