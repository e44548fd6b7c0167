// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "distileak/aia/aia.hpp"
#include "distileak/dataforge/dataset.hpp"
#include "distileak/distiller/distill.hpp"
#include "distileak/mia/mia.hpp"
#include "distileak/miv/miv.hpp"
#include "distileak/theoremlab/theorem.hpp"
#include "distileak/trajlab/trajectory.hpp"

namespace distileak::cli {

/// Parse or validation failure; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage threw; the CLI maps it to exit code 1.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage " + stage + " failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

enum class Stage { kData, kDistill, kLocal, kCorpus, kAia, kMia, kMiv, kTheorem };

std::string_view stage_name(Stage s);
/// Throws ConfigError for an unknown name.
Stage parse_stage(std::string_view name);
/// Direct prerequisites.
std::vector<Stage> stage_dependencies(Stage s);

struct DataParams {
  dataforge::GenerateConfig generate;
  dataforge::SplitPlan split;
};

struct DistillParams {
  modelzoo::ArchId arch = modelzoo::ArchId::kMlpS;
  distiller::DistillConfig config;
};

struct LocalParams {
  trajlab::RecordConfig record{.epochs = 30, .batch_size = 8, .optimizer = {.learning_rate = 0.05},
                               .keep_checkpoints = true};
};

struct CorpusParams {
  std::vector<distiller::Algorithm> algorithms;
  std::vector<modelzoo::ArchId> archs;
  trajlab::CorpusConfig config;  // config.distill holds one template per algorithm
};

struct AiaParams {
  aia::AiaConfig config;
  bool permutation_null = true;
};

struct MiaParams {
  mia::MiaConfig config;
  bool ablation = true;  // also score with logits-only features
  double fpr_target = 0.01;
};

struct MivParams {
  miv::MivConfig config;
  std::size_t per_class = 25;
  std::size_t sample_steps = 20;
  modelzoo::ArchId eval_arch = modelzoo::ArchId::kCnnS;
  modelzoo::TrainConfig eval_training{.epochs = 30, .batch_size = 16};
};

struct TheoremParams {
  theoremlab::ExperimentConfig experiment;
  std::vector<modelzoo::Activation> activations{modelzoo::Activation::kTanh, modelzoo::Activation::kRelu};
};

/// Sectioned key-value configuration. Every stage seed is derived from `seed`
/// and the stage name.
struct PipelineConfig {
  std::vector<Stage> stages;
  std::uint64_t seed = 0;
  std::filesystem::path out = "distileak-out";

  DataParams data;
  DistillParams distill;
  LocalParams local;
  CorpusParams corpus;
  AiaParams aia;
  MiaParams mia;
  MivParams miv;
  TheoremParams theorem;

  /// Sorted "key=value" lines per section as read, for hashing.
  std::map<std::string, std::string> canonical;
};

/// INI text with sections [run], [data], [distill], [local], [corpus], [aia],
/// [mia], [miv], [theorem]. Unknown sections or keys are errors. Throws
/// ConfigError; the result is validated.
PipelineConfig parse_config(std::istream& in);
PipelineConfig load_config(const std::filesystem::path& path);
/// Checks stage list, dependency closure and parameter ranges.
void validate(const PipelineConfig& config);

/// Hash of a stage's inputs: its section, the global seed and the hashes of
/// its prerequisites. Used as the resume key.
std::string stage_hash(const PipelineConfig& config, Stage s);
std::string config_hash(const PipelineConfig& config);

/// Executes the stages in dependency order under config.out/<stage>/. A stage
/// whose done marker matches its hash is not re-run; its persisted metrics are
/// reused. Writes config.out/report.json after every stage and returns it.
/// Throws StageError.
nlohmann::json run_pipeline(const PipelineConfig& config, std::ostream& log);

/// Writes <run>/plots/: ROC point files for each MIA feature mode and, when a
/// corpus exists, trajectories.csv with one row per corpus record. Returns the
/// written paths. Throws std::runtime_error when the MIA output is missing.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& run_dir);

}  // namespace distileak::cli
