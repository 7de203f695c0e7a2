#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "satba/config.hpp"

namespace satba::pipeline {

enum class Stage {
  Features,
  Attention,
  Trigger,
  TrainSteganet,
  Poison,
  TrainVictim,
  Evaluate,
  Defend,
  Sweep,
};

/// Stages in execution order.
const std::vector<Stage>& all_stages();
std::string to_string(Stage stage);
Stage parse_stage(const std::string& name);

struct RunOptions {
  /// Re-run stages even when their manifest matches.
  bool force = false;
  /// Progress messages; null silences them.
  std::ostream* log = nullptr;
};

struct StageOutcome {
  Stage stage;
  bool skipped = false;
};

/// Runs the requested stages in pipeline order. Every stage writes into
/// `<output_dir>/<stage>/` together with `manifest.json`, which records the
/// hash of the stage's config slice, the hashes of its inputs (dataset files
/// and upstream manifests) and the hashes of its outputs. A stage whose
/// manifest still matches is skipped unless forced. An empty stage list only
/// validates the config.
///
/// Throws ValidationError naming the stage to run first when an upstream
/// artifact is missing.
std::vector<StageOutcome> run_pipeline(const ExperimentConfig& cfg, const std::vector<Stage>& stages,
                                       const RunOptions& options = {});

/// Directory holding a stage's artifacts.
std::filesystem::path stage_dir(const ExperimentConfig& cfg, Stage stage);

/// Reads a JSON artifact, raising ValidationError if it is missing.
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Attention matrices as written by the attention stage.
struct AttentionBundle {
  int height = 0;
  int width = 0;
  std::vector<std::vector<double>> maps;
};
void save_attention(const std::filesystem::path& path, const AttentionBundle& bundle);
AttentionBundle load_attention(const std::filesystem::path& path);

}  // namespace satba::pipeline
