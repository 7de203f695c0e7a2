#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "satba/datasets.hpp"
#include "satba/eval.hpp"
#include "satba/features.hpp"
#include "satba/steganet.hpp"
#include "satba/victim.hpp"

namespace satba {

/// Everything one experiment needs. Loaded from a sectioned key/value file:
///
///     [dataset]   train_root, test_root, layout, train_per_class, test_per_class
///     [features]  mode
///     [attention] surrogate, layers
///     [steganet]  lambda1, lambda2, epochs, lr, plateau_factor, plateau_patience,
///                 batch_size, depth, base_width, extraction_layers, extraction_width
///     [poison]    eta, target_label
///     [victim]    architecture, epochs, lr, momentum, step_every, step_factor, batch_size
///     [eval]      stealth_samples, patch_size, patch_corner, nc_steps, nc_lambda,
///                 nc_lr, nc_samples, nc_baseline, sweep_etas
///     [output]    dir
///     [run]       seed
///
/// Relative paths are resolved against the config file's directory.
struct ExperimentConfig {
  std::filesystem::path train_root;
  std::filesystem::path test_root;
  datasets::Layout layout = datasets::Layout::ClassDirs;
  std::size_t train_per_class = 0;  // 0 keeps everything
  std::size_t test_per_class = 0;

  features::Mode feature_mode = features::Mode::HOG;

  std::optional<std::filesystem::path> surrogate;
  std::vector<std::string> attention_layers;  // empty = all convolutional layers

  steganet::SteganetLossConfig steganet;
  steganet::InjectionConfig injection;
  steganet::ExtractionConfig extraction;

  double eta = 0.1;
  int target_label = 0;

  victim::Architecture architecture = victim::Architecture::SmallCnn;
  victim::TrainSchedule schedule;

  std::size_t stealth_samples = 1000;
  int patch_size = 3;
  eval::Corner patch_corner = eval::Corner::BottomRight;
  int nc_steps = 100;
  double nc_lambda = 0.01;
  double nc_lr = 0.1;
  std::size_t nc_samples = 64;
  bool nc_baseline = true;
  std::vector<double> sweep_etas = {0.01, 0.02, 0.05, 0.1};

  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;

  /// Directory relative paths were resolved against.
  std::filesystem::path base_dir = ".";

  /// Effective values, paths relative to `base_dir`. Used for the report
  /// echo and the hash.
  nlohmann::json echo() const;
  /// SHA-256 of the canonical echo; excludes the output directory.
  std::string hash() const;
  void validate() const;
};

/// Parses and validates a config file. Unknown sections or keys, malformed
/// values and out-of-range values raise ValidationError naming the field
/// (and the line, for syntax errors).
ExperimentConfig load_config(const std::filesystem::path& path);

/// Same, from text; relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);

}  // namespace satba
