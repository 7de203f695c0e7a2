#pragma once

#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "satba/datasets.hpp"
#include "satba/image.hpp"
#include "satba/victim.hpp"

namespace satba::eval {

// ---------------------------------------------------------------------------
// Attack effectiveness

/// Fraction of test images with ground truth != target whose poisoned
/// version is classified as `target_label`. Throws ValidationError when
/// every sample belongs to the target class.
double attack_success_rate(victim::ClassifierImpl& model, const datasets::LabeledDataset& testset,
                           const datasets::Poisoner& poisoner, int target_label);

/// Same, with the poisoned test images precomputed (one per test item).
double attack_success_rate(victim::ClassifierImpl& model, const datasets::LabeledDataset& testset,
                           const std::vector<Image>& poisoned, int target_label);

/// Counting core shared by both overloads.
double attack_success_rate(const std::vector<int>& ground_truth, const std::vector<int>& predicted,
                           int target_label);

double clean_data_accuracy(victim::ClassifierImpl& model, const datasets::LabeledDataset& testset);
double clean_data_accuracy(const std::vector<int>& ground_truth, const std::vector<int>& predicted);

// ---------------------------------------------------------------------------
// Stealth metrics, all on the 255 scale.

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

double mse(const Image& a, const Image& b);
/// 10·log10(255² / mse); +inf when the images are identical.
double psnr(const Image& a, const Image& b);
/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 255. Local statistics are computed at every pixel; near the
/// border the window is truncated and its weights renormalized, so images
/// smaller than the window are supported. Averaged over channels and pixels.
double ssim(const Image& a, const Image& b);

/// Perceptual distance hook (LPIPS-style). Implementations wrap an embedding
/// network; none ships with the toolkit.
using PerceptualDistance = std::function<double(const Image&, const Image&)>;

/// LPIPS-style distance built from any feature embedding: each layer's
/// activations are unit-normalized across channels, squared differences are
/// averaged over positions and summed over layers (uniform layer weights).
/// `embed` returns per-layer tensors shaped C x H x W.
PerceptualDistance make_embedding_distance(
    std::function<std::vector<torch::Tensor>(const Image&)> embed);

struct StealthMetrics {
  double psnr_db = 0.0;  // mean of per-image dB values
  double ssim = 0.0;
  double mse = 0.0;
  std::optional<double> lpips;
  std::size_t pairs = 0;
};

StealthMetrics stealth_report(const std::vector<std::pair<Image, Image>>& pairs,
                              const PerceptualDistance& perceptual = {});

// ---------------------------------------------------------------------------
// Baseline and sweeps

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };
Corner parse_corner(const std::string& name);
std::string to_string(Corner corner);

/// BadNets-style poisoner that stamps a white square of side `patch_size`.
datasets::Poisoner make_patched_baseline(int patch_size, Corner corner, int height = 32,
                                         int width = 32);

struct SweepPoint {
  double eta = 0.0;
  double asr = 0.0;
  double cda = 0.0;
};

/// Runs `run_point(eta)` -> (asr, cda) for every eta, preserving order.
std::vector<SweepPoint> poison_rate_sweep(
    const std::vector<double>& etas, const std::function<std::pair<double, double>(double)>& run_point);

std::string sweep_csv(const std::vector<SweepPoint>& points);

// ---------------------------------------------------------------------------
// Reports

struct EvaluationReport {
  double asr = 0.0;
  double cda = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
  std::optional<double> lpips;
  /// Per ground-truth class: eligible/hit counts for ASR, total/correct for CDA.
  std::map<int, std::map<std::string, int>> per_class;
  nlohmann::json config = nlohmann::json::object();
  /// Free-form additions (clean baseline accuracy, patch-baseline stealth...).
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

/// Numbers are written as-is except non-finite PSNR, which becomes "inf".
nlohmann::json to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const nlohmann::json& j);

/// JSON value for a metric that may be +inf.
nlohmann::json metric_json(double value);
double metric_from_json(const nlohmann::json& j);

void emit_report(const EvaluationReport& report, const std::filesystem::path& path);
EvaluationReport read_report(const std::filesystem::path& path);

}  // namespace satba::eval
