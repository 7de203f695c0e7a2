#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "satba/image.hpp"
#include "satba/victim.hpp"

namespace satba::defense {

/// A candidate trigger for one class: x' = (1 - mask) * x + mask * pattern.
struct ReversedTrigger {
  int height = 0;
  int width = 0;
  std::vector<float> mask;  // H x W, [0,1]
  Image pattern;            // H x W x C, [0,1]
  double l1_norm = 0.0;     // sum of mask values
  int target_class = 0;
  double loss = 0.0;        // objective value of the returned iterate
};

struct ReverseConfig {
  int steps = 100;
  double lambda_l1 = 0.01;
  double lr = 0.1;
  /// Minibatch size drawn from the sample each step; 0 uses the whole sample.
  int batch_size = 0;

  void validate() const;
};

/// Optimizes a sigmoid-parameterized (mask, pattern) pair so that stamped
/// sample images are classified as `target_class`, with an L1 penalty on the
/// mask. Both start at sigmoid(0) = 0.5. Returns the iterate with the lowest
/// objective seen; with zero steps, the initialization.
ReversedTrigger reverse_engineer_trigger(victim::ClassifierImpl& model,
                                         const std::vector<Image>& sample, int target_class,
                                         const ReverseConfig& cfg, std::uint64_t seed);

/// MAD consistency constant for normally distributed data.
inline constexpr double kMadConsistency = 1.4826;
inline constexpr double kAnomalyThreshold = 2.0;

struct AnomalyResult {
  std::map<int, double> per_class_index;
  /// Largest index among classes whose norm is below the median.
  double max_index = 0.0;
  int flagged_class = -1;
  bool flagged = false;
};

/// index(c) = |norm(c) - median| / (1.4826 * max(MAD, 1e-9)). Only classes
/// below the median can be flagged; flagged iff max_index > 2.
/// Requires at least three classes.
AnomalyResult anomaly_index(const std::map<int, double>& l1_norms);

struct ProbeResult {
  std::vector<ReversedTrigger> triggers;  // one per class
  AnomalyResult anomaly;
};

/// Reverse-engineers a trigger for every class and scores the mask norms.
ProbeResult neural_cleanse(victim::ClassifierImpl& model, const std::vector<Image>& sample,
                           const ReverseConfig& cfg, std::uint64_t seed);

}  // namespace satba::defense
