#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "satba/image.hpp"
#include "satba/victim.hpp"

namespace satba::attention {

/// One convolutional layer's activations for a single image.
struct FeatureMap {
  std::string layer;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;  // channel-major: [c][y][x]
};

/// Activations of every instrumented layer, in forward order.
struct FeatureMapStack {
  std::vector<FeatureMap> layers;
};

/// Spatial saliency with values strictly inside (0, 1), row-major.
struct AttentionMatrix {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

/// Runs `model` in inference mode and records post-activation outputs of its
/// convolutional layers. An empty `layers` set keeps every layer; otherwise
/// only the named ones. Throws ValidationError when nothing is captured.
FeatureMapStack capture_feature_maps(victim::ClassifierImpl& model, const Image& x,
                                     const std::set<std::string>& layers = {});

/// Batched capture; one stack per image.
std::vector<FeatureMapStack> capture_feature_maps(victim::ClassifierImpl& model,
                                                  std::span<const Image> images,
                                                  const std::set<std::string>& layers = {});

/// Consolidates a stack into one attention matrix: per layer, sum over
/// channels and bilinearly resize to target size; sum the layers; standardize
/// to zero mean and unit variance; apply the logistic sigmoid. A spatially
/// constant sum is only centred (no division), which yields a uniform 0.5.
AttentionMatrix spatial_attention_matrix(const FeatureMapStack& stack, int target_height,
                                         int target_width);

}  // namespace satba::attention
