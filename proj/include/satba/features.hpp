#pragma once

#include <string>

#include "satba/image.hpp"

namespace satba::features {

enum class Mode { HOG, LBP };

Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

/// Dense per-pixel feature map with the source image's shape, values in [0,1].
struct FeatureImage {
  Image values;
  Mode mode = Mode::HOG;
};

/// HOG parameters. Blocks are 2x2 cells with a one-cell stride.
struct HogParams {
  int cell_size = 8;
  int bins = 9;
  double epsilon = 1e-6;
};

/// Computes L(x) per channel.
///
/// HOG: centered-difference gradients, unsigned orientation histograms per
/// cell (magnitude-weighted), L2 block normalization averaged over the
/// blocks that contain a cell. Each pixel with a nonzero gradient receives
/// its cell's normalized histogram value at the pixel's own orientation bin.
/// The map is divided by its maximum so it spans [0,1].
///
/// LBP: 8-neighbour radius-1 codes, clockwise from the top-left neighbour
/// (top-left is the most significant bit); a neighbour >= centre sets its bit.
/// Codes are divided by 255.
///
/// Borders replicate edge pixels in both modes.
FeatureImage extract_features(const Image& x, Mode mode, const HogParams& hog = {});

}  // namespace satba::features
