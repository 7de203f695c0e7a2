#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/types.h>

namespace satba {

/// Raised for bad inputs, configs and arguments (CLI exit code 1).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Interleaved H x W x C pixel grid with values in [0, 1].
///
/// Images, feature maps and triggers all share this representation, so the
/// trigger generator, the injection network and the metrics operate on the
/// same type.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f);

  float& at(int row, int col, int ch) {
    return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  float at(int row, int col, int ch) const {
    return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }

  std::size_t size() const { return pixels.size(); }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
  /// True when every value lies in [0, 1] and the buffer matches the shape.
  bool valid() const;

  friend bool operator==(const Image&, const Image&) = default;
};

std::string shape_string(const Image& img);

/// Throws ValidationError unless `a` and `b` have identical shapes.
void require_same_shape(const Image& a, const Image& b, const char* what);

/// Stacks images into an N x C x H x W float tensor.
torch::Tensor to_tensor(std::span<const Image> images);
torch::Tensor to_tensor(const Image& image);

/// Splits an N x C x H x W (or C x H x W) tensor back into images.
std::vector<Image> from_tensor(const torch::Tensor& batch);

/// Reads any image format OpenCV decodes. Grayscale input is replicated to
/// three channels, color input is converted to RGB, and the result is
/// bilinearly resized to `height` x `width` and scaled to [0, 1].
Image read_image(const std::filesystem::path& path, int height = 32, int width = 32);

/// Writes an 8-bit PNG (values x 255, rounded).
void write_png(const std::filesystem::path& path, const Image& image);

/// Writes a single-channel map as a JET-colored heatmap. Values are assumed
/// to lie in [0, 1].
void write_heatmap_png(const std::filesystem::path& path, const std::vector<double>& values,
                       int height, int width);

/// Binary container for a list of same-shaped images with optional labels.
struct ImageBundle {
  std::vector<Image> images;
  std::vector<std::int32_t> labels;  // empty or images.size()
};

void save_bundle(const std::filesystem::path& path, const ImageBundle& bundle);
ImageBundle load_bundle(const std::filesystem::path& path);

}  // namespace satba
