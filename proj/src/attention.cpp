#include "satba/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

namespace satba::attention {

std::vector<FeatureMapStack> capture_feature_maps(victim::ClassifierImpl& model,
                                                  std::span<const Image> images,
                                                  const std::set<std::string>& layers) {
  std::vector<FeatureMapStack> stacks(images.size());
  if (images.empty()) return stacks;
  torch::NoGradGuard no_grad;
  const bool was_training = model.is_training();
  model.eval();
  constexpr std::size_t kChunk = 128;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    victim::FeatureSink sink;
    model.forward(to_tensor(chunk), &sink);
    for (auto& [name, act] : sink) {
      if (!layers.empty() && !layers.contains(name)) continue;
      const auto t = act.detach().to(torch::kFloat).contiguous();
      const int c = static_cast<int>(t.size(1));
      const int h = static_cast<int>(t.size(2));
      const int w = static_cast<int>(t.size(3));
      const std::size_t per_image = static_cast<std::size_t>(c) * h * w;
      const float* data = t.data_ptr<float>();
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        FeatureMap map{name, c, h, w, std::vector<float>(data + i * per_image, data + (i + 1) * per_image)};
        stacks[start + i].layers.push_back(std::move(map));
      }
    }
  }
  model.train(was_training);
  if (stacks.front().layers.empty()) {
    throw ValidationError("capture_feature_maps: model exposes no (selected) convolutional layers");
  }
  return stacks;
}

FeatureMapStack capture_feature_maps(victim::ClassifierImpl& model, const Image& x,
                                     const std::set<std::string>& layers) {
  return std::move(capture_feature_maps(model, std::span<const Image>(&x, 1), layers).front());
}

AttentionMatrix spatial_attention_matrix(const FeatureMapStack& stack, int target_height,
                                         int target_width) {
  if (stack.layers.empty()) throw ValidationError("spatial_attention_matrix: empty feature stack");
  if (target_height <= 0 || target_width <= 0) {
    throw ValidationError("spatial_attention_matrix: target shape must be positive");
  }

  cv::Mat total = cv::Mat::zeros(target_height, target_width, CV_64F);
  for (const auto& layer : stack.layers) {
    const std::size_t plane = static_cast<std::size_t>(layer.height) * layer.width;
    if (layer.values.size() != plane * layer.channels) {
      throw ValidationError("feature map '" + layer.layer + "' has inconsistent size");
    }
    cv::Mat summed = cv::Mat::zeros(layer.height, layer.width, CV_64F);
    auto* s = summed.ptr<double>();
    for (int c = 0; c < layer.channels; ++c) {
      const float* src = layer.values.data() + c * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        if (!std::isfinite(src[p])) {
          throw ValidationError("feature map '" + layer.layer + "' contains non-finite values");
        }
        s[p] += src[p];
      }
    }
    if (layer.height != target_height || layer.width != target_width) {
      cv::Mat resized;
      cv::resize(summed, resized, cv::Size(target_width, target_height), 0, 0, cv::INTER_LINEAR);
      summed = resized;
    }
    total += summed;
  }

  const std::size_t n = static_cast<std::size_t>(target_height) * target_width;
  const double* v = total.ptr<double>();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += v[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (v[i] - mean) * (v[i] - mean);
  var /= static_cast<double>(n);
  // Relative threshold: bilinear resampling of a constant map leaves rounding noise.
  const bool degenerate = var <= 1e-24 * std::max(1.0, mean * mean);
  const double scale = degenerate ? 1.0 : 1.0 / std::sqrt(var);

  constexpr double kLowest = std::numeric_limits<double>::min();
  const double kHighest = std::nextafter(1.0, 0.0);
  AttentionMatrix m{target_height, target_width, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double z = degenerate ? 0.0 : (v[i] - mean) * scale;
    // Extreme z on large maps would round to exactly 0 or 1 in double.
    m.values[i] = std::clamp(1.0 / (1.0 + std::exp(-z)), kLowest, kHighest);
  }
  return m;
}

}  // namespace satba::attention
