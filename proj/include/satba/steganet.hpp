#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "satba/image.hpp"

namespace satba::steganet {

/// U-shaped injector geometry. Spatial size is halved `depth` times, so the
/// input height and width must be divisible by 2^depth.
struct InjectionConfig {
  int channels = 3;
  int depth = 3;
  int base_width = 32;
};

/// Plain fully convolutional extractor: `layers` 3x3 convolutions.
struct ExtractionConfig {
  int channels = 3;
  int layers = 5;
  int width = 32;
};

/// I(x ⊕ t): concatenates image and trigger along channels and maps them to a
/// poisoned image. Encoder and decoder stages are two conv-BN-ReLU layers;
/// decoder stages see the mirrored encoder output through concatenation.
/// A 1x1 convolution and a sigmoid produce the output.
class InjectionNetworkImpl : public torch::nn::Module {
 public:
  explicit InjectionNetworkImpl(const InjectionConfig& cfg = {});
  torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& trigger);
  const InjectionConfig& config() const { return cfg_; }

 private:
  InjectionConfig cfg_;
  std::vector<torch::nn::Sequential> encoders_;
  torch::nn::Sequential bottleneck_{nullptr};
  std::vector<torch::nn::ConvTranspose2d> upsamplers_;
  std::vector<torch::nn::Sequential> decoders_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(InjectionNetwork);

/// E(x̂): recovers the trigger from a poisoned image, sigmoid output.
class ExtractionNetworkImpl : public torch::nn::Module {
 public:
  explicit ExtractionNetworkImpl(const ExtractionConfig& cfg = {});
  torch::Tensor forward(const torch::Tensor& poisoned);
  const ExtractionConfig& config() const { return cfg_; }

 private:
  ExtractionConfig cfg_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ExtractionNetwork);

struct SteganetLossConfig {
  double lambda1 = 0.5;
  double lambda2 = 1.0;
  int epochs = 150;
  double lr = 0.001;
  double plateau_factor = 0.5;
  int plateau_patience = 3;
  /// Minimum absolute validation-loss decrease that counts as improvement.
  double min_improvement = 1e-5;
  int batch_size = 16;
  double validation_fraction = 0.1;

  void validate() const;
};

/// λ1·MSE(x, x̂) + λ2·MSE(t, t̂), all tensors on the [0,1] scale.
torch::Tensor steganet_loss(const torch::Tensor& x, const torch::Tensor& xhat,
                            const torch::Tensor& t, const torch::Tensor& that,
                            const SteganetLossConfig& cfg);
double steganet_loss(const Image& x, const Image& xhat, const Image& t, const Image& that,
                     const SteganetLossConfig& cfg);

struct SteganetPair {
  InjectionNetwork injection{nullptr};
  ExtractionNetwork extraction{nullptr};
};

/// Fresh, seeded networks.
SteganetPair build_steganet(const InjectionConfig& inj, const ExtractionConfig& ext,
                            std::uint64_t seed);

/// Poisoned image x̂ = I(x ⊕ t), computed in inference mode.
Image inject(InjectionNetworkImpl& net, const Image& x, const Image& t);
std::vector<Image> inject_batch(InjectionNetworkImpl& net, std::span<const Image> images,
                                std::span<const Image> triggers);

/// Reconstructed trigger t̂ = E(x̂), computed in inference mode.
Image extract_trigger(ExtractionNetworkImpl& net, const Image& xhat);
std::vector<Image> extract_batch(ExtractionNetworkImpl& net, std::span<const Image> poisoned);

struct TrainHistory {
  std::vector<double> train_loss;       // mean over training samples, per epoch
  std::vector<double> validation_loss;  // per epoch
  std::vector<double> learning_rate;    // in effect during each epoch
};

struct TrainedSteganet {
  SteganetPair nets;
  TrainHistory history;
};

/// Jointly trains a fresh injection/extraction pair on (image, trigger)
/// pairs with Adam. A seeded split holds out `validation_fraction` of the
/// pairs; the learning rate is multiplied by `plateau_factor` whenever the
/// validation loss has not improved for `plateau_patience` epochs.
/// Throws std::runtime_error naming the epoch on a non-finite loss.
TrainedSteganet train_steganet(const std::vector<std::pair<Image, Image>>& pairs,
                               const SteganetLossConfig& cfg, std::uint64_t seed,
                               const InjectionConfig& inj = {}, const ExtractionConfig& ext = {});

/// Writes `injection.ckpt` and `extraction.ckpt` under `dir`.
void save_steganet(const std::filesystem::path& dir, SteganetPair& nets);
SteganetPair load_steganet(const std::filesystem::path& dir);

}  // namespace satba::steganet
