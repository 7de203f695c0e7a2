#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "satba/datasets.hpp"
#include "satba/image.hpp"

namespace satba::victim {

enum class Architecture { SmallCnn, ResNet18 };

Architecture parse_architecture(const std::string& name);
std::string to_string(Architecture arch);

struct ClassifierSpec {
  Architecture architecture = Architecture::SmallCnn;
  int num_classes = 10;
  std::uint64_t seed = 0;
  int in_channels = 3;

  void validate() const;
};

/// Named post-activation outputs of convolutional layers, in forward order.
using FeatureSink = std::vector<std::pair<std::string, torch::Tensor>>;

/// Image classifier over N x C x 32 x 32 inputs in [0,1].
class ClassifierImpl : public torch::nn::Module {
 public:
  /// Returns logits. When `sink` is non-null, appends every convolutional
  /// layer's post-activation output to it.
  virtual torch::Tensor forward(const torch::Tensor& x, FeatureSink* sink = nullptr) = 0;
  virtual const ClassifierSpec& spec() const = 0;
};

using Classifier = std::shared_ptr<ClassifierImpl>;

/// Builds a freshly initialized classifier. Initialization is seeded from
/// `spec.seed`, so two calls with the same spec give identical weights.
Classifier build_model(const ClassifierSpec& spec);

/// SGD with momentum and a step learning-rate decay.
struct TrainSchedule {
  double lr = 0.1;
  double momentum = 0.9;
  int step_every = 50;
  double step_factor = 0.1;
  int epochs = 200;
  int batch_size = 64;

  void validate() const;
  /// Learning rate in effect during 1-based `epoch`.
  double lr_at(int epoch) const;
};

struct TrainResult {
  std::vector<double> train_loss;           // mean cross-entropy per epoch
  std::vector<double> validation_accuracy;  // per epoch; empty without a validation set
};

/// Trains `model` in place on `ds` with cross-entropy. Minibatch order is
/// drawn from `seed`. Throws std::runtime_error naming the epoch if the loss
/// becomes non-finite.
TrainResult train_victim(ClassifierImpl& model, const datasets::LabeledDataset& ds,
                         const TrainSchedule& schedule, std::uint64_t seed,
                         const datasets::LabeledDataset* validation = nullptr);

/// Argmax class per image, evaluated in inference mode.
std::vector<int> predict_batch(ClassifierImpl& model, std::span<const Image> images);

/// SHA-256 over all parameters and buffers.
std::string weight_checksum(ClassifierImpl& model);

void save_classifier(const std::filesystem::path& path, ClassifierImpl& model);
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace satba::victim
