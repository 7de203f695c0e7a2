#include "satba/victim.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "satba/checkpoint.hpp"
#include "satba/hash.hpp"

namespace satba::victim {

namespace nn = torch::nn;

Architecture parse_architecture(const std::string& name) {
  if (name == "small-cnn") return Architecture::SmallCnn;
  if (name == "resnet18-32px") return Architecture::ResNet18;
  throw ValidationError("unknown architecture '" + name + "' (expected small-cnn or resnet18-32px)");
}

std::string to_string(Architecture arch) {
  return arch == Architecture::SmallCnn ? "small-cnn" : "resnet18-32px";
}

void ClassifierSpec::validate() const {
  if (num_classes < 2) throw ValidationError("classifier needs at least 2 classes");
  if (in_channels <= 0) throw ValidationError("classifier needs at least 1 input channel");
}

namespace {

std::string descriptor(const ClassifierSpec& spec) {
  std::ostringstream os;
  os << to_string(spec.architecture) << " classes=" << spec.num_classes
     << " in_channels=" << spec.in_channels;
  return os.str();
}

nn::Conv2d conv3x3(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false));
}

void record(FeatureSink* sink, const char* name, const torch::Tensor& t) {
  if (sink) sink->emplace_back(name, t);
}

// Three conv-BN-ReLU-maxpool blocks (32/64/128 wide) and a linear head.
class SmallCnn : public ClassifierImpl {
 public:
  explicit SmallCnn(const ClassifierSpec& spec)
      : spec_(spec),
        conv1_(register_module("conv1", conv3x3(spec.in_channels, 32))),
        bn1_(register_module("bn1", nn::BatchNorm2d(32))),
        conv2_(register_module("conv2", conv3x3(32, 64))),
        bn2_(register_module("bn2", nn::BatchNorm2d(64))),
        conv3_(register_module("conv3", conv3x3(64, 128))),
        bn3_(register_module("bn3", nn::BatchNorm2d(128))),
        fc_(register_module("fc", nn::Linear(128 * 4 * 4, spec.num_classes))) {}

  torch::Tensor forward(const torch::Tensor& x, FeatureSink* sink) override {
    auto h = torch::relu(bn1_(conv1_(x)));
    record(sink, "conv1", h);
    h = torch::max_pool2d(h, 2);
    h = torch::relu(bn2_(conv2_(h)));
    record(sink, "conv2", h);
    h = torch::max_pool2d(h, 2);
    h = torch::relu(bn3_(conv3_(h)));
    record(sink, "conv3", h);
    h = torch::adaptive_avg_pool2d(torch::max_pool2d(h, 2), {4, 4});
    return fc_(h.flatten(1));
  }

  const ClassifierSpec& spec() const override { return spec_; }

 private:
  ClassifierSpec spec_;
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv2_;
  nn::BatchNorm2d bn2_;
  nn::Conv2d conv3_;
  nn::BatchNorm2d bn3_;
  nn::Linear fc_;
};

class BasicBlockImpl : public nn::Module {
 public:
  BasicBlockImpl(int in, int out, int stride, std::string name)
      : name_(std::move(name)),
        conv1_(register_module("conv1", conv3x3(in, out, stride))),
        bn1_(register_module("bn1", nn::BatchNorm2d(out))),
        conv2_(register_module("conv2", conv3x3(out, out))),
        bn2_(register_module("bn2", nn::BatchNorm2d(out))) {
    if (stride != 1 || in != out) {
      shortcut_ = register_module(
          "shortcut",
          nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                         nn::BatchNorm2d(out)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x, FeatureSink* sink) {
    auto h = torch::relu(bn1_(conv1_(x)));
    if (sink) sink->emplace_back(name_ + ".conv1", h);
    h = bn2_(conv2_(h));
    h = torch::relu(h + (shortcut_ ? shortcut_->forward(x) : x));
    if (sink) sink->emplace_back(name_ + ".conv2", h);
    return h;
  }

 private:
  std::string name_;
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv2_;
  nn::BatchNorm2d bn2_;
  nn::Sequential shortcut_{nullptr};
};
TORCH_MODULE(BasicBlock);

// CIFAR-style ResNet-18: 3x3 stem, four stages of two basic blocks.
class ResNet18 : public ClassifierImpl {
 public:
  explicit ResNet18(const ClassifierSpec& spec)
      : spec_(spec),
        conv1_(register_module("conv1", conv3x3(spec.in_channels, 64))),
        bn1_(register_module("bn1", nn::BatchNorm2d(64))),
        fc_(register_module("fc", nn::Linear(512, spec.num_classes))) {
    const int widths[4] = {64, 128, 256, 512};
    int in = 64;
    for (int stage = 0; stage < 4; ++stage) {
      for (int b = 0; b < 2; ++b) {
        const int stride = (stage > 0 && b == 0) ? 2 : 1;
        const std::string name = "layer" + std::to_string(stage + 1) + "_" + std::to_string(b);
        blocks_.push_back(register_module(name, BasicBlock(in, widths[stage], stride, name)));
        in = widths[stage];
      }
    }
  }

  torch::Tensor forward(const torch::Tensor& x, FeatureSink* sink) override {
    auto h = torch::relu(bn1_(conv1_(x)));
    record(sink, "conv1", h);
    for (auto& block : blocks_) h = block->forward(h, sink);
    h = torch::adaptive_avg_pool2d(h, {1, 1}).flatten(1);
    return fc_(h);
  }

  const ClassifierSpec& spec() const override { return spec_; }

 private:
  ClassifierSpec spec_;
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn1_;
  std::vector<BasicBlock> blocks_;
  nn::Linear fc_;
};

}  // namespace

Classifier build_model(const ClassifierSpec& spec) {
  spec.validate();
  torch::manual_seed(spec.seed);
  switch (spec.architecture) {
    case Architecture::SmallCnn: return std::make_shared<SmallCnn>(spec);
    case Architecture::ResNet18: return std::make_shared<ResNet18>(spec);
  }
  throw ValidationError("unknown architecture");
}

void TrainSchedule::validate() const {
  if (!(lr > 0.0)) throw ValidationError("victim lr must be > 0");
  if (epochs < 0) throw ValidationError("victim epochs must be >= 0");
  if (step_every < 1) throw ValidationError("victim step_every must be >= 1");
  if (batch_size < 1) throw ValidationError("victim batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0,1)");
}

double TrainSchedule::lr_at(int epoch) const {
  const int steps = (std::max(epoch, 1) - 1) / step_every;
  return lr * std::pow(step_factor, steps);
}

namespace {

torch::Tensor label_tensor(const datasets::LabeledDataset& ds) {
  std::vector<std::int64_t> labels;
  labels.reserve(ds.size());
  for (const auto& item : ds.items) labels.push_back(item.label);
  return torch::tensor(labels, torch::kLong);
}

double accuracy_on(ClassifierImpl& model, const datasets::LabeledDataset& ds) {
  const auto images = ds.images();
  const auto pred = predict_batch(model, images);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ds.items[i].label;
  return ds.size() ? static_cast<double>(hit) / static_cast<double>(ds.size()) : 0.0;
}

}  // namespace

TrainResult train_victim(ClassifierImpl& model, const datasets::LabeledDataset& ds,
                         const TrainSchedule& schedule, std::uint64_t seed,
                         const datasets::LabeledDataset* validation) {
  schedule.validate();
  ds.validate();
  for (const auto& item : ds.items) {
    if (item.label >= model.spec().num_classes) {
      throw ValidationError("training label exceeds classifier output size");
    }
  }
  TrainResult result;
  if (schedule.epochs == 0) return result;

  torch::manual_seed(seed);
  std::mt19937_64 rng(seed);
  const auto images = ds.images();
  const auto inputs = to_tensor(images);
  const auto targets = label_tensor(ds);
  const auto n = static_cast<std::int64_t>(ds.size());

  torch::optim::SGD optimizer(model.parameters(),
                              torch::optim::SGDOptions(schedule.lr).momentum(schedule.momentum));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
    const double lr = schedule.lr_at(epoch);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
    }
    std::shuffle(order.begin(), order.end(), rng);
    const auto perm = torch::tensor(order, torch::kLong);

    model.train();
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    for (std::int64_t start = 0; start < n; start += schedule.batch_size) {
      const auto end = std::min<std::int64_t>(start + schedule.batch_size, n);
      // BatchNorm cannot train on a single sample.
      if (end - start < 2 && n >= 2) continue;
      const auto idx = perm.slice(0, start, end);
      const auto x = inputs.index_select(0, idx);
      const auto y = targets.index_select(0, idx);
      optimizer.zero_grad();
      auto loss = torch::nn::functional::cross_entropy(model.forward(x, nullptr), y);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw std::runtime_error("victim training diverged at epoch " + std::to_string(epoch) +
                                 " (loss " + std::to_string(value) + ", lr " + std::to_string(lr) + ")");
      }
      loss.backward();
      optimizer.step();
      loss_sum += value * static_cast<double>(end - start);
      seen += end - start;
    }
    result.train_loss.push_back(seen ? loss_sum / static_cast<double>(seen) : 0.0);
    if (validation) result.validation_accuracy.push_back(accuracy_on(model, *validation));
  }
  model.eval();
  return result;
}

std::vector<int> predict_batch(ClassifierImpl& model, std::span<const Image> images) {
  std::vector<int> out;
  if (images.empty()) return out;
  out.reserve(images.size());
  torch::NoGradGuard no_grad;
  const bool was_training = model.is_training();
  model.eval();
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    for (const auto& img : chunk) {
      if (img.height != 32 || img.width != 32 || img.channels != model.spec().in_channels) {
        throw ValidationError("predict_batch: expected 32x32x" +
                              std::to_string(model.spec().in_channels) + " input, got " +
                              shape_string(img));
      }
    }
    const auto pred = model.forward(to_tensor(chunk), nullptr).argmax(1).to(torch::kLong).contiguous();
    const auto* p = pred.data_ptr<std::int64_t>();
    for (std::int64_t i = 0; i < pred.size(0); ++i) out.push_back(static_cast<int>(p[i]));
  }
  model.train(was_training);
  return out;
}

std::string weight_checksum(ClassifierImpl& model) {
  std::string bytes;
  auto append = [&](const torch::Tensor& t) {
    const auto c = t.detach().to(torch::kCPU).contiguous();
    bytes.append(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size());
  };
  for (const auto& p : model.named_parameters()) append(p.value());
  for (const auto& b : model.named_buffers()) append(b.value());
  return sha256_hex(bytes);
}

void save_classifier(const std::filesystem::path& path, ClassifierImpl& model) {
  save_checkpoint(path, {kCheckpointVersion, "classifier", descriptor(model.spec())}, model);
}

Classifier load_classifier(const std::filesystem::path& path) {
  const auto header = read_checkpoint_header(path);
  if (header.kind != "classifier") {
    throw ValidationError(path.string() + " is not a classifier checkpoint");
  }
  std::istringstream is(header.architecture);
  std::string arch, classes, channels;
  is >> arch >> classes >> channels;
  ClassifierSpec spec;
  try {
    spec.architecture = parse_architecture(arch);
    spec.num_classes = std::stoi(classes.substr(classes.find('=') + 1));
    spec.in_channels = std::stoi(channels.substr(channels.find('=') + 1));
  } catch (const std::exception&) {
    throw ValidationError("unreadable classifier descriptor in " + path.string());
  }
  auto model = build_model(spec);
  load_checkpoint(path, header, *model);
  model->eval();
  return model;
}

}  // namespace satba::victim
