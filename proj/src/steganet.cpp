#include "satba/steganet.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "satba/checkpoint.hpp"

namespace satba::steganet {

namespace nn = torch::nn;

namespace {

nn::Sequential conv_block(int in, int out) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)),
                        nn::BatchNorm2d(out), nn::ReLU(),
                        nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)),
                        nn::BatchNorm2d(out), nn::ReLU());
}

std::string descriptor(const InjectionConfig& c) {
  std::ostringstream os;
  os << "unet channels=" << c.channels << " depth=" << c.depth << " base_width=" << c.base_width;
  return os.str();
}

std::string descriptor(const ExtractionConfig& c) {
  std::ostringstream os;
  os << "fcn channels=" << c.channels << " layers=" << c.layers << " width=" << c.width;
  return os.str();
}

}  // namespace

InjectionNetworkImpl::InjectionNetworkImpl(const InjectionConfig& cfg) : cfg_(cfg) {
  if (cfg.channels <= 0 || cfg.depth < 1 || cfg.base_width < 1) {
    throw ValidationError("invalid injection network geometry");
  }
  int in = 2 * cfg.channels;
  for (int level = 0; level < cfg.depth; ++level) {
    const int width = cfg.base_width << level;
    encoders_.push_back(register_module("enc" + std::to_string(level), conv_block(in, width)));
    in = width;
  }
  const int bottom = cfg.base_width << cfg.depth;
  bottleneck_ = register_module("bottleneck", conv_block(in, bottom));
  in = bottom;
  for (int level = cfg.depth - 1; level >= 0; --level) {
    const int width = cfg.base_width << level;
    upsamplers_.push_back(register_module(
        "up" + std::to_string(level),
        nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, width, 2).stride(2))));
    decoders_.push_back(register_module("dec" + std::to_string(level), conv_block(2 * width, width)));
    in = width;
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(in, cfg.channels, 1)));
}

torch::Tensor InjectionNetworkImpl::forward(const torch::Tensor& image, const torch::Tensor& trigger) {
  const auto factor = std::int64_t{1} << cfg_.depth;
  if (image.sizes() != trigger.sizes()) {
    throw ValidationError("inject: image and trigger shapes differ");
  }
  if (image.dim() != 4 || image.size(1) != cfg_.channels || image.size(2) % factor != 0 ||
      image.size(3) % factor != 0) {
    throw ValidationError("inject: input must be N x " + std::to_string(cfg_.channels) +
                          " x H x W with H, W divisible by " + std::to_string(factor));
  }
  auto h = torch::cat({image, trigger}, 1);
  std::vector<torch::Tensor> skips;
  for (auto& enc : encoders_) {
    h = enc->forward(h);
    skips.push_back(h);
    h = torch::max_pool2d(h, 2);
  }
  h = bottleneck_->forward(h);
  for (std::size_t i = 0; i < decoders_.size(); ++i) {
    h = upsamplers_[i]->forward(h);
    h = decoders_[i]->forward(torch::cat({h, skips[skips.size() - 1 - i]}, 1));
  }
  return torch::sigmoid(head_->forward(h));
}

ExtractionNetworkImpl::ExtractionNetworkImpl(const ExtractionConfig& cfg) : cfg_(cfg) {
  if (cfg.channels <= 0 || cfg.layers < 2 || cfg.width < 1) {
    throw ValidationError("invalid extraction network geometry");
  }
  nn::Sequential body;
  int in = cfg.channels;
  for (int i = 0; i + 1 < cfg.layers; ++i) {
    body->push_back(nn::Conv2d(nn::Conv2dOptions(in, cfg.width, 3).padding(1)));
    body->push_back(nn::BatchNorm2d(cfg.width));
    body->push_back(nn::ReLU());
    in = cfg.width;
  }
  body->push_back(nn::Conv2d(nn::Conv2dOptions(in, cfg.channels, 3).padding(1)));
  body_ = register_module("body", body);
}

torch::Tensor ExtractionNetworkImpl::forward(const torch::Tensor& poisoned) {
  if (poisoned.dim() != 4 || poisoned.size(1) != cfg_.channels) {
    throw ValidationError("extract: input must be N x " + std::to_string(cfg_.channels) + " x H x W");
  }
  return torch::sigmoid(body_->forward(poisoned));
}

void SteganetLossConfig::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0 || (lambda1 == 0.0 && lambda2 == 0.0)) {
    throw ValidationError("steganet lambdas must be >= 0 and not both 0");
  }
  if (!(lr > 0.0)) throw ValidationError("steganet lr must be > 0");
  if (epochs < 0) throw ValidationError("steganet epochs must be >= 0");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) {
    throw ValidationError("plateau_factor must lie in (0, 1]");
  }
  if (plateau_patience < 1) throw ValidationError("plateau_patience must be >= 1");
  if (batch_size < 1) throw ValidationError("steganet batch_size must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ValidationError("validation_fraction must lie in (0, 1)");
  }
}

torch::Tensor steganet_loss(const torch::Tensor& x, const torch::Tensor& xhat,
                            const torch::Tensor& t, const torch::Tensor& that,
                            const SteganetLossConfig& cfg) {
  return cfg.lambda1 * torch::mse_loss(xhat, x) + cfg.lambda2 * torch::mse_loss(that, t);
}

double steganet_loss(const Image& x, const Image& xhat, const Image& t, const Image& that,
                     const SteganetLossConfig& cfg) {
  require_same_shape(x, xhat, "steganet_loss");
  require_same_shape(t, that, "steganet_loss");
  auto mse = [](const Image& a, const Image& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
      acc += d * d;
    }
    return acc / static_cast<double>(a.size());
  };
  return cfg.lambda1 * mse(x, xhat) + cfg.lambda2 * mse(t, that);
}

SteganetPair build_steganet(const InjectionConfig& inj, const ExtractionConfig& ext,
                            std::uint64_t seed) {
  if (inj.channels != ext.channels) throw ValidationError("injector/extractor channel mismatch");
  torch::manual_seed(seed);
  SteganetPair nets{InjectionNetwork(inj), ExtractionNetwork(ext)};
  return nets;
}

std::vector<Image> inject_batch(InjectionNetworkImpl& net, std::span<const Image> images,
                                std::span<const Image> triggers) {
  if (images.size() != triggers.size()) throw ValidationError("inject: image/trigger count mismatch");
  std::vector<Image> out;
  out.reserve(images.size());
  torch::NoGradGuard no_grad;
  const bool was_training = net.is_training();
  net.eval();
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, images.size() - start);
    for (std::size_t i = start; i < start + len; ++i) require_same_shape(images[i], triggers[i], "inject");
    auto produced = from_tensor(net.forward(to_tensor(images.subspan(start, len)),
                                            to_tensor(triggers.subspan(start, len))));
    for (auto& img : produced) out.push_back(std::move(img));
  }
  net.train(was_training);
  return out;
}

Image inject(InjectionNetworkImpl& net, const Image& x, const Image& t) {
  return std::move(inject_batch(net, std::span<const Image>(&x, 1), std::span<const Image>(&t, 1)).front());
}

std::vector<Image> extract_batch(ExtractionNetworkImpl& net, std::span<const Image> poisoned) {
  std::vector<Image> out;
  out.reserve(poisoned.size());
  torch::NoGradGuard no_grad;
  const bool was_training = net.is_training();
  net.eval();
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < poisoned.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, poisoned.size() - start);
    auto produced = from_tensor(net.forward(to_tensor(poisoned.subspan(start, len))));
    for (auto& img : produced) out.push_back(std::move(img));
  }
  net.train(was_training);
  return out;
}

Image extract_trigger(ExtractionNetworkImpl& net, const Image& xhat) {
  return std::move(extract_batch(net, std::span<const Image>(&xhat, 1)).front());
}

TrainedSteganet train_steganet(const std::vector<std::pair<Image, Image>>& pairs,
                               const SteganetLossConfig& cfg, std::uint64_t seed,
                               const InjectionConfig& inj, const ExtractionConfig& ext) {
  cfg.validate();
  if (pairs.size() < 2) throw ValidationError("train_steganet needs at least 2 pairs (train + validation)");
  for (const auto& [x, t] : pairs) {
    require_same_shape(pairs.front().first, x, "train_steganet");
    require_same_shape(x, t, "train_steganet");
  }

  TrainedSteganet out{build_steganet(inj, ext, seed), {}};
  auto& injection = out.nets.injection;
  auto& extraction = out.nets.extraction;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(pairs.size()))),
      1, pairs.size() - 1);

  auto stack = [&](std::size_t from, std::size_t to) {
    std::vector<Image> xs, ts;
    for (std::size_t i = from; i < to; ++i) {
      xs.push_back(pairs[order[i]].first);
      ts.push_back(pairs[order[i]].second);
    }
    return std::pair{to_tensor(xs), to_tensor(ts)};
  };
  const auto [val_x, val_t] = stack(0, n_val);
  const auto [train_x, train_t] = stack(n_val, pairs.size());
  const auto n_train = train_x.size(0);

  std::vector<torch::Tensor> params = injection->parameters();
  for (auto& p : extraction->parameters()) params.push_back(p);
  torch::optim::Adam optimizer(params, torch::optim::AdamOptions(cfg.lr));

  double lr = cfg.lr;
  double best_val = std::numeric_limits<double>::infinity();
  int stale_epochs = 0;
  std::vector<std::int64_t> batch_order(static_cast<std::size_t>(n_train));
  std::iota(batch_order.begin(), batch_order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    injection->train();
    extraction->train();
    std::shuffle(batch_order.begin(), batch_order.end(), rng);
    const auto perm = torch::tensor(batch_order, torch::kLong);
    double loss_sum = 0.0;
    for (std::int64_t start = 0; start < n_train; start += cfg.batch_size) {
      const auto end = std::min<std::int64_t>(start + cfg.batch_size, n_train);
      const auto idx = perm.slice(0, start, end);
      const auto x = train_x.index_select(0, idx);
      const auto t = train_t.index_select(0, idx);
      optimizer.zero_grad();
      const auto xhat = injection->forward(x, t);
      const auto that = extraction->forward(xhat);
      auto loss = steganet_loss(x, xhat, t, that, cfg);
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        throw std::runtime_error("steganet training diverged at epoch " + std::to_string(epoch));
      }
      loss.backward();
      optimizer.step();
      loss_sum += value * static_cast<double>(end - start);
    }

    double val_loss = 0.0;
    {
      torch::NoGradGuard no_grad;
      injection->eval();
      extraction->eval();
      const auto xhat = injection->forward(val_x, val_t);
      val_loss = steganet_loss(val_x, xhat, val_t, extraction->forward(xhat), cfg).item<double>();
    }
    if (!std::isfinite(val_loss)) {
      throw std::runtime_error("steganet validation loss diverged at epoch " + std::to_string(epoch));
    }
    out.history.train_loss.push_back(loss_sum / static_cast<double>(n_train));
    out.history.validation_loss.push_back(val_loss);
    out.history.learning_rate.push_back(lr);

    if (val_loss < best_val - cfg.min_improvement) {
      best_val = val_loss;
      stale_epochs = 0;
    } else if (++stale_epochs >= cfg.plateau_patience) {
      lr *= cfg.plateau_factor;
      for (auto& group : optimizer.param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
      }
      stale_epochs = 0;
    }
  }
  injection->eval();
  extraction->eval();
  return out;
}

void save_steganet(const std::filesystem::path& dir, SteganetPair& nets) {
  save_checkpoint(dir / "injection.ckpt",
                  {kCheckpointVersion, "injection", descriptor(nets.injection->config())},
                  *nets.injection);
  save_checkpoint(dir / "extraction.ckpt",
                  {kCheckpointVersion, "extraction", descriptor(nets.extraction->config())},
                  *nets.extraction);
}

namespace {

int field(const std::string& descriptor, const std::string& key) {
  const auto pos = descriptor.find(key + "=");
  if (pos == std::string::npos) throw std::runtime_error("descriptor lacks " + key + ": " + descriptor);
  return std::stoi(descriptor.substr(pos + key.size() + 1));
}

}  // namespace

SteganetPair load_steganet(const std::filesystem::path& dir) {
  const auto inj_header = read_checkpoint_header(dir / "injection.ckpt");
  const auto ext_header = read_checkpoint_header(dir / "extraction.ckpt");
  InjectionConfig inj{field(inj_header.architecture, "channels"), field(inj_header.architecture, "depth"),
                      field(inj_header.architecture, "base_width")};
  ExtractionConfig ext{field(ext_header.architecture, "channels"), field(ext_header.architecture, "layers"),
                       field(ext_header.architecture, "width")};
  SteganetPair nets{InjectionNetwork(inj), ExtractionNetwork(ext)};
  load_checkpoint(dir / "injection.ckpt", {kCheckpointVersion, "injection", descriptor(inj)}, *nets.injection);
  load_checkpoint(dir / "extraction.ckpt", {kCheckpointVersion, "extraction", descriptor(ext)},
                  *nets.extraction);
  nets.injection->eval();
  nets.extraction->eval();
  return nets;
}

}  // namespace satba::steganet
