#include "satba/defense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace satba::defense {

void ReverseConfig::validate() const {
  if (steps < 0) throw ValidationError("reverse-engineering steps must be >= 0");
  if (lambda_l1 < 0.0) throw ValidationError("lambda_l1 must be >= 0");
  if (!(lr > 0.0)) throw ValidationError("reverse-engineering lr must be > 0");
  if (batch_size < 0) throw ValidationError("reverse-engineering batch_size must be >= 0");
}

namespace {

// Freezes model parameters for the lifetime of the guard.
class FrozenParameters {
 public:
  explicit FrozenParameters(victim::ClassifierImpl& model) : params_(model.parameters()) {
    for (auto& p : params_) {
      flags_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~FrozenParameters() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(flags_[i]);
  }
  FrozenParameters(const FrozenParameters&) = delete;
  FrozenParameters& operator=(const FrozenParameters&) = delete;

 private:
  std::vector<torch::Tensor> params_;
  std::vector<bool> flags_;
};

ReversedTrigger snapshot(const torch::Tensor& mask_raw, const torch::Tensor& pattern_raw,
                         int target_class, double loss) {
  torch::NoGradGuard no_grad;
  const auto mask = torch::sigmoid(mask_raw).squeeze(0).squeeze(0).contiguous();
  ReversedTrigger out;
  out.height = static_cast<int>(mask.size(0));
  out.width = static_cast<int>(mask.size(1));
  const float* m = mask.data_ptr<float>();
  out.mask.assign(m, m + mask.numel());
  out.pattern = from_tensor(torch::sigmoid(pattern_raw)).front();
  for (float v : out.mask) out.l1_norm += v;
  out.target_class = target_class;
  out.loss = loss;
  return out;
}

}  // namespace

ReversedTrigger reverse_engineer_trigger(victim::ClassifierImpl& model,
                                         const std::vector<Image>& sample, int target_class,
                                         const ReverseConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (sample.empty()) throw ValidationError("reverse_engineer_trigger: empty sample");
  if (target_class < 0 || target_class >= model.spec().num_classes) {
    throw ValidationError("reverse_engineer_trigger: class out of range");
  }
  const Image& shape = sample.front();
  auto mask_raw = torch::zeros({1, 1, shape.height, shape.width}, torch::requires_grad());
  auto pattern_raw = torch::zeros({1, shape.channels, shape.height, shape.width}, torch::requires_grad());
  if (cfg.steps == 0) return snapshot(mask_raw, pattern_raw, target_class, 0.0);

  FrozenParameters frozen(model);
  const bool was_training = model.is_training();
  model.eval();

  const auto inputs = to_tensor(sample);
  const auto n = inputs.size(0);
  const auto batch = cfg.batch_size == 0 ? n : std::min<std::int64_t>(cfg.batch_size, n);
  std::mt19937_64 rng(seed);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  torch::optim::Adam optimizer({mask_raw, pattern_raw}, torch::optim::AdamOptions(cfg.lr));
  ReversedTrigger best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int step = 0; step < cfg.steps; ++step) {
    torch::Tensor x = inputs;
    if (batch < n) {
      std::shuffle(order.begin(), order.end(), rng);
      x = inputs.index_select(0, torch::tensor(std::vector<std::int64_t>(order.begin(), order.begin() + batch)));
    }
    const auto mask = torch::sigmoid(mask_raw);
    const auto pattern = torch::sigmoid(pattern_raw);
    const auto stamped = (1 - mask) * x + mask * pattern;
    const auto target = torch::full({x.size(0)}, target_class, torch::kLong);
    auto loss = torch::nn::functional::cross_entropy(model.forward(stamped, nullptr), target) +
                cfg.lambda_l1 * mask.sum();
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      throw std::runtime_error("trigger reverse-engineering diverged at step " + std::to_string(step));
    }
    if (value < best_loss) {
      best_loss = value;
      best = snapshot(mask_raw, pattern_raw, target_class, value);
    }
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
  }
  model.train(was_training);
  return best;
}

AnomalyResult anomaly_index(const std::map<int, double>& l1_norms) {
  if (l1_norms.size() < 3) throw ValidationError("anomaly_index needs at least 3 classes");
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  };
  std::vector<double> norms;
  for (const auto& [cls, norm] : l1_norms) norms.push_back(norm);
  const double med = median(norms);
  std::vector<double> deviations;
  for (double v : norms) deviations.push_back(std::abs(v - med));
  const double mad = median(deviations);
  const double denom = kMadConsistency * std::max(mad, 1e-9);

  AnomalyResult result;
  for (const auto& [cls, norm] : l1_norms) {
    const double index = std::abs(norm - med) / denom;
    result.per_class_index[cls] = index;
    if (norm < med && index > result.max_index) {
      result.max_index = index;
      result.flagged_class = cls;
    }
  }
  result.flagged = result.max_index > kAnomalyThreshold;
  return result;
}

ProbeResult neural_cleanse(victim::ClassifierImpl& model, const std::vector<Image>& sample,
                           const ReverseConfig& cfg, std::uint64_t seed) {
  ProbeResult out;
  std::map<int, double> norms;
  for (int c = 0; c < model.spec().num_classes; ++c) {
    out.triggers.push_back(reverse_engineer_trigger(model, sample, c, cfg, seed + static_cast<std::uint64_t>(c)));
    norms[c] = out.triggers.back().l1_norm;
  }
  out.anomaly = anomaly_index(norms);
  return out;
}

}  // namespace satba::defense
