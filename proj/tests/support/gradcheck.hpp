#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include <torch/torch.h>

#include "satba/steganet.hpp"

namespace testing {

struct GradCheckResult {
  std::int64_t parameters = 0;
  double max_relative_error = 0.0;
};

// Compares autograd gradients of the joint steganet loss with central finite
// differences, parameter by parameter, on a miniature double-precision pair.
inline GradCheckResult steganet_gradcheck(std::uint64_t seed, double step = 1e-6) {
  using namespace satba::steganet;
  auto nets = build_steganet({3, 1, 2}, {3, 2, 2}, seed);
  nets.injection->to(torch::kDouble);
  nets.extraction->to(torch::kDouble);
  nets.injection->train();
  nets.extraction->train();

  torch::manual_seed(seed + 1);
  const auto x = torch::rand({2, 3, 4, 4}, torch::kDouble);
  const auto t = torch::rand({2, 3, 4, 4}, torch::kDouble);
  const SteganetLossConfig cfg;

  auto loss_fn = [&] {
    const auto xhat = nets.injection->forward(x, t);
    const auto that = nets.extraction->forward(xhat);
    return steganet_loss(x, xhat, t, that, cfg);
  };

  std::vector<torch::Tensor> params = nets.injection->parameters();
  for (auto& p : nets.extraction->parameters()) params.push_back(p);
  for (auto& p : params) p.mutable_grad() = torch::Tensor();
  loss_fn().backward();

  GradCheckResult out;
  torch::NoGradGuard no_grad;
  for (auto& p : params) {
    const auto analytic = p.grad().clone();
    auto flat = p.view(-1);
    const auto a_flat = analytic.view(-1);
    for (std::int64_t i = 0; i < flat.size(0); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + step;
      const double up = loss_fn().item<double>();
      flat[i] = orig - step;
      const double down = loss_fn().item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = a_flat[i].item<double>();
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      out.max_relative_error = std::max(out.max_relative_error, rel);
      ++out.parameters;
    }
  }
  return out;
}

}  // namespace testing
