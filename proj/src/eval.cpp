#include "satba/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

namespace satba::eval {

double attack_success_rate(const std::vector<int>& ground_truth, const std::vector<int>& predicted,
                           int target_label) {
  if (ground_truth.size() != predicted.size()) {
    throw ValidationError("attack_success_rate: label/prediction count mismatch");
  }
  std::size_t eligible = 0, hits = 0;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    if (ground_truth[i] == target_label) continue;
    ++eligible;
    hits += predicted[i] == target_label;
  }
  if (eligible == 0) {
    throw ValidationError("attack_success_rate: every test sample belongs to the target class");
  }
  return static_cast<double>(hits) / static_cast<double>(eligible);
}

double attack_success_rate(victim::ClassifierImpl& model, const datasets::LabeledDataset& testset,
                           const std::vector<Image>& poisoned, int target_label) {
  if (poisoned.size() != testset.size()) {
    throw ValidationError("attack_success_rate: need one poisoned image per test item");
  }
  std::vector<int> truth;
  std::vector<Image> eligible;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    if (testset.items[i].label == target_label) continue;
    truth.push_back(testset.items[i].label);
    eligible.push_back(poisoned[i]);
  }
  if (eligible.empty()) {
    throw ValidationError("attack_success_rate: every test sample belongs to the target class");
  }
  return attack_success_rate(truth, victim::predict_batch(model, eligible), target_label);
}

double attack_success_rate(victim::ClassifierImpl& model, const datasets::LabeledDataset& testset,
                           const datasets::Poisoner& poisoner, int target_label) {
  std::vector<int> truth;
  std::vector<Image> eligible;
  for (const auto& item : testset.items) {
    if (item.label == target_label) continue;
    truth.push_back(item.label);
    eligible.push_back(poisoner(item.image));
  }
  if (eligible.empty()) {
    throw ValidationError("attack_success_rate: every test sample belongs to the target class");
  }
  return attack_success_rate(truth, victim::predict_batch(model, eligible), target_label);
}

double clean_data_accuracy(const std::vector<int>& ground_truth, const std::vector<int>& predicted) {
  if (ground_truth.size() != predicted.size()) {
    throw ValidationError("clean_data_accuracy: label/prediction count mismatch");
  }
  if (ground_truth.empty()) throw ValidationError("clean_data_accuracy: empty test set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) hits += ground_truth[i] == predicted[i];
  return static_cast<double>(hits) / static_cast<double>(ground_truth.size());
}

double clean_data_accuracy(victim::ClassifierImpl& model, const datasets::LabeledDataset& testset) {
  const auto images = testset.images();
  return clean_data_accuracy(testset.labels(), victim::predict_batch(model, images));
}

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = 255.0 * (static_cast<double>(a.pixels[i]) - b.pixels[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b) {
  const double e = mse(a, b);
  if (e == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(255.0 * 255.0 / e);
}

namespace {

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;

// Zero-padded separable Gaussian blur of an h x w plane.
std::vector<double> gaussian_blur(const std::vector<double>& src, int h, int w,
                                  const std::vector<double>& kernel) {
  std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -kSsimRadius; k <= kSsimRadius; ++k) {
        const int cc = c + k;
        if (cc >= 0 && cc < w) acc += kernel[k + kSsimRadius] * src[static_cast<std::size_t>(r) * w + cc];
      }
      tmp[static_cast<std::size_t>(r) * w + c] = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int k = -kSsimRadius; k <= kSsimRadius; ++k) {
        const int rr = r + k;
        if (rr >= 0 && rr < h) acc += kernel[k + kSsimRadius] * tmp[static_cast<std::size_t>(rr) * w + c];
      }
      out[static_cast<std::size_t>(r) * w + c] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  std::vector<double> kernel(2 * kSsimRadius + 1);
  for (int k = -kSsimRadius; k <= kSsimRadius; ++k) {
    kernel[k + kSsimRadius] = std::exp(-(k * k) / (2.0 * kSsimSigma * kSsimSigma));
  }
  const int h = a.height, w = a.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  const auto weight = gaussian_blur(std::vector<double>(n, 1.0), h, w, kernel);

  double total = 0.0;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (int ch = 0; ch < a.channels; ++ch) {
    for (std::size_t p = 0; p < n; ++p) {
      x[p] = 255.0 * a.pixels[p * a.channels + ch];
      y[p] = 255.0 * b.pixels[p * b.channels + ch];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = gaussian_blur(x, h, w, kernel);
    const auto my = gaussian_blur(y, h, w, kernel);
    const auto mxx = gaussian_blur(xx, h, w, kernel);
    const auto myy = gaussian_blur(yy, h, w, kernel);
    const auto mxy = gaussian_blur(xy, h, w, kernel);
    for (std::size_t p = 0; p < n; ++p) {
      const double mu_x = mx[p] / weight[p], mu_y = my[p] / weight[p];
      const double var_x = mxx[p] / weight[p] - mu_x * mu_x;
      const double var_y = myy[p] / weight[p] - mu_y * mu_y;
      const double cov = mxy[p] / weight[p] - mu_x * mu_y;
      total += ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) /
               ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
    }
  }
  return total / static_cast<double>(n * a.channels);
}

PerceptualDistance make_embedding_distance(
    std::function<std::vector<torch::Tensor>(const Image&)> embed) {
  return [embed = std::move(embed)](const Image& a, const Image& b) {
    require_same_shape(a, b, "perceptual distance");
    torch::NoGradGuard no_grad;
    const auto fa = embed(a);
    const auto fb = embed(b);
    if (fa.size() != fb.size()) throw std::runtime_error("embedding returned differing layer counts");
    double total = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
      auto unit = [](const torch::Tensor& f) {
        const auto t = f.to(torch::kDouble);
        return t / (t.pow(2).sum(0, true).sqrt() + 1e-10);
      };
      total += (unit(fa[l]) - unit(fb[l])).pow(2).sum(0).mean().item<double>();
    }
    return total;
  };
}

StealthMetrics stealth_report(const std::vector<std::pair<Image, Image>>& pairs,
                              const PerceptualDistance& perceptual) {
  if (pairs.empty()) throw ValidationError("stealth_report: no pairs");
  StealthMetrics m;
  m.pairs = pairs.size();
  double lp = 0.0;
  for (const auto& [clean, poisoned] : pairs) {
    m.psnr_db += psnr(clean, poisoned);
    m.ssim += ssim(clean, poisoned);
    m.mse += mse(clean, poisoned);
    if (perceptual) lp += perceptual(clean, poisoned);
  }
  const auto n = static_cast<double>(pairs.size());
  m.psnr_db /= n;
  m.ssim /= n;
  m.mse /= n;
  if (perceptual) m.lpips = lp / n;
  return m;
}

Corner parse_corner(const std::string& name) {
  if (name == "top-left") return Corner::TopLeft;
  if (name == "top-right") return Corner::TopRight;
  if (name == "bottom-left") return Corner::BottomLeft;
  if (name == "bottom-right") return Corner::BottomRight;
  throw ValidationError("unknown corner '" + name + "'");
}

std::string to_string(Corner corner) {
  switch (corner) {
    case Corner::TopLeft: return "top-left";
    case Corner::TopRight: return "top-right";
    case Corner::BottomLeft: return "bottom-left";
    case Corner::BottomRight: return "bottom-right";
  }
  return "bottom-right";
}

datasets::Poisoner make_patched_baseline(int patch_size, Corner corner, int height, int width) {
  if (patch_size <= 0 || patch_size >= std::min(height, width)) {
    throw ValidationError("patch size " + std::to_string(patch_size) + " must lie in [1, " +
                          std::to_string(std::min(height, width) - 1) + "]");
  }
  const bool bottom = corner == Corner::BottomLeft || corner == Corner::BottomRight;
  const bool right = corner == Corner::TopRight || corner == Corner::BottomRight;
  return [=](const Image& x) {
    if (x.height != height || x.width != width) {
      throw ValidationError("patched baseline built for " + std::to_string(height) + "x" +
                            std::to_string(width) + ", got " + shape_string(x));
    }
    Image out = x;
    const int r0 = bottom ? height - patch_size : 0;
    const int c0 = right ? width - patch_size : 0;
    for (int r = r0; r < r0 + patch_size; ++r)
      for (int c = c0; c < c0 + patch_size; ++c)
        for (int ch = 0; ch < x.channels; ++ch) out.at(r, c, ch) = 1.0f;
    return out;
  };
}

std::vector<SweepPoint> poison_rate_sweep(
    const std::vector<double>& etas, const std::function<std::pair<double, double>(double)>& run_point) {
  if (etas.empty()) throw ValidationError("poison_rate_sweep: no poison rates given");
  for (double eta : etas) {
    if (!(eta > 0.0 && eta <= 1.0)) {
      throw ValidationError("poison_rate_sweep: eta " + std::to_string(eta) + " outside (0, 1]");
    }
  }
  std::vector<SweepPoint> out;
  out.reserve(etas.size());
  for (double eta : etas) {
    const auto [asr, cda] = run_point(eta);
    out.push_back({eta, asr, cda});
  }
  return out;
}

namespace {

// Shortest text that parses back to the same double.
std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

}  // namespace

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = "eta,asr,cda\n";
  for (const auto& p : points) out += shortest(p.eta) + ',' + shortest(p.asr) + ',' + shortest(p.cda) + '\n';
  return out;
}

nlohmann::json metric_json(double value) {
  if (std::isinf(value) && value > 0) return "inf";
  return value;
}

double metric_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return kInfinitePsnr;
    throw std::runtime_error("unexpected metric string '" + j.get<std::string>() + "'");
  }
  return j.get<double>();
}

nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json j = r.extra;
  j["asr"] = r.asr;
  j["cda"] = r.cda;
  j["psnr_db"] = metric_json(r.psnr_db);
  j["ssim"] = r.ssim;
  j["mse"] = r.mse;
  if (r.lpips) j["lpips"] = *r.lpips;
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [label, counts] : r.per_class) per_class[std::to_string(label)] = counts;
  j["per_class"] = per_class;
  j["config"] = r.config;
  return j;
}

EvaluationReport report_from_json(const nlohmann::json& j) {
  EvaluationReport r;
  r.asr = j.at("asr").get<double>();
  r.cda = j.at("cda").get<double>();
  r.psnr_db = metric_from_json(j.at("psnr_db"));
  r.ssim = j.at("ssim").get<double>();
  r.mse = j.at("mse").get<double>();
  if (j.contains("lpips")) r.lpips = j.at("lpips").get<double>();
  if (j.contains("per_class")) {
    for (const auto& [label, counts] : j.at("per_class").items()) {
      r.per_class[std::stoi(label)] = counts.get<std::map<std::string, int>>();
    }
  }
  r.config = j.value("config", nlohmann::json::object());
  for (const auto& [key, value] : j.items()) {
    if (key == "asr" || key == "cda" || key == "psnr_db" || key == "ssim" || key == "mse" ||
        key == "lpips" || key == "per_class" || key == "config") {
      continue;
    }
    r.extra[key] = value;
  }
  return r;
}

void emit_report(const EvaluationReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write report " + path.string());
  os << to_json(report).dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

EvaluationReport read_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open report " + path.string());
  return report_from_json(nlohmann::json::parse(is));
}

}  // namespace satba::eval
