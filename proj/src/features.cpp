#include "satba/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace satba::features {

Mode parse_mode(const std::string& name) {
  if (name == "hog" || name == "HOG") return Mode::HOG;
  if (name == "lbp" || name == "LBP") return Mode::LBP;
  throw ValidationError("unknown feature mode '" + name + "' (expected hog or lbp)");
}

std::string to_string(Mode mode) { return mode == Mode::HOG ? "hog" : "lbp"; }

namespace {

float clamped(const Image& x, int r, int c, int ch) {
  r = std::clamp(r, 0, x.height - 1);
  c = std::clamp(c, 0, x.width - 1);
  return x.at(r, c, ch);
}

Image hog_map(const Image& x, const HogParams& p) {
  const int h = x.height, w = x.width;
  const int cells_y = (h + p.cell_size - 1) / p.cell_size;
  const int cells_x = (w + p.cell_size - 1) / p.cell_size;
  const double bin_width = std::numbers::pi / p.bins;

  Image out(h, w, x.channels);
  std::vector<double> mag(static_cast<std::size_t>(h) * w);
  std::vector<int> bin(static_cast<std::size_t>(h) * w);
  std::vector<double> hist(static_cast<std::size_t>(cells_y) * cells_x * p.bins);
  std::vector<double> normed(hist.size());
  std::vector<int> cover(static_cast<std::size_t>(cells_y) * cells_x);
  double peak = 0.0;

  for (int ch = 0; ch < x.channels; ++ch) {
    std::fill(hist.begin(), hist.end(), 0.0);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double gx = static_cast<double>(clamped(x, r, c + 1, ch)) - clamped(x, r, c - 1, ch);
        const double gy = static_cast<double>(clamped(x, r + 1, c, ch)) - clamped(x, r - 1, c, ch);
        const double m = std::hypot(gx, gy);
        double theta = std::atan2(gy, gx);
        if (theta < 0) theta += std::numbers::pi;
        const int b = std::min(static_cast<int>(theta / bin_width), p.bins - 1);
        const std::size_t idx = static_cast<std::size_t>(r) * w + c;
        mag[idx] = m;
        bin[idx] = b;
        const int cell = (r / p.cell_size) * cells_x + c / p.cell_size;
        hist[static_cast<std::size_t>(cell) * p.bins + b] += m;
      }
    }

    // 2x2-cell blocks, stride one cell; a grid narrower than two cells
    // degenerates to one block covering what exists.
    std::fill(normed.begin(), normed.end(), 0.0);
    std::fill(cover.begin(), cover.end(), 0);
    const int blocks_y = std::max(cells_y - 1, 1);
    const int blocks_x = std::max(cells_x - 1, 1);
    for (int by = 0; by < blocks_y; ++by) {
      for (int bx = 0; bx < blocks_x; ++bx) {
        const int y1 = std::min(by + 2, cells_y), x1 = std::min(bx + 2, cells_x);
        double energy = 0.0;
        for (int cy = by; cy < y1; ++cy)
          for (int cx = bx; cx < x1; ++cx)
            for (int b = 0; b < p.bins; ++b) {
              const double v = hist[(static_cast<std::size_t>(cy) * cells_x + cx) * p.bins + b];
              energy += v * v;
            }
        const double norm = std::sqrt(energy + p.epsilon * p.epsilon);
        for (int cy = by; cy < y1; ++cy)
          for (int cx = bx; cx < x1; ++cx) {
            const std::size_t cell = static_cast<std::size_t>(cy) * cells_x + cx;
            ++cover[cell];
            for (int b = 0; b < p.bins; ++b) normed[cell * p.bins + b] += hist[cell * p.bins + b] / norm;
          }
      }
    }
    for (std::size_t cell = 0; cell < cover.size(); ++cell) {
      for (int b = 0; b < p.bins; ++b) normed[cell * p.bins + b] /= cover[cell];
    }

    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const std::size_t idx = static_cast<std::size_t>(r) * w + c;
        if (mag[idx] <= 0.0) continue;
        const int cell = (r / p.cell_size) * cells_x + c / p.cell_size;
        const double v = normed[static_cast<std::size_t>(cell) * p.bins + bin[idx]];
        out.at(r, c, ch) = static_cast<float>(v);
        peak = std::max(peak, v);
      }
    }
  }

  if (peak > 0.0) {
    for (auto& v : out.pixels) v = std::min(1.0f, static_cast<float>(v / peak));
  }
  return out;
}

Image lbp_map(const Image& x) {
  // Clockwise from top-left.
  static constexpr int kDr[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
  static constexpr int kDc[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
  Image out(x.height, x.width, x.channels);
  for (int ch = 0; ch < x.channels; ++ch) {
    for (int r = 0; r < x.height; ++r) {
      for (int c = 0; c < x.width; ++c) {
        const float centre = x.at(r, c, ch);
        int code = 0;
        for (int k = 0; k < 8; ++k) {
          if (clamped(x, r + kDr[k], c + kDc[k], ch) >= centre) code |= 1 << (7 - k);
        }
        out.at(r, c, ch) = static_cast<float>(code) / 255.0f;
      }
    }
  }
  return out;
}

}  // namespace

FeatureImage extract_features(const Image& x, Mode mode, const HogParams& hog) {
  if (!x.valid()) throw ValidationError("extract_features: invalid image " + shape_string(x));
  if (mode == Mode::HOG) return {hog_map(x, hog), mode};
  return {lbp_map(x), mode};
}

}  // namespace satba::features
