#pragma once

#include <cmath>

#include "satba/image.hpp"

namespace testing {

// Independent oracles: direct formulas, no shared code with the library.
inline double oracle_mse(const satba::Image& a, const satba::Image& b) {
  double s = 0.0;
  for (int r = 0; r < a.height; ++r)
    for (int c = 0; c < a.width; ++c)
      for (int k = 0; k < a.channels; ++k) {
        const double d = 255.0 * a.at(r, c, k) - 255.0 * b.at(r, c, k);
        s += d * d;
      }
  return s / (a.height * a.width * a.channels);
}

inline double oracle_psnr(const satba::Image& a, const satba::Image& b) {
  return 20.0 * std::log10(255.0) - 10.0 * std::log10(oracle_mse(a, b));
}

// Per-pixel SSIM with a truncated 11x11 Gaussian window renormalized to the
// image, local moments in centred form.
inline double oracle_ssim(const satba::Image& a, const satba::Image& b) {
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  double total = 0.0;
  for (int k = 0; k < a.channels; ++k)
    for (int i = 0; i < a.height; ++i)
      for (int j = 0; j < a.width; ++j) {
        double wsum = 0.0, mx = 0.0, my = 0.0;
        for (int u = i - 5; u <= i + 5; ++u)
          for (int v = j - 5; v <= j + 5; ++v) {
            if (u < 0 || v < 0 || u >= a.height || v >= a.width) continue;
            const double wt = std::exp(-((u - i) * (u - i) + (v - j) * (v - j)) / 4.5);
            wsum += wt;
            mx += wt * 255.0 * a.at(u, v, k);
            my += wt * 255.0 * b.at(u, v, k);
          }
        mx /= wsum;
        my /= wsum;
        double vx = 0.0, vy = 0.0, cxy = 0.0;
        for (int u = i - 5; u <= i + 5; ++u)
          for (int v = j - 5; v <= j + 5; ++v) {
            if (u < 0 || v < 0 || u >= a.height || v >= a.width) continue;
            const double wt = std::exp(-((u - i) * (u - i) + (v - j) * (v - j)) / 4.5) / wsum;
            const double dx = 255.0 * a.at(u, v, k) - mx, dy = 255.0 * b.at(u, v, k) - my;
            vx += wt * dx * dx;
            vy += wt * dy * dy;
            cxy += wt * dx * dy;
          }
        total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  return total / (a.height * a.width * a.channels);
}


}  // namespace testing
