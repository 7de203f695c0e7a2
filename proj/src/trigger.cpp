#include "satba/trigger.hpp"

#include <cmath>

namespace satba::trigger {

Trigger generate_trigger(const features::FeatureImage& f, const attention::AttentionMatrix& m,
                         Provenance provenance) {
  const Image& feat = f.values;
  if (feat.height != m.height || feat.width != m.width) {
    throw ValidationError("generate_trigger: feature map " + shape_string(feat) +
                          " does not match attention matrix " + std::to_string(m.height) + "x" +
                          std::to_string(m.width));
  }
  provenance.feature_mode = f.mode;
  Trigger t{Image(feat.height, feat.width, feat.channels), std::move(provenance)};
  const float below_one = std::nextafter(1.0f, 0.0f);
  for (int r = 0; r < feat.height; ++r) {
    for (int c = 0; c < feat.width; ++c) {
      const double gate = m.at(r, c);
      for (int ch = 0; ch < feat.channels; ++ch) {
        float v = static_cast<float>(static_cast<double>(feat.at(r, c, ch)) * gate);
        // M < 1, so the product stays below one; float rounding must not undo that.
        if (v >= 1.0f) v = below_one;
        t.values.at(r, c, ch) = v;
      }
    }
  }
  return t;
}

}  // namespace satba::trigger
