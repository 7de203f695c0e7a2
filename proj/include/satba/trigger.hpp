#pragma once

#include <string>

#include "satba/attention.hpp"
#include "satba/features.hpp"
#include "satba/image.hpp"

namespace satba::trigger {

struct Provenance {
  std::string image_id;
  features::Mode feature_mode = features::Mode::HOG;
  std::string surrogate_id;
};

/// Sample-specific trigger: the feature image gated by the attention matrix.
struct Trigger {
  Image values;
  Provenance provenance;
};

/// t[:, :, c] = f[:, :, c] * M, with M broadcast across channels.
Trigger generate_trigger(const features::FeatureImage& f, const attention::AttentionMatrix& m,
                         Provenance provenance = {});

}  // namespace satba::trigger
