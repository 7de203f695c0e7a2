#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "satba/image.hpp"

namespace satba::datasets {

struct LabeledItem {
  Image image;
  int label = 0;

  friend bool operator==(const LabeledItem&, const LabeledItem&) = default;
};

/// Ordered (image, label) list. Every label is below `num_classes`.
struct LabeledDataset {
  std::vector<LabeledItem> items;
  int num_classes = 0;

  std::size_t size() const { return items.size(); }
  /// Checks non-emptiness, label range and shape consistency.
  void validate() const;
  std::vector<std::size_t> class_counts() const;
  std::vector<Image> images() const;
  std::vector<int> labels() const;
};

enum class Layout { ClassDirs, Manifest };

/// Image geometry every dataset is normalized to.
struct ImageGeometry {
  int height = 32;
  int width = 32;
};

/// Loads a dataset stored either as one directory per class (classes ordered
/// lexicographically by directory name) or as `manifest.csv` with header
/// `path,label` (paths relative to root). Items are ordered by path.
LabeledDataset load_dataset(const std::filesystem::path& root, Layout layout,
                            ImageGeometry geometry = {});

/// Keeps the first `per_class` items of each class, preserving order.
LabeledDataset take_per_class(const LabeledDataset& ds, std::size_t per_class);

struct PoisonSpec {
  double eta = 0.1;
  int target_label = 0;
  std::uint64_t seed = 0;

  void validate(int num_classes) const;
};

/// round(eta * n), rounding halves up.
std::size_t poison_count(double eta, std::size_t n);

/// Picks round(eta * N) distinct indices, stratified by class in proportion
/// to class frequency. Leftover slots after flooring go to the largest classes
/// first (ties broken by class index). Returned indices are ascending.
std::vector<std::size_t> select_poison_indices(const LabeledDataset& ds, const PoisonSpec& spec);

using Poisoner = std::function<Image(const Image&)>;

struct PoisonedDataset {
  std::vector<LabeledItem> items;
  std::vector<std::size_t> poisoned_indices;  // ascending
  int target_label = 0;
  int num_classes = 0;

  LabeledDataset as_labeled() const { return {items, num_classes}; }
};

/// Replaces the items at `indices` with (poisoner(x), target_label). All other
/// items are copied untouched.
PoisonedDataset assemble_poisoned_dataset(const LabeledDataset& ds,
                                          const std::vector<std::size_t>& indices,
                                          const Poisoner& poisoner, const PoisonSpec& spec);

/// Same as above with the poisoned images precomputed, one per index.
PoisonedDataset assemble_poisoned_dataset(const LabeledDataset& ds,
                                          const std::vector<std::size_t>& indices,
                                          const std::vector<Image>& poisoned,
                                          const PoisonSpec& spec);

}  // namespace satba::datasets
