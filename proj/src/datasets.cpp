#include "satba/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

namespace satba::datasets {

namespace fs = std::filesystem;

void LabeledDataset::validate() const {
  if (items.empty()) throw ValidationError("dataset is empty");
  if (num_classes <= 0) throw ValidationError("dataset must have at least one class");
  const Image& first = items.front().image;
  for (const auto& item : items) {
    if (item.label < 0 || item.label >= num_classes) {
      throw ValidationError("label " + std::to_string(item.label) + " out of range");
    }
    require_same_shape(first, item.image, "dataset");
  }
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (const auto& item : items) ++counts.at(static_cast<std::size_t>(item.label));
  return counts;
}

std::vector<Image> LabeledDataset::images() const {
  std::vector<Image> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.image);
  return out;
}

std::vector<int> LabeledDataset::labels() const {
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.label);
  return out;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".pgm" ||
         ext == ".ppm" || ext == ".tif" || ext == ".tiff";
}

LabeledDataset load_class_dirs(const fs::path& root, ImageGeometry geometry) {
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  if (class_dirs.empty()) throw ValidationError("no class directories under " + root.string());
  std::sort(class_dirs.begin(), class_dirs.end());

  LabeledDataset ds;
  ds.num_classes = static_cast<int>(class_dirs.size());
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    if (files.empty()) {
      throw ValidationError("empty class directory: " + class_dirs[label].string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      ds.items.push_back({read_image(file, geometry.height, geometry.width), static_cast<int>(label)});
    }
  }
  return ds;
}

LabeledDataset load_manifest(const fs::path& root, ImageGeometry geometry) {
  const fs::path manifest = root / "manifest.csv";
  std::ifstream is(manifest);
  if (!is) throw ValidationError("missing manifest: " + manifest.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("path,label", 0) != 0) {
    throw ValidationError(manifest.string() + ": expected header 'path,label'");
  }
  std::vector<std::pair<std::string, int>> entries;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw ValidationError(manifest.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(line.substr(comma + 1), &used);
      if (used != line.size() - comma - 1 || label < 0) throw std::invalid_argument("label");
    } catch (const std::exception&) {
      throw ValidationError(manifest.string() + ":" + std::to_string(line_no) + ": bad label");
    }
    entries.emplace_back(line.substr(0, comma), label);
  }
  if (entries.empty()) throw ValidationError(manifest.string() + ": no entries");
  std::sort(entries.begin(), entries.end());

  LabeledDataset ds;
  for (const auto& [rel, label] : entries) {
    ds.items.push_back({read_image(root / rel, geometry.height, geometry.width), label});
    ds.num_classes = std::max(ds.num_classes, label + 1);
  }
  return ds;
}

}  // namespace

LabeledDataset load_dataset(const fs::path& root, Layout layout, ImageGeometry geometry) {
  if (!fs::is_directory(root)) throw ValidationError("dataset root not found: " + root.string());
  LabeledDataset ds = layout == Layout::ClassDirs ? load_class_dirs(root, geometry)
                                                  : load_manifest(root, geometry);
  ds.validate();
  return ds;
}

LabeledDataset take_per_class(const LabeledDataset& ds, std::size_t per_class) {
  LabeledDataset out;
  out.num_classes = ds.num_classes;
  std::vector<std::size_t> taken(static_cast<std::size_t>(ds.num_classes), 0);
  for (const auto& item : ds.items) {
    auto& n = taken[static_cast<std::size_t>(item.label)];
    if (n < per_class) {
      out.items.push_back(item);
      ++n;
    }
  }
  return out;
}

void PoisonSpec::validate(int num_classes) const {
  if (!(eta > 0.0 && eta <= 1.0)) {
    throw ValidationError("poison rate eta must lie in (0, 1], got " + std::to_string(eta));
  }
  if (target_label < 0 || target_label >= num_classes) {
    throw ValidationError("target_label " + std::to_string(target_label) + " out of range");
  }
}

std::size_t poison_count(double eta, std::size_t n) {
  return static_cast<std::size_t>(std::floor(eta * static_cast<double>(n) + 0.5));
}

std::vector<std::size_t> select_poison_indices(const LabeledDataset& ds, const PoisonSpec& spec) {
  spec.validate(ds.num_classes);
  const std::size_t n = ds.size();
  const std::size_t want = poison_count(spec.eta, n);
  if (want == 0) {
    throw ValidationError("eta * N rounds to zero poisoned samples (N=" + std::to_string(n) + ")");
  }

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.items[i].label)].push_back(i);

  std::vector<std::size_t> quota(by_class.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    quota[k] = want * by_class[k].size() / n;
    assigned += quota[k];
  }
  std::vector<std::size_t> order(by_class.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return by_class[a].size() > by_class[b].size();
  });
  for (std::size_t i = 0; assigned < want; i = (i + 1) % order.size()) {
    const std::size_t k = order[i];
    if (quota[k] < by_class[k].size()) {
      ++quota[k];
      ++assigned;
    }
  }

  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> picked;
  picked.reserve(want);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto members = by_class[k];
    std::shuffle(members.begin(), members.end(), rng);
    picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[k]));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

namespace {

void check_indices(const LabeledDataset& ds, const std::vector<std::size_t>& indices) {
  std::set<std::size_t> seen;
  for (auto i : indices) {
    if (i >= ds.size()) throw ValidationError("poison index " + std::to_string(i) + " out of range");
    if (!seen.insert(i).second) throw ValidationError("duplicate poison index " + std::to_string(i));
  }
}

}  // namespace

PoisonedDataset assemble_poisoned_dataset(const LabeledDataset& ds,
                                          const std::vector<std::size_t>& indices,
                                          const std::vector<Image>& poisoned,
                                          const PoisonSpec& spec) {
  spec.validate(ds.num_classes);
  check_indices(ds, indices);
  if (poisoned.size() != indices.size()) {
    throw ValidationError("poisoned image count does not match index count");
  }
  PoisonedDataset out;
  out.items = ds.items;
  out.target_label = spec.target_label;
  out.num_classes = ds.num_classes;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    auto& item = out.items[indices[j]];
    const Image& img = poisoned[j];
    if (!img.same_shape(item.image)) {
      throw ValidationError("poisoner changed image shape at index " + std::to_string(indices[j]));
    }
    if (!img.valid()) {
      throw ValidationError("poisoner produced values outside [0,1] at index " +
                            std::to_string(indices[j]));
    }
    item = {img, spec.target_label};
  }
  out.poisoned_indices = indices;
  std::sort(out.poisoned_indices.begin(), out.poisoned_indices.end());
  return out;
}

PoisonedDataset assemble_poisoned_dataset(const LabeledDataset& ds,
                                          const std::vector<std::size_t>& indices,
                                          const Poisoner& poisoner, const PoisonSpec& spec) {
  check_indices(ds, indices);
  std::vector<Image> poisoned;
  poisoned.reserve(indices.size());
  for (auto i : indices) poisoned.push_back(poisoner(ds.items[i].image));
  return assemble_poisoned_dataset(ds, indices, poisoned, spec);
}

}  // namespace satba::datasets
