#include "satba/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

namespace satba {

Image::Image(int h, int w, int c, float fill)
    : height(h), width(w), channels(c),
      pixels(static_cast<std::size_t>(h) * w * c, fill) {
  if (h <= 0 || w <= 0 || c <= 0) {
    throw ValidationError("image dimensions must be positive");
  }
}

bool Image::valid() const {
  if (height <= 0 || width <= 0 || channels <= 0) return false;
  if (pixels.size() != static_cast<std::size_t>(height) * width * channels) return false;
  return std::all_of(pixels.begin(), pixels.end(),
                     [](float v) { return v >= 0.0f && v <= 1.0f; });
}

std::string shape_string(const Image& img) {
  std::ostringstream os;
  os << img.height << "x" << img.width << "x" << img.channels;
  return os.str();
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(what) + ": shape mismatch (" + shape_string(a) +
                          " vs " + shape_string(b) + ")");
  }
}

torch::Tensor to_tensor(std::span<const Image> images) {
  if (images.empty()) return torch::empty({0, 0, 0, 0});
  const Image& first = images.front();
  const auto n = static_cast<std::int64_t>(images.size());
  auto out = torch::empty({n, first.channels, first.height, first.width});
  float* dst = out.data_ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(first.height) * first.width;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    require_same_shape(first, img, "to_tensor");
    float* base = dst + i * plane * img.channels;
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < img.channels; ++c) {
        base[c * plane + p] = img.pixels[p * img.channels + c];
      }
    }
  }
  return out;
}

torch::Tensor to_tensor(const Image& image) {
  return to_tensor(std::span<const Image>(&image, 1));
}

std::vector<Image> from_tensor(const torch::Tensor& batch) {
  auto t = batch.detach().to(torch::kCPU, torch::kFloat).contiguous();
  if (t.dim() == 3) t = t.unsqueeze(0);
  if (t.dim() != 4) throw ValidationError("from_tensor: expected a 3-D or 4-D tensor");
  const int n = static_cast<int>(t.size(0));
  const int c = static_cast<int>(t.size(1));
  const int h = static_cast<int>(t.size(2));
  const int w = static_cast<int>(t.size(3));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const float* src = t.data_ptr<float>();
  std::vector<Image> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Image img(h, w, c);
    const float* base = src + static_cast<std::size_t>(i) * plane * c;
    for (std::size_t p = 0; p < plane; ++p) {
      for (int ch = 0; ch < c; ++ch) img.pixels[p * c + ch] = base[ch * plane + p];
    }
    out.push_back(std::move(img));
  }
  return out;
}

Image read_image(const std::filesystem::path& path, int height, int width) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) {
    throw ValidationError("cannot decode image: " + path.string());
  }
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1: cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw std::runtime_error("unsupported channel count in " + path.string());
  }
  double scale = 1.0 / 255.0;
  if (rgb.depth() == CV_16U) scale = 1.0 / 65535.0;
  else if (rgb.depth() == CV_32F || rgb.depth() == CV_64F) scale = 1.0;
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, scale);
  if (f.rows != height || f.cols != width) {
    cv::Mat resized;
    cv::resize(f, resized, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    f = resized;
  }
  Image img(height, width, 3);
  for (int r = 0; r < height; ++r) {
    const auto* row = f.ptr<cv::Vec3f>(r);
    for (int c = 0; c < width; ++c) {
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = std::clamp(row[c][ch], 0.0f, 1.0f);
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const int type = image.channels == 1 ? CV_8UC1 : CV_8UC3;
  if (image.channels != 1 && image.channels != 3) {
    throw ValidationError("write_png supports 1 or 3 channels");
  }
  cv::Mat out(image.height, image.width, type);
  for (int r = 0; r < image.height; ++r) {
    auto* row = out.ptr<std::uint8_t>(r);
    for (int c = 0; c < image.width; ++c) {
      for (int ch = 0; ch < image.channels; ++ch) {
        // OpenCV stores BGR.
        const int dst_ch = image.channels == 3 ? 2 - ch : 0;
        const float v = std::clamp(image.at(r, c, ch), 0.0f, 1.0f);
        row[c * image.channels + dst_ch] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

void write_heatmap_png(const std::filesystem::path& path, const std::vector<double>& values,
                       int height, int width) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw ValidationError("write_heatmap_png: value count does not match shape");
  }
  cv::Mat gray(height, width, CV_8UC1);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double v = std::clamp(values[static_cast<std::size_t>(r) * width + c], 0.0, 1.0);
      gray.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  cv::Mat color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), color)) {
    throw std::runtime_error("cannot write " + path.string());
  }
}

namespace {

constexpr char kBundleMagic[8] = {'S', 'A', 'T', 'B', 'A', 'I', 'M', 'G'};
constexpr std::uint32_t kBundleVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated image bundle");
  return v;
}

}  // namespace

void save_bundle(const std::filesystem::path& path, const ImageBundle& bundle) {
  if (!bundle.labels.empty() && bundle.labels.size() != bundle.images.size()) {
    throw ValidationError("bundle labels must be empty or match image count");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kBundleMagic, sizeof(kBundleMagic));
  put(os, kBundleVersion);
  put<std::uint64_t>(os, bundle.images.size());
  const Image shape = bundle.images.empty() ? Image() : bundle.images.front();
  put<std::int32_t>(os, shape.height);
  put<std::int32_t>(os, shape.width);
  put<std::int32_t>(os, shape.channels);
  put<std::uint8_t>(os, bundle.labels.empty() ? 0 : 1);
  for (auto label : bundle.labels) put(os, label);
  for (const auto& img : bundle.images) {
    require_same_shape(shape, img, "save_bundle");
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

ImageBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kBundleMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not an image bundle: " + path.string());
  }
  if (get<std::uint32_t>(is) != kBundleVersion) {
    throw std::runtime_error("unsupported bundle version: " + path.string());
  }
  const auto count = get<std::uint64_t>(is);
  const auto h = get<std::int32_t>(is);
  const auto w = get<std::int32_t>(is);
  const auto c = get<std::int32_t>(is);
  const bool has_labels = get<std::uint8_t>(is) != 0;
  ImageBundle bundle;
  if (has_labels) {
    bundle.labels.resize(count);
    for (auto& label : bundle.labels) label = get<std::int32_t>(is);
  }
  bundle.images.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Image img(h, w, c);
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
    if (!is) throw std::runtime_error("truncated image bundle: " + path.string());
    bundle.images.push_back(std::move(img));
  }
  return bundle;
}

}  // namespace satba
