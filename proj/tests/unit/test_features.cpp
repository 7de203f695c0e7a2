#include <random>

#include "doctest.h"
#include "helpers.hpp"

#include "satba/features.hpp"

using namespace satba;
using features::Mode;

namespace {

Image step_edge(int h, int w, int edge_col) {
  Image img(h, w, 3, 0.0f);
  for (int r = 0; r < h; ++r)
    for (int c = edge_col; c < w; ++c)
      for (int k = 0; k < 3; ++k) img.at(r, c, k) = 1.0f;
  return img;
}

bool in_unit_range(const Image& img) {
  return std::all_of(img.pixels.begin(), img.pixels.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("constant image") {
    const Image flat(32, 32, 3, 0.4f);
    const auto hog = features::extract_features(flat, Mode::HOG);
    CHECK(std::all_of(hog.values.pixels.begin(), hog.values.pixels.end(), [](float v) { return v == 0.0f; }));
    const auto lbp = features::extract_features(flat, Mode::LBP);
    CHECK(std::all_of(lbp.values.pixels.begin(), lbp.values.pixels.end(), [](float v) { return v == 1.0f; }));
  }

  TEST_CASE("lbp code of a hand-worked 3x3 neighbourhood") {
    Image img(3, 3, 1);
    const float vals[9] = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f, 0.9f};
    std::copy(vals, vals + 9, img.pixels.begin());
    // Clockwise from top-left: 0.1 0.2 0.3 0.6 0.9 0.8 0.7 0.4 against 0.5 -> 00011110.
    const auto f = features::extract_features(img, Mode::LBP);
    CHECK(f.values.at(1, 1, 0) == doctest::Approx(30.0 / 255.0));
    // Top-left corner with replicated borders: neighbours 0.1 0.1 0.1 0.2 0.5 0.4 0.1 0.1 -> all >= 0.1.
    CHECK(f.values.at(0, 0, 0) == doctest::Approx(1.0));
  }

  TEST_CASE("vertical step edge concentrates hog energy on the edge band") {
    const auto small = features::extract_features(step_edge(5, 5, 2), Mode::HOG);
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c) {
        const float v = small.values.at(r, c, 0);
        if (c == 1 || c == 2) CHECK(v > 0.0f);
        else CHECK(v == 0.0f);
      }
    const auto big = features::extract_features(step_edge(32, 32, 16), Mode::HOG);
    float peak = 0.0f;
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        if (c != 15 && c != 16) CHECK(big.values.at(r, c, 1) == 0.0f);
        peak = std::max(peak, big.values.at(r, c, 1));
      }
    CHECK(peak == doctest::Approx(1.0f));
  }

  TEST_CASE("shape and range on random images") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 20; ++i) {
      const auto img = testing::random_image(32, 32, 3, rng);
      for (Mode m : {Mode::HOG, Mode::LBP}) {
        const auto f = features::extract_features(img, m);
        CHECK(f.values.same_shape(img));
        CHECK(in_unit_range(f.values));
        CHECK(f.mode == m);
      }
    }
  }

  TEST_CASE("hog ignores a constant offset") {
    std::mt19937_64 rng(5);
    auto img = testing::random_image(32, 32, 3, rng);
    for (auto& v : img.pixels) v *= 0.5f;
    auto shifted = img;
    for (auto& v : shifted.pixels) v += 0.25f;
    const auto a = features::extract_features(img, Mode::HOG).values;
    const auto b = features::extract_features(shifted, Mode::HOG).values;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.pixels[i] == doctest::Approx(b.pixels[i]).epsilon(1e-4));
  }

  TEST_CASE("lbp ignores monotone intensity remapping") {
    std::mt19937_64 rng(6);
    const auto img = testing::random_image(16, 16, 3, rng);
    auto remapped = img;
    for (auto& v : remapped.pixels) v = v * v * v;
    CHECK(features::extract_features(img, Mode::LBP).values == features::extract_features(remapped, Mode::LBP).values);
  }

  TEST_CASE("mode names") {
    CHECK(features::parse_mode("hog") == Mode::HOG);
    CHECK(features::parse_mode("lbp") == Mode::LBP);
    CHECK(features::to_string(Mode::LBP) == "lbp");
    CHECK_THROWS_AS(features::parse_mode("sift"), ValidationError);
  }
}
