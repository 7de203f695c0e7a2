#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "satba/datasets.hpp"
#include "satba/hash.hpp"

using namespace satba;
using namespace satba::datasets;

namespace {

LabeledDataset synthetic(std::size_t n, int classes, std::mt19937_64& rng, int side = 4) {
  LabeledDataset ds;
  ds.num_classes = classes;
  std::uniform_int_distribution<int> label(0, classes - 1);
  for (std::size_t i = 0; i < n; ++i) ds.items.push_back({testing::random_image(side, side, 3, rng), label(rng)});
  return ds;
}

std::string item_hash(const LabeledItem& it) {
  std::string bytes(reinterpret_cast<const char*>(it.image.pixels.data()), it.image.pixels.size() * sizeof(float));
  return sha256_hex(bytes + std::to_string(it.label));
}

}  // namespace

TEST_SUITE("datasets") {
  TEST_CASE("poison count rounds halves up") {
    CHECK(poison_count(0.1, 50000) == 5000);
    CHECK(poison_count(1.0, 10) == 10);
    CHECK(poison_count(0.25, 10) == 3);  // 2.5
    CHECK(poison_count(0.05, 10) == 1);  // 0.5
    CHECK(poison_count(0.04, 10) == 0);
  }

  TEST_CASE("selection size, distinctness, stratification and determinism") {
    std::mt19937_64 rng(1);
    auto ds = synthetic(200, 4, rng);
    const PoisonSpec spec{0.1, 0, 42};
    const auto a = select_poison_indices(ds, spec);
    CHECK(a.size() == 20);
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == a.size());
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(select_poison_indices(ds, spec) == a);

    const auto counts = ds.class_counts();
    std::vector<std::size_t> picked(4, 0);
    for (auto i : a) ++picked[static_cast<std::size_t>(ds.items[i].label)];
    for (std::size_t c = 0; c < 4; ++c) {
      const double share = 0.1 * static_cast<double>(counts[c]);
      CHECK(static_cast<double>(picked[c]) >= std::floor(share));
      CHECK(static_cast<double>(picked[c]) <= std::floor(share) + 1);
    }

    auto other = spec;
    other.seed = 43;
    CHECK(select_poison_indices(ds, other) != a);
  }

  TEST_CASE("eta of one takes everything; tiny eta is rejected") {
    std::mt19937_64 rng(2);
    auto ds = synthetic(10, 3, rng);
    CHECK(select_poison_indices(ds, {1.0, 0, 0}).size() == 10);
    CHECK_THROWS_AS(select_poison_indices(ds, {0.01, 0, 0}), ValidationError);
    CHECK_THROWS_AS(select_poison_indices(ds, {1.5, 0, 0}), ValidationError);
    CHECK_THROWS_AS(select_poison_indices(ds, {0.5, 3, 0}), ValidationError);
  }

  TEST_CASE("leftover slots go to the largest classes first") {
    LabeledDataset ds;
    ds.num_classes = 3;
    const Image img(2, 2, 3);
    for (int i = 0; i < 5; ++i) ds.items.push_back({img, 0});
    for (int i = 0; i < 3; ++i) ds.items.push_back({img, 1});
    for (int i = 0; i < 2; ++i) ds.items.push_back({img, 2});
    // eta 0.3: 3 slots, floors 1.5->1, 0.9->0, 0.6->0, two leftovers to classes 0 and 1.
    const auto idx = select_poison_indices(ds, {0.3, 0, 9});
    std::vector<int> picked(3, 0);
    for (auto i : idx) ++picked[static_cast<std::size_t>(ds.items[i].label)];
    CHECK(picked == std::vector<int>{2, 1, 0});
  }

  TEST_CASE("assembly replaces exactly the chosen items") {
    std::mt19937_64 rng(3);
    auto ds = synthetic(30, 3, rng);
    const PoisonSpec spec{0.2, 1, 5};

    const auto none = assemble_poisoned_dataset(ds, {}, [](const Image& x) { return x; }, spec);
    CHECK((none.items == ds.items));

    const auto one = assemble_poisoned_dataset(ds, {4}, [](const Image& x) { return x; }, spec);
    CHECK(one.items[4].image == ds.items[4].image);
    CHECK(one.items[4].label == 1);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (i != 4) CHECK(one.items[i] == ds.items[i]);
    }

    auto bad_range = [](const Image& x) {
      Image y = x;
      y.pixels[0] = 1.5f;
      return y;
    };
    CHECK_THROWS_AS(assemble_poisoned_dataset(ds, {0}, bad_range, spec), ValidationError);
    CHECK_THROWS_AS(assemble_poisoned_dataset(ds, {0}, [](const Image&) { return Image(2, 2, 3); }, spec),
                    ValidationError);
    CHECK_THROWS_AS(assemble_poisoned_dataset(ds, {30}, [](const Image& x) { return x; }, spec), ValidationError);
  }

  TEST_CASE("poisoned-set arithmetic over random sizes and rates") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> size(10, 400);
    std::uniform_real_distribution<double> rate(0.0, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
      const auto n = size(rng);
      double eta = rate(rng);
      if (eta == 0.0 || poison_count(eta, n) == 0) eta = 1.0;
      auto ds = synthetic(n, 5, rng, 2);
      const PoisonSpec spec{eta, static_cast<int>(trial % 5), static_cast<std::uint64_t>(trial)};
      const auto idx = select_poison_indices(ds, spec);
      const auto expected = static_cast<std::size_t>(std::floor(eta * static_cast<double>(n) + 0.5));
      CHECK(idx.size() == expected);
      const auto out = assemble_poisoned_dataset(ds, idx, [](const Image& x) {
        Image y = x;
        for (auto& v : y.pixels) v = 1.0f - v;
        return y;
      }, spec);
      std::set<std::size_t> chosen(idx.begin(), idx.end());
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen.count(i)) CHECK(out.items[i].label == spec.target_label);
        else CHECK(item_hash(out.items[i]) == item_hash(ds.items[i]));
      }
    }
  }

  TEST_CASE("load class-dir layout with grayscale replication") {
    testing::TempDir tmp("classdirs");
    for (const char* cls : {"a", "b"}) {
      std::filesystem::create_directories(tmp.path() / cls);
      for (int i = 0; i < 2; ++i) {
        Image g(28, 28, 1, cls[0] == 'a' ? 0.0f : 1.0f);
        write_png(tmp.path() / cls / (std::to_string(i) + ".png"), g);
      }
    }
    const auto ds = load_dataset(tmp.path(), Layout::ClassDirs);
    REQUIRE(ds.size() == 4);
    CHECK(ds.num_classes == 2);
    CHECK(ds.items[0].image.height == 32);
    CHECK(ds.items[0].image.channels == 3);
    CHECK(ds.items[3].label == 1);
    CHECK(ds.items[3].image.at(5, 5, 2) == doctest::Approx(1.0f));
    CHECK(take_per_class(ds, 1).size() == 2);

    std::filesystem::create_directories(tmp.path() / "c");
    CHECK_THROWS_AS(load_dataset(tmp.path(), Layout::ClassDirs), ValidationError);
  }

  TEST_CASE("single class, single image") {
    testing::TempDir tmp("single");
    std::filesystem::create_directories(tmp.path() / "only");
    write_png(tmp.path() / "only" / "x.png", Image(32, 32, 3, 0.5f));
    const auto ds = load_dataset(tmp.path(), Layout::ClassDirs);
    CHECK(ds.size() == 1);
    CHECK(ds.num_classes == 1);
  }

  TEST_CASE("load manifest layout and report bad files") {
    testing::TempDir tmp("manifest");
    write_png(tmp.path() / "b.png", Image(16, 16, 3, 0.25f));
    write_png(tmp.path() / "a.png", Image(16, 16, 3, 0.75f));
    std::ofstream(tmp.path() / "manifest.csv") << "path,label\nb.png,1\na.png,0\n";
    const auto ds = load_dataset(tmp.path(), Layout::Manifest);
    REQUIRE(ds.size() == 2);
    CHECK(ds.items[0].label == 0);  // ordered by path
    CHECK(ds.items[0].image.at(0, 0, 0) == doctest::Approx(0.75f).epsilon(0.01));

    std::ofstream(tmp.path() / "junk.png") << "not an image";
    std::ofstream(tmp.path() / "manifest.csv") << "path,label\njunk.png,0\n";
    try {
      load_dataset(tmp.path(), Layout::Manifest);
      FAIL("expected failure");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("junk.png") != std::string::npos);
    }
    CHECK_THROWS_AS(load_dataset(tmp.path() / "nope", Layout::ClassDirs), ValidationError);
  }
}
