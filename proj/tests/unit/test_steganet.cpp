#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "../support/gradcheck.hpp"

#include "satba/checkpoint.hpp"
#include "satba/steganet.hpp"

using namespace satba;
using namespace satba::steganet;

namespace {

bool in_unit_range(const Image& img) {
  return std::all_of(img.pixels.begin(), img.pixels.end(),
                     [](float v) { return std::isfinite(v) && v >= 0.0f && v <= 1.0f; });
}

std::vector<std::pair<Image, Image>> synthetic_pairs(int n, int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<Image, Image>> pairs;
  for (int i = 0; i < n; ++i) {
    auto t = testing::random_image(side, side, 3, rng);
    for (auto& v : t.pixels) v *= 0.3f;
    pairs.emplace_back(testing::random_image(side, side, 3, rng), t);
  }
  return pairs;
}

}  // namespace

TEST_SUITE("steganet") {
  TEST_CASE("untrained networks preserve shape and range") {
    auto nets = build_steganet({}, {}, 1);
    std::mt19937_64 rng(1);
    const auto x = testing::random_image(32, 32, 3, rng);
    const auto t = testing::random_image(32, 32, 3, rng);
    const auto xhat = inject(*nets.injection, x, t);
    CHECK(xhat.same_shape(x));
    CHECK(in_unit_range(xhat));
    CHECK(inject(*nets.injection, x, t) == xhat);
    const auto that = extract_trigger(*nets.extraction, xhat);
    CHECK(that.same_shape(t));
    CHECK(in_unit_range(that));
    CHECK(in_unit_range(extract_trigger(*nets.extraction, Image(32, 32, 3, 0.0f))));
    CHECK_THROWS_AS(inject(*nets.injection, x, Image(16, 16, 3)), ValidationError);
  }

  TEST_CASE("spatial shape survives every depth") {
    std::mt19937_64 rng(2);
    const auto x = testing::random_image(32, 32, 3, rng);
    for (int depth = 1; depth <= 5; ++depth) {
      InjectionNetwork net(InjectionConfig{3, depth, 4});
      CHECK(inject(*net, x, x).same_shape(x));
    }
    InjectionNetwork deep(InjectionConfig{3, 3, 4});
    CHECK_THROWS_AS(inject(*deep, Image(12, 12, 3), Image(12, 12, 3)), ValidationError);
  }

  TEST_CASE("loss arithmetic") {
    Image x(8, 8, 3, 0.3f), t(8, 8, 3, 0.6f);
    SteganetLossConfig cfg;
    CHECK(steganet_loss(x, x, t, t, cfg) == 0.0);
    Image shifted = x;
    for (auto& v : shifted.pixels) v += 0.1f;
    CHECK(steganet_loss(x, shifted, t, t, cfg) == doctest::Approx(0.005).epsilon(1e-5));
    cfg.lambda1 = 0.0;
    CHECK(steganet_loss(x, shifted, t, t, cfg) == 0.0);
    const auto xt = to_tensor(x), st = to_tensor(shifted), tt = to_tensor(t);
    CHECK(steganet_loss(xt, st, tt, tt, SteganetLossConfig{}).item<double>() == doctest::Approx(0.005).epsilon(1e-4));
  }

  TEST_CASE("defaults and validation") {
    const SteganetLossConfig cfg;
    CHECK(cfg.lambda1 == 0.5);
    CHECK(cfg.lambda2 == 1.0);
    CHECK(cfg.lr == 0.001);
    CHECK(cfg.epochs == 150);
    CHECK(cfg.plateau_factor == 0.5);
    CHECK(cfg.plateau_patience == 3);
    SteganetLossConfig bad;
    bad.lambda1 = bad.lambda2 = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = {};
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("gradients match central finite differences") {
    const auto r = testing::steganet_gradcheck(5);
    CHECK(r.parameters <= 1000);
    CHECK(r.parameters > 100);
    CHECK(r.max_relative_error <= 1e-4);
  }

  TEST_CASE("training reduces the loss and is reproducible") {
    const auto pairs = synthetic_pairs(8, 16, 3);
    SteganetLossConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 4;
    const InjectionConfig inj{3, 2, 8};
    const ExtractionConfig ext{3, 3, 8};
    const auto a = train_steganet(pairs, cfg, 11, inj, ext);
    REQUIRE(a.history.train_loss.size() == 30);
    CHECK(a.history.train_loss.back() < a.history.train_loss.front());
    CHECK(a.history.validation_loss.size() == 30);
    const auto b = train_steganet(pairs, cfg, 11, inj, ext);
    CHECK(a.history.train_loss == b.history.train_loss);
    CHECK(a.history.learning_rate == b.history.learning_rate);
    CHECK(a.history.learning_rate.front() == cfg.lr);
    for (std::size_t i = 1; i < a.history.learning_rate.size(); ++i) {
      const double ratio = a.history.learning_rate[i] / a.history.learning_rate[i - 1];
      CHECK((ratio == doctest::Approx(1.0) || ratio == doctest::Approx(cfg.plateau_factor)));
    }
    CHECK_THROWS_AS(train_steganet({pairs.front()}, cfg, 1, inj, ext), ValidationError);
  }

  TEST_CASE("a diverging run names the epoch") {
    auto pairs = synthetic_pairs(4, 8, 4);
    pairs[0].first.pixels[0] = std::nanf("");
    SteganetLossConfig cfg;
    cfg.epochs = 2;
    try {
      train_steganet(pairs, cfg, 1, {3, 1, 4}, {3, 2, 4});
      FAIL("expected divergence");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
  }

  TEST_CASE("checkpoints round-trip and reject mismatched architectures") {
    testing::TempDir tmp("stego");
    auto nets = build_steganet({3, 2, 8}, {3, 3, 8}, 7);
    save_steganet(tmp.path(), nets);
    auto loaded = load_steganet(tmp.path());
    std::mt19937_64 rng(5);
    const auto x = testing::random_image(16, 16, 3, rng);
    const auto t = testing::random_image(16, 16, 3, rng);
    CHECK(inject(*loaded.injection, x, t) == inject(*nets.injection, x, t));
    CHECK(extract_trigger(*loaded.extraction, x) == extract_trigger(*nets.extraction, x));

    const auto header = read_checkpoint_header(tmp.path() / "injection.ckpt");
    CHECK(header.version == kCheckpointVersion);
    InjectionNetwork other(InjectionConfig{3, 3, 8});
    CheckpointHeader wrong = header;
    wrong.architecture = "unet channels=3 depth=3 base_width=8";
    CHECK_THROWS_AS(load_checkpoint(tmp.path() / "injection.ckpt", wrong, *other), ValidationError);
  }
}
