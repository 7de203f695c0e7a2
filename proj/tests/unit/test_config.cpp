#include <fstream>

#include "doctest.h"
#include "helpers.hpp"

#include "satba/config.hpp"

using namespace satba;

namespace {

struct Layout {
  testing::TempDir dir{"config"};
  Layout() {
    std::filesystem::create_directories(dir.path() / "data" / "train");
    std::filesystem::create_directories(dir.path() / "data" / "test");
  }
};

const char* kMinimal =
    "[dataset]\n"
    "train_root = data/train\n"
    "test_root = data/test\n";

std::string error_of(const std::string& text, const std::filesystem::path& base) {
  try {
    parse_config(text, base);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("minimal config fills defaults") {
    Layout l;
    const auto cfg = parse_config(kMinimal, l.dir.path());
    CHECK(cfg.steganet.lambda1 == 0.5);
    CHECK(cfg.steganet.lambda2 == 1.0);
    CHECK(cfg.eta == 0.1);
    CHECK(cfg.target_label == 0);
    CHECK(cfg.schedule.lr == 0.1);
    CHECK(cfg.feature_mode == features::Mode::HOG);
    CHECK(cfg.train_root == (l.dir.path() / "data" / "train").lexically_normal());
    CHECK(cfg.output_dir == (l.dir.path() / "out").lexically_normal());
  }

  TEST_CASE("every documented key parses") {
    Layout l;
    const std::string text = std::string(kMinimal) +
        "layout = class-dirs\ntrain_per_class = 5\ntest_per_class = 2\n"
        "[features]\nmode = lbp\n"
        "[attention]\nlayers = conv1, conv3\n"
        "[steganet]\nlambda1 = 0.25\nlambda2 = 2\nepochs = 3\nlr = 0.01\nplateau_factor = 0.3\n"
        "plateau_patience = 2\nbatch_size = 8\ndepth = 2\nbase_width = 16\nextraction_layers = 4\nextraction_width = 8\n"
        "[poison]\neta = 0.05\ntarget_label = 3\n"
        "[victim]\narchitecture = resnet18-32px\nepochs = 4\nlr = 0.05\nmomentum = 0.8\nstep_every = 2\n"
        "step_factor = 0.5\nbatch_size = 32\n"
        "[eval]\nstealth_samples = 100\npatch_size = 4\npatch_corner = top-left\nnc_steps = 10\nnc_lambda = 0.02\n"
        "nc_lr = 0.05\nnc_samples = 16\nnc_baseline = false\nsweep_etas = 0.02, 0.1\n"
        "[output]\ndir = results\n"
        "[run]\nseed = 17\n";
    const auto cfg = parse_config(text, l.dir.path());
    CHECK(cfg.train_per_class == 5);
    CHECK(cfg.feature_mode == features::Mode::LBP);
    CHECK(cfg.attention_layers == std::vector<std::string>{"conv1", "conv3"});
    CHECK(cfg.steganet.plateau_patience == 2);
    CHECK(cfg.injection.base_width == 16);
    CHECK(cfg.extraction.layers == 4);
    CHECK(cfg.target_label == 3);
    CHECK(cfg.architecture == victim::Architecture::ResNet18);
    CHECK(cfg.schedule.step_factor == 0.5);
    CHECK(cfg.patch_corner == eval::Corner::TopLeft);
    CHECK_FALSE(cfg.nc_baseline);
    CHECK(cfg.sweep_etas == std::vector<double>{0.02, 0.1});
    CHECK(cfg.output_dir == l.dir.path() / "results");
    CHECK(cfg.seed == 17);
    CHECK(cfg.echo().at("victim").at("architecture") == "resnet18-32px");
  }

  TEST_CASE("unknown keys and sections are rejected by name") {
    Layout l;
    CHECK(error_of(std::string(kMinimal) + "[poison]\netaa = 0.1\n", l.dir.path()).find("etaa") != std::string::npos);
    CHECK(error_of(std::string(kMinimal) + "[poisson]\neta = 0.1\n", l.dir.path()).find("poisson") != std::string::npos);
  }

  TEST_CASE("out-of-range and malformed values name the field") {
    Layout l;
    CHECK(error_of(std::string(kMinimal) + "[poison]\neta = 1.5\n", l.dir.path()).find("poison.eta") != std::string::npos);
    CHECK(error_of(std::string(kMinimal) + "[poison]\neta = lots\n", l.dir.path()).find("poison.eta") != std::string::npos);
    CHECK(error_of(std::string(kMinimal) + "[victim]\nepochs = 2.5\n", l.dir.path()).find("victim.epochs") != std::string::npos);
    CHECK(error_of(std::string(kMinimal) + "[eval]\nnc_baseline = maybe\n", l.dir.path()).find("nc_baseline") != std::string::npos);
    CHECK(error_of(std::string(kMinimal) + "[features]\nmode = sift\n", l.dir.path()).find("features.mode") != std::string::npos);
    CHECK(error_of("[dataset]\ntrain_root = nowhere\ntest_root = data/test\n", l.dir.path()).find("train_root") != std::string::npos);
    CHECK(error_of("[dataset]\ntest_root = data/test\n", l.dir.path()).find("train_root") != std::string::npos);
  }

  TEST_CASE("syntax errors report the line") {
    Layout l;
    const auto msg = error_of("[dataset]\ntrain_root = data/train\nthis line has no equals sign\n", l.dir.path());
    CHECK(msg.find("line 3") != std::string::npos);
  }

  TEST_CASE("load_config resolves paths against the file's directory") {
    Layout l;
    std::ofstream(l.dir.path() / "exp.ini") << kMinimal;
    const auto cfg = load_config(l.dir.path() / "exp.ini");
    CHECK(std::filesystem::equivalent(cfg.test_root, l.dir.path() / "data" / "test"));
    CHECK_THROWS_AS(load_config(l.dir.path() / "missing.ini"), ValidationError);
  }

  TEST_CASE("hash covers settings but not the output directory") {
    Layout l;
    const auto a = parse_config(kMinimal, l.dir.path());
    const auto b = parse_config(std::string(kMinimal) + "[output]\ndir = elsewhere\n", l.dir.path());
    const auto c = parse_config(std::string(kMinimal) + "[run]\nseed = 1\n", l.dir.path());
    CHECK(a.hash() == b.hash());
    CHECK(a.hash() != c.hash());
    CHECK(a.echo().at("dataset").at("train_root") == "data/train");
  }
}
