#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "satba/config.hpp"
#include "satba/pipeline.hpp"

using namespace satba;
using pipeline::Stage;

namespace {

// Three classes of noisy stripes in different orientations.
void write_split(const std::filesystem::path& root, int per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> noise(0.0f, 0.2f);
  for (int cls = 0; cls < 3; ++cls) {
    const auto dir = root / ("c" + std::to_string(cls));
    std::filesystem::create_directories(dir);
    for (int i = 0; i < per_class; ++i) {
      Image img(32, 32, 3);
      for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) {
          const int coord = cls == 0 ? r : cls == 1 ? c : r + c;
          const float base = (coord / 4) % 2 ? 0.7f : 0.1f;
          for (int k = 0; k < 3; ++k) img.at(r, c, k) = base + noise(rng);
        }
      write_png(dir / (std::to_string(i) + ".png"), img);
    }
  }
}

struct Fixture {
  testing::TempDir dir{"pipeline"};
  Fixture() {
    write_split(dir.path() / "train", 10, 1);
    write_split(dir.path() / "test", 4, 2);
  }
  ExperimentConfig config(const std::string& out) const {
    const std::string text =
        "[dataset]\ntrain_root = train\ntest_root = test\n"
        "[steganet]\nepochs = 2\nbatch_size = 4\ndepth = 2\nbase_width = 4\nextraction_layers = 2\nextraction_width = 4\n"
        "[victim]\nepochs = 1\nbatch_size = 8\nlr = 0.01\n"
        "[eval]\nnc_steps = 2\nnc_samples = 4\nstealth_samples = 6\nsweep_etas = 0.1, 0.2\n"
        "[output]\ndir = " + out + "\n";
    return parse_config(text, dir.path());
  }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count_skipped(const std::vector<pipeline::StageOutcome>& r) {
  return static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [](const auto& o) { return o.skipped; }));
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("stage names") {
    CHECK(pipeline::all_stages().size() == 9);
    CHECK(pipeline::to_string(Stage::TrainSteganet) == "train-steganet");
    CHECK(pipeline::parse_stage("defend") == Stage::Defend);
    CHECK_THROWS_AS(pipeline::parse_stage("deploy"), ValidationError);
  }

  TEST_CASE("empty stage list only validates") {
    Fixture f;
    const auto cfg = f.config("out");
    CHECK(pipeline::run_pipeline(cfg, {}).empty());
    CHECK_FALSE(std::filesystem::exists(cfg.output_dir));
  }

  TEST_CASE("missing prerequisites name the stage to run") {
    Fixture f;
    const auto cfg = f.config("out");
    try {
      pipeline::run_pipeline(cfg, {Stage::Trigger});
      FAIL("expected a prerequisite error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("run 'features' first") != std::string::npos);
    }
  }

  TEST_CASE("full run, idempotent re-run, determinism and invalidation") {
    Fixture f;
    const auto cfg = f.config("run-a");
    const auto first = pipeline::run_pipeline(cfg, pipeline::all_stages());
    CHECK(first.size() == 9);
    CHECK(count_skipped(first) == 0);
    for (Stage s : pipeline::all_stages()) CHECK(std::filesystem::exists(pipeline::stage_dir(cfg, s) / "manifest.json"));

    const auto report = pipeline::read_json(pipeline::stage_dir(cfg, Stage::Evaluate) / "report.json");
    for (const char* key : {"asr", "cda", "psnr_db", "ssim", "mse", "config"}) CHECK(report.contains(key));
    const auto sweep = slurp(pipeline::stage_dir(cfg, Stage::Sweep) / "sweep.csv");
    CHECK(sweep.rfind("eta,asr,cda\n", 0) == 0);
    const auto composition = pipeline::read_json(pipeline::stage_dir(cfg, Stage::Poison) / "composition.json");
    CHECK(composition.at("poisoned") == 3);
    const auto defense = pipeline::read_json(pipeline::stage_dir(cfg, Stage::Defend) / "defense.json");
    CHECK(defense.contains("satba"));
    CHECK(defense.contains("patch"));

    const auto again = pipeline::run_pipeline(cfg, pipeline::all_stages());
    CHECK(count_skipped(again) == 9);

    const auto other = f.config("run-b");
    pipeline::run_pipeline(other, pipeline::all_stages());
    CHECK(slurp(pipeline::stage_dir(cfg, Stage::Evaluate) / "report.json") ==
          slurp(pipeline::stage_dir(other, Stage::Evaluate) / "report.json"));

    // Changing the steganet recipe re-runs it and everything downstream only.
    const auto poison_manifest = slurp(pipeline::stage_dir(cfg, Stage::Poison) / "manifest.json");
    auto tweaked = f.config("run-a");
    tweaked.steganet.epochs = 3;
    const auto third = pipeline::run_pipeline(tweaked, pipeline::all_stages());
    CHECK(third[0].skipped);
    CHECK(third[1].skipped);
    CHECK(third[2].skipped);
    CHECK_FALSE(third[3].skipped);
    CHECK_FALSE(third[4].skipped);
    CHECK(slurp(pipeline::stage_dir(cfg, Stage::Poison) / "manifest.json") != poison_manifest);

    pipeline::RunOptions forced;
    forced.force = true;
    CHECK(count_skipped(pipeline::run_pipeline(tweaked, {Stage::Features}, forced)) == 0);

    // A tampered artifact invalidates the stage that produced it.
    std::ofstream(pipeline::stage_dir(cfg, Stage::Sweep) / "sweep.csv") << "tampered";
    const auto fourth = pipeline::run_pipeline(tweaked, {Stage::Sweep});
    CHECK_FALSE(fourth[0].skipped);
  }
}
