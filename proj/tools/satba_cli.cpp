// Command-line front end: one subcommand per pipeline stage plus `run` and
// `stealth`. Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <algorithm>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "satba/attention.hpp"
#include "satba/config.hpp"
#include "satba/eval.hpp"
#include "satba/features.hpp"
#include "satba/pipeline.hpp"
#include "satba/trigger.hpp"
#include "satba/victim.hpp"

namespace fs = std::filesystem;
using namespace satba;

namespace {

struct Options {
  std::string config;
  bool force = false;
  bool quiet = false;
  std::string stages = "all";
  std::string image;
  std::string out;
  std::string mode = "hog";
  std::string surrogate;
  std::string clean;
  std::string poisoned;
};

std::vector<pipeline::Stage> parse_stage_list(const std::string& text) {
  if (text == "all") return pipeline::all_stages();
  std::vector<pipeline::Stage> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(pipeline::parse_stage(item));
  }
  return out;
}

int run_stages(const Options& o, const std::vector<pipeline::Stage>& stages) {
  if (o.config.empty()) throw ValidationError("--config is required");
  const auto cfg = load_config(o.config);
  pipeline::RunOptions ro;
  ro.force = o.force;
  ro.log = o.quiet ? nullptr : &std::cerr;
  const auto outcomes = pipeline::run_pipeline(cfg, stages, ro);
  if (stages.empty()) std::cerr << "config valid (hash " << cfg.hash() << ")\n";
  for (const auto& r : outcomes) {
    std::cout << pipeline::to_string(r.stage) << ' ' << (r.skipped ? "skipped" : "done") << '\n';
  }
  return 0;
}

victim::Classifier surrogate_for(const Options& o) {
  if (!o.surrogate.empty()) return victim::load_classifier(o.surrogate);
  if (o.config.empty()) throw ValidationError("single-image mode needs --surrogate or --config");
  const auto cfg = load_config(o.config);
  return victim::load_classifier(cfg.surrogate ? *cfg.surrogate
                                               : pipeline::stage_dir(cfg, pipeline::Stage::Attention) / "surrogate.ckpt");
}

void require_out(const Options& o) {
  if (o.out.empty()) throw ValidationError("--out is required with --image");
}

int single_features(const Options& o) {
  require_out(o);
  const auto f = features::extract_features(read_image(o.image), features::parse_mode(o.mode));
  write_png(o.out, f.values);
  return 0;
}

int single_attention(const Options& o) {
  require_out(o);
  const auto img = read_image(o.image);
  auto model = surrogate_for(o);
  const auto m = attention::spatial_attention_matrix(attention::capture_feature_maps(*model, img), img.height, img.width);
  write_heatmap_png(o.out, m.values, m.height, m.width);
  return 0;
}

int single_trigger(const Options& o) {
  require_out(o);
  const auto img = read_image(o.image);
  auto model = surrogate_for(o);
  const auto m = attention::spatial_attention_matrix(attention::capture_feature_maps(*model, img), img.height, img.width);
  const auto t = trigger::generate_trigger(features::extract_features(img, features::parse_mode(o.mode)), m,
                                           {o.image, features::parse_mode(o.mode), victim::weight_checksum(*model)});
  write_png(o.out, t.values);
  return 0;
}

std::vector<fs::path> image_files(const fs::path& p) {
  if (fs::is_regular_file(p)) return {p};
  if (!fs::is_directory(p)) throw ValidationError("not found: " + p.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(p)) {
    if (e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int stealth(const Options& o) {
  if (o.clean.empty() || o.poisoned.empty()) throw ValidationError("--clean and --poisoned are required");
  const auto clean = image_files(o.clean);
  const auto poisoned = image_files(o.poisoned);
  if (clean.size() != poisoned.size()) throw ValidationError("--clean and --poisoned hold different image counts");
  std::vector<std::pair<Image, Image>> pairs;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto a = read_image(clean[i]);
    pairs.emplace_back(a, read_image(poisoned[i], a.height, a.width));
  }
  const auto m = eval::stealth_report(pairs);
  const nlohmann::json j = {{"psnr_db", eval::metric_json(m.psnr_db)}, {"ssim", m.ssim}, {"mse", m.mse}, {"pairs", m.pairs}};
  if (o.out.empty()) std::cout << j.dump(2) << '\n';
  else pipeline::write_json(o.out, j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sample-specific invisible backdoor toolkit"};
  app.require_subcommand(1);
  Options o;
  std::function<int()> action;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "experiment config file");
    sub->add_flag("-f,--force", o.force, "re-run even if artifacts are up to date");
    sub->add_flag("-q,--quiet", o.quiet, "suppress progress output");
  };

  for (auto stage : pipeline::all_stages()) {
    const auto name = pipeline::to_string(stage);
    auto* sub = app.add_subcommand(name, "run the " + name + " stage");
    add_common(sub);
    const bool single = stage == pipeline::Stage::Features || stage == pipeline::Stage::Attention ||
                        stage == pipeline::Stage::Trigger;
    if (single) {
      sub->add_option("--image", o.image, "process one image instead of the dataset");
      sub->add_option("-o,--out", o.out, "output PNG for --image");
      if (stage != pipeline::Stage::Attention) sub->add_option("--mode", o.mode, "hog or lbp (with --image)");
      if (stage != pipeline::Stage::Features) sub->add_option("--surrogate", o.surrogate, "surrogate checkpoint (with --image)");
    }
    sub->callback([&, stage] {
      action = [&, stage] {
        if (!o.image.empty()) {
          if (stage == pipeline::Stage::Features) return single_features(o);
          if (stage == pipeline::Stage::Attention) return single_attention(o);
          return single_trigger(o);
        }
        return run_stages(o, {stage});
      };
    });
  }

  auto* run = app.add_subcommand("run", "run the full pipeline");
  add_common(run);
  run->add_option("--stages", o.stages, "comma-separated stages, 'all', or empty to validate only");
  run->callback([&] { action = [&] { return run_stages(o, parse_stage_list(o.stages)); }; });

  auto* st = app.add_subcommand("stealth", "PSNR/SSIM/MSE between clean and poisoned images");
  st->add_option("--clean", o.clean, "clean image or directory")->required();
  st->add_option("--poisoned", o.poisoned, "poisoned image or directory")->required();
  st->add_option("-o,--out", o.out, "write JSON here instead of stdout");
  st->callback([&] { action = [&] { return stealth(o); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    return action();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
}
