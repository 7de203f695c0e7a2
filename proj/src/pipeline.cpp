#include "satba/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "satba/attention.hpp"
#include "satba/datasets.hpp"
#include "satba/defense.hpp"
#include "satba/eval.hpp"
#include "satba/features.hpp"
#include "satba/hash.hpp"
#include "satba/steganet.hpp"
#include "satba/trigger.hpp"
#include "satba/victim.hpp"

namespace satba::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kPreviewCount = 4;
constexpr std::size_t kAttentionChunk = 64;

struct StageInfo {
  Stage stage;
  const char* name;
  std::vector<const char*> config_sections;
};

const std::vector<StageInfo>& stage_table() {
  static const std::vector<StageInfo> table = {
      {Stage::Features, "features", {"dataset", "features", "poison", "run"}},
      {Stage::Attention, "attention", {"attention", "victim", "run"}},
      {Stage::Trigger, "trigger", {"features"}},
      {Stage::TrainSteganet, "train-steganet", {"steganet", "run"}},
      {Stage::Poison, "poison", {"poison"}},
      {Stage::TrainVictim, "train-victim", {"victim", "run"}},
      {Stage::Evaluate, "evaluate", {"eval", "poison"}},
      {Stage::Defend, "defend", {"eval", "victim", "run"}},
      {Stage::Sweep, "sweep", {"eval", "victim", "poison", "features", "attention", "run"}},
  };
  return table;
}

const StageInfo& info(Stage stage) {
  for (const auto& s : stage_table()) {
    if (s.stage == stage) return s;
  }
  throw std::logic_error("unknown stage");
}

}  // namespace

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = [] {
    std::vector<Stage> out;
    for (const auto& s : stage_table()) out.push_back(s.stage);
    return out;
  }();
  return stages;
}

std::string to_string(Stage stage) { return info(stage).name; }

Stage parse_stage(const std::string& name) {
  for (const auto& s : stage_table()) {
    if (name == s.name) return s.stage;
  }
  throw ValidationError("unknown stage '" + name + "'");
}

fs::path stage_dir(const ExperimentConfig& cfg, Stage stage) { return cfg.output_dir / to_string(stage); }

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

namespace {

constexpr char kAttentionMagic[8] = {'S', 'A', 'T', 'B', 'A', 'A', 'T', 'T'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const fs::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw ValidationError("truncated attention file " + path.string());
  }
  return v;
}

}  // namespace

void save_attention(const fs::path& path, const AttentionBundle& bundle) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kAttentionMagic, sizeof(kAttentionMagic));
  put<std::uint32_t>(os, 1);
  put<std::uint64_t>(os, bundle.maps.size());
  put<std::int32_t>(os, bundle.height);
  put<std::int32_t>(os, bundle.width);
  const std::size_t expected = static_cast<std::size_t>(bundle.height) * bundle.width;
  for (const auto& m : bundle.maps) {
    if (m.size() != expected) throw ValidationError("attention map size mismatch");
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

AttentionBundle load_attention(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  char magic[sizeof(kAttentionMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kAttentionMagic, sizeof(magic)) != 0) {
    throw ValidationError(path.string() + " is not an attention file");
  }
  if (get<std::uint32_t>(is, path) != 1) throw ValidationError("unsupported attention file version");
  AttentionBundle out;
  const auto count = get<std::uint64_t>(is, path);
  out.height = get<std::int32_t>(is, path);
  out.width = get<std::int32_t>(is, path);
  const std::size_t n = static_cast<std::size_t>(out.height) * out.width;
  out.maps.resize(count, std::vector<double>(n));
  for (auto& m : out.maps) {
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
      throw ValidationError("truncated attention file " + path.string());
    }
  }
  return out;
}

namespace {

// ---------------------------------------------------------------------------
// Shared helpers

datasets::LabeledDataset bundle_to_dataset(const ImageBundle& b, int num_classes) {
  if (b.labels.size() != b.images.size()) throw ValidationError("bundle lacks labels");
  datasets::LabeledDataset ds;
  ds.num_classes = num_classes;
  for (std::size_t i = 0; i < b.images.size(); ++i) ds.items.push_back({b.images[i], b.labels[i]});
  return ds;
}

ImageBundle dataset_to_bundle(const datasets::LabeledDataset& ds) {
  ImageBundle b;
  for (const auto& item : ds.items) {
    b.images.push_back(item.image);
    b.labels.push_back(item.label);
  }
  return b;
}

std::vector<features::FeatureImage> compute_features(const std::vector<Image>& images, features::Mode mode) {
  std::vector<features::FeatureImage> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(features::extract_features(img, mode));
  return out;
}

std::vector<std::vector<double>> compute_attention(victim::ClassifierImpl& model, const std::vector<Image>& images,
                                                   const std::set<std::string>& layers) {
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kAttentionChunk) {
    const std::size_t len = std::min(kAttentionChunk, images.size() - start);
    const auto stacks = attention::capture_feature_maps(
        model, std::span<const Image>(images.data() + start, len), layers);
    for (std::size_t i = 0; i < len; ++i) {
      const Image& img = images[start + i];
      out.push_back(attention::spatial_attention_matrix(stacks[i], img.height, img.width).values);
    }
  }
  return out;
}

std::vector<Image> compute_triggers(const std::vector<features::FeatureImage>& feats,
                                    const std::vector<std::vector<double>>& maps, int height, int width) {
  if (feats.size() != maps.size()) throw ValidationError("feature and attention counts differ");
  std::vector<Image> out;
  out.reserve(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    attention::AttentionMatrix m{height, width, maps[i]};
    out.push_back(trigger::generate_trigger(feats[i], m).values);
  }
  return out;
}

std::vector<Image> select_images(const datasets::LabeledDataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<Image> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(ds.items.at(i).image);
  return out;
}

std::vector<std::size_t> seeded_sample(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(n, k));
  std::sort(order.begin(), order.end());
  return order;
}

json metrics_json(const eval::StealthMetrics& m) {
  json j = {{"psnr_db", eval::metric_json(m.psnr_db)}, {"ssim", m.ssim}, {"mse", m.mse}, {"pairs", m.pairs}};
  if (m.lpips) j["lpips"] = *m.lpips;
  return j;
}

json probe_json(const defense::ProbeResult& r) {
  json norms = json::object();
  json indices = json::object();
  for (const auto& t : r.triggers) norms[std::to_string(t.target_class)] = t.l1_norm;
  for (const auto& [cls, idx] : r.anomaly.per_class_index) indices[std::to_string(cls)] = idx;
  return {{"l1_norms", norms},
          {"anomaly_index", indices},
          {"max_index", r.anomaly.max_index},
          {"flagged_class", r.anomaly.flagged_class},
          {"flagged", r.anomaly.flagged}};
}

void write_previews(const fs::path& dir, const std::string& prefix, const std::vector<Image>& images) {
  for (int i = 0; i < kPreviewCount && i < static_cast<int>(images.size()); ++i) {
    write_png(dir / (prefix + "_" + std::to_string(i) + ".png"), images[static_cast<std::size_t>(i)]);
  }
}

// Hash of every regular file below `root`, keyed by relative path.
std::string tree_hash(const fs::path& root) {
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), root).generic_string(), e.path());
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& [rel, full] : files) acc += rel + '\t' + sha256_file(full) + '\n';
  return sha256_hex(acc);
}

// ---------------------------------------------------------------------------
// Run context

class Context {
 public:
  Context(const ExperimentConfig& cfg, const RunOptions& opts) : cfg_(cfg), opts_(opts) {}

  const ExperimentConfig& cfg() const { return cfg_; }
  bool force() const { return opts_.force; }

  void log(const std::string& msg) const {
    if (opts_.log) *opts_.log << "[satba] " << msg << std::endl;
  }

  const datasets::LabeledDataset& train() {
    if (!train_) {
      log("loading training set from " + cfg_.train_root.string());
      auto ds = datasets::load_dataset(cfg_.train_root, cfg_.layout);
      train_ = cfg_.train_per_class ? datasets::take_per_class(ds, cfg_.train_per_class) : std::move(ds);
    }
    return *train_;
  }

  const datasets::LabeledDataset& test() {
    if (!test_) {
      log("loading test set from " + cfg_.test_root.string());
      auto ds = datasets::load_dataset(cfg_.test_root, cfg_.layout);
      test_ = cfg_.test_per_class ? datasets::take_per_class(ds, cfg_.test_per_class) : std::move(ds);
      if (test_->num_classes != train().num_classes) {
        throw ValidationError("train and test sets disagree on the number of classes");
      }
    }
    return *test_;
  }

  const std::string& dataset_hash() {
    if (dataset_hash_.empty()) dataset_hash_ = sha256_hex(tree_hash(cfg_.train_root) + tree_hash(cfg_.test_root));
    return dataset_hash_;
  }

  std::uint64_t seed(std::string_view stage) const { return stage_seed(cfg_.seed, stage); }

  fs::path dir(Stage s) const { return stage_dir(cfg_, s); }

  // Manifest of an upstream stage; its absence names the stage to run.
  std::string require(Stage upstream, Stage requester) const {
    const auto m = dir(upstream) / "manifest.json";
    if (!fs::is_regular_file(m)) {
      throw ValidationError("stage '" + to_string(requester) + "' needs artifacts from stage '" +
                            to_string(upstream) + "'; run '" + to_string(upstream) + "' first");
    }
    return sha256_file(m);
  }

  fs::path surrogate_path() const {
    return cfg_.surrogate ? *cfg_.surrogate : dir(Stage::Attention) / "surrogate.ckpt";
  }

  victim::Classifier surrogate() {
    if (!surrogate_) surrogate_ = victim::load_classifier(surrogate_path());
    return surrogate_;
  }

  std::set<std::string> attention_layers() const {
    return {cfg_.attention_layers.begin(), cfg_.attention_layers.end()};
  }

  victim::ClassifierSpec victim_spec() {
    return {cfg_.architecture, train().num_classes, seed("victim-init"), train().items.front().image.channels};
  }

  victim::Classifier train_fresh_victim(const datasets::LabeledDataset& ds, const std::string& what) {
    auto model = victim::build_model(victim_spec());
    log("training " + what + " (" + std::to_string(ds.size()) + " images, " +
        std::to_string(cfg_.schedule.epochs) + " epochs)");
    const auto res = victim::train_victim(*model, ds, cfg_.schedule, seed("victim-train"));
    if (!res.train_loss.empty()) log(what + " final train loss " + std::to_string(res.train_loss.back()));
    return model;
  }

  datasets::PoisonSpec poison_spec(double eta) const { return {eta, cfg_.target_label, seed("poison")}; }

 private:
  const ExperimentConfig& cfg_;
  RunOptions opts_;
  std::optional<datasets::LabeledDataset> train_;
  std::optional<datasets::LabeledDataset> test_;
  std::string dataset_hash_;
  victim::Classifier surrogate_;
};

// ---------------------------------------------------------------------------
// Manifests

json config_slice(const ExperimentConfig& cfg, Stage stage) {
  const json echo = cfg.echo();
  json out = json::object();
  for (const char* section : info(stage).config_sections) out[section] = echo.at(section);
  return out;
}

json output_hashes(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel != "manifest.json") names.push_back(rel);
  }
  std::sort(names.begin(), names.end());
  json out = json::object();
  for (const auto& n : names) out[n] = sha256_file(dir / n);
  return out;
}

bool up_to_date(const fs::path& dir, const std::string& config_hash, const json& inputs) {
  const auto path = dir / "manifest.json";
  if (!fs::is_regular_file(path)) return false;
  json m;
  try {
    m = read_json(path);
  } catch (const ValidationError&) {
    return false;
  }
  if (m.value("config_hash", "") != config_hash || m.value("inputs", json()) != inputs) return false;
  return m.value("outputs", json()) == output_hashes(dir);
}

// ---------------------------------------------------------------------------
// Stages

void run_features(Context& ctx, const fs::path& dir) {
  const auto& cfg = ctx.cfg();
  const auto& train = ctx.train();
  const auto& test = ctx.test();
  const auto spec = ctx.poison_spec(cfg.eta);
  spec.validate(train.num_classes);
  const auto indices = datasets::select_poison_indices(train, spec);
  ctx.log("selected " + std::to_string(indices.size()) + " of " + std::to_string(train.size()) +
          " training images for poisoning");

  ImageBundle train_feats;
  for (const auto& f : compute_features(select_images(train, indices), cfg.feature_mode)) {
    train_feats.images.push_back(f.values);
  }
  for (auto i : indices) train_feats.labels.push_back(train.items[i].label);
  ImageBundle test_feats;
  for (const auto& f : compute_features(test.images(), cfg.feature_mode)) test_feats.images.push_back(f.values);
  for (int l : test.labels()) test_feats.labels.push_back(l);

  save_bundle(dir / "train_features.bin", train_feats);
  save_bundle(dir / "test_features.bin", test_feats);
  write_json(dir / "indices.json", {{"total", train.size()}, {"poisoned", indices.size()}, {"indices", indices}});
  write_previews(dir, "feature", train_feats.images);
}

void run_attention(Context& ctx, const fs::path& dir) {
  const auto& cfg = ctx.cfg();
  if (!cfg.surrogate) {
    auto model = ctx.train_fresh_victim(ctx.train(), "clean surrogate");
    victim::save_classifier(dir / "surrogate.ckpt", *model);
    const double cda = eval::clean_data_accuracy(*model, ctx.test());
    ctx.log("clean surrogate accuracy " + std::to_string(cda));
    write_json(dir / "surrogate.json", {{"cda", cda}, {"checksum", victim::weight_checksum(*model)}});
  }
  auto surrogate = ctx.surrogate();
  const auto idx = read_json(ctx.dir(Stage::Features) / "indices.json").at("indices").get<std::vector<std::size_t>>();
  const auto train_images = select_images(ctx.train(), idx);
  const auto& test = ctx.test();
  const int h = test.items.front().image.height;
  const int w = test.items.front().image.width;

  AttentionBundle train_att{h, w, compute_attention(*surrogate, train_images, ctx.attention_layers())};
  AttentionBundle test_att{h, w, compute_attention(*surrogate, test.images(), ctx.attention_layers())};
  save_attention(dir / "train_attention.bin", train_att);
  save_attention(dir / "test_attention.bin", test_att);
  for (int i = 0; i < kPreviewCount && i < static_cast<int>(train_att.maps.size()); ++i) {
    write_heatmap_png(dir / ("attention_" + std::to_string(i) + ".png"), train_att.maps[static_cast<std::size_t>(i)], h, w);
  }
}

std::vector<Image> triggers_from(const fs::path& feature_file, const fs::path& attention_file, features::Mode mode) {
  const auto feats = load_bundle(feature_file);
  const auto att = load_attention(attention_file);
  std::vector<features::FeatureImage> fi;
  for (const auto& img : feats.images) fi.push_back({img, mode});
  return compute_triggers(fi, att.maps, att.height, att.width);
}

void run_trigger(Context& ctx, const fs::path& dir) {
  const auto fdir = ctx.dir(Stage::Features);
  const auto adir = ctx.dir(Stage::Attention);
  const auto mode = ctx.cfg().feature_mode;
  ImageBundle train_t{triggers_from(fdir / "train_features.bin", adir / "train_attention.bin", mode), {}};
  ImageBundle test_t{triggers_from(fdir / "test_features.bin", adir / "test_attention.bin", mode), {}};
  save_bundle(dir / "train_triggers.bin", train_t);
  save_bundle(dir / "test_triggers.bin", test_t);
  write_previews(dir, "trigger", train_t.images);
}

void run_train_steganet(Context& ctx, const fs::path& dir) {
  const auto& cfg = ctx.cfg();
  const auto idx = read_json(ctx.dir(Stage::Features) / "indices.json").at("indices").get<std::vector<std::size_t>>();
  const auto triggers = load_bundle(ctx.dir(Stage::Trigger) / "train_triggers.bin").images;
  const auto images = select_images(ctx.train(), idx);
  std::vector<std::pair<Image, Image>> pairs;
  for (std::size_t i = 0; i < images.size(); ++i) pairs.emplace_back(images[i], triggers.at(i));
  ctx.log("training steganet on " + std::to_string(pairs.size()) + " pairs for " +
          std::to_string(cfg.steganet.epochs) + " epochs");
  auto trained = steganet::train_steganet(pairs, cfg.steganet, ctx.seed("steganet"), cfg.injection, cfg.extraction);
  const auto& h = trained.history;
  if (!h.validation_loss.empty()) ctx.log("steganet final validation loss " + std::to_string(h.validation_loss.back()));
  steganet::save_steganet(dir, trained.nets);
  write_json(dir / "history.json",
             {{"train_loss", h.train_loss}, {"validation_loss", h.validation_loss}, {"learning_rate", h.learning_rate}});
}

void run_poison(Context& ctx, const fs::path& dir) {
  const auto& cfg = ctx.cfg();
  const auto& train = ctx.train();
  const auto& test = ctx.test();
  auto nets = steganet::load_steganet(ctx.dir(Stage::TrainSteganet));
  const auto idx = read_json(ctx.dir(Stage::Features) / "indices.json").at("indices").get<std::vector<std::size_t>>();
  const auto train_t = load_bundle(ctx.dir(Stage::Trigger) / "train_triggers.bin").images;
  const auto test_t = load_bundle(ctx.dir(Stage::Trigger) / "test_triggers.bin").images;

  const auto clean_subset = select_images(train, idx);
  const auto poisoned = steganet::inject_batch(*nets.injection, clean_subset, train_t);
  const auto assembled = datasets::assemble_poisoned_dataset(train, idx, poisoned, ctx.poison_spec(cfg.eta));
  save_bundle(dir / "train_poisoned.bin", dataset_to_bundle(assembled.as_labeled()));

  const auto test_images = test.images();
  ImageBundle test_p{steganet::inject_batch(*nets.injection, test_images, test_t), {}};
  for (int l : test.labels()) test_p.labels.push_back(l);
  save_bundle(dir / "test_poisoned.bin", test_p);

  write_json(dir / "composition.json", {{"total", assembled.items.size()},
                                        {"poisoned", assembled.poisoned_indices.size()},
                                        {"target_label", assembled.target_label},
                                        {"indices", assembled.poisoned_indices}});
  write_previews(dir, "clean", clean_subset);
  write_previews(dir, "poisoned", poisoned);
}

void run_train_victim(Context& ctx, const fs::path& dir) {
  const auto ds = bundle_to_dataset(load_bundle(ctx.dir(Stage::Poison) / "train_poisoned.bin"), ctx.train().num_classes);
  auto model = victim::build_model(ctx.victim_spec());
  ctx.log("training victim on poisoned set (" + std::to_string(ds.size()) + " images, " +
          std::to_string(ctx.cfg().schedule.epochs) + " epochs)");
  const auto res = victim::train_victim(*model, ds, ctx.cfg().schedule, ctx.seed("victim-train"), &ctx.test());
  victim::save_classifier(dir / "victim.ckpt", *model);
  write_json(dir / "history.json", {{"train_loss", res.train_loss},
                                    {"validation_accuracy", res.validation_accuracy},
                                    {"checksum", victim::weight_checksum(*model)}});
}

void run_evaluate(Context& ctx, const fs::path& dir) {
  const auto& cfg = ctx.cfg();
  const auto& test = ctx.test();
  auto model = victim::load_classifier(ctx.dir(Stage::TrainVictim) / "victim.ckpt");
  const auto poisoned = load_bundle(ctx.dir(Stage::Poison) / "test_poisoned.bin").images;
  if (poisoned.size() != test.size()) throw ValidationError("poisoned test set size mismatch; re-run 'poison'");

  const auto gt = test.labels();
  const auto clean_images = test.images();
  const auto pred_clean = victim::predict_batch(*model, clean_images);
  const auto pred_poison = victim::predict_batch(*model, poisoned);

  eval::EvaluationReport report;
  report.asr = eval::attack_success_rate(gt, pred_poison, cfg.target_label);
  report.cda = eval::clean_data_accuracy(gt, pred_clean);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    auto& row = report.per_class[gt[i]];
    row["total"] += 1;
    row["correct"] += pred_clean[i] == gt[i];
    if (gt[i] != cfg.target_label) {
      row["eligible"] += 1;
      row["hits"] += pred_poison[i] == cfg.target_label;
    }
  }

  const auto sample = seeded_sample(test.size(), cfg.stealth_samples, ctx.seed("stealth"));
  const auto patch = eval::make_patched_baseline(cfg.patch_size, cfg.patch_corner, clean_images.front().height,
                                                 clean_images.front().width);
  std::vector<std::pair<Image, Image>> satba_pairs;
  std::vector<std::pair<Image, Image>> patch_pairs;
  for (auto i : sample) {
    satba_pairs.emplace_back(clean_images[i], poisoned[i]);
    patch_pairs.emplace_back(clean_images[i], patch(clean_images[i]));
  }
  const auto stealth = eval::stealth_report(satba_pairs);
  const auto patch_stealth = eval::stealth_report(patch_pairs);
  report.psnr_db = stealth.psnr_db;
  report.ssim = stealth.ssim;
  report.mse = stealth.mse;

  auto surrogate = ctx.surrogate();
  const double clean_cda = eval::clean_data_accuracy(*surrogate, test);
  report.config = cfg.echo();
  report.extra = {{"clean_cda", clean_cda},
                  {"stealth_pairs", stealth.pairs},
                  {"patch_baseline", metrics_json(patch_stealth)},
                  {"test_size", test.size()}};
  eval::emit_report(report, dir / "report.json");
  ctx.log("ASR " + std::to_string(report.asr) + ", CDA " + std::to_string(report.cda) + " (clean " +
          std::to_string(clean_cda) + "), PSNR " + std::to_string(report.psnr_db) + " dB vs patch " +
          std::to_string(patch_stealth.psnr_db) + " dB");
}

void run_defend(Context& ctx, const fs::path& dir) {
  const auto& cfg = ctx.cfg();
  const auto& test = ctx.test();
  const auto sample_idx = seeded_sample(test.size(), cfg.nc_samples, ctx.seed("defend-sample"));
  const auto sample = select_images(test, sample_idx);
  const defense::ReverseConfig rc{cfg.nc_steps, cfg.nc_lambda, cfg.nc_lr, 0};

  auto write_masks = [&](const std::string& prefix, const defense::ProbeResult& r) {
    for (const auto& t : r.triggers) {
      std::vector<double> m(t.mask.begin(), t.mask.end());
      write_heatmap_png(dir / (prefix + "_mask_" + std::to_string(t.target_class) + ".png"), m, t.height, t.width);
    }
  };

  auto model = victim::load_classifier(ctx.dir(Stage::TrainVictim) / "victim.ckpt");
  ctx.log("reverse-engineering triggers on the SATBA victim");
  const auto satba = defense::neural_cleanse(*model, sample, rc, ctx.seed("defend-nc"));
  write_masks("satba", satba);
  json out = {{"samples", sample.size()}, {"satba", probe_json(satba)}};
  ctx.log("SATBA victim anomaly index " + std::to_string(satba.anomaly.max_index));

  if (cfg.nc_baseline) {
    const auto idx = read_json(ctx.dir(Stage::Features) / "indices.json").at("indices").get<std::vector<std::size_t>>();
    const auto& train = ctx.train();
    const auto& first = train.items.front().image;
    const auto patch = eval::make_patched_baseline(cfg.patch_size, cfg.patch_corner, first.height, first.width);
    const auto ds = datasets::assemble_poisoned_dataset(train, idx, patch, ctx.poison_spec(cfg.eta)).as_labeled();
    auto patched = ctx.train_fresh_victim(ds, "patch-backdoored victim");
    victim::save_classifier(dir / "patch_victim.ckpt", *patched);
    const double patch_asr = eval::attack_success_rate(*patched, test, patch, cfg.target_label);
    const double patch_cda = eval::clean_data_accuracy(*patched, test);
    ctx.log("reverse-engineering triggers on the patch victim");
    const auto baseline = defense::neural_cleanse(*patched, sample, rc, ctx.seed("defend-nc"));
    write_masks("patch", baseline);
    out["patch"] = probe_json(baseline);
    out["patch"]["asr"] = patch_asr;
    out["patch"]["cda"] = patch_cda;
    ctx.log("patch victim anomaly index " + std::to_string(baseline.anomaly.max_index));
  }
  write_json(dir / "defense.json", out);
}

void run_sweep(Context& ctx, const fs::path& dir) {
  const auto& cfg = ctx.cfg();
  const auto& train = ctx.train();
  const auto& test = ctx.test();
  const auto existing = eval::read_report(ctx.dir(Stage::Evaluate) / "report.json");
  const auto test_poisoned = load_bundle(ctx.dir(Stage::Poison) / "test_poisoned.bin").images;
  auto nets = steganet::load_steganet(ctx.dir(Stage::TrainSteganet));
  auto surrogate = ctx.surrogate();
  const auto gt = test.labels();
  const int h = train.items.front().image.height;
  const int w = train.items.front().image.width;

  const auto points = eval::poison_rate_sweep(cfg.sweep_etas, [&](double eta) -> std::pair<double, double> {
    if (eta == cfg.eta) {
      ctx.log("sweep eta=" + std::to_string(eta) + ": reusing the trained victim");
      return {existing.asr, existing.cda};
    }
    const auto spec = ctx.poison_spec(eta);
    const auto idx = datasets::select_poison_indices(train, spec);
    const auto images = select_images(train, idx);
    const auto triggers = compute_triggers(compute_features(images, cfg.feature_mode),
                                           compute_attention(*surrogate, images, ctx.attention_layers()), h, w);
    const auto poisoned = steganet::inject_batch(*nets.injection, images, triggers);
    const auto ds = datasets::assemble_poisoned_dataset(train, idx, poisoned, spec).as_labeled();
    auto model = ctx.train_fresh_victim(ds, "sweep victim eta=" + std::to_string(eta));
    const double asr = eval::attack_success_rate(gt, victim::predict_batch(*model, test_poisoned), cfg.target_label);
    const double cda = eval::clean_data_accuracy(*model, test);
    ctx.log("sweep eta=" + std::to_string(eta) + ": ASR " + std::to_string(asr) + ", CDA " + std::to_string(cda));
    return {asr, cda};
  });

  std::ofstream(dir / "sweep.csv", std::ios::binary) << eval::sweep_csv(points);
  json arr = json::array();
  for (const auto& p : points) arr.push_back({{"eta", p.eta}, {"asr", p.asr}, {"cda", p.cda}});
  write_json(dir / "sweep.json", {{"points", arr}, {"clean_cda", existing.extra.value("clean_cda", 0.0)}});
}

// Inputs a stage depends on: dataset contents, upstream manifests and, for
// the attention stage, an externally supplied surrogate.
json stage_inputs(Context& ctx, Stage stage) {
  json in = json::object();
  auto dep = [&](Stage up) { in[to_string(up)] = ctx.require(up, stage); };
  switch (stage) {
    case Stage::Features:
      in["dataset"] = ctx.dataset_hash();
      break;
    case Stage::Attention:
      in["dataset"] = ctx.dataset_hash();
      dep(Stage::Features);
      if (ctx.cfg().surrogate) in["surrogate"] = sha256_file(*ctx.cfg().surrogate);
      break;
    case Stage::Trigger:
      dep(Stage::Features);
      dep(Stage::Attention);
      break;
    case Stage::TrainSteganet:
      in["dataset"] = ctx.dataset_hash();
      dep(Stage::Trigger);
      break;
    case Stage::Poison:
      in["dataset"] = ctx.dataset_hash();
      dep(Stage::Trigger);
      dep(Stage::TrainSteganet);
      break;
    case Stage::TrainVictim:
      in["dataset"] = ctx.dataset_hash();
      dep(Stage::Poison);
      break;
    case Stage::Evaluate:
      dep(Stage::Attention);
      dep(Stage::Poison);
      dep(Stage::TrainVictim);
      break;
    case Stage::Defend:
      in["dataset"] = ctx.dataset_hash();
      dep(Stage::Features);
      dep(Stage::TrainVictim);
      break;
    case Stage::Sweep:
      in["dataset"] = ctx.dataset_hash();
      dep(Stage::Attention);
      dep(Stage::TrainSteganet);
      dep(Stage::Poison);
      dep(Stage::Evaluate);
      break;
  }
  return in;
}

void execute(Context& ctx, Stage stage, const fs::path& dir) {
  switch (stage) {
    case Stage::Features: return run_features(ctx, dir);
    case Stage::Attention: return run_attention(ctx, dir);
    case Stage::Trigger: return run_trigger(ctx, dir);
    case Stage::TrainSteganet: return run_train_steganet(ctx, dir);
    case Stage::Poison: return run_poison(ctx, dir);
    case Stage::TrainVictim: return run_train_victim(ctx, dir);
    case Stage::Evaluate: return run_evaluate(ctx, dir);
    case Stage::Defend: return run_defend(ctx, dir);
    case Stage::Sweep: return run_sweep(ctx, dir);
  }
}

}  // namespace

std::vector<StageOutcome> run_pipeline(const ExperimentConfig& cfg, const std::vector<Stage>& stages,
                                       const RunOptions& options) {
  cfg.validate();
  std::vector<StageOutcome> outcomes;
  if (stages.empty()) return outcomes;

  Context ctx(cfg, options);
  const std::set<Stage> wanted(stages.begin(), stages.end());
  for (Stage stage : all_stages()) {
    if (!wanted.count(stage)) continue;
    const auto dir = ctx.dir(stage);
    const auto inputs = stage_inputs(ctx, stage);
    const auto config_hash = sha256_hex(config_slice(cfg, stage).dump());
    if (!ctx.force() && up_to_date(dir, config_hash, inputs)) {
      ctx.log(to_string(stage) + ": up to date, skipped");
      outcomes.push_back({stage, true});
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    ctx.log(to_string(stage) + ": running");
    fs::remove_all(dir);
    fs::create_directories(dir);
    execute(ctx, stage, dir);
    write_json(dir / "manifest.json", {{"stage", to_string(stage)},
                                       {"config_hash", config_hash},
                                       {"inputs", inputs},
                                       {"outputs", output_hashes(dir)}});
    const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
    ctx.log(to_string(stage) + ": done in " + std::to_string(static_cast<int>(took.count())) + " s");
    outcomes.push_back({stage, false});
  }
  return outcomes;
}

}  // namespace satba::pipeline
