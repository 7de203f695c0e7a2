#include "satba/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "satba/hash.hpp"

namespace satba {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& field, const std::string& value, const char* expected) {
  throw ValidationError("config field '" + field + "': cannot parse '" + value + "' as " + expected);
}

double to_double(const std::string& field, const std::string& raw) {
  const std::string v = trim(raw);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(field, v, "a number");
  return out;
}

long long to_int(const std::string& field, const std::string& raw) {
  const std::string v = trim(raw);
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(field, v, "an integer");
  return out;
}

std::size_t to_count(const std::string& field, const std::string& raw) {
  const long long v = to_int(field, raw);
  if (v < 0) throw ValidationError("config field '" + field + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

bool to_bool(const std::string& field, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(field, v, "a boolean");
}

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename F>
auto rethrow_named(const std::string& field, F&& parse) {
  try {
    return parse();
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    if (what.find(field) != std::string::npos) throw;
    throw ValidationError("config field '" + field + "': " + what);
  }
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const fs::path&)>;

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> table = [] {
    std::map<std::string, std::map<std::string, Setter>> t;
    auto path = [](const std::string& v, const fs::path& base) {
      const fs::path p = trim(v);
      return p.is_absolute() ? p : (base / p).lexically_normal();
    };
    t["dataset"] = {
        {"train_root", [=](auto& c, auto& v, auto& b) { c.train_root = path(v, b); }},
        {"test_root", [=](auto& c, auto& v, auto& b) { c.test_root = path(v, b); }},
        {"layout",
         [](auto& c, auto& v, auto&) {
           const auto s = trim(v);
           if (s == "class-dirs") c.layout = datasets::Layout::ClassDirs;
           else if (s == "manifest") c.layout = datasets::Layout::Manifest;
           else bad_value("dataset.layout", s, "class-dirs or manifest");
         }},
        {"train_per_class", [](auto& c, auto& v, auto&) { c.train_per_class = to_count("dataset.train_per_class", v); }},
        {"test_per_class", [](auto& c, auto& v, auto&) { c.test_per_class = to_count("dataset.test_per_class", v); }},
    };
    t["features"] = {
        {"mode", [](auto& c, auto& v, auto&) {
           c.feature_mode = rethrow_named("features.mode", [&] { return features::parse_mode(trim(v)); });
         }},
    };
    t["attention"] = {
        {"surrogate", [=](auto& c, auto& v, auto& b) {
           if (trim(v).empty()) c.surrogate.reset();
           else c.surrogate = path(v, b);
         }},
        {"layers", [](auto& c, auto& v, auto&) { c.attention_layers = split_list(v); }},
    };
    t["steganet"] = {
        {"lambda1", [](auto& c, auto& v, auto&) { c.steganet.lambda1 = to_double("steganet.lambda1", v); }},
        {"lambda2", [](auto& c, auto& v, auto&) { c.steganet.lambda2 = to_double("steganet.lambda2", v); }},
        {"epochs", [](auto& c, auto& v, auto&) { c.steganet.epochs = static_cast<int>(to_int("steganet.epochs", v)); }},
        {"lr", [](auto& c, auto& v, auto&) { c.steganet.lr = to_double("steganet.lr", v); }},
        {"plateau_factor", [](auto& c, auto& v, auto&) { c.steganet.plateau_factor = to_double("steganet.plateau_factor", v); }},
        {"plateau_patience", [](auto& c, auto& v, auto&) { c.steganet.plateau_patience = static_cast<int>(to_int("steganet.plateau_patience", v)); }},
        {"batch_size", [](auto& c, auto& v, auto&) { c.steganet.batch_size = static_cast<int>(to_int("steganet.batch_size", v)); }},
        {"depth", [](auto& c, auto& v, auto&) { c.injection.depth = static_cast<int>(to_int("steganet.depth", v)); }},
        {"base_width", [](auto& c, auto& v, auto&) { c.injection.base_width = static_cast<int>(to_int("steganet.base_width", v)); }},
        {"extraction_layers", [](auto& c, auto& v, auto&) { c.extraction.layers = static_cast<int>(to_int("steganet.extraction_layers", v)); }},
        {"extraction_width", [](auto& c, auto& v, auto&) { c.extraction.width = static_cast<int>(to_int("steganet.extraction_width", v)); }},
    };
    t["poison"] = {
        {"eta", [](auto& c, auto& v, auto&) { c.eta = to_double("poison.eta", v); }},
        {"target_label", [](auto& c, auto& v, auto&) { c.target_label = static_cast<int>(to_int("poison.target_label", v)); }},
    };
    t["victim"] = {
        {"architecture", [](auto& c, auto& v, auto&) {
           c.architecture = rethrow_named("victim.architecture", [&] { return victim::parse_architecture(trim(v)); });
         }},
        {"epochs", [](auto& c, auto& v, auto&) { c.schedule.epochs = static_cast<int>(to_int("victim.epochs", v)); }},
        {"lr", [](auto& c, auto& v, auto&) { c.schedule.lr = to_double("victim.lr", v); }},
        {"momentum", [](auto& c, auto& v, auto&) { c.schedule.momentum = to_double("victim.momentum", v); }},
        {"step_every", [](auto& c, auto& v, auto&) { c.schedule.step_every = static_cast<int>(to_int("victim.step_every", v)); }},
        {"step_factor", [](auto& c, auto& v, auto&) { c.schedule.step_factor = to_double("victim.step_factor", v); }},
        {"batch_size", [](auto& c, auto& v, auto&) { c.schedule.batch_size = static_cast<int>(to_int("victim.batch_size", v)); }},
    };
    t["eval"] = {
        {"stealth_samples", [](auto& c, auto& v, auto&) { c.stealth_samples = to_count("eval.stealth_samples", v); }},
        {"patch_size", [](auto& c, auto& v, auto&) { c.patch_size = static_cast<int>(to_int("eval.patch_size", v)); }},
        {"patch_corner", [](auto& c, auto& v, auto&) {
           c.patch_corner = rethrow_named("eval.patch_corner", [&] { return eval::parse_corner(trim(v)); });
         }},
        {"nc_steps", [](auto& c, auto& v, auto&) { c.nc_steps = static_cast<int>(to_int("eval.nc_steps", v)); }},
        {"nc_lambda", [](auto& c, auto& v, auto&) { c.nc_lambda = to_double("eval.nc_lambda", v); }},
        {"nc_lr", [](auto& c, auto& v, auto&) { c.nc_lr = to_double("eval.nc_lr", v); }},
        {"nc_samples", [](auto& c, auto& v, auto&) { c.nc_samples = to_count("eval.nc_samples", v); }},
        {"nc_baseline", [](auto& c, auto& v, auto&) { c.nc_baseline = to_bool("eval.nc_baseline", v); }},
        {"sweep_etas", [](auto& c, auto& v, auto&) {
           c.sweep_etas.clear();
           for (const auto& item : split_list(v)) c.sweep_etas.push_back(to_double("eval.sweep_etas", item));
         }},
    };
    t["output"] = {
        {"dir", [=](auto& c, auto& v, auto& b) { c.output_dir = path(v, b); }},
    };
    t["run"] = {
        {"seed", [](auto& c, auto& v, auto&) {
           const long long s = to_int("run.seed", v);
           if (s < 0) throw ValidationError("config field 'run.seed' must be >= 0");
           c.seed = static_cast<std::uint64_t>(s);
         }},
    };
    return t;
  }();
  return table;
}

std::string rel(const fs::path& p, const fs::path& base) {
  const auto r = p.lexically_relative(base);
  return (r.empty() ? p : r).generic_string();
}

}  // namespace

nlohmann::json ExperimentConfig::echo() const {
  nlohmann::json j;
  j["dataset"] = {{"train_root", rel(train_root, base_dir)},
                  {"test_root", rel(test_root, base_dir)},
                  {"layout", layout == datasets::Layout::ClassDirs ? "class-dirs" : "manifest"},
                  {"train_per_class", train_per_class},
                  {"test_per_class", test_per_class}};
  j["features"] = {{"mode", features::to_string(feature_mode)}};
  j["attention"] = {{"surrogate", surrogate ? rel(*surrogate, base_dir) : ""},
                    {"layers", attention_layers}};
  j["steganet"] = {{"lambda1", steganet.lambda1},
                   {"lambda2", steganet.lambda2},
                   {"epochs", steganet.epochs},
                   {"lr", steganet.lr},
                   {"plateau_factor", steganet.plateau_factor},
                   {"plateau_patience", steganet.plateau_patience},
                   {"batch_size", steganet.batch_size},
                   {"depth", injection.depth},
                   {"base_width", injection.base_width},
                   {"extraction_layers", extraction.layers},
                   {"extraction_width", extraction.width}};
  j["poison"] = {{"eta", eta}, {"target_label", target_label}};
  j["victim"] = {{"architecture", victim::to_string(architecture)},
                 {"epochs", schedule.epochs},
                 {"lr", schedule.lr},
                 {"momentum", schedule.momentum},
                 {"step_every", schedule.step_every},
                 {"step_factor", schedule.step_factor},
                 {"batch_size", schedule.batch_size}};
  j["eval"] = {{"stealth_samples", stealth_samples},
               {"patch_size", patch_size},
               {"patch_corner", eval::to_string(patch_corner)},
               {"nc_steps", nc_steps},
               {"nc_lambda", nc_lambda},
               {"nc_lr", nc_lr},
               {"nc_samples", nc_samples},
               {"nc_baseline", nc_baseline},
               {"sweep_etas", sweep_etas}};
  j["run"] = {{"seed", seed}};
  return j;
}

std::string ExperimentConfig::hash() const { return sha256_hex(echo().dump()); }

void ExperimentConfig::validate() const {
  if (train_root.empty()) throw ValidationError("config field 'dataset.train_root' is required");
  if (test_root.empty()) throw ValidationError("config field 'dataset.test_root' is required");
  if (!fs::is_directory(train_root)) {
    throw ValidationError("config field 'dataset.train_root': directory not found: " + train_root.string());
  }
  if (!fs::is_directory(test_root)) {
    throw ValidationError("config field 'dataset.test_root': directory not found: " + test_root.string());
  }
  if (surrogate && !fs::is_regular_file(*surrogate)) {
    throw ValidationError("config field 'attention.surrogate': file not found: " + surrogate->string());
  }
  if (!(eta > 0.0 && eta <= 1.0)) {
    throw ValidationError("config field 'poison.eta' must lie in (0, 1], got " + std::to_string(eta));
  }
  if (target_label < 0) throw ValidationError("config field 'poison.target_label' must be >= 0");
  rethrow_named("steganet", [&] { steganet.validate(); return 0; });
  if (injection.depth < 1 || injection.base_width < 1) {
    throw ValidationError("config field 'steganet.depth'/'steganet.base_width' must be >= 1");
  }
  if (extraction.layers < 2 || extraction.width < 1) {
    throw ValidationError("config field 'steganet.extraction_layers' must be >= 2");
  }
  rethrow_named("victim", [&] { schedule.validate(); return 0; });
  if (patch_size < 1) throw ValidationError("config field 'eval.patch_size' must be >= 1");
  if (nc_steps < 0) throw ValidationError("config field 'eval.nc_steps' must be >= 0");
  if (nc_lambda < 0) throw ValidationError("config field 'eval.nc_lambda' must be >= 0");
  if (!(nc_lr > 0)) throw ValidationError("config field 'eval.nc_lr' must be > 0");
  if (nc_samples == 0) throw ValidationError("config field 'eval.nc_samples' must be >= 1");
  if (stealth_samples == 0) throw ValidationError("config field 'eval.stealth_samples' must be >= 1");
  for (double e : sweep_etas) {
    if (!(e > 0.0 && e <= 1.0)) throw ValidationError("config field 'eval.sweep_etas': value outside (0, 1]");
  }
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError("config parse error at line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  cfg.output_dir = (base_dir / "out").lexically_normal();
  const auto& table = setters();
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) {
      throw ValidationError("config key '" + section + "' must appear inside a [section]");
    }
    const auto sec = table.find(section);
    if (sec == table.end()) throw ValidationError("unknown config section [" + section + "]");
    for (const auto& [key, node] : keys) {
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) {
        throw ValidationError("unknown config key '" + key + "' in section [" + section + "]");
      }
      setter->second(cfg, node.data(), base_dir);
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return parse_config(buf.str(), base);
}

}  // namespace satba
