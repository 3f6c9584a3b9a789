#include "fsgcd/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>

#include "fsgcd/error.hpp"
#include "fsgcd/parallel.hpp"

namespace fsgcd {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && ptr == v.data() + v.size() && std::isfinite(out), ErrorCode::InvalidArgument,
          "config key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && ptr == v.data() + v.size(), ErrorCode::InvalidArgument,
          "config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

std::uint32_t parse_u32(const std::string& key, const std::string& v) {
  const auto x = parse_uint(key, v);
  require(x <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::InvalidArgument,
          "config key '" + key + "' is out of range");
  return static_cast<std::uint32_t>(x);
}

bool parse_bool(const std::string& key, std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::InvalidArgument, "config key '" + key + "' expects true/false, got '" + v + "'");
}

using Json = nlohmann::json;

struct Entry {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& v)> set;
  std::function<Json(const ExperimentConfig&)> get;
};

#define FSGCD_DOUBLE(name, field) \
  Entry{name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_double(k, v); }, \
        [](const ExperimentConfig& c) { return Json(c.field); }}
#define FSGCD_SIZE(name, field) \
  Entry{name, \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) { \
          c.field = static_cast<std::size_t>(parse_uint(k, v)); \
        }, \
        [](const ExperimentConfig& c) { return Json(c.field); }}
#define FSGCD_U32(name, field) \
  Entry{name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_u32(k, v); }, \
        [](const ExperimentConfig& c) { return Json(c.field); }}
#define FSGCD_BOOL(name, field) \
  Entry{name, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }, \
        [](const ExperimentConfig& c) { return Json(c.field); }}
#define FSGCD_STRING(name, field) \
  Entry{name, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.field = v; }, \
        [](const ExperimentConfig& c) { return Json(c.field); }}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      Entry{"preset", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.apply_preset(v); },
            [](const ExperimentConfig& c) { return Json(c.preset); }},
      Entry{"seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = parse_uint(k, v); },
            [](const ExperimentConfig& c) { return Json(c.seed); }},
      FSGCD_SIZE("workers", workers),
      FSGCD_STRING("features", features_path),
      FSGCD_STRING("views", views_path),
      FSGCD_STRING("split", split_path),
      FSGCD_STRING("frozen_block", frozen_block_path),
      FSGCD_STRING("out", out_dir),
      FSGCD_DOUBLE("split.c_l", c_l),
      FSGCD_DOUBLE("split.p_l", p_l),
      Entry{"split.seed",
            [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.split_seed = parse_uint(k, v); },
            [](const ExperimentConfig& c) { return Json(c.effective_split_seed()); }},
      FSGCD_BOOL("synthetic", synthetic),
      FSGCD_U32("synthetic.classes", synthetic_cfg.class_count),
      FSGCD_U32("synthetic.samples_per_class", synthetic_cfg.samples_per_class),
      FSGCD_U32("synthetic.dim", synthetic_cfg.dimension),
      FSGCD_DOUBLE("synthetic.separation", synthetic_cfg.class_separation),
      FSGCD_DOUBLE("synthetic.within_std", synthetic_cfg.within_std),
      Entry{"synthetic.seed",
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.synthetic_seed = parse_uint(k, v);
            },
            [](const ExperimentConfig& c) { return Json(c.effective_synthetic_seed()); }},
      FSGCD_DOUBLE("train.lr", train.lr),
      FSGCD_DOUBLE("train.momentum", train.momentum),
      FSGCD_DOUBLE("train.weight_decay", train.weight_decay),
      FSGCD_SIZE("train.batch_size", train.batch_size),
      FSGCD_SIZE("train.stage1_epochs", train.stage1_epochs),
      FSGCD_SIZE("train.stage2_epochs", train.stage2_epochs),
      FSGCD_BOOL("train.skip_stage1", train.skip_stage1),
      FSGCD_DOUBLE("loss.alpha", train.loss.margin_alpha),
      FSGCD_DOUBLE("loss.tau_s", train.loss.tau_s),
      FSGCD_DOUBLE("loss.tau_u", train.loss.tau_u),
      FSGCD_DOUBLE("loss.lambda", train.loss.lambda),
      FSGCD_BOOL("loss.include_positives", train.loss.include_positives),
      FSGCD_BOOL("loss.asl", train.loss.components.asl),
      FSGCD_BOOL("loss.ucl", train.loss.components.ucl),
      FSGCD_BOOL("loss.ktl", train.loss.components.ktl),
      FSGCD_BOOL("loss.al", train.loss.components.al),
      FSGCD_DOUBLE("augment.noise_sigma", train.augment.noise_sigma),
      FSGCD_DOUBLE("augment.dropout", train.augment.dropout_prob),
      FSGCD_DOUBLE("augment.scale_min", train.augment.scale_min),
      FSGCD_DOUBLE("augment.scale_max", train.augment.scale_max),
      FSGCD_SIZE("encoder.bottleneck", encoder.bottleneck_dim),
      FSGCD_SIZE("encoder.hidden", encoder.head_hidden),
      FSGCD_SIZE("encoder.embed_dim", encoder.embed_dim),
      FSGCD_DOUBLE("encoder.scale", adapter_scale),
      FSGCD_BOOL("encoder.train_scale", train_scale),
      Entry{"encoder.head_init",
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "mirrored")
                c.head_init = HeadInit::Mirrored;
              else if (v == "random")
                c.head_init = HeadInit::Random;
              else
                fail(ErrorCode::InvalidArgument, "config key '" + k + "' expects mirrored or random, got '" + v + "'");
            },
            [](const ExperimentConfig& c) { return Json(c.head_init == HeadInit::Mirrored ? "mirrored" : "random"); }},
      FSGCD_SIZE("eval.every", eval.every),
      Entry{"eval.seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.eval.seed = parse_uint(k, v); },
            [](const ExperimentConfig& c) { return Json(c.eval.seed); }},
      FSGCD_SIZE("eval.restarts", eval.kmeans.restarts),
      FSGCD_BOOL("eval.full_set", eval.full_set),
      Entry{"eval.k",
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              const auto x = parse_uint(k, v);
              if (x == 0)
                c.eval.k.reset();
              else
                c.eval.k = static_cast<std::size_t>(x);
            },
            [](const ExperimentConfig& c) { return c.eval.k ? Json(*c.eval.k) : Json(0); }},
  };
  return table;
}

#undef FSGCD_DOUBLE
#undef FSGCD_SIZE
#undef FSGCD_U32
#undef FSGCD_BOOL
#undef FSGCD_STRING

struct Preset {
  const char* name;
  std::vector<std::pair<const char*, const char*>> values;
};

// Split ratios are |Y_L| / |Y_U| of the six benchmark settings. The synthetic
// presets are desk-scale stand-ins that generate their own features.
const std::vector<Preset>& presets() {
  static const std::vector<Preset> table = {
      {"cifar10", {{"split.c_l", "0.2"}, {"split.p_l", "0.1"}}},
      {"cifar100", {{"split.c_l", "0.05"}, {"split.p_l", "0.1"}}},
      {"imagenet100", {{"split.c_l", "0.1"}, {"split.p_l", "0.1"}}},
      {"cub", {{"split.c_l", "0.05"}, {"split.p_l", "0.2"}}},
      {"scars", {{"split.c_l", "0.05102040816326531"}, {"split.p_l", "0.2"}}},
      {"herb19", {{"split.c_l", "0.048316251830161056"}, {"split.p_l", "0.1"}}},
      {"synthetic-smoke",
       {{"synthetic", "true"},
        {"synthetic.classes", "10"},
        {"synthetic.samples_per_class", "30"},
        {"synthetic.dim", "16"},
        {"synthetic.separation", "6"},
        {"split.c_l", "0.2"},
        {"split.p_l", "0.2"},
        {"encoder.bottleneck", "8"},
        {"encoder.hidden", "128"},
        {"train.lr", "0.003"},
        {"train.batch_size", "64"},
        {"train.stage1_epochs", "5"},
        {"train.stage2_epochs", "5"}}},
      {"synthetic-separable",
       {{"synthetic", "true"},
        {"synthetic.classes", "20"},
        {"synthetic.samples_per_class", "50"},
        {"synthetic.dim", "32"},
        {"synthetic.separation", "10"},
        {"split.c_l", "0.2"},
        {"split.p_l", "0.1"},
        {"encoder.bottleneck", "16"},
        {"encoder.hidden", "256"},
        {"train.lr", "0.003"},
        {"train.batch_size", "256"},
        {"train.stage1_epochs", "10"},
        {"train.stage2_epochs", "10"}}},
      {"synthetic-moderate",
       {{"synthetic", "true"},
        {"synthetic.classes", "20"},
        {"synthetic.samples_per_class", "50"},
        {"synthetic.dim", "32"},
        {"synthetic.separation", "3"},
        {"split.c_l", "0.2"},
        {"split.p_l", "0.1"},
        {"encoder.bottleneck", "16"},
        {"encoder.hidden", "256"},
        {"train.lr", "0.003"},
        {"train.batch_size", "256"},
        {"train.stage1_epochs", "10"},
        {"train.stage2_epochs", "3"}}},
  };
  return table;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : presets()) out.emplace_back(p.name);
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.emplace_back(e.key);
  return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (key == e.key) {
      e.set(*this, key, trim(value));
      return;
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
}

void ExperimentConfig::apply_preset(const std::string& name) {
  for (const auto& p : presets()) {
    if (name == p.name) {
      for (const auto& [k, v] : p.values) set(k, v);
      preset = name;
      return;
    }
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  fail(ErrorCode::InvalidArgument, "unknown preset '" + name + "' (known: " + known + ")");
}

void ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open config file '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::Format,
            path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    try {
      set(key, line.substr(eq + 1));
    } catch (const Error& e) {
      fail(e.code(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void ExperimentConfig::apply_env() {
  if (const char* env = std::getenv("FSGCD_SEED"); env != nullptr && *env != '\0') {
    try {
      seed = parse_uint("FSGCD_SEED", trim(env));
    } catch (const Error& e) {
      fail(ErrorCode::InvalidArgument, std::string("environment variable FSGCD_SEED: ") + e.what());
    }
  }
}

std::size_t ExperimentConfig::effective_workers() const { return workers == 0 ? default_workers() : workers; }

TrainConfig ExperimentConfig::resolved_train() const {
  TrainConfig t = train;
  t.seed = seed;
  t.workers = effective_workers();
  return t;
}

nlohmann::json ExperimentConfig::to_json() const {
  Json j = Json::object();
  for (const auto& e : entries()) {
    if (std::string(e.key) == "workers") continue;
    j[e.key] = e.get(*this);
  }
  return j;
}

void ExperimentConfig::validate() const {
  require(c_l > 0.0 && c_l <= 1.0, ErrorCode::InvalidArgument, "split.c_l must be in (0, 1]");
  require(p_l > 0.0 && p_l <= 1.0, ErrorCode::InvalidArgument, "split.p_l must be in (0, 1]");
  require(adapter_scale >= 0.0 && std::isfinite(adapter_scale), ErrorCode::InvalidArgument,
          "encoder.scale must be finite and >= 0");
  require(eval.kmeans.restarts >= 1, ErrorCode::InvalidArgument, "eval.restarts must be >= 1");
  if (synthetic) synthetic_cfg.validate();
  resolved_train().validate();
}

}  // namespace fsgcd
