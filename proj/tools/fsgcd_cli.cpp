// fsgcd command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fsgcd/fsgcd.h"

namespace {

enum Exit { kOk = 0, kInternal = 1, kIo = 2, kDegenerate = 3, kShape = 4 };

int exit_code(fsgcd_status s) {
  switch (s) {
    case FSGCD_OK: return kOk;
    case FSGCD_INVALID_ARGUMENT:
    case FSGCD_IO:
    case FSGCD_FORMAT: return kIo;
    case FSGCD_DEGENERATE:
    case FSGCD_NON_FINITE: return kDegenerate;
    case FSGCD_SHAPE: return kShape;
    default: return kInternal;
  }
}

struct Failure {
  int code;
};

void check(fsgcd_status s, const char* what) {
  if (s == FSGCD_OK) return;
  std::fprintf(stderr, "fsgcd: %s: %s\n", what, fsgcd_last_error());
  throw Failure{exit_code(s)};
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
};

using Features = Handle<fsgcd_features, fsgcd_features_free>;
using Split = Handle<fsgcd_split, fsgcd_split_free>;
using Config = Handle<fsgcd_config, fsgcd_config_free>;
using Model = Handle<fsgcd_model, fsgcd_model_free>;

struct Common {
  std::string config_file;
  std::string preset;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;  // key, value from dedicated options
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "key = value configuration file");
  app->add_option("--preset", c.preset, "named preset (cifar10, cifar100, imagenet100, cub, scars, herb19, synthetic-*)");
  app->add_option("--set", c.sets, "override one config key, key=value (repeatable)");
}

// A flag that maps onto a config key, applied last.
void add_keyed(CLI::App* app, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(flag, [&c, key](const std::string& v) { c.flags.emplace_back(key, v); }, help);
}

void add_switch(CLI::App* app, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_flag_callback(flag, [&c, key] { c.flags.emplace_back(key, "true"); }, help);
}

void build_config(const Common& c, Config& cfg) {
  check(fsgcd_config_create(&cfg.p), "configuration");
  if (!c.preset.empty()) check(fsgcd_config_apply_preset(cfg.p, c.preset.c_str()), "preset");
  if (!c.config_file.empty()) check(fsgcd_config_load_file(cfg.p, c.config_file.c_str()), "config file");
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "fsgcd: --set expects key=value, got '%s'\n", kv.c_str());
      throw Failure{kIo};
    }
    check(fsgcd_config_set(cfg.p, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "--set");
  }
  for (const auto& [k, v] : c.flags) check(fsgcd_config_set(cfg.p, k.c_str(), v.c_str()), k.c_str());
}

std::string config_string(const Config& cfg) {
  char* s = nullptr;
  check(fsgcd_config_to_json(cfg.p, &s), "configuration");
  std::string out = s;
  fsgcd_string_free(s);
  return out;
}

// Pulls a string or integer field out of the flat config JSON line.
std::string config_field(const std::string& json, const std::string& key) {
  const std::string needle = "\"" + key + "\":";
  auto pos = json.find(needle);
  if (pos == std::string::npos) return {};
  pos += needle.size();
  if (json[pos] == '"') {
    const auto end = json.find('"', pos + 1);
    return json.substr(pos + 1, end - pos - 1);
  }
  const auto end = json.find_first_of(",}", pos);
  return json.substr(pos, end - pos);
}

void progress(const char* msg, void*) { std::fprintf(stderr, "%s\n", msg); }

struct EvalArgs {
  std::string checkpoint;
  std::string out;
  std::size_t k = 0;
  bool full_set = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-space category discovery with few known classes"};
  app.require_subcommand(1);
  std::size_t workers = 0;
  app.add_option("--workers", workers, "worker threads (0 = all cores)");

  Common split_c, train_c, eval_c, export_c;
  std::string split_out;
  auto* split_cmd = app.add_subcommand("split", "generate a labeled/unlabeled split manifest");
  add_common(split_cmd, split_c);
  add_keyed(split_cmd, split_c, "--features", "features", "feature file (.fsgf or .csv)");
  add_keyed(split_cmd, split_c, "--c-l", "split.c_l", "fraction of classes that are known");
  add_keyed(split_cmd, split_c, "--p-l", "split.p_l", "fraction of known-class samples that are labeled");
  add_keyed(split_cmd, split_c, "--seed", "split.seed", "split seed");
  split_cmd->add_option("--out", split_out, "manifest path")->required();

  auto* train_cmd = app.add_subcommand("train", "run both training stages");
  add_common(train_cmd, train_c);
  add_keyed(train_cmd, train_c, "--features", "features", "feature file (.fsgf or .csv)");
  add_keyed(train_cmd, train_c, "--views", "views", "paired augmented views, same shape as the features");
  add_keyed(train_cmd, train_c, "--split", "split", "split manifest (generated from split.* keys if absent)");
  add_keyed(train_cmd, train_c, "--frozen-block", "frozen_block", "checkpoint holding frozen_mlp/frozen_ln tensors");
  add_keyed(train_cmd, train_c, "--out", "out", "output directory");
  add_keyed(train_cmd, train_c, "--seed", "seed", "experiment seed");
  add_keyed(train_cmd, train_c, "--stage1-epochs", "train.stage1_epochs", "known-boundary pre-training epochs");
  add_keyed(train_cmd, train_c, "--stage2-epochs", "train.stage2_epochs", "boundary optimization epochs");
  add_keyed(train_cmd, train_c, "--eval-every", "eval.every", "epochs between evaluations");
  add_switch(train_cmd, train_c, "--skip-stage1", "train.skip_stage1", "skip known-boundary pre-training");
  add_switch(train_cmd, train_c, "--full-set", "eval.full_set", "evaluate on every sample instead of D_u");
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "no progress output");

  EvalArgs eval_a, export_a;
  auto* eval_cmd = app.add_subcommand("eval", "cluster embeddings and report matched accuracy");
  auto* export_cmd = app.add_subcommand("export-embeddings", "write embeddings and cluster ids as CSV");
  for (auto [cmd, c, a] : {std::tuple{eval_cmd, &eval_c, &eval_a}, std::tuple{export_cmd, &export_c, &export_a}}) {
    add_common(cmd, *c);
    cmd->add_option("--checkpoint", a->checkpoint, "checkpoint (.fsgp)")->required();
    add_keyed(cmd, *c, "--features", "features", "feature file (.fsgf or .csv)");
    add_keyed(cmd, *c, "--split", "split", "split manifest");
    add_keyed(cmd, *c, "--seed", "seed", "experiment seed (for synthetic presets)");
    add_keyed(cmd, *c, "--eval-seed", "eval.seed", "k-means seed");
    cmd->add_option("--k", a->k, "cluster count (default: class count)");
    cmd->add_flag("--full-set", a->full_set, "use every sample instead of D_u");
  }
  eval_cmd->add_option("--out", eval_a.out, "also write the metrics JSON here");
  export_cmd->add_option("--out", export_a.out, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kIo;
  }

  try {
    auto workers_flag = [&](Common& c) {
      if (workers != 0) c.flags.emplace_back("workers", std::to_string(workers));
    };

    if (split_cmd->parsed()) {
      workers_flag(split_c);
      Config cfg;
      build_config(split_c, cfg);
      Features f;
      check(fsgcd_features_from_config(cfg.p, &f.p), "features");
      Split s;
      check(fsgcd_split_from_config(f.p, cfg.p, &s.p), "split");
      check(fsgcd_split_save(s.p, split_out.c_str()), "split");
      std::fprintf(stderr, "wrote %s: %zu known classes, %zu labeled samples\n", split_out.c_str(),
                   fsgcd_split_known_class_count(s.p), fsgcd_split_labeled_count(s.p));
      return kOk;
    }

    if (train_cmd->parsed()) {
      workers_flag(train_c);
      Config cfg;
      build_config(train_c, cfg);
      const auto json = config_string(cfg);
      std::string out = config_field(json, "out");
      if (out.empty()) out = "fsgcd_run";
      Features f;
      check(fsgcd_features_from_config(cfg.p, &f.p), "features");
      Features views;
      const auto views_path = config_field(json, "views");
      if (!views_path.empty()) check(fsgcd_features_load(views_path.c_str(), &views.p), "views");
      Split s;
      check(fsgcd_split_from_config(f.p, cfg.p, &s.p), "split");
      check(fsgcd_train(f.p, views.p, s.p, cfg.p, out.c_str(), quiet ? nullptr : progress, nullptr), "train");
      if (config_field(json, "features").empty()) {
        const auto path = (std::filesystem::path(out) / "features.fsgf").string();
        check(fsgcd_features_save(f.p, path.c_str()), "features");
      }
      std::fprintf(stderr, "wrote %s\n", out.c_str());
      return kOk;
    }

    for (auto [cmd, c, a] : {std::tuple{eval_cmd, &eval_c, &eval_a}, std::tuple{export_cmd, &export_c, &export_a}}) {
      if (!cmd->parsed()) continue;
      workers_flag(*c);
      Config cfg;
      build_config(*c, cfg);
      const auto json = config_string(cfg);
      Model m;
      check(fsgcd_model_load(a->checkpoint.c_str(), &m.p), "checkpoint");
      Features f;
      check(fsgcd_features_from_config(cfg.p, &f.p), "features");
      if (fsgcd_model_input_dim(m.p) != fsgcd_features_dim(f.p)) {
        std::fprintf(stderr, "fsgcd: checkpoint expects %zu-dimensional features, feature file has %zu\n",
                     fsgcd_model_input_dim(m.p), fsgcd_features_dim(f.p));
        return kShape;
      }
      Split s;
      check(fsgcd_split_from_config(f.p, cfg.p, &s.p), "split");
      const auto classes = fsgcd_features_class_count(f.p);
      if (a->k != 0 && a->k != classes)
        std::fprintf(stderr, "fsgcd: warning: k = %zu differs from the class count %u; accuracy uses a zero-padded "
                     "contingency table\n", a->k, classes);
      const std::uint64_t eval_seed = std::stoull(config_field(json, "eval.seed"));
      const std::size_t w = workers;
      if (cmd == eval_cmd) {
        char* metrics = nullptr;
        check(fsgcd_evaluate(m.p, f.p, s.p, a->k, eval_seed, a->full_set, w, &metrics), "eval");
        std::printf("%s\n", metrics);
        if (!a->out.empty()) {
          std::FILE* fp = std::fopen(a->out.c_str(), "wb");
          if (fp == nullptr) {
            fsgcd_string_free(metrics);
            std::fprintf(stderr, "fsgcd: cannot write '%s'\n", a->out.c_str());
            return kIo;
          }
          std::fprintf(fp, "%s\n", metrics);
          std::fclose(fp);
        }
        fsgcd_string_free(metrics);
      } else {
        check(fsgcd_export_embeddings(m.p, f.p, s.p, a->k, eval_seed, a->full_set, w, a->out.c_str()), "export");
        std::fprintf(stderr, "wrote %s\n", a->out.c_str());
      }
      return kOk;
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return kInternal;
}
