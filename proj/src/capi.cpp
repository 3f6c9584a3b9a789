#include "fsgcd/fsgcd.h"

#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <string>

#include "fsgcd/config.hpp"
#include "fsgcd/data_model.hpp"
#include "fsgcd/encoder.hpp"
#include "fsgcd/error.hpp"
#include "fsgcd/eval.hpp"
#include "fsgcd/parallel.hpp"
#include "fsgcd/trainer.hpp"

struct fsgcd_features {
  fsgcd::FeatureSet fs;
};
struct fsgcd_split {
  fsgcd::DatasetSplit split;
};
struct fsgcd_config {
  fsgcd::ExperimentConfig cfg;
};
struct fsgcd_model {
  fsgcd::EncoderParams params;
};

namespace {

thread_local std::string g_last_error;

fsgcd_status to_status(fsgcd::ErrorCode c) {
  switch (c) {
    case fsgcd::ErrorCode::InvalidArgument: return FSGCD_INVALID_ARGUMENT;
    case fsgcd::ErrorCode::Io: return FSGCD_IO;
    case fsgcd::ErrorCode::Format: return FSGCD_FORMAT;
    case fsgcd::ErrorCode::Degenerate: return FSGCD_DEGENERATE;
    case fsgcd::ErrorCode::ShapeMismatch: return FSGCD_SHAPE;
    case fsgcd::ErrorCode::NonFinite: return FSGCD_NON_FINITE;
  }
  return FSGCD_INTERNAL;
}

template <typename Fn>
fsgcd_status guard(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return FSGCD_OK;
  } catch (const fsgcd::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return FSGCD_INTERNAL;
}

void need(const void* p, const char* what) {
  fsgcd::require(p != nullptr, fsgcd::ErrorCode::InvalidArgument, std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void check_model_fits(const fsgcd::EncoderParams& p, const fsgcd::FeatureSet& fs) {
  fsgcd::require(p.input_dim() == fs.dim(), fsgcd::ErrorCode::ShapeMismatch,
                 "checkpoint expects " + std::to_string(p.input_dim()) + "-dimensional features but the feature file has " +
                     std::to_string(fs.dim()));
}

void write_line(std::ofstream& out, const nlohmann::json& j, const std::string& path) {
  out << j.dump() << '\n';
  out.flush();
  fsgcd::require(static_cast<bool>(out), fsgcd::ErrorCode::Io, "write failed: " + path);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  fsgcd::require(static_cast<bool>(out), fsgcd::ErrorCode::Io, "cannot open '" + path + "' for writing");
  return out;
}

fsgcd::EvalOptions eval_options(std::size_t k, std::uint64_t seed, int full_set) {
  fsgcd::EvalOptions opts;
  opts.seed = seed;
  opts.full_set = full_set != 0;
  if (k != 0) opts.k = k;
  return opts;
}

}  // namespace

extern "C" {

const char* fsgcd_last_error(void) { return g_last_error.c_str(); }
const char* fsgcd_version(void) { return "1.0.0"; }
void fsgcd_string_free(char* s) { delete[] s; }

fsgcd_status fsgcd_features_load(const char* path, fsgcd_features** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new fsgcd_features{fsgcd::load_features(path)};
  });
}

fsgcd_status fsgcd_features_save(const fsgcd_features* f, const char* path) {
  return guard([&] {
    need(f, "features");
    need(path, "path");
    fsgcd::save_features(f->fs, path);
  });
}

fsgcd_status fsgcd_features_synthetic(uint32_t classes, uint32_t samples_per_class, uint32_t dim, double separation,
                                      uint64_t seed, fsgcd_features** out) {
  return guard([&] {
    need(out, "out");
    fsgcd::SyntheticConfig cfg;
    cfg.class_count = classes;
    cfg.samples_per_class = samples_per_class;
    cfg.dimension = dim;
    cfg.class_separation = separation;
    cfg.seed = seed;
    *out = new fsgcd_features{fsgcd::make_synthetic(cfg)};
  });
}

fsgcd_status fsgcd_features_from_config(const fsgcd_config* cfg, fsgcd_features** out) {
  return guard([&] {
    need(cfg, "config");
    need(out, "out");
    const auto& c = cfg->cfg;
    if (!c.features_path.empty()) {
      *out = new fsgcd_features{fsgcd::load_features(c.features_path)};
      return;
    }
    fsgcd::require(c.synthetic, fsgcd::ErrorCode::InvalidArgument,
                   "no feature file given and the configuration is not synthetic");
    auto sc = c.synthetic_cfg;
    sc.seed = c.effective_synthetic_seed();
    *out = new fsgcd_features{fsgcd::make_synthetic(sc)};
  });
}

size_t fsgcd_features_size(const fsgcd_features* f) { return f ? f->fs.size() : 0; }
size_t fsgcd_features_dim(const fsgcd_features* f) { return f ? f->fs.dim() : 0; }
uint32_t fsgcd_features_class_count(const fsgcd_features* f) { return f ? f->fs.class_count : 0; }

fsgcd_status fsgcd_features_row(const fsgcd_features* f, size_t i, double* out, size_t out_len) {
  return guard([&] {
    need(f, "features");
    need(out, "out");
    fsgcd::require(i < f->fs.size(), fsgcd::ErrorCode::InvalidArgument, "row index out of range");
    fsgcd::require(out_len >= f->fs.dim(), fsgcd::ErrorCode::ShapeMismatch, "output buffer too small");
    for (std::size_t d = 0; d < f->fs.dim(); ++d)
      out[d] = f->fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
  });
}

int32_t fsgcd_features_label(const fsgcd_features* f, size_t i) {
  if (f == nullptr || i >= f->fs.size()) return fsgcd::kNoLabel;
  return f->fs.labels[i];
}

void fsgcd_features_free(fsgcd_features* f) { delete f; }

fsgcd_status fsgcd_split_generate(const fsgcd_features* f, double c_l, double p_l, uint64_t seed, fsgcd_split** out) {
  return guard([&] {
    need(f, "features");
    need(out, "out");
    *out = new fsgcd_split{fsgcd::generate_split(f->fs, c_l, p_l, seed)};
  });
}

fsgcd_status fsgcd_split_from_config(const fsgcd_features* f, const fsgcd_config* cfg, fsgcd_split** out) {
  return guard([&] {
    need(f, "features");
    need(cfg, "config");
    need(out, "out");
    const auto& c = cfg->cfg;
    if (!c.split_path.empty())
      *out = new fsgcd_split{fsgcd::load_split(c.split_path, f->fs)};
    else
      *out = new fsgcd_split{fsgcd::generate_split(f->fs, c.c_l, c.p_l, c.effective_split_seed())};
  });
}

fsgcd_status fsgcd_split_load(const fsgcd_features* f, const char* path, fsgcd_split** out) {
  return guard([&] {
    need(f, "features");
    need(path, "path");
    need(out, "out");
    *out = new fsgcd_split{fsgcd::load_split(path, f->fs)};
  });
}

fsgcd_status fsgcd_split_save(const fsgcd_split* s, const char* path) {
  return guard([&] {
    need(s, "split");
    need(path, "path");
    fsgcd::save_split(s->split, path);
  });
}

fsgcd_status fsgcd_split_to_json(const fsgcd_split* s, char** out) {
  return guard([&] {
    need(s, "split");
    need(out, "out");
    *out = dup_string(fsgcd::split_to_json(s->split).dump());
  });
}

size_t fsgcd_split_labeled_count(const fsgcd_split* s) { return s ? s->split.labeled_ids.size() : 0; }
size_t fsgcd_split_known_class_count(const fsgcd_split* s) { return s ? s->split.known_classes.size() : 0; }
void fsgcd_split_free(fsgcd_split* s) { delete s; }

fsgcd_status fsgcd_config_create(fsgcd_config** out) {
  return guard([&] {
    need(out, "out");
    auto c = std::make_unique<fsgcd_config>();
    c->cfg.apply_env();
    *out = c.release();
  });
}

fsgcd_status fsgcd_config_apply_preset(fsgcd_config* cfg, const char* name) {
  return guard([&] {
    need(cfg, "config");
    need(name, "name");
    cfg->cfg.apply_preset(name);
  });
}

fsgcd_status fsgcd_config_set(fsgcd_config* cfg, const char* key, const char* value) {
  return guard([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    cfg->cfg.set(key, value);
  });
}

fsgcd_status fsgcd_config_load_file(fsgcd_config* cfg, const char* path) {
  return guard([&] {
    need(cfg, "config");
    need(path, "path");
    cfg->cfg.load_file(path);
  });
}

fsgcd_status fsgcd_config_to_json(const fsgcd_config* cfg, char** out) {
  return guard([&] {
    need(cfg, "config");
    need(out, "out");
    *out = dup_string(cfg->cfg.to_json().dump());
  });
}

void fsgcd_config_free(fsgcd_config* cfg) { delete cfg; }

fsgcd_status fsgcd_train(const fsgcd_features* features, const fsgcd_features* views, const fsgcd_split* split,
                         const fsgcd_config* cfg, const char* out_dir, fsgcd_progress_fn progress, void* user) {
  return guard([&] {
    need(features, "features");
    need(split, "split");
    need(cfg, "config");
    need(out_dir, "out_dir");
    const auto& c = cfg->cfg;
    c.validate();
    const auto& fs = features->fs;
    split->split.validate(fs);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    fsgcd::require(!ec, fsgcd::ErrorCode::Io, std::string("cannot create output directory '") + out_dir + "'");
    const std::filesystem::path dir(out_dir);

    fsgcd::EncoderShape shape = c.encoder;
    shape.input_dim = fs.dim();
    auto params = fsgcd::init_encoder(shape, c.seed, c.adapter_scale, c.head_init);
    params.train_scale = c.train_scale;
    if (!c.frozen_block_path.empty()) fsgcd::load_frozen_block(params, c.frozen_block_path);

    const auto train = c.resolved_train();
    const fsgcd::TrainData data{fs, split->split, views ? &views->fs : nullptr};

    fsgcd::save_split(split->split, (dir / "split.json").string());
    const auto metrics_path = (dir / "metrics.jsonl").string();
    const auto log_path = (dir / "train_log.jsonl").string();
    auto metrics = open_out(metrics_path);
    auto log = open_out(log_path);

    nlohmann::json header;
    header["type"] = "config";
    header["config"] = c.to_json();
    header["data"] = {{"samples", fs.size()},
                      {"dim", fs.dim()},
                      {"classes", fs.class_count},
                      {"labeled", split->split.labeled_ids.size()},
                      {"known_classes", split->split.known_classes},
                      {"views", views != nullptr}};
    write_line(metrics, header, metrics_path);

    fsgcd::RunCallbacks callbacks;
    callbacks.on_eval = [&](const fsgcd::EvalRecord& r) { write_line(metrics, fsgcd::eval_to_json(r), metrics_path); };
    callbacks.on_step = [&](const fsgcd::StepRecord& s) { write_line(log, fsgcd::step_to_json(s), log_path); };
    if (progress != nullptr)
      callbacks.on_progress = [&](const std::string& msg) { progress(msg.c_str(), user); };

    const auto result = fsgcd::run_experiment(data, params, train, c.eval, callbacks);

    for (const auto& e : result.log.events) write_line(log, {{"type", "event"}, {"message", e}}, log_path);
    write_line(log,
               {{"type", "summary"},
                {"steps", result.log.steps.size()},
                {"index_rebuilds", result.log.index_rebuilds},
                {"skipped_batches", result.log.skipped_batches},
                {"skipped_anchors", result.log.skipped_anchors}},
               log_path);

    fsgcd::save_checkpoint(result.best_params, (dir / "best_new.fsgp").string());
    fsgcd::save_checkpoint(result.final_params, (dir / "final.fsgp").string());

    nlohmann::json best = fsgcd::eval_to_json(result.best);
    best["type"] = "best_new";
    write_line(metrics, best, metrics_path);
  });
}

fsgcd_status fsgcd_model_load(const char* path, fsgcd_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new fsgcd_model{fsgcd::load_checkpoint(std::string(path))};
  });
}

size_t fsgcd_model_input_dim(const fsgcd_model* m) { return m ? m->params.input_dim() : 0; }
size_t fsgcd_model_embed_dim(const fsgcd_model* m) { return m ? m->params.embed_dim() : 0; }

fsgcd_status fsgcd_model_encode(const fsgcd_model* m, const double* rows, size_t n, size_t dim, double* out,
                                size_t out_len) {
  return guard([&] {
    need(m, "model");
    need(rows, "rows");
    need(out, "out");
    fsgcd::require(dim == m->params.input_dim(), fsgcd::ErrorCode::ShapeMismatch, "input dimension mismatch");
    fsgcd::require(out_len >= n * m->params.embed_dim(), fsgcd::ErrorCode::ShapeMismatch, "output buffer too small");
    const fsgcd::Matrix in = Eigen::Map<const fsgcd::Matrix>(rows, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    const fsgcd::Matrix e = fsgcd::encode(in, m->params);
    std::memcpy(out, e.data(), sizeof(double) * static_cast<std::size_t>(e.size()));
  });
}

void fsgcd_model_free(fsgcd_model* m) { delete m; }

fsgcd_status fsgcd_evaluate(const fsgcd_model* m, const fsgcd_features* f, const fsgcd_split* s, size_t k,
                            uint64_t eval_seed, int full_set, size_t workers, char** out_json) {
  return guard([&] {
    need(m, "model");
    need(f, "features");
    need(s, "split");
    need(out_json, "out");
    check_model_fits(m->params, f->fs);
    s->split.validate(f->fs);
    const auto opts = eval_options(k, eval_seed, full_set);
    const auto metrics = fsgcd::evaluate_params(f->fs, s->split, m->params, opts, workers == 0 ? fsgcd::default_workers() : workers);
    auto j = fsgcd::metrics_to_json(metrics);
    j["k"] = opts.k.value_or(f->fs.class_count);
    j["class_count"] = f->fs.class_count;
    j["evaluated"] = metrics.count_all;
    j["count_old"] = metrics.count_old;
    j["count_new"] = metrics.count_new;
    j["full_set"] = opts.full_set;
    *out_json = dup_string(j.dump());
  });
}

fsgcd_status fsgcd_export_embeddings(const fsgcd_model* m, const fsgcd_features* f, const fsgcd_split* s, size_t k,
                                     uint64_t eval_seed, int full_set, size_t workers, const char* path) {
  return guard([&] {
    need(m, "model");
    need(f, "features");
    need(s, "split");
    need(path, "path");
    check_model_fits(m->params, f->fs);
    s->split.validate(f->fs);
    const auto opts = eval_options(k, eval_seed, full_set);
    const auto ids = fsgcd::evaluated_ids(s->split, opts.full_set);
    fsgcd::Matrix x(static_cast<Eigen::Index>(ids.size()), f->fs.features.cols());
    for (std::size_t i = 0; i < ids.size(); ++i)
      x.row(static_cast<Eigen::Index>(i)) = f->fs.features.row(static_cast<Eigen::Index>(ids[i]));
    const std::size_t w = workers == 0 ? fsgcd::default_workers() : workers;
    const fsgcd::Matrix emb = fsgcd::encode_all(x, m->params, w);
    auto km = opts.kmeans;
    km.workers = w;
    const auto clusters = fsgcd::kmeans(emb, opts.k.value_or(f->fs.class_count), opts.seed, km);

    auto out = open_out(path);
    out << "id";
    for (Eigen::Index d = 0; d < emb.cols(); ++d) out << ",e" << d;
    out << ",label,cluster\n";
    char buf[64];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out << ids[i];
      for (Eigen::Index d = 0; d < emb.cols(); ++d) {
        auto res = std::to_chars(buf, buf + sizeof(buf), emb(static_cast<Eigen::Index>(i), d));
        out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
      }
      out << ',' << f->fs.labels[ids[i]] << ',' << clusters.assignment[i] << '\n';
    }
    out.flush();
    fsgcd::require(static_cast<bool>(out), fsgcd::ErrorCode::Io, std::string("write failed: ") + path);
  });
}

}  // extern "C"
