#include "fsgcd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "fsgcd/affinity.hpp"
#include "fsgcd/error.hpp"

namespace fsgcd {

namespace {

Rng stage_rng(std::uint64_t seed, std::uint32_t stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stage};
  return Rng(seq);
}

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& ids, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < ids.size(); i += size)
    out.emplace_back(ids.begin() + static_cast<long>(i), ids.begin() + static_cast<long>(std::min(ids.size(), i + size)));
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  require(lr > 0.0 && std::isfinite(lr), ErrorCode::InvalidArgument, "learning rate must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::InvalidArgument, "momentum must be in [0, 1)");
  require(weight_decay >= 0.0, ErrorCode::InvalidArgument, "weight decay must be >= 0");
  require(batch_size >= 2, ErrorCode::InvalidArgument, "batch size must be >= 2");
  loss.validate();
  augment.validate();
}

void TrainLog::append(const TrainLog& other) {
  steps.insert(steps.end(), other.steps.begin(), other.steps.end());
  events.insert(events.end(), other.events.begin(), other.events.end());
  rng_checkpoints.insert(rng_checkpoints.end(), other.rng_checkpoints.begin(), other.rng_checkpoints.end());
  index_rebuilds += other.index_rebuilds;
  skipped_batches += other.skipped_batches;
  skipped_anchors += other.skipped_anchors;
}

nlohmann::json step_to_json(const StepRecord& s) {
  nlohmann::json j;
  j["type"] = "step";
  j["stage"] = s.stage;
  j["epoch"] = s.epoch;
  j["step"] = s.step;
  j["batch"] = s.batch;
  j["total"] = s.total;
  if (s.stage == "pretrain") {
    j["known_triplet"] = s.known_triplet;
  } else {
    j["asl"] = s.asl_active ? nlohmann::json(s.asl) : nlohmann::json(nullptr);
    j["ucl"] = s.ucl_active ? nlohmann::json(s.ucl) : nlohmann::json(nullptr);
    j["ktl"] = s.ktl_active ? nlohmann::json(s.ktl) : nlohmann::json(nullptr);
    j["al"] = s.al_active ? nlohmann::json(s.al) : nlohmann::json(nullptr);
  }
  j["skipped_anchors"] = s.skipped_anchors;
  return j;
}

void sgd_step(EncoderParams& params, const EncoderGrads& grads, const TrainConfig& cfg, EncoderGrads& velocity) {
  auto g_copy = grads;
  auto g_views = g_copy.tensors(params.train_scale);
  auto v_views = velocity.tensors(params.train_scale);
  std::size_t k = 0;
  for (auto& p : params.tensors()) {
    if (!p.trainable) continue;
    require(k < g_views.size() && g_views[k].name == p.name && g_views[k].size() == p.size(), ErrorCode::ShapeMismatch,
            "gradient layout does not match parameter " + p.name);
    const auto& g = g_views[k];
    auto& v = v_views[k];
    ++k;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      require(std::isfinite(g.data[i]), ErrorCode::NonFinite, "non-finite gradient in tensor " + p.name);
    const double wd = p.decay ? cfg.weight_decay : 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      v.data[i] = cfg.momentum * v.data[i] + g.data[i] + wd * p.data[i];
      p.data[i] -= cfg.lr * v.data[i];
    }
    for (Eigen::Index i = 0; i < p.size(); ++i)
      require(std::isfinite(p.data[i]), ErrorCode::NonFinite, "parameter " + p.name + " became non-finite");
  }
}

double feature_scale(const FeatureSet& fs) {
  if (fs.size() < 2) return 1.0;
  const RowVector mean = fs.features.colwise().mean();
  const RowVector var = (fs.features.rowwise() - mean).array().square().colwise().mean();
  const double s = var.array().sqrt().mean();
  return s > 0.0 && std::isfinite(s) ? s : 1.0;
}

TrainLog pretrain_known(const TrainData& data, EncoderParams& params, const TrainConfig& cfg,
                        const std::function<void(const StepRecord&)>& on_step) {
  cfg.validate();
  const auto& fs = data.features;
  const auto& split = data.split;
  std::set<std::int32_t> classes;
  for (auto id : split.labeled_ids) classes.insert(fs.labels[id]);
  require(classes.size() >= 2, ErrorCode::Degenerate,
          "known-boundary pre-training needs labeled samples from at least 2 known classes");

  TrainLog log;
  Rng rng = stage_rng(cfg.seed, 1);
  EncoderGrads velocity = EncoderGrads::zeros_like(params);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.stage1_epochs; ++epoch) {
    log.rng_checkpoints.push_back(Rng(rng)());
    std::vector<std::size_t> order = split.labeled_ids;
    std::shuffle(order.begin(), order.end(), rng);
    const auto batches = chunk(order, cfg.batch_size);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& ids = batches[b];
      if (ids.size() < 2) {
        ++log.skipped_batches;
        continue;
      }
      Matrix inputs(static_cast<Eigen::Index>(ids.size()), fs.features.cols());
      std::vector<std::int32_t> labels;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        inputs.row(static_cast<Eigen::Index>(i)) = fs.features.row(static_cast<Eigen::Index>(ids[i]));
        labels.push_back(fs.labels[ids[i]]);
      }
      const auto cache = encode_forward(inputs, params);
      LossValue loss;
      try {
        loss = known_triplet_loss(cache.embeddings, labels, cfg.loss.margin_alpha, rng);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Degenerate) throw;
        ++log.skipped_batches;
        log.events.push_back("pretrain epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                             " skipped: " + e.what());
        continue;
      }
      sgd_step(params, encode_backward(cache, loss.grad, params), cfg, velocity);

      StepRecord rec;
      rec.stage = "pretrain";
      rec.epoch = epoch;
      rec.step = ++step;
      rec.batch = ids.size();
      rec.total = loss.value;
      rec.known_triplet = loss.value;
      rec.skipped_anchors = loss.skipped;
      log.skipped_anchors += loss.skipped;
      log.steps.push_back(rec);
      if (on_step) on_step(rec);
    }
  }
  return log;
}

BatchInputs assemble_batch(const TrainData& data, std::span<const std::size_t> ids, const AffinityIndex& index,
                           const AugmentConfig& augment, Rng& rng) {
  const auto& fs = data.features;
  BatchInputs out;
  std::vector<RowVector> rows;
  std::unordered_map<std::size_t, std::size_t> orig_row;
  std::unordered_map<std::size_t, std::size_t> view_row;

  auto add_orig = [&](std::size_t id) {
    auto it = orig_row.find(id);
    if (it != orig_row.end()) return it->second;
    rows.emplace_back(fs.features.row(static_cast<Eigen::Index>(id)));
    out.row_sample.push_back(id);
    return orig_row[id] = rows.size() - 1;
  };
  auto add_view = [&](std::size_t id) {
    auto it = view_row.find(id);
    if (it != view_row.end()) return it->second;
    if (data.views != nullptr) {
      rows.emplace_back(data.views->features.row(static_cast<Eigen::Index>(id)));
    } else {
      const auto src = fs.features.row(static_cast<Eigen::Index>(id));
      rows.emplace_back(augment_view({src.data(), static_cast<std::size_t>(src.size())}, augment, rng).transpose());
    }
    out.row_sample.push_back(id);
    return view_row[id] = rows.size() - 1;
  };

  std::set<std::size_t> supervised_ids;
  auto add_supervised = [&](std::size_t id, std::int32_t label) {
    if (supervised_ids.insert(id).second) out.batch.supervised.push_back({add_orig(id), label});
  };

  std::vector<char> labeled(fs.size(), 0);
  for (auto id : data.split.labeled_ids) labeled[id] = 1;

  for (auto id : ids) {
    const auto r = add_orig(id);
    const auto v = add_view(id);
    out.batch.members.push_back({r, v});
  }
  for (auto id : ids) {
    const auto partner = index.nn_of[id];
    if (labeled[id]) {
      add_supervised(id, fs.labels[id]);
      auto pl = index.pseudo_labels.find(partner);
      if (pl != index.pseudo_labels.end()) add_supervised(partner, pl->second.label);
    } else {
      auto pl = index.pseudo_labels.find(id);
      if (pl != index.pseudo_labels.end()) add_supervised(id, pl->second.label);
      out.batch.unlabeled.push_back({orig_row.at(id), view_row.at(id), add_orig(partner), add_view(partner)});
    }
  }

  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), fs.features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.inputs.row(static_cast<Eigen::Index>(i)) = rows[i];
  return out;
}

TrainLog optimize_boundaries(const TrainData& data, EncoderParams& params, const TrainConfig& cfg,
                             const EpochHook& after_epoch, const std::function<void(const StepRecord&)>& on_step) {
  cfg.validate();
  const auto& fs = data.features;
  if (data.views != nullptr)
    require(data.views->size() == fs.size() && data.views->dim() == fs.dim(), ErrorCode::ShapeMismatch,
            "paired-view file does not match the feature set");
  TrainLog log;
  Rng rng = stage_rng(cfg.seed, 2);
  EncoderGrads velocity = EncoderGrads::zeros_like(params);
  AugmentConfig augment = cfg.augment;
  augment.noise_sigma *= feature_scale(fs);

  std::vector<std::size_t> all(fs.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.stage2_epochs; ++epoch) {
    log.rng_checkpoints.push_back(Rng(rng)());
    const AffinityIndex index = build_affinity_index(fs, data.split, params, cfg.workers);
    ++log.index_rebuilds;

    std::vector<std::size_t> order = all;
    std::shuffle(order.begin(), order.end(), rng);
    const auto batches = chunk(order, cfg.batch_size);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& ids = batches[b];
      if (ids.size() < 2) {
        ++log.skipped_batches;
        continue;
      }
      BatchInputs bi = assemble_batch(data, ids, index, augment, rng);
      const auto cache = encode_forward(bi.inputs, params);
      bi.batch.rows = cache.embeddings;
      TotalLoss loss;
      try {
        loss = total_loss(bi.batch, cfg.loss, rng);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Degenerate) throw;
        log.events.push_back("epoch " + std::to_string(epoch) + " aborted at batch " + std::to_string(b) + ": " +
                             e.what());
        break;
      }
      sgd_step(params, encode_backward(cache, loss.grad, params), cfg, velocity);

      StepRecord rec;
      rec.stage = "boundary";
      rec.epoch = epoch;
      rec.step = ++step;
      rec.batch = ids.size();
      rec.total = loss.value;
      rec.asl = loss.asl;
      rec.ucl = loss.ucl;
      rec.ktl = loss.ktl;
      rec.al = loss.al;
      rec.asl_active = loss.asl_active;
      rec.ucl_active = loss.ucl_active;
      rec.ktl_active = loss.ktl_active;
      rec.al_active = loss.al_active;
      rec.skipped_anchors = loss.asl_skipped;
      log.skipped_anchors += loss.asl_skipped;
      log.steps.push_back(rec);
      if (on_step) on_step(rec);
    }
    if (after_epoch) after_epoch(epoch, params);
  }
  return log;
}

std::vector<std::size_t> evaluated_ids(const DatasetSplit& split, bool full_set) {
  if (!full_set) return split.unlabeled_ids;
  std::vector<std::size_t> ids(split.sample_count);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

namespace {

Metrics evaluate_points(const Matrix& points, const FeatureSet& fs, const DatasetSplit& split,
                        const std::vector<std::size_t>& ids, const EvalOptions& opts, std::size_t workers) {
  std::vector<std::int32_t> truth;
  truth.reserve(ids.size());
  for (auto id : ids) {
    require(fs.labels[id] != kNoLabel, ErrorCode::InvalidArgument,
            "evaluation needs ground-truth labels; sample " + std::to_string(id) + " has none");
    truth.push_back(fs.labels[id]);
  }
  const std::size_t k = opts.k.value_or(fs.class_count);
  KMeansOptions km = opts.kmeans;
  km.workers = workers;
  return evaluate_clustering(points, truth, split.known_classes, fs.class_count, k, opts.seed, km);
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), m.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(ids[i]));
  return out;
}

}  // namespace

Metrics evaluate_params(const FeatureSet& fs, const DatasetSplit& split, const EncoderParams& params,
                        const EvalOptions& opts, std::size_t workers) {
  const auto ids = evaluated_ids(split, opts.full_set);
  const Matrix emb = encode_all(gather_rows(fs.features, ids), params, workers);
  return evaluate_points(emb, fs, split, ids, opts, workers);
}

Metrics evaluate_raw(const FeatureSet& fs, const DatasetSplit& split, const EvalOptions& opts, std::size_t workers) {
  const auto ids = evaluated_ids(split, opts.full_set);
  return evaluate_points(gather_rows(fs.features, ids), fs, split, ids, opts, workers);
}

nlohmann::json eval_to_json(const EvalRecord& r) {
  nlohmann::json j = metrics_to_json(r.metrics);
  j["type"] = "metrics";
  j["stage"] = r.stage;
  j["epoch"] = r.epoch;
  j["final"] = r.is_final;
  return j;
}

RunResult run_experiment(const TrainData& data, EncoderParams params, const TrainConfig& cfg, const EvalOptions& opts,
                         const RunCallbacks& callbacks) {
  cfg.validate();
  params.validate();
  data.split.validate(data.features);
  require(data.features.dim() == params.input_dim(), ErrorCode::ShapeMismatch,
          "feature dimension " + std::to_string(data.features.dim()) + " does not match encoder input dimension " +
              std::to_string(params.input_dim()));
  RunResult result;
  auto progress = [&](const std::string& msg) {
    if (callbacks.on_progress) callbacks.on_progress(msg);
  };

  bool have_best = false;
  auto evaluate = [&](const std::string& stage, std::size_t epoch, const EncoderParams& current, bool is_final) {
    const EncoderParams stored = current.rounded_to_f32();
    EvalRecord rec{stage, epoch, evaluate_params(data.features, data.split, stored, opts, cfg.workers), is_final};
    if (!have_best || rec.metrics.acc_new > result.best.metrics.acc_new) {
      have_best = true;
      result.best = rec;
      result.best_params = stored;
    }
    result.evals.push_back(rec);
    if (callbacks.on_eval) callbacks.on_eval(rec);
    progress(stage + " epoch " + std::to_string(epoch) + ": all=" + std::to_string(rec.metrics.acc_all) +
             " old=" + std::to_string(rec.metrics.acc_old) + " new=" + std::to_string(rec.metrics.acc_new));
  };

  if (!cfg.skip_stage1) {
    progress("known-boundary pre-training: " + std::to_string(cfg.stage1_epochs) + " epochs");
    result.log.append(pretrain_known(data, params, cfg, callbacks.on_step));
  }
  evaluate(cfg.skip_stage1 ? "initial" : "pretrain", 0, params, cfg.stage2_epochs == 0);

  const std::size_t every = std::max<std::size_t>(1, opts.every);
  progress("boundary optimization: " + std::to_string(cfg.stage2_epochs) + " epochs");
  result.log.append(optimize_boundaries(
      data, params, cfg,
      [&](std::size_t epoch, const EncoderParams& current) {
        const bool last = epoch == cfg.stage2_epochs;
        if (epoch % every == 0 || last) evaluate("boundary", epoch, current, last);
      },
      callbacks.on_step));
  result.final_params = params;
  return result;
}

}  // namespace fsgcd
