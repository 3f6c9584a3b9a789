#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsgcd/affinity.hpp"
#include "fsgcd/data_model.hpp"
#include "fsgcd/encoder.hpp"
#include "fsgcd/eval.hpp"
#include "fsgcd/losses.hpp"

namespace fsgcd {

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  std::size_t batch_size = 32;
  std::size_t stage1_epochs = 20;
  std::size_t stage2_epochs = 100;
  std::uint64_t seed = 0;
  bool skip_stage1 = false;
  LossConfig loss;
  // noise_sigma is in units of the mean per-coordinate std-dev of the features.
  AugmentConfig augment{0.5, 0.1, 0.9, 1.1};
  std::size_t workers = 1;

  void validate() const;
};

// Inputs shared by both stages. `views`, when set, holds one fixed augmented
// view per sample and replaces feature-space augmentation.
struct TrainData {
  const FeatureSet& features;
  const DatasetSplit& split;
  const FeatureSet* views = nullptr;
};

struct StepRecord {
  std::string stage;
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::size_t batch = 0;
  double total = 0.0;
  double asl = 0.0;
  double ucl = 0.0;
  double ktl = 0.0;
  double al = 0.0;
  double known_triplet = 0.0;
  bool asl_active = false;
  bool ucl_active = false;
  bool ktl_active = false;
  bool al_active = false;
  std::size_t skipped_anchors = 0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<std::string> events;           // skipped batches, aborted epochs
  std::vector<std::uint64_t> rng_checkpoints;  // one draw from a copy of the rng at each epoch start
  std::size_t index_rebuilds = 0;
  std::size_t skipped_batches = 0;
  std::size_t skipped_anchors = 0;

  void append(const TrainLog& other);
};

nlohmann::json step_to_json(const StepRecord& s);

// vel <- momentum * vel + grad + wd * param; param <- param - lr * vel.
// Only trainable tensors move; LayerNorm gain/bias get no weight decay.
void sgd_step(EncoderParams& params, const EncoderGrads& grads, const TrainConfig& cfg, EncoderGrads& velocity);

// Stage 1: known triplet loss over labeled minibatches.
TrainLog pretrain_known(const TrainData& data, EncoderParams& params, const TrainConfig& cfg,
                        const std::function<void(const StepRecord&)>& on_step = {});

// Called after each stage-2 epoch with the epoch number (1-based).
using EpochHook = std::function<void(std::size_t epoch, const EncoderParams&)>;

// Stage 2: per-epoch affinity rebuild, then the combined objective over
// shuffled minibatches of labeled and unlabeled samples.
TrainLog optimize_boundaries(const TrainData& data, EncoderParams& params, const TrainConfig& cfg,
                             const EpochHook& after_epoch = {},
                             const std::function<void(const StepRecord&)>& on_step = {});

// Builds the stage-2 minibatch for the given sample ids (exposed for tests).
struct BatchInputs {
  Matrix inputs;  // one row per Batch row
  Batch batch;
  std::vector<std::size_t> row_sample;  // sample id behind each row
};
BatchInputs assemble_batch(const TrainData& data, std::span<const std::size_t> ids, const AffinityIndex& index,
                           const AugmentConfig& augment, Rng& rng);

double feature_scale(const FeatureSet& fs);

struct EvalOptions {
  std::size_t every = 1;
  std::uint64_t seed = 0;
  bool full_set = false;              // evaluate on every sample instead of D_u
  std::optional<std::size_t> k;       // defaults to the class count
  KMeansOptions kmeans;
};

// Encodes the evaluated ids, clusters them and scores against ground truth.
Metrics evaluate_params(const FeatureSet& fs, const DatasetSplit& split, const EncoderParams& params,
                        const EvalOptions& opts, std::size_t workers = 1);
// Same protocol on raw input features.
Metrics evaluate_raw(const FeatureSet& fs, const DatasetSplit& split, const EvalOptions& opts, std::size_t workers = 1);
std::vector<std::size_t> evaluated_ids(const DatasetSplit& split, bool full_set);

struct EvalRecord {
  std::string stage;
  std::size_t epoch = 0;
  Metrics metrics;
  bool is_final = false;
};

nlohmann::json eval_to_json(const EvalRecord& r);

struct RunCallbacks {
  std::function<void(const EvalRecord&)> on_eval;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const std::string&)> on_progress;
};

struct RunResult {
  EncoderParams final_params;
  EncoderParams best_params;  // checkpoint with the highest acc_new
  EvalRecord best;
  std::vector<EvalRecord> evals;
  TrainLog log;
};

// Stage 1, evaluation, stage 2 with evaluation every `opts.every` epochs and
// at the last epoch. Evaluations use f32-rounded params so a saved
// checkpoint reproduces them exactly.
RunResult run_experiment(const TrainData& data, EncoderParams params, const TrainConfig& cfg, const EvalOptions& opts,
                         const RunCallbacks& callbacks = {});

}  // namespace fsgcd
