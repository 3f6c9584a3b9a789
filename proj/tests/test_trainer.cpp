#include <gtest/gtest.h>

#include "fsgcd/error.hpp"
#include "fsgcd/trainer.hpp"
#include "oracles.hpp"

using namespace fsgcd;

namespace {

EncoderGrads random_grads(const EncoderParams& p, Rng& rng) {
  auto g = EncoderGrads::zeros_like(p);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& t : g.tensors(false))
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = n(rng);
  return g;
}

struct Problem {
  FeatureSet fs;
  DatasetSplit split;
};

Problem small_problem(double separation, std::uint32_t classes = 4, std::uint64_t seed = 1) {
  SyntheticConfig sc;
  sc.class_count = classes;
  sc.samples_per_class = 20;
  sc.dimension = 8;
  sc.class_separation = separation;
  sc.seed = seed;
  Problem p{make_synthetic(sc), {}};
  p.split = generate_split(p.fs, 0.5, 0.5, seed);
  return p;
}

TrainConfig small_config() {
  TrainConfig c;
  c.lr = 0.01;
  c.batch_size = 16;
  c.stage1_epochs = 2;
  c.stage2_epochs = 2;
  c.seed = 5;
  return c;
}

EncoderParams small_encoder(std::size_t dim) { return init_encoder({dim, 4, 16, 8}, 2); }

bool same_params(EncoderParams a, EncoderParams b) {
  auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (Eigen::Index j = 0; j < ta[i].size(); ++j)
      if (ta[i].data[j] != tb[i].data[j]) return false;
  return a.scale == b.scale;
}

}  // namespace

TEST(Sgd, NoGradientNoDecayNoMotion) {
  auto p = init_encoder({6, 3, 8, 4}, 1, 0.1, HeadInit::Random);
  const auto before = p;
  TrainConfig c;
  c.weight_decay = 0.0;
  auto vel = EncoderGrads::zeros_like(p);
  sgd_step(p, EncoderGrads::zeros_like(p), c, vel);
  EXPECT_TRUE(same_params(p, before));
}

TEST(Sgd, FollowsMomentumRecurrence) {
  Rng rng(1);
  auto p = init_encoder({6, 3, 8, 4}, 1, 0.1, HeadInit::Random);
  TrainConfig c;
  c.lr = 0.05;
  c.momentum = 0.8;
  c.weight_decay = 0.01;
  auto vel = EncoderGrads::zeros_like(p);
  // Track one decayed entry and one LayerNorm entry by hand.
  double w = p.head_w1(2, 3), vw = 0.0;
  double g0 = p.ln_gain[1], vg = 0.0;
  for (int step = 0; step < 5; ++step) {
    const auto g = random_grads(p, rng);
    vw = c.momentum * vw + g.head_w1(2, 3) + c.weight_decay * w;
    w -= c.lr * vw;
    vg = c.momentum * vg + g.ln_gain[1];
    g0 -= c.lr * vg;
    sgd_step(p, g, c, vel);
    EXPECT_NEAR(p.head_w1(2, 3), w, 1e-12);
    EXPECT_NEAR(p.ln_gain[1], g0, 1e-12);
  }
}

TEST(Sgd, LayerNormSkipsWeightDecayAndFrozenStays) {
  auto p = init_encoder({6, 3, 8, 4}, 1, 0.1, HeadInit::Random);
  p.ln_gain.setConstant(2.0);
  p.ln_bias.setConstant(0.5);
  const auto before = p;
  TrainConfig c;
  c.weight_decay = 0.1;
  auto vel = EncoderGrads::zeros_like(p);
  sgd_step(p, EncoderGrads::zeros_like(p), c, vel);
  EXPECT_EQ(p.ln_gain, before.ln_gain);
  EXPECT_EQ(p.ln_bias, before.ln_bias);
  EXPECT_EQ(p.frozen_mlp_w, before.frozen_mlp_w);
  EXPECT_EQ(p.frozen_ln_gain, before.frozen_ln_gain);
  EXPECT_LT(p.w_down.norm(), before.w_down.norm());
  EXPECT_LT(p.head_w1.norm(), before.head_w1.norm());
}

TEST(Sgd, NonFiniteGradientIsRejected) {
  auto p = init_encoder({6, 3, 8, 4}, 1);
  auto g = EncoderGrads::zeros_like(p);
  g.w_up(0, 0) = std::nan("");
  auto vel = EncoderGrads::zeros_like(p);
  try {
    sgd_step(p, g, TrainConfig{}, vel);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
}

TEST(Pretrain, ZeroEpochsLeaveParamsAlone) {
  auto pr = small_problem(10);
  auto p = small_encoder(8);
  const auto before = p;
  auto c = small_config();
  c.stage1_epochs = 0;
  const auto log = pretrain_known({pr.fs, pr.split}, p, c);
  EXPECT_TRUE(log.steps.empty());
  EXPECT_TRUE(same_params(p, before));
}

TEST(Pretrain, LossFallsOnOverlappingClasses) {
  // Well separated classes already clear the margin at initialization.
  auto pr = small_problem(1.5, 2);
  pr.split = generate_split(pr.fs, 1.0, 1.0, 1);
  auto p = small_encoder(8);
  auto c = small_config();
  c.stage1_epochs = 30;
  c.lr = 0.05;
  const auto log = pretrain_known({pr.fs, pr.split}, p, c);
  ASSERT_FALSE(log.steps.empty());
  ASSERT_GT(log.steps.front().total, 0.0);
  auto epoch_mean = [&](std::size_t e) {
    double s = 0;
    int n = 0;
    for (const auto& r : log.steps)
      if (r.epoch == e) s += r.total, ++n;
    return s / n;
  };
  EXPECT_LT(epoch_mean(30), epoch_mean(1));
}

TEST(Pretrain, DeterministicForFixedSeed) {
  auto pr = small_problem(5);
  auto a = small_encoder(8), b = small_encoder(8);
  const auto c = small_config();
  const auto la = pretrain_known({pr.fs, pr.split}, a, c);
  const auto lb = pretrain_known({pr.fs, pr.split}, b, c);
  EXPECT_TRUE(same_params(a, b));
  EXPECT_EQ(la.rng_checkpoints, lb.rng_checkpoints);
  ASSERT_EQ(la.steps.size(), lb.steps.size());
  for (std::size_t i = 0; i < la.steps.size(); ++i) EXPECT_EQ(la.steps[i].total, lb.steps[i].total);
}

TEST(Pretrain, NeedsTwoKnownClasses) {
  auto pr = small_problem(5, 4);
  pr.split = generate_split(pr.fs, 0.25, 0.5, 1);
  auto p = small_encoder(8);
  try {
    pretrain_known({pr.fs, pr.split}, p, small_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Degenerate);
  }
}

TEST(Boundary, ZeroEpochsLeaveParamsAlone) {
  auto pr = small_problem(10);
  auto p = small_encoder(8);
  const auto before = p;
  auto c = small_config();
  c.stage2_epochs = 0;
  const auto log = optimize_boundaries({pr.fs, pr.split}, p, c);
  EXPECT_EQ(log.index_rebuilds, 0u);
  EXPECT_TRUE(same_params(p, before));
}

TEST(Boundary, FrozenBlockIsBitIdenticalAndIndexRebuiltPerEpoch) {
  auto pr = small_problem(4);
  auto p = small_encoder(8);
  Rng rng(3);
  p.frozen_mlp_w = oracle::random_matrix(8, 8, rng, 0.3);
  const auto before = p;
  auto c = small_config();
  c.stage2_epochs = 3;
  std::vector<std::size_t> hooked;
  const auto log = optimize_boundaries({pr.fs, pr.split}, p, c,
                                       [&](std::size_t e, const EncoderParams&) { hooked.push_back(e); });
  EXPECT_EQ(log.index_rebuilds, 3u);
  EXPECT_EQ(hooked, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(p.frozen_mlp_w, before.frozen_mlp_w);
  EXPECT_EQ(p.frozen_mlp_b, before.frozen_mlp_b);
  EXPECT_EQ(p.frozen_ln_gain, before.frozen_ln_gain);
  EXPECT_EQ(p.frozen_ln_bias, before.frozen_ln_bias);
  EXPECT_FALSE(same_params(p, before));
  for (const auto& s : log.steps) {
    EXPECT_TRUE(s.ucl_active);
    EXPECT_TRUE(std::isfinite(s.total));
  }
}

TEST(Boundary, DeterministicAcrossWorkerCounts) {
  auto pr = small_problem(4);
  auto a = small_encoder(8), b = small_encoder(8);
  auto c = small_config();
  optimize_boundaries({pr.fs, pr.split}, a, c);
  c.workers = 3;
  optimize_boundaries({pr.fs, pr.split}, b, c);
  EXPECT_TRUE(same_params(a, b));
}

TEST(Boundary, MismatchedViewsAreRejected) {
  auto pr = small_problem(4);
  FeatureSet views = pr.fs;
  views.features.conservativeResize(views.features.rows() - 1, Eigen::NoChange);
  views.labels.pop_back();
  auto p = small_encoder(8);
  try {
    optimize_boundaries({pr.fs, pr.split, &views}, p, small_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Batch, RowsFollowMembersThenSupervisedThenPartners) {
  auto pr = small_problem(10);
  const auto p = small_encoder(8);
  const auto index = build_affinity_index(pr.fs, pr.split, p);
  const std::vector<std::size_t> ids{pr.split.labeled_ids[0], pr.split.unlabeled_ids[0], pr.split.unlabeled_ids[1]};
  Rng rng(1);
  const auto bi = assemble_batch({pr.fs, pr.split}, ids, index, AugmentConfig{}, rng);
  ASSERT_EQ(bi.batch.members.size(), 3u);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_EQ(bi.batch.members[m].row, 2 * m);
    EXPECT_EQ(bi.batch.members[m].view_row, 2 * m + 1);
    EXPECT_EQ(bi.row_sample[2 * m], ids[m]);
    // Identity augmentation: the view equals the original row.
    EXPECT_EQ(bi.inputs.row(static_cast<Eigen::Index>(2 * m)), bi.inputs.row(static_cast<Eigen::Index>(2 * m + 1)));
  }
  ASSERT_FALSE(bi.batch.supervised.empty());
  EXPECT_EQ(bi.batch.supervised[0].row, 0u);
  EXPECT_EQ(bi.batch.supervised[0].label, pr.fs.labels[ids[0]]);
  EXPECT_EQ(bi.batch.unlabeled.size(), 2u);
  for (const auto& q : bi.batch.unlabeled) EXPECT_EQ(bi.row_sample[q.partner_row], index.nn_of[bi.row_sample[q.row]]);
  EXPECT_EQ(static_cast<std::size_t>(bi.inputs.rows()), bi.row_sample.size());
}

TEST(Defaults, OptimizerSettings) {
  const TrainConfig c;
  EXPECT_EQ(c.lr, 0.1);
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 0.00005);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Defaults, InvalidOptimizerSettings) {
  TrainConfig c;
  c.lr = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Experiment, ZeroBoundaryEpochsReportsPretrainAsFinal) {
  auto pr = small_problem(10);
  auto c = small_config();
  c.stage2_epochs = 0;
  EvalOptions o;
  const auto r = run_experiment({pr.fs, pr.split}, small_encoder(8), c, o);
  ASSERT_EQ(r.evals.size(), 1u);
  EXPECT_EQ(r.evals[0].stage, "pretrain");
  EXPECT_TRUE(r.evals[0].is_final);
  EXPECT_TRUE(same_params(r.final_params.rounded_to_f32(), r.best_params));
}

TEST(Experiment, BestCheckpointReproducesItsMetrics) {
  auto pr = small_problem(6);
  auto c = small_config();
  c.stage2_epochs = 3;
  EvalOptions o;
  const auto r = run_experiment({pr.fs, pr.split}, small_encoder(8), c, o);
  EXPECT_EQ(r.evals.size(), 4u);
  for (const auto& e : r.evals) EXPECT_LE(e.metrics.acc_new, r.best.metrics.acc_new);
  const auto again = evaluate_params(pr.fs, pr.split, r.best_params, o);
  EXPECT_EQ(again.acc_new, r.best.metrics.acc_new);
  EXPECT_EQ(again.acc_all, r.best.metrics.acc_all);
}

TEST(Experiment, InputDimensionMustMatch) {
  auto pr = small_problem(6);
  try {
    run_experiment({pr.fs, pr.split}, small_encoder(9), small_config(), EvalOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}
