#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "fsgcd/encoder.hpp"
#include "fsgcd/error.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace fsgcd;

namespace {

EncoderParams random_params(const EncoderShape& shape, Rng& rng) {
  auto p = init_encoder(shape, rng(), 0.1, HeadInit::Random);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto t : p.tensors())
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] += n(rng);
  return p;
}

// Scalar loops over the block definition, no matrix products.
std::vector<double> block_by_hand(const std::vector<double>& v, const EncoderParams& p) {
  const std::size_t D = v.size(), B = p.bottleneck_dim();
  double mean = 0, var = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(D);
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(D);
  std::vector<double> z(D);
  for (std::size_t d = 0; d < D; ++d) z[d] = (v[d] - mean) / std::sqrt(var + p.ln_eps);

  std::vector<double> hid(B, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0;
    for (std::size_t d = 0; d < D; ++d) s += (z[d] * p.ln_gain[d] + p.ln_bias[d]) * p.w_down(d, b);
    hid[b] = s > 0 ? s : 0;
  }
  std::vector<double> out(D);
  for (std::size_t e = 0; e < D; ++e) {
    double ad = 0, fr = p.frozen_mlp_b[e];
    for (std::size_t b = 0; b < B; ++b) ad += hid[b] * p.w_up(b, e);
    for (std::size_t d = 0; d < D; ++d) fr += (z[d] * p.frozen_ln_gain[d] + p.frozen_ln_bias[d]) * p.frozen_mlp_w(d, e);
    out[e] = fr + v[e] + p.scale * ad;
  }
  return out;
}

std::vector<double> embed_by_hand(const std::vector<double>& v, const EncoderParams& p) {
  const auto blk = block_by_hand(v, p);
  const std::size_t H = p.head_hidden(), E = p.embed_dim();
  std::vector<double> h(H), o(E);
  for (std::size_t j = 0; j < H; ++j) {
    double s = p.head_b1[j];
    for (std::size_t d = 0; d < blk.size(); ++d) s += blk[d] * p.head_w1(d, j);
    h[j] = s > 0 ? s : 0;
  }
  double norm = 0;
  for (std::size_t e = 0; e < E; ++e) {
    double s = p.head_b2[e];
    for (std::size_t j = 0; j < H; ++j) s += h[j] * p.head_w2(j, e);
    o[e] = s;
    norm += s * s;
  }
  for (auto& x : o) x /= std::sqrt(norm);
  return o;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST(Adapter, ZeroDownProjectionSilencesAdapter) {
  Rng rng(1);
  auto p = random_params({6, 3, 8, 4}, rng);
  p.w_down.setZero();
  const std::vector<double> v{0.3, -1, 2, 0.5, 0.1, -0.7};
  auto q = p;
  q.scale = 0.0;
  EXPECT_EQ(adapter_forward(v, p), adapter_forward(v, q));
}

TEST(Adapter, ZeroScaleIgnoresAdapterWeights) {
  Rng rng(2);
  auto p = random_params({6, 3, 8, 4}, rng);
  p.scale = 0.0;
  const std::vector<double> v{1, 2, -3, 0.5, 4, -1};
  const auto before = adapter_forward(v, p);
  p.w_down *= 17.0;
  p.w_up.setRandom();
  EXPECT_EQ(adapter_forward(v, p), before);
}

TEST(Adapter, MatchesStraightLineEvaluation) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const EncoderShape shape{7, 3, 10, 5};
    auto p = random_params(shape, rng);
    const auto v = to_std(oracle::random_matrix(1, 7, rng).row(0).transpose());
    const auto got = adapter_forward(v, p);
    const auto want = block_by_hand(v, p);
    for (std::size_t d = 0; d < want.size(); ++d)
      EXPECT_LE(oracle::rel_err(got[static_cast<Eigen::Index>(d)], want[d], 1e-300), 1e-12);
    const auto e = encode(v, p);
    const auto we = embed_by_hand(v, p);
    for (std::size_t d = 0; d < we.size(); ++d) EXPECT_NEAR(e[static_cast<Eigen::Index>(d)], we[d], 1e-12);
  }
}

TEST(Adapter, LayerNormHasZeroMeanUnitVariance) {
  Rng rng(4);
  const Matrix x = oracle::random_matrix(20, 9, rng, 5.0);
  const Matrix z = layer_norm_normalize(x, 1e-10);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    EXPECT_NEAR(z.row(i).mean(), 0.0, 1e-9);
    EXPECT_NEAR((z.row(i).array() - z.row(i).mean()).square().mean(), 1.0, 1e-9);
  }
}

TEST(Adapter, DimensionMismatchIsShapeError) {
  auto p = init_encoder({6, 3, 8, 4}, 1);
  const std::vector<double> v{1, 2, 3};
  EXPECT_THROW(adapter_forward(v, p), Error);
  try {
    encode(v, p);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Encode, UnitNormAndDeterministic) {
  Rng rng(5);
  auto p = random_params({8, 4, 16, 256}, rng);
  const Matrix x = oracle::random_matrix(30, 8, rng);
  const Matrix a = encode(x, p);
  const Matrix b = encode(x, p);
  EXPECT_EQ(a, b);
  for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a.row(i).norm(), 1.0, 1e-12);
  EXPECT_EQ(a.cols(), 256);
}

TEST(Encode, ScalingFinalHeadLayerLeavesEmbeddingUnchanged) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_params({6, 3, 8, 5}, rng);
    const Matrix x = oracle::random_matrix(4, 6, rng);
    const Matrix a = encode(x, p);
    const double c = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
    p.head_w2 *= c;
    p.head_b2 *= c;
    EXPECT_LE((encode(x, p) - a).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Encode, ZeroHeadOutputIsDegenerate) {
  auto p = init_encoder({6, 3, 8, 4}, 1);
  p.head_w2.setZero();
  p.head_b2.setZero();
  try {
    encode(std::vector<double>{1, 2, 3, 4, 5, 6}, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Degenerate);
  }
}

TEST(Encode, MirroredHeadPreservesGeometry) {
  // With the adapter silent and an identity frozen block the untrained head
  // is a linear map with orthonormal columns, so cosine structure between
  // block outputs survives up to the final normalization.
  auto p = init_encoder({8, 4, 16, 32}, 9);
  Rng rng(9);
  const Matrix x = oracle::random_matrix(5, 8, rng);
  const Matrix blk = adapter_forward(x, p);
  const Matrix e = encode(x, p);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 5; ++j)
      EXPECT_NEAR(e.row(i).dot(e.row(j)), blk.row(i).dot(blk.row(j)) / (blk.row(i).norm() * blk.row(j).norm()), 1e-10);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(7);
  auto p = random_params({6, 3, 8, 5}, rng);
  const Matrix x = oracle::random_matrix(4, 6, rng);
  auto g = encode_backward(x, p, Matrix::Zero(4, 5));
  for (const auto& t : g.tensors(true))
    for (Eigen::Index i = 0; i < t.size(); ++i) EXPECT_EQ(t.data[i], 0.0) << t.name;
}

TEST(Backward, FrozenTensorsHaveNoGradientSlot) {
  auto p = init_encoder({6, 3, 8, 5}, 1);
  auto g = EncoderGrads::zeros_like(p);
  for (const auto& t : g.tensors(true)) EXPECT_EQ(t.name.find("frozen"), std::string::npos) << t.name;
  for (const auto& t : p.tensors())
    if (t.name.find("frozen") != std::string::npos) EXPECT_FALSE(t.trainable) << t.name;
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) EXPECT_LE(gradcheck::encoder(rng), 1e-4) << "trial " << trial;
}

TEST(Backward, TrainableScaleGradient) {
  Rng rng(10);
  auto p = random_params({6, 3, 8, 5}, rng);
  p.train_scale = true;
  const Matrix x = oracle::random_matrix(3, 6, rng);
  const Matrix up = oracle::random_matrix(3, 5, rng);
  auto g = encode_backward(x, p, up);
  auto f = [&] { return (encode(x, p).array() * up.array()).sum(); };
  EXPECT_LE(oracle::rel_err(g.scale, oracle::central_diff(f, &p.scale), 1e-5), 1e-4);
}

TEST(Params, TrainableCountBelowOneFrozenBlock) {
  const auto p = init_encoder({768, 64, 2048, 256}, 1);
  const std::size_t adapter = 2 * 768 * 64 + 2 * 768;
  EXPECT_EQ(p.adapter_trainable_count(), adapter);
  EXPECT_LT(p.adapter_trainable_count(), 768u * 768u);
}

TEST(Checkpoint, RoundTripStoresFloat32) {
  Rng rng(11);
  auto p = random_params({6, 3, 8, 5}, rng);
  std::stringstream buf;
  save_checkpoint(p, buf);
  const auto back = load_checkpoint(buf);
  const auto want = p.rounded_to_f32();
  EXPECT_EQ(back.w_down, want.w_down);
  EXPECT_EQ(back.head_w2, want.head_w2);
  EXPECT_EQ(back.frozen_mlp_w, want.frozen_mlp_w);
  EXPECT_EQ(back.scale, want.scale);
  std::stringstream again;
  save_checkpoint(back, again);
  EXPECT_EQ(again.str(), [&] {
    std::stringstream s;
    save_checkpoint(p, s);
    return s.str();
  }());
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream buf("NOTACHECKPOINT");
  try {
    load_checkpoint(buf);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
  }
}

TEST(Init, BottleneckMustBeNarrower) {
  EXPECT_THROW(init_encoder({8, 8, 16, 4}, 1), Error);
  EXPECT_THROW(init_encoder({8, 4, 15, 4}, 1, 0.1, HeadInit::Mirrored), Error);
  EXPECT_NO_THROW(init_encoder({8, 4, 15, 4}, 1, 0.1, HeadInit::Random));
}
