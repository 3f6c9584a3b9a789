#include <gtest/gtest.h>

#include <numeric>

#include "fsgcd/error.hpp"
#include "fsgcd/eval.hpp"
#include "oracles.hpp"

using namespace fsgcd;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

std::vector<int> to_int(const std::vector<std::int32_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(KMeans, DuplicatePairsAreRecoveredExactly) {
  Matrix x(4, 2);
  x << 0, 0, 0, 0, 50, 50, 50, 50;
  const auto r = kmeans(x, 2, 1);
  EXPECT_EQ(r.inertia, 0.0);
  EXPECT_EQ(r.assignment[0], r.assignment[1]);
  EXPECT_EQ(r.assignment[2], r.assignment[3]);
  EXPECT_NE(r.assignment[0], r.assignment[2]);
  EXPECT_EQ(r.centroids.row(r.assignment[0]), x.row(0));
  EXPECT_EQ(r.centroids.row(r.assignment[2]), x.row(2));
}

TEST(KMeans, SingleClusterIsTheMean) {
  Rng rng(1);
  const Matrix x = oracle::random_matrix(17, 3, rng);
  const auto r = kmeans(x, 1, 5);
  EXPECT_LE((r.centroids.row(0) - x.colwise().mean()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(KMeans, MatchesExhaustiveOptimumOnSmallInstances) {
  Rng rng(2);
  int hits = 0, trials = 200;
  for (int t = 0; t < trials; ++t) {
    const std::size_t n = 4 + rng() % 9;
    const int k = 2 + static_cast<int>(rng() % 2);
    const Matrix x = oracle::random_matrix(n, 2, rng);
    const double best = oracle::exhaustive_kmeans(x, k);
    const auto r = kmeans(x, static_cast<std::size_t>(k), rng());
    EXPECT_GE(r.inertia, best - 1e-9);
    if (std::abs(r.inertia - best) <= 1e-9 * std::max(1.0, best))
      ++hits;
    else
      std::printf("k-means missed optimum: trial %d n=%zu k=%d got %.12g best %.12g\n", t, n, k, r.inertia, best);
  }
  EXPECT_GE(hits, static_cast<int>(0.95 * trials));
}

TEST(KMeans, InertiaNeverIncreasesAcrossIterations) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Matrix x = oracle::random_matrix(80, 3, rng);
    KMeansOptions o;
    o.restarts = 1;
    const auto r = kmeans(x, 6, rng(), o);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] * (1 + 1e-12));
    for (auto a : r.assignment) EXPECT_LT(a, 6);
    EXPECT_NEAR(r.inertia, inertia(x, r.assignment, r.centroids), 1e-9);
  }
}

TEST(KMeans, DeterministicPerSeedAndWorkerCount) {
  Rng rng(4);
  const Matrix x = oracle::random_matrix(300, 4, rng);
  KMeansOptions one, four;
  four.workers = 4;
  const auto a = kmeans(x, 7, 99, one);
  const auto b = kmeans(x, 7, 99, four);
  EXPECT_EQ(a.assignment, b.assignment);
  EXPECT_EQ(a.inertia, b.inertia);
}

TEST(KMeans, TooManyClustersIsRejected) {
  const Matrix x = Matrix::Zero(3, 2);
  EXPECT_EQ(code_of([&] { kmeans(x, 4, 1); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { kmeans(x, 0, 1); }), ErrorCode::InvalidArgument);
}

TEST(Hungarian, DiagonalDominance) {
  Matrix c(2, 2);
  c << 1, 2, 2, 1;
  const auto a = hungarian(c);
  EXPECT_EQ(a.row_to_col, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(a.cost, 2.0);
}

TEST(Hungarian, HiddenZeroPermutation) {
  Matrix c = Matrix::Constant(5, 5, 3.0);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  for (std::size_t r = 0; r < 5; ++r) c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(perm[r])) = 0.0;
  const auto a = hungarian(c);
  EXPECT_EQ(a.cost, 0.0);
  EXPECT_EQ(a.row_to_col, perm);
}

TEST(Hungarian, MatchesPermutationBruteForce) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 1 + t % 7;
    Matrix c = oracle::random_matrix(k, k, rng, 10.0);
    // Integer costs make ties common, which exercises tie handling.
    if (t % 2 == 0) c = c.array().round();
    const auto [best, perm] = oracle::brute_assignment(c);
    const auto a = hungarian(c);
    EXPECT_EQ(a.cost, best) << "matrix " << t;
    double recomputed = 0;
    for (std::size_t r = 0; r < k; ++r) recomputed += c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(a.row_to_col[r]));
    EXPECT_EQ(recomputed, a.cost);
  }
}

TEST(Hungarian, NeverWorseThanRandomPermutations) {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    const std::size_t k = 10 + rng() % 41;
    const Matrix c = oracle::random_matrix(k, k, rng);
    const auto a = hungarian(c);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (int p = 0; p < 1000; ++p) {
      std::shuffle(perm.begin(), perm.end(), rng);
      double s = 0;
      for (std::size_t r = 0; r < k; ++r) s += c(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(perm[r]));
      ASSERT_LE(a.cost, s + 1e-9);
    }
  }
}

TEST(Hungarian, RejectsBadInput) {
  EXPECT_EQ(code_of([] { hungarian(Matrix::Zero(2, 3)); }), ErrorCode::ShapeMismatch);
  Matrix c = Matrix::Zero(2, 2);
  c(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_EQ(code_of([&] { hungarian(c); }), ErrorCode::NonFinite);
}

TEST(Accuracy, PermutedPredictionsArePerfect) {
  const std::vector<std::int32_t> truth{0, 0, 1, 1, 2, 2, 3};
  const std::vector<std::int32_t> pred{2, 2, 0, 0, 3, 3, 1};
  const std::vector<std::uint32_t> known{0, 1};
  const auto m = cluster_accuracy(pred, truth, known, 4, 4);
  EXPECT_EQ(m.acc_all, 1.0);
  EXPECT_EQ(m.acc_old, 1.0);
  EXPECT_EQ(m.acc_new, 1.0);
  EXPECT_EQ(m.mapping, (std::vector<std::int32_t>{1, 3, 0, 2}));
}

TEST(Accuracy, OneClusterOnBalancedClasses) {
  std::vector<std::int32_t> truth, pred;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 5; ++i) {
      truth.push_back(c);
      pred.push_back(0);
    }
  const std::vector<std::uint32_t> known{0};
  EXPECT_EQ(cluster_accuracy(pred, truth, known, 4, 4).acc_all, 0.25);
}

TEST(Accuracy, MatchesBruteForceAndIsRelabelInvariant) {
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const int k = 2 + static_cast<int>(rng() % 5);
    const std::size_t n = 5 + rng() % 40;
    std::vector<std::int32_t> truth(n), pred(n);
    for (auto& v : truth) v = static_cast<std::int32_t>(rng() % static_cast<unsigned>(k));
    for (auto& v : pred) v = static_cast<std::int32_t>(rng() % static_cast<unsigned>(k));
    const std::vector<std::uint32_t> known{0};
    const auto m = cluster_accuracy(pred, truth, known, static_cast<std::size_t>(k), static_cast<std::size_t>(k));
    EXPECT_DOUBLE_EQ(m.acc_all, oracle::brute_accuracy(to_int(pred), to_int(truth), k));

    // Relabel the clusters: same accuracy.
    std::vector<std::int32_t> relabel(static_cast<std::size_t>(k));
    std::iota(relabel.begin(), relabel.end(), 0);
    std::shuffle(relabel.begin(), relabel.end(), rng);
    auto moved = pred;
    for (auto& v : moved) v = relabel[static_cast<std::size_t>(v)];
    EXPECT_EQ(cluster_accuracy(moved, truth, known, static_cast<std::size_t>(k), static_cast<std::size_t>(k)).acc_all,
              m.acc_all);

    // Relabel the classes (carrying the known set along): same accuracy.
    auto truth2 = truth;
    for (auto& v : truth2) v = relabel[static_cast<std::size_t>(v)];
    const std::vector<std::uint32_t> known2{static_cast<std::uint32_t>(relabel[0])};
    const auto m2 = cluster_accuracy(pred, truth2, known2, static_cast<std::size_t>(k), static_cast<std::size_t>(k));
    EXPECT_EQ(m2.acc_all, m.acc_all);
    EXPECT_EQ(m2.count_old, m.count_old);
  }
}

TEST(Accuracy, OldAndNewShareOneMapping) {
  // Clusters 0 and 1 each hold a known and a new sample. A per-subset
  // matching would score both subsets perfectly; the global one cannot.
  const std::vector<std::int32_t> truth{0, 1, 0, 1};
  const std::vector<std::int32_t> pred{0, 0, 1, 1};
  const std::vector<std::uint32_t> known{0};
  const auto m = cluster_accuracy(pred, truth, known, 2, 2);
  EXPECT_EQ(m.acc_all, 0.5);
  EXPECT_EQ(m.acc_old + m.acc_new, 1.0);
}

TEST(Accuracy, PaddedWhenClusterCountDiffers) {
  const std::vector<std::int32_t> truth{0, 0, 1, 1, 2, 2};
  const std::vector<std::int32_t> pred{0, 0, 1, 1, 1, 1};
  const std::vector<std::uint32_t> known{0};
  const auto m = cluster_accuracy(pred, truth, known, 3, 2);
  EXPECT_NEAR(m.acc_all, 4.0 / 6.0, 1e-15);
  EXPECT_EQ(m.mapping.size(), 2u);
  const auto wide = cluster_accuracy(std::vector<std::int32_t>{0, 1, 2, 3}, std::vector<std::int32_t>{0, 0, 1, 1},
                                     known, 2, 4);
  EXPECT_EQ(wide.acc_all, 0.5);
  EXPECT_EQ(std::count(wide.mapping.begin(), wide.mapping.end(), -1), 2);
}

TEST(CalinskiHarabasz, TwoOneDimensionalClusters) {
  Matrix x(4, 1);
  x << 0, 0.1, 10, 10.1;
  const std::vector<std::int32_t> a{0, 0, 1, 1};
  // Means 0.05 and 10.05 around 5.05: B = 4 * 25 = 100, W = 4 * 0.0025 = 0.01.
  const double direct = (100.0 / 1.0) / (0.01 / 2.0);
  EXPECT_LE(oracle::rel_err(ch_index(x, a), direct, 1e-300), 1e-9);
  EXPECT_LE(oracle::rel_err(ch_index(x, a), oracle::direct_ch(x, to_int(a)), 1e-300), 1e-12);
}

TEST(CalinskiHarabasz, MatchesDirectFormulaAndIsInvariant) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 6 + rng() % 60, d = 1 + rng() % 6;
    const int k = 2 + static_cast<int>(rng() % std::min<std::size_t>(5, n - 2));
    const Matrix x = oracle::random_matrix(n, d, rng);
    std::vector<std::int32_t> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = static_cast<std::int32_t>(i < static_cast<std::size_t>(k) ? i : rng() % static_cast<unsigned>(k));
    const double ch = ch_index(x, a);
    EXPECT_LE(oracle::rel_err(ch, oracle::direct_ch(x, to_int(a)), 1e-300), 1e-9);

    const Matrix q = Eigen::HouseholderQR<Matrix>(oracle::random_matrix(d, d, rng)).householderQ();
    const RowVector shift = oracle::random_matrix(1, d, rng, 100.0).row(0);
    const double s = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
    EXPECT_LE(oracle::rel_err(ch_index(x * q, a), ch, 1e-300), 1e-9);
    EXPECT_LE(oracle::rel_err(ch_index(x.rowwise() + shift, a), ch, 1e-300), 1e-9);
    EXPECT_LE(oracle::rel_err(ch_index(x * s, a), ch, 1e-300), 1e-9);
  }
}

TEST(CalinskiHarabasz, Preconditions) {
  Matrix x(3, 1);
  x << 0, 1, 2;
  EXPECT_EQ(code_of([&] { ch_index(x, std::vector<std::int32_t>{0, 1, 2}); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { ch_index(x, std::vector<std::int32_t>{0, 0, 0}); }), ErrorCode::InvalidArgument);
  Matrix y(4, 1);
  y << 0, 0, 5, 5;
  EXPECT_EQ(code_of([&] { ch_index(y, std::vector<std::int32_t>{0, 0, 1, 1}); }), ErrorCode::Degenerate);
}

TEST(Metrics, JsonCarriesEveryField) {
  Metrics m;
  m.acc_all = 0.5;
  m.ch_index = 3.0;
  m.mapping = {1, 0};
  const auto j = metrics_to_json(m);
  for (const char* key : {"acc_all", "acc_old", "acc_new", "ch_index", "mapping"}) EXPECT_TRUE(j.contains(key)) << key;
  m.ch_index.reset();
  EXPECT_TRUE(metrics_to_json(m)["ch_index"].is_null());
}

TEST(Evaluate, SeparatedBlobsScorePerfectly) {
  Rng rng(9);
  Matrix x(60, 2);
  std::vector<std::int32_t> truth(60);
  for (int i = 0; i < 60; ++i) {
    const int c = i / 20;
    x(i, 0) = 100.0 * c + std::normal_distribution<double>(0, 1)(rng);
    x(i, 1) = -50.0 * c + std::normal_distribution<double>(0, 1)(rng);
    truth[static_cast<std::size_t>(i)] = c;
  }
  const std::vector<std::uint32_t> known{0};
  const auto m = evaluate_clustering(x, truth, known, 3, 3, 1);
  EXPECT_EQ(m.acc_all, 1.0);
  ASSERT_TRUE(m.ch_index.has_value());
  EXPECT_GT(*m.ch_index, 100.0);
}
