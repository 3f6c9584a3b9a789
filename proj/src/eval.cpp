#include "fsgcd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "fsgcd/error.hpp"
#include "fsgcd/parallel.hpp"

namespace fsgcd {

namespace {

// Nearest centroid per point (lowest index on ties); returns total squared distance.
double assign_points(const Matrix& points, const Matrix& centroids, std::vector<std::int32_t>& assignment,
                     std::vector<double>& dist, std::size_t workers) {
  const auto n = static_cast<std::size_t>(points.rows());
  assignment.resize(n);
  dist.resize(n);
  parallel_for(n, workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::int32_t best_c = 0;
      for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d = (points.row(static_cast<Eigen::Index>(i)) - centroids.row(c)).squaredNorm();
        if (d < best) {
          best = d;
          best_c = static_cast<std::int32_t>(c);
        }
      }
      assignment[i] = best_c;
      dist[i] = best;
    }
  });
  double total = 0.0;
  for (double d : dist) total += d;
  return total;
}

// Greedy k-means++: each new center is the best of 2 + floor(ln k) D^2-weighted
// draws, judged by the potential it leaves behind.
Matrix seed_plus_plus(const Matrix& points, std::size_t k, Rng& rng) {
  const auto n = static_cast<std::size_t>(points.rows());
  Matrix centroids(static_cast<Eigen::Index>(k), points.cols());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  auto row = [&](std::size_t i) { return points.row(static_cast<Eigen::Index>(i)); };

  centroids.row(0) = row(pick(rng));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (row(i) - centroids.row(0)).squaredNorm();
  std::vector<double> cand_d2(n);
  std::vector<double> best_d2(n);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) total += d;
    std::size_t best = 0;
    double best_pot = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
      std::size_t chosen = n - 1;
      if (total <= 0.0) {
        chosen = pick(rng);
      } else {
        const double target = unit(rng) * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc > target) {
            chosen = i;
            break;
          }
        }
      }
      double pot = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cand_d2[i] = std::min(d2[i], (row(i) - row(chosen)).squaredNorm());
        pot += cand_d2[i];
      }
      if (pot < best_pot) {
        best_pot = pot;
        best = chosen;
        best_d2.swap(cand_d2);
      }
    }
    centroids.row(static_cast<Eigen::Index>(c)) = row(best);
    d2.swap(best_d2);
    best_d2.resize(n);
  }
  return centroids;
}

ClusteringResult lloyd(const Matrix& points, Matrix centroids, const KMeansOptions& opts) {
  const auto n = static_cast<std::size_t>(points.rows());
  const auto k = centroids.rows();
  ClusteringResult res;
  std::vector<double> dist;
  for (std::size_t iter = 0; iter < opts.max_iter; ++iter) {
    res.inertia_history.push_back(assign_points(points, centroids, res.assignment, dist, opts.workers));
    ++res.iterations;

    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(res.assignment[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(res.assignment[i])];
    }
    // An empty cluster takes over the point farthest from its current centroid.
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(res.assignment[i])] > 1 && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      const auto old = res.assignment[far];
      sums.row(old) -= points.row(static_cast<Eigen::Index>(far));
      --counts[static_cast<std::size_t>(old)];
      sums.row(c) = points.row(static_cast<Eigen::Index>(far));
      counts[static_cast<std::size_t>(c)] = 1;
      res.assignment[far] = static_cast<std::int32_t>(c);
      dist[far] = 0.0;
    }
    Matrix next(k, points.cols());
    for (Eigen::Index c = 0; c < k; ++c) next.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    const double shift = (next - centroids).rowwise().norm().maxCoeff();
    centroids = std::move(next);
    if (shift < opts.tol) break;
  }
  res.inertia = assign_points(points, centroids, res.assignment, dist, opts.workers);
  res.inertia_history.push_back(res.inertia);
  res.centroids = std::move(centroids);
  return res;
}

}  // namespace

ClusteringResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opts) {
  const auto n = static_cast<std::size_t>(points.rows());
  require(k >= 1, ErrorCode::InvalidArgument, "k must be >= 1");
  require(k <= n, ErrorCode::InvalidArgument,
          "k = " + std::to_string(k) + " exceeds the number of points " + std::to_string(n));
  require(points.allFinite(), ErrorCode::NonFinite, "non-finite points passed to kmeans");
  Rng rng(seed);
  ClusteringResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opts.restarts); ++r) {
    auto res = lloyd(points, seed_plus_plus(points, k, rng), opts);
    if (res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

double inertia(const Matrix& points, std::span<const std::int32_t> assignment, const Matrix& centroids) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    total += (points.row(static_cast<Eigen::Index>(i)) - centroids.row(assignment[i])).squaredNorm();
  return total;
}

Assignment hungarian(const Matrix& cost) {
  require(cost.rows() == cost.cols(), ErrorCode::ShapeMismatch, "hungarian needs a square cost matrix");
  require(cost.allFinite(), ErrorCode::NonFinite, "hungarian cost matrix contains non-finite values");
  const auto n = static_cast<std::size_t>(cost.rows());
  Assignment out;
  if (n == 0) return out;

  // Shortest augmenting paths with row/column potentials; index 0 is a sentinel.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t row0 = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t col = 1; col <= n; ++col) {
        if (used[col]) continue;
        const double cur = cost(static_cast<Eigen::Index>(row0 - 1), static_cast<Eigen::Index>(col - 1)) - u[row0] - v[col];
        if (cur < minv[col]) {
          minv[col] = cur;
          way[col] = col0;
        }
        if (minv[col] < delta) {
          delta = minv[col];
          col1 = col;
        }
      }
      for (std::size_t col = 0; col <= n; ++col) {
        if (used[col]) {
          u[match[col]] += delta;
          v[col] -= delta;
        } else {
          minv[col] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  out.row_to_col.assign(n, 0);
  for (std::size_t col = 1; col <= n; ++col) out.row_to_col[match[col] - 1] = col - 1;
  for (std::size_t r = 0; r < n; ++r) out.cost += cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(out.row_to_col[r]));
  return out;
}

Metrics cluster_accuracy(std::span<const std::int32_t> assignment, std::span<const std::int32_t> truth,
                         std::span<const std::uint32_t> known_classes, std::size_t class_count,
                         std::size_t cluster_count) {
  require(assignment.size() == truth.size(), ErrorCode::ShapeMismatch, "assignment and truth sizes differ");
  require(class_count >= 1 && cluster_count >= 1, ErrorCode::InvalidArgument, "class and cluster counts must be >= 1");
  const std::size_t k = std::max(class_count, cluster_count);
  Matrix counts = Matrix::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(assignment[i] >= 0 && static_cast<std::size_t>(assignment[i]) < cluster_count, ErrorCode::InvalidArgument,
            "cluster id out of range at sample " + std::to_string(i));
    require(truth[i] >= 0 && static_cast<std::size_t>(truth[i]) < class_count, ErrorCode::InvalidArgument,
            "true class out of range at sample " + std::to_string(i));
    counts(assignment[i], truth[i]) += 1.0;
  }
  const double top = counts.size() == 0 ? 0.0 : counts.maxCoeff();
  const Assignment match = hungarian(Matrix(Matrix::Constant(counts.rows(), counts.cols(), top) - counts));

  Metrics m;
  m.mapping.assign(cluster_count, -1);
  for (std::size_t c = 0; c < cluster_count; ++c)
    if (match.row_to_col[c] < class_count) m.mapping[c] = static_cast<std::int32_t>(match.row_to_col[c]);

  const std::set<std::uint32_t> known(known_classes.begin(), known_classes.end());
  std::size_t hit_all = 0, hit_old = 0, hit_new = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool hit = m.mapping[static_cast<std::size_t>(assignment[i])] == truth[i];
    const bool old = known.count(static_cast<std::uint32_t>(truth[i])) != 0;
    ++m.count_all;
    hit_all += hit;
    if (old) {
      ++m.count_old;
      hit_old += hit;
    } else {
      ++m.count_new;
      hit_new += hit;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  m.acc_all = ratio(hit_all, m.count_all);
  m.acc_old = ratio(hit_old, m.count_old);
  m.acc_new = ratio(hit_new, m.count_new);
  return m;
}

double ch_index(const Matrix& points, std::span<const std::int32_t> assignment) {
  const auto n = static_cast<std::size_t>(points.rows());
  require(assignment.size() == n, ErrorCode::ShapeMismatch, "assignment size does not match point count");
  std::vector<std::int32_t> ids(assignment.begin(), assignment.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const std::size_t k = ids.size();
  require(k >= 2, ErrorCode::InvalidArgument, "CH index needs at least 2 clusters");
  require(n > k, ErrorCode::InvalidArgument,
          "CH index needs more points than clusters (N=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
  require(ids.front() >= 0, ErrorCode::InvalidArgument, "negative cluster id");

  const auto max_id = static_cast<Eigen::Index>(ids.back()) + 1;
  Matrix sums = Matrix::Zero(max_id, points.cols());
  std::vector<double> counts(static_cast<std::size_t>(max_id), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    sums.row(assignment[i]) += points.row(static_cast<Eigen::Index>(i));
    counts[static_cast<std::size_t>(assignment[i])] += 1.0;
  }
  const RowVector mean = points.colwise().mean();
  double between = 0.0;
  Matrix centroids = Matrix::Zero(max_id, points.cols());
  for (Eigen::Index c = 0; c < max_id; ++c) {
    const double cnt = counts[static_cast<std::size_t>(c)];
    if (cnt == 0.0) continue;
    centroids.row(c) = sums.row(c) / cnt;
    between += cnt * (centroids.row(c) - mean).squaredNorm();
  }
  double within = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    within += (points.row(static_cast<Eigen::Index>(i)) - centroids.row(assignment[i])).squaredNorm();
  require(within > 0.0, ErrorCode::Degenerate, "CH index is infinite: within-cluster dispersion is zero");
  return (between / static_cast<double>(k - 1)) / (within / static_cast<double>(n - k));
}

Metrics evaluate_clustering(const Matrix& points, std::span<const std::int32_t> truth,
                            std::span<const std::uint32_t> known_classes, std::size_t class_count, std::size_t k,
                            std::uint64_t seed, const KMeansOptions& opts) {
  const auto clusters = kmeans(points, k, seed, opts);
  Metrics m = cluster_accuracy(clusters.assignment, truth, known_classes, class_count, k);
  try {
    m.ch_index = ch_index(points, clusters.assignment);
  } catch (const Error&) {
    m.ch_index.reset();
  }
  return m;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json j;
  j["acc_all"] = m.acc_all;
  j["acc_old"] = m.acc_old;
  j["acc_new"] = m.acc_new;
  j["ch_index"] = m.ch_index ? nlohmann::json(*m.ch_index) : nlohmann::json(nullptr);
  j["mapping"] = m.mapping;
  return j;
}

}  // namespace fsgcd
