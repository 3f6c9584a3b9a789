#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsgcd/types.hpp"

namespace fsgcd {

struct ClusteringResult {
  std::vector<std::int32_t> assignment;
  Matrix centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // per Lloyd iteration of the kept restart
  std::size_t iterations = 0;
};

struct KMeansOptions {
  std::size_t max_iter = 300;
  double tol = 1e-10;  // stop once every centroid moves less than this (Euclidean)
  std::size_t restarts = 10;
  std::size_t workers = 1;
};

// Greedy k-means++ seeding and Lloyd iterations; the restart with the lowest inertia
// is kept. Throws InvalidArgument when k > N or k == 0.
ClusteringResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opts = {});

double inertia(const Matrix& points, std::span<const std::int32_t> assignment, const Matrix& centroids);

struct Assignment {
  std::vector<std::size_t> row_to_col;
  double cost = 0.0;  // summed in row order
};

// Minimum-cost perfect matching on a square matrix, O(k^3).
Assignment hungarian(const Matrix& cost);

struct Metrics {
  double acc_all = 0.0;
  double acc_old = 0.0;
  double acc_new = 0.0;
  std::optional<double> ch_index;
  std::vector<std::int32_t> mapping;  // cluster id -> class id (-1 for padding)
  std::size_t count_all = 0;
  std::size_t count_old = 0;
  std::size_t count_new = 0;
};

// Hungarian-matched accuracy. OLD/NEW are computed under the one global
// mapping. When the cluster count differs from the class count the
// contingency table is zero-padded to square.
Metrics cluster_accuracy(std::span<const std::int32_t> assignment, std::span<const std::int32_t> truth,
                         std::span<const std::uint32_t> known_classes, std::size_t class_count,
                         std::size_t cluster_count);

// [Tr(B)/(k-1)] / [Tr(W)/(N-k)]. Throws Degenerate when Tr(W) == 0.
double ch_index(const Matrix& points, std::span<const std::int32_t> assignment);

// K-means with k clusters, then accuracy and CH index over the same points.
Metrics evaluate_clustering(const Matrix& points, std::span<const std::int32_t> truth,
                            std::span<const std::uint32_t> known_classes, std::size_t class_count, std::size_t k,
                            std::uint64_t seed, const KMeansOptions& opts = {});

nlohmann::json metrics_to_json(const Metrics& m);

}  // namespace fsgcd
