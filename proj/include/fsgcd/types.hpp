#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace fsgcd {

// Row-major so that each sample (or embedding) is a contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Rng = std::mt19937_64;

inline constexpr std::int32_t kNoLabel = -1;

}  // namespace fsgcd
