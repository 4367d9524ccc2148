#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

namespace embshap {

/// Row-major so that one embedding (or one batch input) is a contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Seed = std::uint64_t;

inline constexpr const char* kToolVersion = "0.3.1";

}  // namespace embshap
