#pragma once

#include <Eigen/Dense>

namespace cmcr {

// Compute path is 64-bit throughout; storage on disk is 32-bit.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace cmcr
