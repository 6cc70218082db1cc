#pragma once

#include <Eigen/Dense>

namespace w2sd {

/// Batches are row-per-sample; parameter matrices are (out x in).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

}  // namespace w2sd
