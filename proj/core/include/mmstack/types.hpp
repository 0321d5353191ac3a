#pragma once

#include <Eigen/Dense>

namespace mmstack {

// Row-major so that one sample is one contiguous row, matching the on-disk
// layout of feature files.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Gathers the listed rows of `src` into a new matrix, in the given order.
template <typename IndexRange>
Matrix gather_rows(const Matrix& src, const IndexRange& rows) {
  Matrix out(static_cast<Eigen::Index>(std::size(rows)), src.cols());
  Eigen::Index r = 0;
  for (auto i : rows) out.row(r++) = src.row(static_cast<Eigen::Index>(i));
  return out;
}

}  // namespace mmstack
