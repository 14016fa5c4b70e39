#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <utility>

namespace netfilt {

using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

/// Undirected agent pair, stored with first < second once normalised.
using Edge = std::pair<Index, Index>;

}  // namespace netfilt
