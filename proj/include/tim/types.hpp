#pragma once

#include <Eigen/Dense>

namespace tim {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Scalar used by the model and training stack. Gradient verification
/// assumes double precision throughout.
using Real = double;

using Mat = MatX<Real>;
using Vec = VecX<Real>;
using Row = RowX<Real>;

using Index = Eigen::Index;

}  // namespace tim
