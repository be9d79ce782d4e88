#pragma once

#include <Eigen/Core>

namespace divmix {

/// Row-major single-channel image; rows are image rows (height), columns are
/// image columns (width).
template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Canonical working image: intensities in [0, 1].
using GrayImage = Image<double>;

}  // namespace divmix
