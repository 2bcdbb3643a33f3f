#pragma once

#include <Eigen/Dense>

namespace stutternet {

/// Row-major dynamic matrix; rows are frames (or batch items), columns channels.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

}  // namespace stutternet
