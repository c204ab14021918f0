#pragma once

#include <vector>

#include <Eigen/Dense>

#include "geca/tensor.hpp"

namespace geca {

/// Unbiased squared MMD with the cubic polynomial kernel (x.y/d + 1)^3,
/// scaled by 1e3. Rows are samples. With equal set sizes rows are paired
/// (x_i, y_i) and the one-sample U-statistic over i != j is used, which is
/// exactly zero for identical sets; otherwise the two-sample estimator with
/// within-set diagonals removed.
double mmd_score(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synthetic);

/// Block-average pooling of each [H x W x C] image to grid x grid x C,
/// flattened to one row per image. H and W must be divisible by `grid`.
Eigen::MatrixXd pooled_features(const std::vector<TensorF>& images, Index grid = 8);

}  // namespace geca
