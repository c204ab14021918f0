#include "geca/mmd.hpp"

#include "geca/errors.hpp"

namespace geca {

namespace {

Eigen::MatrixXd poly_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double inv_d = 1.0 / static_cast<double>(a.cols());
  return ((a * b.transpose()).array() * inv_d + 1.0).cube().matrix();
}

}  // namespace

double mmd_score(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synthetic) {
  if (real.rows() < 2 || synthetic.rows() < 2) throw InputError("mmd_score needs at least 2 samples per set");
  if (real.cols() != synthetic.cols() || real.cols() == 0) throw DimensionError("mmd_score: feature widths differ");
  const Eigen::MatrixXd kxx = poly_kernel(real, real);
  const Eigen::MatrixXd kyy = poly_kernel(synthetic, synthetic);
  const Eigen::MatrixXd kxy = poly_kernel(real, synthetic);
  const auto m = static_cast<double>(real.rows()), n = static_cast<double>(synthetic.rows());
  const double sxx = kxx.sum() - kxx.trace(), syy = kyy.sum() - kyy.trace();
  double mmd2 = 0.0;
  if (real.rows() == synthetic.rows()) {
    // h_ij = k(x_i,x_j) + k(y_i,y_j) - k(x_i,y_j) - k(x_j,y_i), averaged over i != j
    const double sxy = kxy.sum() - kxy.trace();
    mmd2 = (sxx + syy - 2.0 * sxy) / (m * (m - 1.0));
  } else {
    mmd2 = sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * kxy.sum() / (m * n);
  }
  return 1e3 * mmd2;
}

Eigen::MatrixXd pooled_features(const std::vector<TensorF>& images, Index grid) {
  if (images.empty()) throw InputError("no images to featurise");
  const Index h = images[0].dim(0), w = images[0].dim(1), c = images[0].dim(2);
  if (grid < 1 || h % grid || w % grid) throw DimensionError("image extents must be divisible by the pooling grid");
  const Index bh = h / grid, bw = w / grid;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Index>(images.size()), grid * grid * c);
  for (std::size_t k = 0; k < images.size(); ++k) {
    require_shape(images[k].shape(), images[0].shape(), "pooled_features image");
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        for (Index ch = 0; ch < c; ++ch)
          out(static_cast<Index>(k), ((i / bh) * grid + j / bw) * c + ch) += images[k].at({i, j, ch});
  }
  return out / static_cast<double>(bh * bw);
}

}  // namespace geca
