#pragma once

// Small multi-label convolutional classifier used to measure downstream
// utility of synthetic data.

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "geca/adam.hpp"
#include "geca/label.hpp"
#include "geca/metrics.hpp"
#include "geca/ops.hpp"

namespace geca {

struct ClassifierConfig {
  Index channels = 1;
  Index num_labels = 1;
  Index widths[3] = {8, 16, 32};
  int epochs = 20;
  Index batch = 32;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

/// Three 3x3 conv stages (2x2 average pooling after the first two), global
/// mean pooling and a linear head with one sigmoid output per label.
template <typename Scalar = float>
struct ClassifierParams {
  ClassifierConfig config;
  Tensor<Scalar> conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, head_w, head_b;

  static ClassifierParams init(const ClassifierConfig& config) {
    if (config.channels < 1 || config.num_labels < 1) throw ConfigError("classifier needs channels and labels");
    Rng rng(config.seed);
    auto he = [&rng](Index fan_in, Index fan_out) {
      return Tensor<Scalar>::normal({fan_in, fan_out}, rng, static_cast<Scalar>(std::sqrt(2.0 / static_cast<double>(fan_in))));
    };
    ClassifierParams p;
    p.config = config;
    const Index* w = config.widths;
    p.conv1_w = he(kNeighborhoodSize * config.channels, w[0]);
    p.conv1_b = Tensor<Scalar>::zeros({w[0]});
    p.conv2_w = he(kNeighborhoodSize * w[0], w[1]);
    p.conv2_b = Tensor<Scalar>::zeros({w[1]});
    p.conv3_w = he(kNeighborhoodSize * w[1], w[2]);
    p.conv3_b = Tensor<Scalar>::zeros({w[2]});
    p.head_w = Tensor<Scalar>::normal({w[2], config.num_labels}, rng, static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(w[2]))));
    p.head_b = Tensor<Scalar>::zeros({config.num_labels});
    return p;
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("conv1_w", self.conv1_w), f("conv1_b", self.conv1_b);
    f("conv2_w", self.conv2_w), f("conv2_b", self.conv2_b);
    f("conv3_w", self.conv3_w), f("conv3_b", self.conv3_b);
    f("head_w", self.head_w), f("head_b", self.head_b);
  }
  template <typename F>
  void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  std::vector<Tensor<Scalar>*> tensors() {
    std::vector<Tensor<Scalar>*> out;
    for_each([&](const char*, Tensor<Scalar>& t) { out.push_back(&t); });
    return out;
  }

  friend bool operator==(const ClassifierParams& a, const ClassifierParams& b) {
    std::vector<const Tensor<Scalar>*> ta, tb;
    a.for_each([&](const char*, const Tensor<Scalar>& t) { ta.push_back(&t); });
    b.for_each([&](const char*, const Tensor<Scalar>& t) { tb.push_back(&t); });
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!(*ta[i] == *tb[i])) return false;
    return true;
  }
};

/// Logits [B x L] for a batch of images [B x H x W x C]; H and W divisible by 4.
template <typename Scalar>
Var<Scalar> classifier_logits(Tape<Scalar>& tape, const std::vector<Var<Scalar>>& p, const Tensor<Scalar>& images) {
  if (images.rank() != 4) throw DimensionError("classifier input must be [B x H x W x C]");
  GridDims dims{images.dim(0), images.dim(1), images.dim(2)};
  if (dims.height % 4 || dims.width % 4) throw DimensionError("classifier input extents must be divisible by 4");
  auto x = tape.constant(images.reshaped({dims.cells(), images.dim(3)}));
  x = relu(linear(gather_neighborhood(x, dims), p[0], p[1]));
  x = avg_pool2(x, dims);
  dims = {dims.batch, dims.height / 2, dims.width / 2};
  x = relu(linear(gather_neighborhood(x, dims), p[2], p[3]));
  x = avg_pool2(x, dims);
  dims = {dims.batch, dims.height / 2, dims.width / 2};
  x = relu(linear(gather_neighborhood(x, dims), p[4], p[5]));
  x = group_mean_rows(x, dims.batch);
  return linear(x, p[6], p[7]);
}

/// Sigmoid scores [N x L] for a list of [H x W x C] images.
Eigen::MatrixXd predict(const ClassifierParams<float>& params, std::span<const TensorF> images, Index batch = 64);

MetricsRecord evaluate(const ClassifierParams<float>& params, std::span<const TensorF> images,
                       const std::vector<Label>& labels, double threshold = 0.5);

struct ClassifierTrainLog {
  int epoch = 0;
  double loss = 0.0;
  double val_map = 0.0;
};

/// BCE + Adam over shuffled mini-batches; evaluates validation mAP after
/// every epoch (and before the first) and returns the best weights seen.
ClassifierParams<float> train_classifier(std::span<const TensorF> train_images, const std::vector<Label>& train_labels,
                                         std::span<const TensorF> val_images, const std::vector<Label>& val_labels,
                                         const ClassifierConfig& config,
                                         const std::function<void(const ClassifierTrainLog&)>& on_epoch = {});

}  // namespace geca
