#include "geca/classifier.hpp"

#include <algorithm>
#include <numeric>

namespace geca {

namespace {

TensorF stack(std::span<const TensorF> images, const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi) {
  const Shape& s = images[idx[lo]].shape();
  const Index per = shape_size(s);
  TensorF out({static_cast<Index>(hi - lo), s[0], s[1], s[2]});
  for (std::size_t k = lo; k < hi; ++k) {
    require_shape(images[idx[k]].shape(), s, "classifier image");
    out.array().segment(static_cast<Index>(k - lo) * per, per) = images[idx[k]].array();
  }
  return out;
}

TensorF targets(const std::vector<Label>& labels, const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi,
                Index num_labels) {
  TensorF out({static_cast<Index>(hi - lo), num_labels});
  for (std::size_t k = lo; k < hi; ++k) {
    const Label& l = labels[idx[k]];
    if (static_cast<Index>(l.size()) != num_labels) throw InputError("label width does not match classifier");
    for (Index j = 0; j < num_labels; ++j) out.at({static_cast<Index>(k - lo), j}) = l.bits()[static_cast<std::size_t>(j)];
  }
  return out;
}

std::vector<Var<float>> bind(Tape<float>& tape, const ClassifierParams<float>& params, bool requires_grad) {
  std::vector<Var<float>> v;
  params.for_each([&](const char*, const TensorF& t) { v.push_back(tape.leaf(t, requires_grad)); });
  return v;
}

}  // namespace

Eigen::MatrixXd predict(const ClassifierParams<float>& params, std::span<const TensorF> images, Index batch) {
  const auto n = images.size();
  Eigen::MatrixXd scores(static_cast<Index>(n), params.config.num_labels);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(batch)) {
    const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(batch));
    Tape<float> tape;
    const auto logits = classifier_logits(tape, bind(tape, params, false), stack(images, idx, lo, hi));
    scores.middleRows(static_cast<Index>(lo), static_cast<Index>(hi - lo)) =
        (1.0 / (1.0 + (-logits.value().matrix().cast<double>().array()).exp())).matrix();
  }
  return scores;
}

MetricsRecord evaluate(const ClassifierParams<float>& params, std::span<const TensorF> images,
                       const std::vector<Label>& labels, double threshold) {
  if (images.size() != labels.size()) throw DimensionError("image/label count mismatch");
  return compute_metrics(predict(params, images), labels, threshold);
}

ClassifierParams<float> train_classifier(std::span<const TensorF> train_images, const std::vector<Label>& train_labels,
                                         std::span<const TensorF> val_images, const std::vector<Label>& val_labels,
                                         const ClassifierConfig& config,
                                         const std::function<void(const ClassifierTrainLog&)>& on_epoch) {
  if (train_images.size() != train_labels.size() || val_images.size() != val_labels.size())
    throw DimensionError("image/label count mismatch");
  if (config.epochs < 0 || config.batch < 1) throw ConfigError("invalid classifier schedule");
  for (const auto* labels : {&train_labels, &val_labels})
    for (const auto& l : *labels)
      if (l.size() != static_cast<std::size_t>(config.num_labels))
        throw InputError("classifier label has " + std::to_string(l.size()) + " bits, expected " +
                         std::to_string(config.num_labels));
  ClassifierParams<float> params = ClassifierParams<float>::init(config);
  if (config.epochs == 0) return params;
  if (train_images.empty()) throw InputError("empty classifier training set");

  const auto val_map = [&](const ClassifierParams<float>& p) {
    return val_images.empty() ? 0.0 : evaluate(p, val_images, val_labels).map;
  };
  ClassifierParams<float> best = params;
  double best_map = val_map(params);
  AdamState<float> adam;
  Rng rng(config.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order(train_images.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(config.batch)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(config.batch));
      Tape<float> tape;
      const auto v = bind(tape, params, true);
      const auto logits = classifier_logits(tape, v, stack(train_images, order, lo, hi));
      const auto loss = bce_with_logits(logits, tape.constant(targets(train_labels, order, lo, hi, config.num_labels)));
      const double l = loss.value()[0];
      if (!std::isfinite(l)) throw TrainingError("non-finite classifier loss at epoch " + std::to_string(epoch));
      tape.backward(loss);
      std::vector<TensorF> grads;
      for (const auto& p : v) grads.push_back(p.grad());
      auto ptrs = params.tensors();
      adam_step<float>(ptrs, grads, adam, config.adam);
      loss_sum += l;
      ++batches;
    }
    const double m = val_map(params);
    if (m >= best_map) {
      best_map = m;
      best = params;
    }
    if (on_epoch) on_epoch({epoch, loss_sum / batches, m});
  }
  return best;
}

}  // namespace geca
