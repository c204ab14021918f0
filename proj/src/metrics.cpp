#include "geca/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "geca/errors.hpp"

namespace geca {

namespace {

std::vector<Eigen::Index> order_by_score_desc(const Eigen::VectorXd& scores) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return idx;
}

double harmonic(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

}  // namespace

double roc_auc(const Eigen::VectorXd& scores, const Eigen::VectorXi& truth) {
  if (scores.size() != truth.size()) throw DimensionError("roc_auc: size mismatch");
  const long pos = truth.sum(), neg = truth.size() - pos;
  if (pos == 0 || neg == 0) throw InputError("roc_auc needs both classes");
  const auto idx = order_by_score_desc(scores);
  double area = 0.0;
  long tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const long tp0 = tp, fp0 = fp;
    const double s = scores[idx[i]];
    for (; i < idx.size() && scores[idx[i]] == s; ++i) (truth[idx[i]] ? tp : fp) += 1;
    area += static_cast<double>(fp - fp0) * 0.5 * static_cast<double>(tp + tp0);
  }
  return area / (static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(const Eigen::VectorXd& scores, const Eigen::VectorXi& truth) {
  if (scores.size() != truth.size()) throw DimensionError("average_precision: size mismatch");
  const long pos = truth.sum();
  if (pos == 0) throw InputError("average_precision needs a positive");
  const auto idx = order_by_score_desc(scores);
  double ap = 0.0;
  long tp = 0, seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const long tp0 = tp;
    const double s = scores[idx[i]];
    for (; i < idx.size() && scores[idx[i]] == s; ++i, ++seen) tp += truth[idx[i]];
    ap += static_cast<double>(tp - tp0) / static_cast<double>(pos) * static_cast<double>(tp) / static_cast<double>(seen);
  }
  return ap;
}

Eigen::MatrixXi label_matrix(const std::vector<Label>& labels) {
  if (labels.empty()) return {};
  Eigen::MatrixXi m(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(labels.front().size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].size() != labels.front().size()) throw InputError("label width mismatch");
    for (std::size_t l = 0; l < labels[i].size(); ++l)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = labels[i].bits()[l];
  }
  return m;
}

MetricsRecord compute_metrics(const Eigen::MatrixXd& scores, const Eigen::MatrixXi& truth, double threshold) {
  if (scores.rows() != truth.rows() || scores.cols() != truth.cols())
    throw DimensionError("compute_metrics: scores and labels differ in shape");
  if (scores.rows() == 0) throw InputError("compute_metrics: empty evaluation set");
  MetricsRecord r;
  int n_sen = 0, n_spe = 0, n_hm = 0, n_auc = 0, n_ap = 0;
  for (Eigen::Index l = 0; l < scores.cols(); ++l) {
    LabelMetrics m;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      const bool pred = scores(i, l) >= threshold;
      if (truth(i, l)) (pred ? m.tp : m.fn) += 1;
      else (pred ? m.fp : m.tn) += 1;
    }
    m.has_positives = m.tp + m.fn > 0;
    m.has_negatives = m.tn + m.fp > 0;
    if (m.has_positives) m.sensitivity = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    if (m.has_negatives) m.specificity = static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp);
    const long denom = 2 * m.tp + m.fp + m.fn;
    m.f1 = denom > 0 ? 2.0 * static_cast<double>(m.tp) / static_cast<double>(denom) : 0.0;
    m.f1_sen_spe = harmonic(m.sensitivity, m.specificity);
    const Eigen::VectorXd s = scores.col(l);
    const Eigen::VectorXi y = truth.col(l);
    if (m.has_positives && m.has_negatives) m.auc = roc_auc(s, y);
    if (m.has_positives) m.ap = average_precision(s, y);

    r.f1 += m.f1;
    if (m.has_positives) {
      r.sensitivity += m.sensitivity;
      r.map += m.ap;
      ++n_sen, ++n_ap;
    } else {
      r.warnings.push_back("label " + std::to_string(l) + " has no positives; excluded from Sen, AUC, mAP");
    }
    if (m.has_negatives) {
      r.specificity += m.specificity;
      ++n_spe;
    } else {
      r.warnings.push_back("label " + std::to_string(l) + " has no negatives; excluded from Spe, AUC");
    }
    if (m.has_positives && m.has_negatives) {
      r.auc += m.auc;
      r.f1_sen_spe += m.f1_sen_spe;
      ++n_auc, ++n_hm;
    }
    r.per_label.push_back(m);
  }
  const auto div = [](double& v, int n) { v = n > 0 ? v / n : 0.0; };
  div(r.sensitivity, n_sen);
  div(r.specificity, n_spe);
  div(r.auc, n_auc);
  div(r.f1_sen_spe, n_hm);
  div(r.map, n_ap);
  r.f1 /= static_cast<double>(scores.cols());
  return r;
}

MetricsRecord compute_metrics(const Eigen::MatrixXd& scores, const std::vector<Label>& truth, double threshold) {
  return compute_metrics(scores, label_matrix(truth), threshold);
}

MetricsRecord average(const std::vector<MetricsRecord>& records) {
  if (records.empty()) throw InputError("nothing to average");
  MetricsRecord out = records.front();
  for (std::size_t k = 1; k < records.size(); ++k) {
    const auto& r = records[k];
    if (r.per_label.size() != out.per_label.size()) throw DimensionError("records differ in label count");
    out.sensitivity += r.sensitivity;
    out.specificity += r.specificity;
    out.auc += r.auc;
    out.f1 += r.f1;
    out.f1_sen_spe += r.f1_sen_spe;
    out.map += r.map;
    for (std::size_t l = 0; l < r.per_label.size(); ++l) {
      auto& a = out.per_label[l];
      const auto& b = r.per_label[l];
      a.tp += b.tp, a.fp += b.fp, a.tn += b.tn, a.fn += b.fn;
      a.sensitivity += b.sensitivity, a.specificity += b.specificity, a.f1 += b.f1;
      a.f1_sen_spe += b.f1_sen_spe, a.auc += b.auc, a.ap += b.ap;
      a.has_positives |= b.has_positives, a.has_negatives |= b.has_negatives;
    }
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  const double n = static_cast<double>(records.size());
  for (double* v : {&out.sensitivity, &out.specificity, &out.auc, &out.f1, &out.f1_sen_spe, &out.map}) *v /= n;
  for (auto& a : out.per_label)
    for (double* v : {&a.sensitivity, &a.specificity, &a.f1, &a.f1_sen_spe, &a.auc, &a.ap}) *v /= n;
  return out;
}

std::string metrics_csv_row(const MetricsRecord& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", m.sensitivity, m.specificity, m.auc, m.f1,
                m.f1_sen_spe, m.map);
  return buf;
}

}  // namespace geca
