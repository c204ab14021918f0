#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geca/label.hpp"

namespace geca {

struct LabelMetrics {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  bool has_positives = false;
  bool has_negatives = false;
  double sensitivity = 0.0;  // undefined (0) without positives
  double specificity = 0.0;  // undefined (0) without negatives
  double f1 = 0.0;           // 0 when 2TP + FP + FN = 0
  double f1_sen_spe = 0.0;   // harmonic mean of sensitivity and specificity
  double auc = 0.0;          // undefined without both classes
  double ap = 0.0;           // undefined without positives
};

/// Macro averages over labels. Sensitivity, F1_sen/spe, AUC and AP skip
/// labels where they are undefined; F1 averages every label.
struct MetricsRecord {
  std::vector<LabelMetrics> per_label;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double auc = 0.0;
  double f1 = 0.0;
  double f1_sen_spe = 0.0;
  double map = 0.0;
  std::vector<std::string> warnings;
};

/// Area under the ROC curve by the trapezoidal rule; tied scores form one
/// diagonal segment.
double roc_auc(const Eigen::VectorXd& scores, const Eigen::VectorXi& truth);

/// Average precision: sum over distinct thresholds of (R_k - R_{k-1}) P_k.
double average_precision(const Eigen::VectorXd& scores, const Eigen::VectorXi& truth);

/// `scores` is [N x L] in [0, 1]; a score >= threshold predicts positive.
MetricsRecord compute_metrics(const Eigen::MatrixXd& scores, const Eigen::MatrixXi& truth, double threshold = 0.5);
MetricsRecord compute_metrics(const Eigen::MatrixXd& scores, const std::vector<Label>& truth, double threshold = 0.5);

Eigen::MatrixXi label_matrix(const std::vector<Label>& labels);

/// Mean of several records, field by field (per-label counts summed).
MetricsRecord average(const std::vector<MetricsRecord>& records);

inline constexpr const char* kMetricsHeader = "Sen,Spe,AUC,F1,F1_sen_spe,mAP";
std::string metrics_csv_row(const MetricsRecord& m);

}  // namespace geca
