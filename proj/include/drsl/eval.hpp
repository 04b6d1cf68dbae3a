#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "drsl/dataset.hpp"
#include "drsl/identify.hpp"
#include "drsl/losses.hpp"
#include "drsl/model.hpp"

namespace drsl {

/// OOD score s(x) = p^{y_proto}(z=0|x) where y_proto is the class whose
/// prototype is most similar to z. Higher means more open-set-like.
/// Requires initialized prototypes.
double ood_score(const ModelBundle& model, const Eigen::VectorXd& x);

/// Predicted class: argmax_c p^c(z=1|x), ties to the smallest id.
int classify(const ModelBundle& model, const Eigen::VectorXd& x);

/// Batched variants used by the evaluation loop.
std::vector<int> classify_batch(const ModelBundle& model,
                                const Eigen::MatrixXd& x);
std::vector<double> ood_score_batch(const ModelBundle& model,
                                    const Eigen::MatrixXd& x);

/// Rank-based AUROC with midrank tie handling; equals the exhaustive
/// pair count P(open > known) + 0.5 P(open == known). Open-set is the
/// positive class. Throws UndefinedMetric on an empty list.
double auroc(const std::vector<double>& scores_known,
             const std::vector<double>& scores_open);

/// False-positive rate on known samples at the largest threshold where
/// open-set recall is still >= 95%.
double fpr95(const std::vector<double>& scores_known,
             const std::vector<double>& scores_open);

struct SelectionAudit {
  std::optional<double> clean_precision, clean_recall;
  std::optional<double> close_precision, close_recall;
  std::optional<double> open_precision, open_recall;
};

/// Precision/recall of the partition against hidden noise tags; fields
/// with a zero denominator stay null.
SelectionAudit selection_audit(const SamplePartition& partition,
                               const std::vector<NoiseTag>& tags);

struct MetricsReport {
  int epoch = 0;
  std::string phase;  // "warmup" | "main" | "ce"
  double lr = 0.0;
  double top1_accuracy = 0.0;
  std::optional<double> auroc;
  std::optional<double> fpr95;
  std::optional<double> mean_ood_known;
  std::optional<double> mean_ood_open;
  SelectionAudit selection;
  LossBreakdown mean_losses;
};

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const SelectionAudit& a);

}  // namespace drsl
