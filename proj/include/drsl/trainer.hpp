#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drsl/config.hpp"
#include "drsl/dataset.hpp"
#include "drsl/eval.hpp"
#include "drsl/identify.hpp"
#include "drsl/model.hpp"

namespace drsl {

/// Plain softmax classifier on the shared trunk; the cross-entropy
/// baseline and the source of MSP-style OOD scores.
struct CeModel {
  Mlp trunk;
  LinearLayer head;

  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
};

/// Orchestrates the training schedule: warm-up epochs use mixup-OVA plus
/// bi-level contrastive learning with all sample weights at 1; afterwards
/// each epoch rebuilds the embedding bank, refreshes the sample partition,
/// and optimizes the joint objective. Prototypes are initialized from the
/// clean class means once, at the first post-warm-up epoch.
class Trainer {
 public:
  Trainer(const TrainerConfig& cfg, LabeledDataset dataset);

  /// Runs the next epoch (warm-up, main, or ce depending on mode/epoch)
  /// and returns the end-of-epoch evaluation.
  MetricsReport run_epoch();

  /// Runs all remaining epochs and persists config echo, metrics JSONL,
  /// identification reports, checkpoints, and the final summary under
  /// cfg.out_dir.
  std::vector<MetricsReport> run();

  /// Evaluation only (test accuracy, OOD metrics when defined, selection
  /// audit against hidden tags when a partition exists).
  MetricsReport evaluate(int epoch_for_report) const;

  int epoch() const { return epoch_; }
  double lr_at(int epoch) const;  // lr0 * 0.5 * (1 + cos(pi * e / E_total))

  const TrainerConfig& config() const { return cfg_; }
  const LabeledDataset& dataset() const { return data_; }
  const ModelBundle& model() const;
  const SamplePartition* partition() const;

  void save_checkpoint(const std::string& path) const;
  static Trainer resume(const std::string& checkpoint_path,
                        const std::optional<std::string>& dataset_override = {});

  /// Per-batch loss routing (which sample indices fed which loss);
  /// recorded only when enabled. Test instrumentation.
  struct RoutingRecord {
    int epoch = 0;
    std::vector<int> ova_proto_indices;  // clean slice
    std::vector<int> pu_indices;         // close slice
    std::vector<int> con_indices;        // clean + close
    std::vector<int> bcl_indices;        // whole batch
  };
  void set_routing_log(bool enabled) { routing_enabled_ = enabled; }
  const std::vector<RoutingRecord>& routing_log() const { return routing_; }

 private:
  Trainer() = default;

  void warmup_epoch();
  void main_epoch();
  void ce_epoch();
  void refresh_partition();
  void train_batch_dual(const std::vector<int>& batch, bool warmup,
                        std::mt19937_64& aug_rng, std::mt19937_64& mix_rng);
  void train_batch_ce(const std::vector<int>& batch);
  Eigen::MatrixXd batch_features(const std::vector<int>& batch) const;
  void check_finite(const LossBreakdown& b, int iteration) const;
  void write_ident_report(const std::string& dir) const;

  TrainerConfig cfg_;
  LabeledDataset data_;
  std::vector<int> train_idx_;
  std::vector<int> test_idx_;
  double feature_std_ = 1.0;
  AugmentationPolicy aug_;

  std::unique_ptr<ModelBundle> model_;  // dual mode
  std::unique_ptr<CeModel> ce_;         // ce mode
  std::optional<SamplePartition> partition_;
  Eigen::VectorXd sample_weights_;  // size N_train, all 1 during warm-up

  int epoch_ = 0;
  double current_lr_ = 0.0;
  LossBreakdown epoch_loss_mean_;

  bool routing_enabled_ = false;
  std::vector<RoutingRecord> routing_;
};

}  // namespace drsl
