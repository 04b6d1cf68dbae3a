#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "drsl/losses.hpp"
#include "drsl/model.hpp"

namespace drsl {

/// Per-epoch snapshot of the train set under the frozen model: unit
/// embeddings, OVA probabilities, and given labels. Immutable once built.
struct EmbeddingBank {
  Eigen::MatrixXd z;    // N x proj_dim, unit rows
  Eigen::MatrixXd pos;  // N x C, p(z=1)
  Eigen::MatrixXd neg;  // N x C, p(z=0)
  std::vector<int> labels;
  int epoch = -1;

  int size() const { return static_cast<int>(z.rows()); }
  int classes() const { return static_cast<int>(pos.cols()); }
};

EmbeddingBank build_bank(const ModelBundle& model,
                         const Eigen::MatrixXf& features,
                         const std::vector<int>& labels, int epoch,
                         int batch_size = 256);

/// Exact k-nearest neighbors by cosine similarity (embeddings are unit
/// rows so the dot product suffices), self excluded, ties broken by
/// ascending index. k >= N is clamped to N-1 with a warning.
std::vector<std::vector<int>> knn_indices(const Eigen::MatrixXd& z, int k);

/// Neighbor label of sample i: softmax(sim/tau)-weighted sum of the
/// neighbors' positive OVA probability rows.
Eigen::VectorXd neighbor_label(const EmbeddingBank& bank, int i, int k,
                               double tau);

/// All neighbor labels at once (same values as per-sample queries).
Eigen::MatrixXd neighbor_labels(const EmbeddingBank& bank, int k, double tau);

/// q[y] minus the mean of the top-K largest q[j] over j != y. Requires
/// 1 <= K <= C-1.
double neighbor_margin(const Eigen::VectorXd& q, int y, int top_k);

struct CleanSelection {
  std::vector<int> clean_idx;          // ascending
  std::vector<double> gamma_c;         // per-class margin cutoff (NaN if none)
  std::vector<int> budget;             // per-class selection count
};

/// Class-balanced clean selection: for each class c the consistency
/// degree n_c counts members whose neighbor-label argmax equals c; the
/// ceil(alpha_id * n_c) members with the largest margins are kept
/// (at least one per non-empty class).
CleanSelection select_clean(const Eigen::VectorXd& margins,
                            const std::vector<int>& labels,
                            const std::vector<int>& neighbor_argmax,
                            int classes, double alpha_id);

/// | p^y(z=0) - max_{j != y} p^j(z=0) |; small means open-set-like.
double negative_margin(const Eigen::VectorXd& neg_probs, int y);

struct OpenSelection {
  std::vector<int> open_idx;  // ascending
  double gamma_neg = -1.0;    // largest selected margin; -1 when empty
};

/// Among samples not selected clean, the floor(alpha_ood * N) smallest
/// negative margins (ties by index). A short candidate list is taken
/// whole with a warning.
OpenSelection select_open(const Eigen::VectorXd& neg_margins,
                          const std::vector<int>& clean_idx, double alpha_ood);

/// Epoch partition of the train set plus per-sample weights:
/// 1 on clean, 0 on open, (M_i + 1) / (M_max + 1) on close.
struct SamplePartition {
  std::vector<int> clean_idx;
  std::vector<int> close_idx;
  std::vector<int> open_idx;
  std::vector<Subset> membership;  // size N
  Eigen::VectorXd weights;         // size N
  Eigen::VectorXd m_neigh;
  Eigen::VectorXd m_neg;
  std::vector<double> gamma_c;
  double gamma_neg = -1.0;
  int epoch = -1;

  int size() const { return static_cast<int>(membership.size()); }
  void check() const;  // partition law + weight bounds
};

Eigen::VectorXd assign_weights(const std::vector<Subset>& membership,
                               const Eigen::VectorXd& m_neigh);

/// Runs the whole identification pass for one epoch (neighbor labels,
/// margins, clean/open selection, weights).
SamplePartition identify_samples(const EmbeddingBank& bank,
                                 const HyperParams& hp);

/// Class prototypes from the average clean embedding per class. A class
/// whose mean cancels to (near) zero, or that has no clean member, falls
/// back to a seeded random unit vector.
Eigen::MatrixXd init_prototypes(const EmbeddingBank& bank,
                                const std::vector<int>& clean_idx, int classes,
                                std::uint64_t fallback_seed);

}  // namespace drsl
