#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "drsl/model.hpp"

namespace drsl {

// Logs are clamped at this floor everywhere a probability enters a log.
inline constexpr double kLogClamp = 1e-12;

enum class Subset : std::uint8_t { clean, close, open };
std::string to_string(Subset s);

struct LossBreakdown {
  double l_proto = 0.0;
  double l_ova = 0.0;
  double l_pu = 0.0;
  double l_con = 0.0;
  double l_bcl = 0.0;
  double total = 0.0;

  bool finite() const;
};

// ---- prototype loss: -P_y.z/tau + log sum_c exp(P_c.z/tau) ----

double proto_loss(const Eigen::VectorXd& z, int y,
                  const Eigen::MatrixXd& protos, double tau);

struct ProtoGrad {
  double value = 0.0;
  Eigen::VectorXd dz;
  Eigen::MatrixXd dprotos;
};
ProtoGrad proto_loss_grad(const Eigen::VectorXd& z, int y,
                          const Eigen::MatrixXd& protos, double tau);

/// Same loss expressed on precomputed prototype logits; gradient w.r.t.
/// the logits is softmax(logits) - onehot(y).
double proto_loss_from_logits(const Eigen::VectorXd& logits, int y);
Eigen::VectorXd proto_loss_grad_logits(const Eigen::VectorXd& logits, int y);

// ---- OVA loss: -log p^y(z=1) - sum_{j != y} log p^j(z=0) ----

double ova_loss(const Eigen::VectorXd& pos, const Eigen::VectorXd& neg, int y);

struct OvaGrad {
  double value = 0.0;
  Eigen::VectorXd dlogits;  // pos - onehot(y)
};
OvaGrad ova_loss_from_logits(const Eigen::VectorXd& logits, int y);

// ---- loss mixup: lambda * L(x_mix, y_a) + (1 - lambda) * L(x_mix, y_b) ----

template <typename LossFn>
double mixup_loss(LossFn&& loss_fn, int y_a, int y_b, double lambda) {
  if (y_a == y_b) return loss_fn(y_a);
  return lambda * loss_fn(y_a) + (1.0 - lambda) * loss_fn(y_b);
}

// ---- bi-level contrastive loss over 2|B| views ----
//
// Views are stacked [weak; strong]; view i's paired view is i +- B. The
// instance term is a standard InfoNCE term against the paired view; class
// terms run over views of *other* samples sharing the given label, each
// scaled by w_i * w_j outside the log. Each anchor's sum is divided by
// (1 + |P(i)|) and the batch loss is the mean over all 2|B| anchors.
// Batches with |B| < 2 return 0 (no negatives).

double bcl_loss(const Eigen::MatrixXd& z_views, const std::vector<int>& labels,
                const Eigen::VectorXd& weights, double tau);

struct BclGrad {
  double value = 0.0;
  Eigen::MatrixXd dz;  // 2B x d
};
BclGrad bcl_loss_grad(const Eigen::MatrixXd& z_views,
                      const std::vector<int>& labels,
                      const Eigen::VectorXd& weights, double tau);

// ---- consistency: squared distance between OVA pair tensors ----

double consistency_loss(const OvaProbs& strong, const OvaProbs& weak);

struct ConGrad {
  double value = 0.0;
  Eigen::MatrixXd dlogits_strong;
  Eigen::MatrixXd dlogits_weak;
};
ConGrad consistency_loss_from_logits(const Eigen::MatrixXd& logits_strong,
                                     const Eigen::MatrixXd& logits_weak);

// ---- pseudo-label loss with weighted sharpening ----

/// Component-wise power w/T followed by renormalization. w = 0 flattens
/// the vector to uniform (exponent 0), which is the documented behavior
/// for open-set weights, not an error.
Eigen::VectorXd sharpen(const Eigen::VectorXd& ybar, double w, double t);

double pu_loss(const Eigen::VectorXd& proto_logits, const Eigen::VectorXd& ybar,
               double w, double t);

struct PuGrad {
  double value = 0.0;
  Eigen::VectorXd dlogits;
};
/// Target is already sharpened and treated as a constant (no gradient).
PuGrad pu_loss_from_logits(const Eigen::VectorXd& proto_logits,
                           const Eigen::VectorXd& target);

// ---- total objective ----
//
// OVA and prototype terms average over the clean slice, the pseudo-label
// term over the close slice, consistency over clean + close, BCL over the
// whole batch. Components with an empty slice contribute 0.

struct BatchLossInputs {
  std::vector<std::optional<Subset>> membership;
  Eigen::VectorXd ova_mix;    // per-sample values; read on the clean slice
  Eigen::VectorXd proto_mix;  // read on the clean slice
  Eigen::VectorXd pu_mix;     // read on the close slice
  Eigen::VectorXd con;        // read on clean + close
  double bcl = 0.0;
};

LossBreakdown total_loss(const BatchLossInputs& in, double lambda_con,
                         double lambda_bcl);

}  // namespace drsl
