#include "drsl/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "drsl/common.hpp"

namespace drsl {

std::string to_string(Subset s) {
  switch (s) {
    case Subset::clean: return "clean";
    case Subset::close: return "close";
    case Subset::open: return "open";
  }
  return "?";
}

bool LossBreakdown::finite() const {
  return std::isfinite(l_proto) && std::isfinite(l_ova) && std::isfinite(l_pu) &&
         std::isfinite(l_con) && std::isfinite(l_bcl) && std::isfinite(total);
}

static double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

static double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

static Eigen::VectorXd softmax(const Eigen::VectorXd& v) {
  Eigen::ArrayXd e = (v.array() - v.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

// x + log(1 + exp(-x)) for x > 0, log(1 + exp(x)) otherwise
static double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// ---- prototype loss ----

double proto_loss(const Eigen::VectorXd& z, int y, const Eigen::MatrixXd& protos,
                  double tau) {
  if (y < 0 || y >= protos.rows()) throw std::out_of_range("proto_loss: label");
  const Eigen::VectorXd logits = protos * z / tau;
  return -logits(y) + log_sum_exp(logits);
}

ProtoGrad proto_loss_grad(const Eigen::VectorXd& z, int y,
                          const Eigen::MatrixXd& protos, double tau) {
  if (y < 0 || y >= protos.rows()) throw std::out_of_range("proto_loss: label");
  const Eigen::VectorXd logits = protos * z / tau;
  Eigen::VectorXd g = softmax(logits);
  g(y) -= 1.0;

  ProtoGrad out;
  out.value = -logits(y) + log_sum_exp(logits);
  out.dz = protos.transpose() * g / tau;
  out.dprotos = g * z.transpose() / tau;
  return out;
}

double proto_loss_from_logits(const Eigen::VectorXd& logits, int y) {
  if (y < 0 || y >= logits.size()) throw std::out_of_range("proto_loss: label");
  return -logits(y) + log_sum_exp(logits);
}

Eigen::VectorXd proto_loss_grad_logits(const Eigen::VectorXd& logits, int y) {
  Eigen::VectorXd g = softmax(logits);
  g(y) -= 1.0;
  return g;
}

// ---- OVA loss ----

double ova_loss(const Eigen::VectorXd& pos, const Eigen::VectorXd& neg, int y) {
  if (pos.size() != neg.size()) throw ContractError("ova_loss: pair shape");
  if (y < 0 || y >= pos.size()) throw std::out_of_range("ova_loss: label");
  double loss = -clamped_log(pos(y));
  for (Eigen::Index j = 0; j < pos.size(); ++j) {
    if (j != y) loss -= clamped_log(neg(j));
  }
  return loss;
}

OvaGrad ova_loss_from_logits(const Eigen::VectorXd& logits, int y) {
  if (y < 0 || y >= logits.size()) throw std::out_of_range("ova_loss: label");
  OvaGrad out;
  out.value = softplus(-logits(y));
  out.dlogits.resize(logits.size());
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    const double s = logits(j);
    const double sig = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s))
                                : std::exp(s) / (1.0 + std::exp(s));
    if (j == y) {
      out.dlogits(j) = sig - 1.0;
    } else {
      out.value += softplus(s);
      out.dlogits(j) = sig;
    }
  }
  return out;
}

// ---- bi-level contrastive loss ----

namespace {

struct BclScratch {
  int n_views = 0;
  int n_samples = 0;
  Eigen::MatrixXd sims;         // z.z^T / tau
  Eigen::MatrixXd soft;         // row-stochastic over r != i
  Eigen::VectorXd row_max;      // max_r != i sims(i, r)
  Eigen::VectorXd row_logdenom; // log sum_{r != i} exp(sims - row_max)
  std::vector<std::vector<int>> positives;  // P(i) per anchor (excl. pair)

  // -log [ exp(sims(i,p)) / sum_{r != i} exp(sims(i,r)) ]
  double neg_log_soft(int i, int p) const {
    return -(sims(i, p) - row_max(i) - row_logdenom(i));
  }
};

BclScratch bcl_prepare(const Eigen::MatrixXd& z_views,
                       const std::vector<int>& labels, double tau) {
  BclScratch s;
  s.n_samples = static_cast<int>(labels.size());
  s.n_views = static_cast<int>(z_views.rows());
  if (s.n_views != 2 * s.n_samples) {
    throw ContractError("bcl_loss: expected 2|B| stacked views");
  }
  s.sims = z_views * z_views.transpose() / tau;

  s.soft.resize(s.n_views, s.n_views);
  s.row_max.resize(s.n_views);
  s.row_logdenom.resize(s.n_views);
  for (int i = 0; i < s.n_views; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < s.n_views; ++r)
      if (r != i) m = std::max(m, s.sims(i, r));
    double denom = 0.0;
    for (int r = 0; r < s.n_views; ++r) {
      s.soft(i, r) = r == i ? 0.0 : std::exp(s.sims(i, r) - m);
      denom += s.soft(i, r);
    }
    s.soft.row(i) /= denom;
    s.row_max(i) = m;
    s.row_logdenom(i) = std::log(denom);
  }

  s.positives.resize(s.n_views);
  for (int i = 0; i < s.n_views; ++i) {
    const int si = i % s.n_samples;
    for (int j = 0; j < s.n_views; ++j) {
      const int sj = j % s.n_samples;
      if (sj != si && labels[sj] == labels[si]) s.positives[i].push_back(j);
    }
  }
  return s;
}

}  // namespace

static void bcl_check_weights(const Eigen::VectorXd& weights, int n_samples) {
  if (weights.size() != n_samples) {
    throw ContractError("bcl_loss: one weight per sample expected");
  }
}

double bcl_loss(const Eigen::MatrixXd& z_views, const std::vector<int>& labels,
                const Eigen::VectorXd& weights, double tau) {
  const int b = static_cast<int>(labels.size());
  bcl_check_weights(weights, b);
  if (b < 2) return 0.0;
  BclScratch s = bcl_prepare(z_views, labels, tau);

  double total = 0.0;
  for (int i = 0; i < s.n_views; ++i) {
    const int si = i % b;
    const int pair = (i + b) % s.n_views;
    double anchor = s.neg_log_soft(i, pair);
    for (int j : s.positives[i]) {
      anchor += weights(si) * weights(j % b) * s.neg_log_soft(i, j);
    }
    total += anchor / (1.0 + static_cast<double>(s.positives[i].size()));
  }
  return total / s.n_views;
}

BclGrad bcl_loss_grad(const Eigen::MatrixXd& z_views,
                      const std::vector<int>& labels,
                      const Eigen::VectorXd& weights, double tau) {
  const int b = static_cast<int>(labels.size());
  bcl_check_weights(weights, b);
  BclGrad out;
  out.value = 0.0;
  out.dz = Eigen::MatrixXd::Zero(z_views.rows(), z_views.cols());
  if (b < 2) return out;

  BclScratch s = bcl_prepare(z_views, labels, tau);
  Eigen::MatrixXd dsims = Eigen::MatrixXd::Zero(s.n_views, s.n_views);

  for (int i = 0; i < s.n_views; ++i) {
    const int si = i % b;
    const int pair = (i + b) % s.n_views;
    const double norm = 1.0 / (1.0 + static_cast<double>(s.positives[i].size()));

    double anchor = s.neg_log_soft(i, pair);
    double coeff_sum = 1.0;
    dsims(i, pair) -= norm;
    for (int j : s.positives[i]) {
      const double c = weights(si) * weights(j % b);
      anchor += c * s.neg_log_soft(i, j);
      coeff_sum += c;
      dsims(i, j) -= norm * c;
    }
    out.value += norm * anchor;
    for (int r = 0; r < s.n_views; ++r) {
      if (r != i) dsims(i, r) += norm * coeff_sum * s.soft(i, r);
    }
  }

  const double scale = 1.0 / s.n_views;
  out.value *= scale;
  out.dz = scale / tau * (dsims + dsims.transpose()) * z_views;
  return out;
}

// ---- consistency regularization ----

double consistency_loss(const OvaProbs& strong, const OvaProbs& weak) {
  if (strong.pos.rows() != weak.pos.rows() ||
      strong.pos.cols() != weak.pos.cols() ||
      strong.neg.rows() != weak.neg.rows() ||
      strong.neg.cols() != weak.neg.cols()) {
    throw ContractError("consistency_loss: shape mismatch");
  }
  if (strong.pos.rows() == 0) return 0.0;
  const double sum = (strong.pos - weak.pos).squaredNorm() +
                     (strong.neg - weak.neg).squaredNorm();
  return sum / static_cast<double>(strong.pos.rows());
}

ConGrad consistency_loss_from_logits(const Eigen::MatrixXd& logits_strong,
                                     const Eigen::MatrixXd& logits_weak) {
  if (logits_strong.rows() != logits_weak.rows() ||
      logits_strong.cols() != logits_weak.cols()) {
    throw ContractError("consistency_loss: shape mismatch");
  }
  const double n = static_cast<double>(logits_strong.rows());
  const OvaProbs ps = OvaProbs::from_logits(logits_strong);
  const OvaProbs pw = OvaProbs::from_logits(logits_weak);

  ConGrad out;
  const Eigen::MatrixXd delta = ps.pos - pw.pos;
  out.value = 2.0 * delta.squaredNorm() / n;
  const Eigen::MatrixXd sig_s = ps.pos.cwiseProduct(ps.neg);
  const Eigen::MatrixXd sig_w = pw.pos.cwiseProduct(pw.neg);
  out.dlogits_strong = (4.0 / n) * delta.cwiseProduct(sig_s);
  out.dlogits_weak = (-4.0 / n) * delta.cwiseProduct(sig_w);
  return out;
}

// ---- pseudo-label loss ----

Eigen::VectorXd sharpen(const Eigen::VectorXd& ybar, double w, double t) {
  if (!(t > 0.0)) throw ConfigError("sharpen: T must be > 0");
  if (w < 0.0 || w > 1.0) throw ContractError("sharpen: weight outside [0,1]");
  const double e = w / t;
  Eigen::VectorXd powered(ybar.size());
  for (Eigen::Index c = 0; c < ybar.size(); ++c) {
    powered(c) = std::pow(std::max(ybar(c), 0.0), e);  // pow(0,0) == 1
  }
  const double sum = powered.sum();
  if (!(sum > 0.0)) {
    return Eigen::VectorXd::Constant(ybar.size(), 1.0 / ybar.size());
  }
  return powered / sum;
}

double pu_loss(const Eigen::VectorXd& proto_logits, const Eigen::VectorXd& ybar,
               double w, double t) {
  const Eigen::VectorXd p = softmax(proto_logits);
  return (p - sharpen(ybar, w, t)).squaredNorm();
}

PuGrad pu_loss_from_logits(const Eigen::VectorXd& proto_logits,
                           const Eigen::VectorXd& target) {
  const Eigen::VectorXd p = softmax(proto_logits);
  const Eigen::VectorXd dp = 2.0 * (p - target);
  PuGrad out;
  out.value = (p - target).squaredNorm();
  out.dlogits = p.cwiseProduct(dp) - p * p.dot(dp);
  return out;
}

// ---- total objective ----

LossBreakdown total_loss(const BatchLossInputs& in, double lambda_con,
                         double lambda_bcl) {
  const int n = static_cast<int>(in.membership.size());
  auto need = [&](const Eigen::VectorXd& v, const char* name) {
    if (v.size() != n) {
      throw ContractError(std::string("total_loss: ") + name +
                          " must have one entry per batch sample");
    }
  };
  need(in.ova_mix, "ova_mix");
  need(in.proto_mix, "proto_mix");
  need(in.pu_mix, "pu_mix");
  need(in.con, "con");

  double sum_ova = 0.0, sum_proto = 0.0, sum_pu = 0.0, sum_con = 0.0;
  int n_clean = 0, n_close = 0;
  for (int i = 0; i < n; ++i) {
    if (!in.membership[i].has_value()) {
      throw ContractError("total_loss: sample " + std::to_string(i) +
                          " has no partition assignment");
    }
    switch (*in.membership[i]) {
      case Subset::clean:
        sum_ova += in.ova_mix(i);
        sum_proto += in.proto_mix(i);
        sum_con += in.con(i);
        ++n_clean;
        break;
      case Subset::close:
        sum_pu += in.pu_mix(i);
        sum_con += in.con(i);
        ++n_close;
        break;
      case Subset::open:
        break;
    }
  }

  LossBreakdown out;
  out.l_ova = n_clean > 0 ? sum_ova / n_clean : 0.0;
  out.l_proto = n_clean > 0 ? sum_proto / n_clean : 0.0;
  out.l_pu = n_close > 0 ? sum_pu / n_close : 0.0;
  out.l_con = n_clean + n_close > 0 ? sum_con / (n_clean + n_close) : 0.0;
  out.l_bcl = in.bcl;
  out.total = out.l_ova + out.l_proto + out.l_pu + lambda_con * out.l_con +
              lambda_bcl * out.l_bcl;
  return out;
}

}  // namespace drsl
