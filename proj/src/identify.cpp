#include "drsl/identify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "drsl/common.hpp"
#include "drsl/rng.hpp"

namespace drsl {

EmbeddingBank build_bank(const ModelBundle& model,
                         const Eigen::MatrixXf& features,
                         const std::vector<int>& labels, int epoch,
                         int batch_size) {
  const int n = static_cast<int>(features.rows());
  if (static_cast<int>(labels.size()) != n) {
    throw ContractError("build_bank: one label per sample expected");
  }
  EmbeddingBank bank;
  bank.labels = labels;
  bank.epoch = epoch;
  bank.z.resize(n, model.shape().proj_dim);
  bank.pos.resize(n, model.shape().classes);
  bank.neg.resize(n, model.shape().classes);

  for (int start = 0; start < n; start += batch_size) {
    const int len = std::min(batch_size, n - start);
    const Eigen::MatrixXd x = features.middleRows(start, len).cast<double>();
    const ForwardResult f = model.forward(x);
    bank.z.middleRows(start, len) = f.z;
    bank.pos.middleRows(start, len) = f.ova.pos;
    bank.neg.middleRows(start, len) = f.ova.neg;
  }
  return bank;
}

namespace {

// top-k by (similarity desc, index asc); `sims` is one anchor row
std::vector<int> top_k_neighbors(const Eigen::VectorXd& sims, int self, int k) {
  std::vector<int> idx;
  idx.reserve(sims.size() - 1);
  for (int j = 0; j < sims.size(); ++j)
    if (j != self) idx.push_back(j);
  auto better = [&](int a, int b) {
    if (sims(a) != sims(b)) return sims(a) > sims(b);
    return a < b;
  };
  if (k < static_cast<int>(idx.size())) {
    std::nth_element(idx.begin(), idx.begin() + k, idx.end(), better);
    idx.resize(k);
  }
  std::sort(idx.begin(), idx.end(), better);
  return idx;
}

int clamp_k(int k, int n, bool warn_clamp = true) {
  if (k >= n) {
    if (warn_clamp) {
      warn("neighbor count k=" + std::to_string(k) + " >= N=" +
           std::to_string(n) + ", clamped to " + std::to_string(n - 1));
    }
    return n - 1;
  }
  return k;
}

Eigen::VectorXd weighted_neighbor_label(const EmbeddingBank& bank,
                                        const Eigen::VectorXd& sims,
                                        const std::vector<int>& nbrs,
                                        double tau) {
  Eigen::VectorXd w(nbrs.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < nbrs.size(); ++r) m = std::max(m, sims(nbrs[r]));
  for (std::size_t r = 0; r < nbrs.size(); ++r)
    w(r) = std::exp((sims(nbrs[r]) - m) / tau);
  w /= w.sum();

  Eigen::VectorXd q = Eigen::VectorXd::Zero(bank.classes());
  for (std::size_t r = 0; r < nbrs.size(); ++r)
    q += w(r) * bank.pos.row(nbrs[r]).transpose();
  return q;
}

}  // namespace

std::vector<std::vector<int>> knn_indices(const Eigen::MatrixXd& z, int k) {
  const int n = static_cast<int>(z.rows());
  if (n < 2) throw ContractError("knn_indices: need at least 2 samples");
  k = clamp_k(k, n);
  const Eigen::MatrixXd sims = z * z.transpose();
  std::vector<std::vector<int>> out(n);
  for (int i = 0; i < n; ++i) out[i] = top_k_neighbors(sims.row(i), i, k);
  return out;
}

Eigen::VectorXd neighbor_label(const EmbeddingBank& bank, int i, int k,
                               double tau) {
  const int n = bank.size();
  if (i < 0 || i >= n) throw ContractError("neighbor_label: index");
  k = clamp_k(k, n);
  const Eigen::VectorXd sims = bank.z * bank.z.row(i).transpose();
  const std::vector<int> nbrs = top_k_neighbors(sims, i, k);
  return weighted_neighbor_label(bank, sims, nbrs, tau);
}

Eigen::MatrixXd neighbor_labels(const EmbeddingBank& bank, int k, double tau) {
  const int n = bank.size();
  k = clamp_k(k, n);
  const Eigen::MatrixXd sims = bank.z * bank.z.transpose();
  Eigen::MatrixXd q(n, bank.classes());
  for (int i = 0; i < n; ++i) {
    const std::vector<int> nbrs = top_k_neighbors(sims.row(i), i, k);
    q.row(i) = weighted_neighbor_label(bank, sims.row(i), nbrs, tau);
  }
  return q;
}

double neighbor_margin(const Eigen::VectorXd& q, int y, int top_k) {
  const int c = static_cast<int>(q.size());
  if (y < 0 || y >= c) throw ContractError("neighbor_margin: label");
  if (top_k < 1 || top_k > c - 1) {
    throw ContractError("neighbor_margin: top_k must lie in [1, C-1]");
  }
  std::vector<double> others;
  others.reserve(c - 1);
  for (int j = 0; j < c; ++j)
    if (j != y) others.push_back(q(j));
  std::nth_element(others.begin(), others.begin() + top_k - 1, others.end(),
                   std::greater<>());
  double top_sum = 0.0;
  for (int r = 0; r < top_k; ++r) top_sum += others[r];
  return q(y) - top_sum / top_k;
}

CleanSelection select_clean(const Eigen::VectorXd& margins,
                            const std::vector<int>& labels,
                            const std::vector<int>& neighbor_argmax,
                            int classes, double alpha_id) {
  const int n = static_cast<int>(labels.size());
  if (margins.size() != n || static_cast<int>(neighbor_argmax.size()) != n) {
    throw ContractError("select_clean: length mismatch");
  }
  if (!(alpha_id > 0.0 && alpha_id <= 1.0)) {
    throw ConfigError("select_clean: alpha_id must lie in (0,1]");
  }

  CleanSelection sel;
  sel.gamma_c.assign(classes, std::numeric_limits<double>::quiet_NaN());
  sel.budget.assign(classes, 0);

  std::vector<std::vector<int>> members(classes);
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw ContractError("select_clean: label out of range");
    }
    members[labels[i]].push_back(i);
  }

  for (int c = 0; c < classes; ++c) {
    auto& m = members[c];
    if (m.empty()) {
      warn("select_clean: class " + std::to_string(c) + " has no samples");
      continue;
    }
    int consistency = 0;  // members whose neighbor label agrees with c
    for (int i : m)
      if (neighbor_argmax[i] == c) ++consistency;
    int budget = consistency == 0
                     ? 1
                     : static_cast<int>(std::ceil(alpha_id * consistency));
    if (consistency == 0) {
      warn("select_clean: class " + std::to_string(c) +
           " has zero consistency degree, keeping its top-margin sample");
    }
    budget = std::min(budget, static_cast<int>(m.size()));
    std::sort(m.begin(), m.end(), [&](int a, int b) {
      if (margins(a) != margins(b)) return margins(a) > margins(b);
      return a < b;
    });
    for (int r = 0; r < budget; ++r) sel.clean_idx.push_back(m[r]);
    sel.gamma_c[c] = margins(m[budget - 1]);
    sel.budget[c] = budget;
  }
  std::sort(sel.clean_idx.begin(), sel.clean_idx.end());
  return sel;
}

double negative_margin(const Eigen::VectorXd& neg_probs, int y) {
  const int c = static_cast<int>(neg_probs.size());
  if (c < 2) throw ContractError("negative_margin: need at least 2 classes");
  if (y < 0 || y >= c) throw ContractError("negative_margin: label");
  double best = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < c; ++j)
    if (j != y) best = std::max(best, neg_probs(j));
  return std::abs(neg_probs(y) - best);
}

OpenSelection select_open(const Eigen::VectorXd& neg_margins,
                          const std::vector<int>& clean_idx, double alpha_ood) {
  const int n = static_cast<int>(neg_margins.size());
  if (!(alpha_ood >= 0.0 && alpha_ood < 1.0)) {
    throw ConfigError("select_open: alpha_ood must lie in [0,1)");
  }
  std::vector<char> is_clean(n, 0);
  for (int i : clean_idx) is_clean.at(i) = 1;

  std::vector<int> candidates;
  for (int i = 0; i < n; ++i)
    if (!is_clean[i]) candidates.push_back(i);

  int quota = static_cast<int>(std::floor(alpha_ood * n));
  if (quota > static_cast<int>(candidates.size())) {
    warn("select_open: quota " + std::to_string(quota) + " exceeds the " +
         std::to_string(candidates.size()) + " non-clean samples, taking all");
    quota = static_cast<int>(candidates.size());
  }

  OpenSelection sel;
  if (quota == 0 || candidates.empty()) return sel;
  std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    if (neg_margins(a) != neg_margins(b)) return neg_margins(a) < neg_margins(b);
    return a < b;
  });
  candidates.resize(quota);
  sel.gamma_neg = neg_margins(candidates.back());
  std::sort(candidates.begin(), candidates.end());
  sel.open_idx = std::move(candidates);
  return sel;
}

Eigen::VectorXd assign_weights(const std::vector<Subset>& membership,
                               const Eigen::VectorXd& m_neigh) {
  const int n = static_cast<int>(membership.size());
  if (m_neigh.size() != n) throw ContractError("assign_weights: length mismatch");

  const double m_max = m_neigh.maxCoeff();
  const bool degenerate = !(m_max + 1.0 > 0.0);
  if (degenerate) {
    warn("assign_weights: max neighbor margin is -1, using weight 0.5 on the "
         "closed-noise subset");
  }

  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) {
    switch (membership[i]) {
      case Subset::clean: w(i) = 1.0; break;
      case Subset::open: w(i) = 0.0; break;
      case Subset::close:
        w(i) = degenerate ? 0.5 : (m_neigh(i) + 1.0) / (m_max + 1.0);
        break;
    }
  }
  return w;
}

void SamplePartition::check() const {
  const int n = size();
  std::vector<int> seen(n, 0);
  auto mark = [&](const std::vector<int>& idx, Subset s) {
    for (int i : idx) {
      if (i < 0 || i >= n) throw ContractError("partition: index out of range");
      if (seen[i]++) throw ContractError("partition: index assigned twice");
      if (membership[i] != s) throw ContractError("partition: membership mismatch");
    }
  };
  mark(clean_idx, Subset::clean);
  mark(close_idx, Subset::close);
  mark(open_idx, Subset::open);
  for (int i = 0; i < n; ++i) {
    if (!seen[i]) throw ContractError("partition: index unassigned");
    if (weights(i) < 0.0 || weights(i) > 1.0) {
      throw ContractError("partition: weight outside [0,1]");
    }
  }
}

SamplePartition identify_samples(const EmbeddingBank& bank,
                                 const HyperParams& hp) {
  const int n = bank.size();
  const int classes = bank.classes();
  const int k = std::min(hp.neighbors, n - 1);
  int top_k = hp.top_k;
  if (top_k > classes - 1) {
    warn("identify: top_k " + std::to_string(top_k) + " clamped to C-1 = " +
         std::to_string(classes - 1));
    top_k = classes - 1;
  }

  const Eigen::MatrixXd q = neighbor_labels(bank, k, hp.tau);

  std::vector<int> argmax(n);
  Eigen::VectorXd m_neigh(n), m_neg(n);
  for (int i = 0; i < n; ++i) {
    Eigen::Index best;
    q.row(i).maxCoeff(&best);
    argmax[i] = static_cast<int>(best);
    m_neigh(i) = neighbor_margin(q.row(i), bank.labels[i], top_k);
    m_neg(i) = negative_margin(bank.neg.row(i), bank.labels[i]);
  }

  CleanSelection clean =
      select_clean(m_neigh, bank.labels, argmax, classes, hp.alpha_id);
  OpenSelection open = select_open(m_neg, clean.clean_idx, hp.alpha_ood);

  SamplePartition part;
  part.epoch = bank.epoch;
  part.m_neigh = m_neigh;
  part.m_neg = m_neg;
  part.gamma_c = clean.gamma_c;
  part.gamma_neg = open.gamma_neg;
  part.clean_idx = clean.clean_idx;
  part.open_idx = open.open_idx;
  part.membership.assign(n, Subset::close);
  for (int i : part.clean_idx) part.membership[i] = Subset::clean;
  for (int i : part.open_idx) part.membership[i] = Subset::open;
  for (int i = 0; i < n; ++i)
    if (part.membership[i] == Subset::close) part.close_idx.push_back(i);
  part.weights = assign_weights(part.membership, m_neigh);
  part.check();
  return part;
}

Eigen::MatrixXd init_prototypes(const EmbeddingBank& bank,
                                const std::vector<int>& clean_idx, int classes,
                                std::uint64_t fallback_seed) {
  const int d = static_cast<int>(bank.z.cols());
  Eigen::MatrixXd protos(classes, d);
  std::vector<int> counts(classes, 0);
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(classes, d);
  for (int i : clean_idx) {
    const int c = bank.labels.at(i);
    sums.row(c) += bank.z.row(i);
    counts[c]++;
  }
  for (int c = 0; c < classes; ++c) {
    bool fallback = counts[c] == 0;
    if (!fallback) {
      const Eigen::RowVectorXd mean = sums.row(c) / counts[c];
      const double nrm = mean.norm();
      if (nrm < 1e-9) {
        fallback = true;  // embeddings cancelled out
      } else {
        protos.row(c) = mean / nrm;
      }
    }
    if (fallback) {
      warn("init_prototypes: class " + std::to_string(c) +
           " has no usable clean mean, using a random unit vector");
      auto rng = make_rng(fallback_seed, RngStream::proto_fallback, c);
      std::normal_distribution<double> normal(0.0, 1.0);
      Eigen::RowVectorXd v(d);
      do {
        for (int j = 0; j < d; ++j) v(j) = normal(rng);
      } while (v.norm() < 1e-9);
      protos.row(c) = v / v.norm();
    }
  }
  return protos;
}

}  // namespace drsl
