#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <utility>
#include <vector>

namespace drsl {

/// Everything the method tunes. Defaults are the values used throughout
/// the experiments; desk-scale configs override epochs and neighbor
/// counts.
struct HyperParams {
  double tau = 0.1;          // temperature for prototype/contrastive logits
  double sharpen_t = 0.5;    // pseudo-label sharpening temperature T
  int top_k = 3;             // K entries averaged in the neighbor margin
  int neighbors = 200;       // k nearest neighbors in the embedding bank
  double mixup_alpha = 1.0;  // Beta(alpha, alpha) mixing
  double alpha_id = 0.9;     // per-class clean-selection quantile
  double alpha_ood = 0.1;    // open-set filter fraction of the train set
  double lambda_con = 0.5;
  double lambda_bcl = 0.3;
  int warmup_epochs = 50;
  int total_epochs = 300;
  int batch_size = 128;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  void validate() const;  // throws ConfigError
};

/// Layer sizes of the desk-scale backbone: trunk MLP (feature extractor),
/// projection head, and the per-class OVA logits.
struct ModelShape {
  int input_dim = 0;
  int trunk_hidden = 64;
  int feature_dim = 64;
  int proj_hidden = 64;
  int proj_dim = 32;
  int classes = 0;

  void validate() const;
};

struct LinearLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
  Eigen::MatrixXd gw;
  Eigen::VectorXd gb;
  Eigen::MatrixXd mw;
  Eigen::VectorXd mb;

  void init(int in, int out, std::mt19937_64& rng);
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  // Accumulates gw/gb and returns the gradient w.r.t. x.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy);
  void zero_grad();
  void step(double lr, double momentum, double weight_decay);
};

/// Stack of linear layers with ReLU after each layer except (optionally)
/// the last.
struct Mlp {
  std::vector<LinearLayer> layers;
  bool relu_last = true;

  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
    Eigen::MatrixXd out;
  };

  void init(const std::vector<int>& dims, bool relu_after_last,
            std::mt19937_64& rng);
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Cache forward_cached(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& dout);
  void zero_grad();
  void step(double lr, double momentum, double weight_decay);
};

/// OVA probabilities as explicit (positive, negative) pairs; rows are
/// samples, columns classes, pos + neg == 1 by construction.
struct OvaProbs {
  Eigen::MatrixXd pos;
  Eigen::MatrixXd neg;

  static OvaProbs from_logits(const Eigen::MatrixXd& logits);
};

struct ForwardResult {
  Eigen::MatrixXd z;             // unit-norm embeddings, n x proj_dim
  Eigen::MatrixXd ova_logits;    // n x C
  OvaProbs ova;                  // probabilities derived from the logits
  Eigen::MatrixXd proto_logits;  // P_c . z_i / tau, n x C
};

/// Shared feature extractor G, projection head H (output L2-normalized),
/// per-class OVA logits, and the learnable prototype matrix (unit rows,
/// renormalized after every optimizer step).
class ModelBundle {
 public:
  ModelBundle(const ModelShape& shape, double tau, std::uint64_t seed);

  ForwardResult forward(const Eigen::MatrixXd& x) const;

  struct Cache {
    Mlp::Cache trunk;
    Mlp::Cache proj;
    Eigen::MatrixXd unnorm;      // projection output before normalization
    Eigen::VectorXd norms;       // row norms of unnorm
    ForwardResult out;
  };
  Cache forward_cached(const Eigen::MatrixXd& x) const;

  /// Accumulates parameter gradients. `dz` is the gradient w.r.t. the
  /// normalized embedding, `dova` w.r.t. the OVA logits, `dproto` w.r.t.
  /// the prototype logits (routed into both the embedding and the
  /// prototype matrix). Any of them may be empty (size 0).
  void backward(const Cache& cache, const Eigen::MatrixXd& dz,
                const Eigen::MatrixXd& dova, const Eigen::MatrixXd& dproto);

  void zero_grad();
  /// SGD step with momentum; prototypes are renormalized to unit rows
  /// afterwards and excluded from weight decay.
  void step(double lr, double momentum, double weight_decay);

  const Eigen::MatrixXd& prototypes() const { return protos_; }
  void set_prototypes(const Eigen::MatrixXd& p);
  bool prototypes_initialized() const { return protos_initialized_; }
  void mark_prototypes_initialized() { protos_initialized_ = true; }

  const ModelShape& shape() const { return shape_; }
  double tau() const { return tau_; }

  void save(std::ostream& os) const;
  static ModelBundle load(std::istream& is);

  bool equal_weights(const ModelBundle& other) const;  // bitwise

 private:
  ModelBundle() = default;

  ModelShape shape_;
  double tau_ = 0.1;
  Mlp trunk_;
  Mlp proj_;
  LinearLayer ova_;
  Eigen::MatrixXd protos_;       // C x proj_dim
  Eigen::MatrixXd protos_grad_;
  Eigen::MatrixXd protos_mom_;
  bool protos_initialized_ = false;
};

/// Weak/strong perturbations for vector data: additive Gaussian noise,
/// plus coordinate dropout on the strong view.
struct AugmentationPolicy {
  double sigma_weak = 0.05;
  double sigma_strong = 0.15;
  double dropout_fraction = 0.2;

  /// Default policy with noise magnitudes scaled by the per-dataset
  /// feature standard deviation.
  static AugmentationPolicy scaled(double feature_std);
};

/// Two stochastic views of a batch, same sample order, deterministic
/// given the seed.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> make_views(
    const AugmentationPolicy& policy, const Eigen::MatrixXd& batch,
    std::uint64_t seed);

/// Mixing plan for a batch: partner[i] pairs sample i with a permuted
/// partner; one lambda ~ Beta(alpha, alpha) per batch. Batches of size
/// < 2 degenerate to the identity pairing with lambda = 1.
struct MixupPlan {
  std::vector<int> partner;
  double lambda = 1.0;
};

MixupPlan make_mixup_plan(int batch_size, double alpha, std::mt19937_64& rng);
Eigen::MatrixXd mix_inputs(const Eigen::MatrixXd& x, const MixupPlan& plan);

// Binary (de)serialization helpers shared by checkpoints.
void write_matrix(std::ostream& os, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix(std::istream& is);

}  // namespace drsl
