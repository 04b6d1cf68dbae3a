#include "drsl/model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "drsl/common.hpp"
#include "drsl/rng.hpp"

namespace drsl {

void HyperParams::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(sharpen_t > 0.0)) throw ConfigError("sharpen_t must be > 0");
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (neighbors < 1) throw ConfigError("neighbors must be >= 1");
  if (!(mixup_alpha > 0.0)) throw ConfigError("mixup_alpha must be > 0");
  if (!(alpha_id > 0.0 && alpha_id <= 1.0))
    throw ConfigError("alpha_id must lie in (0,1]");
  if (!(alpha_ood >= 0.0 && alpha_ood < 1.0))
    throw ConfigError("alpha_ood must lie in [0,1)");
  if (lambda_con < 0.0 || lambda_bcl < 0.0)
    throw ConfigError("loss weights must be >= 0");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  // warmup == total is allowed: it is the warm-up-only ablation.
  if (warmup_epochs > total_epochs)
    throw ConfigError("warmup_epochs must be <= total_epochs");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("momentum must lie in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

void ModelShape::validate() const {
  if (input_dim < 1 || trunk_hidden < 1 || feature_dim < 1 || proj_hidden < 1 ||
      proj_dim < 1 || classes < 1) {
    throw ConfigError("ModelShape: all dimensions must be >= 1");
  }
}

// ---- layers ----

void LinearLayer::init(int in, int out, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = std::sqrt(2.0 / in);
  w.resize(out, in);
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < in; ++c) w(r, c) = scale * normal(rng);
  b = Eigen::VectorXd::Zero(out);
  gw = Eigen::MatrixXd::Zero(out, in);
  gb = Eigen::VectorXd::Zero(out);
  mw = Eigen::MatrixXd::Zero(out, in);
  mb = Eigen::VectorXd::Zero(out);
}

Eigen::MatrixXd LinearLayer::forward(const Eigen::MatrixXd& x) const {
  return (x * w.transpose()).rowwise() + b.transpose();
}

Eigen::MatrixXd LinearLayer::backward(const Eigen::MatrixXd& x,
                                      const Eigen::MatrixXd& dy) {
  gw.noalias() += dy.transpose() * x;
  gb.noalias() += dy.colwise().sum().transpose();
  return dy * w;
}

void LinearLayer::zero_grad() {
  gw.setZero();
  gb.setZero();
}

void LinearLayer::step(double lr, double momentum, double weight_decay) {
  if (weight_decay != 0.0) gw.noalias() += weight_decay * w;
  mw = momentum * mw + gw;
  mb = momentum * mb + gb;
  w.noalias() -= lr * mw;
  b.noalias() -= lr * mb;
}

void Mlp::init(const std::vector<int>& dims, bool relu_after_last,
               std::mt19937_64& rng) {
  layers.resize(dims.size() - 1);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    layers[l].init(dims[l], dims[l + 1], rng);
  }
  relu_last = relu_after_last;
}

static Eigen::MatrixXd relu(const Eigen::MatrixXd& x) {
  return x.cwiseMax(0.0);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = layers[l].forward(h);
    if (l + 1 < layers.size() || relu_last) h = relu(h);
  }
  return h;
}

Mlp::Cache Mlp::forward_cached(const Eigen::MatrixXd& x) const {
  Cache cache;
  cache.inputs.reserve(layers.size());
  cache.pre.reserve(layers.size());
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    cache.inputs.push_back(h);
    Eigen::MatrixXd pre = layers[l].forward(h);
    cache.pre.push_back(pre);
    h = (l + 1 < layers.size() || relu_last) ? relu(pre) : pre;
  }
  cache.out = h;
  return cache;
}

Eigen::MatrixXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& dout) {
  Eigen::MatrixXd d = dout;
  for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
    const bool relu_here =
        l + 1 < static_cast<int>(layers.size()) || relu_last;
    Eigen::MatrixXd dpre =
        relu_here ? (cache.pre[l].array() > 0.0).cast<double>().matrix()
                        .cwiseProduct(d)
                  : d;
    d = layers[l].backward(cache.inputs[l], dpre);
  }
  return d;
}

void Mlp::zero_grad() {
  for (auto& l : layers) l.zero_grad();
}

void Mlp::step(double lr, double momentum, double weight_decay) {
  for (auto& l : layers) l.step(lr, momentum, weight_decay);
}

// ---- OVA probabilities ----

OvaProbs OvaProbs::from_logits(const Eigen::MatrixXd& logits) {
  OvaProbs p;
  p.pos.resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double s = logits(r, c);
      p.pos(r, c) = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s))
                             : std::exp(s) / (1.0 + std::exp(s));
    }
  }
  // exact complement, so every pair sums to 1 by construction
  p.neg = Eigen::MatrixXd::Ones(logits.rows(), logits.cols()) - p.pos;
  return p;
}

// ---- bundle ----

ModelBundle::ModelBundle(const ModelShape& shape, double tau,
                         std::uint64_t seed)
    : shape_(shape), tau_(tau) {
  shape.validate();
  if (!(tau > 0.0)) throw ConfigError("ModelBundle: tau must be > 0");
  auto rng = make_rng(seed, RngStream::model_init);
  trunk_.init({shape.input_dim, shape.trunk_hidden, shape.feature_dim}, true,
              rng);
  proj_.init({shape.feature_dim, shape.proj_hidden, shape.proj_dim}, false,
             rng);
  ova_.init(shape.feature_dim, shape.classes, rng);

  std::normal_distribution<double> normal(0.0, 1.0);
  protos_.resize(shape.classes, shape.proj_dim);
  for (int c = 0; c < shape.classes; ++c) {
    for (int d = 0; d < shape.proj_dim; ++d) protos_(c, d) = normal(rng);
    protos_.row(c).normalize();
  }
  protos_grad_ = Eigen::MatrixXd::Zero(shape.classes, shape.proj_dim);
  protos_mom_ = Eigen::MatrixXd::Zero(shape.classes, shape.proj_dim);
}

ModelBundle::Cache ModelBundle::forward_cached(const Eigen::MatrixXd& x) const {
  if (x.cols() != shape_.input_dim) {
    throw ConfigError("forward: input dim " + std::to_string(x.cols()) +
                      " != model input dim " + std::to_string(shape_.input_dim));
  }
  Cache cache;
  cache.trunk = trunk_.forward_cached(x);
  cache.proj = proj_.forward_cached(cache.trunk.out);
  cache.unnorm = cache.proj.out;
  cache.norms = cache.unnorm.rowwise().norm().cwiseMax(1e-12);
  cache.out.z = cache.unnorm.array().colwise() / cache.norms.array();
  cache.out.ova_logits = ova_.forward(cache.trunk.out);
  cache.out.ova = OvaProbs::from_logits(cache.out.ova_logits);
  cache.out.proto_logits = cache.out.z * protos_.transpose() / tau_;
  return cache;
}

ForwardResult ModelBundle::forward(const Eigen::MatrixXd& x) const {
  return forward_cached(x).out;
}

void ModelBundle::backward(const Cache& cache, const Eigen::MatrixXd& dz_in,
                           const Eigen::MatrixXd& dova,
                           const Eigen::MatrixXd& dproto) {
  const Eigen::Index n = cache.out.z.rows();
  Eigen::MatrixXd dz = dz_in.size() > 0
                           ? dz_in
                           : Eigen::MatrixXd::Zero(n, shape_.proj_dim);
  if (dproto.size() > 0) {
    dz.noalias() += dproto * protos_ / tau_;
    protos_grad_.noalias() += dproto.transpose() * cache.out.z / tau_;
  }

  // through row normalization: du = (dz - z (z.dz)) / ||u||
  Eigen::MatrixXd du(n, shape_.proj_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto z = cache.out.z.row(i);
    du.row(i) = (dz.row(i) - z * z.dot(dz.row(i))) / cache.norms(i);
  }

  Eigen::MatrixXd dfeat = proj_.backward(cache.proj, du);
  if (dova.size() > 0) {
    dfeat.noalias() += ova_.backward(cache.trunk.out, dova);
  }
  trunk_.backward(cache.trunk, dfeat);
}

void ModelBundle::zero_grad() {
  trunk_.zero_grad();
  proj_.zero_grad();
  ova_.zero_grad();
  protos_grad_.setZero();
}

void ModelBundle::step(double lr, double momentum, double weight_decay) {
  trunk_.step(lr, momentum, weight_decay);
  proj_.step(lr, momentum, weight_decay);
  ova_.step(lr, momentum, weight_decay);
  // prototypes: no weight decay (the renormalization below cancels it)
  protos_mom_ = momentum * protos_mom_ + protos_grad_;
  protos_.noalias() -= lr * protos_mom_;
  for (Eigen::Index c = 0; c < protos_.rows(); ++c) {
    const double nrm = protos_.row(c).norm();
    if (nrm > 1e-12) protos_.row(c) /= nrm;
  }
}

void ModelBundle::set_prototypes(const Eigen::MatrixXd& p) {
  if (p.rows() != protos_.rows() || p.cols() != protos_.cols()) {
    throw ConfigError("set_prototypes: shape mismatch");
  }
  protos_ = p;
  protos_mom_.setZero();
}

// ---- augmentation / mixup ----

AugmentationPolicy AugmentationPolicy::scaled(double feature_std) {
  AugmentationPolicy p;
  p.sigma_weak = 0.05 * feature_std;
  p.sigma_strong = 0.15 * feature_std;
  p.dropout_fraction = 0.2;
  return p;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> make_views(
    const AugmentationPolicy& policy, const Eigen::MatrixXd& batch,
    std::uint64_t seed) {
  auto rng = make_rng(seed, RngStream::augment);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  Eigen::MatrixXd weak = batch;
  Eigen::MatrixXd strong = batch;
  for (Eigen::Index i = 0; i < batch.rows(); ++i)
    for (Eigen::Index d = 0; d < batch.cols(); ++d)
      weak(i, d) += policy.sigma_weak * normal(rng);
  for (Eigen::Index i = 0; i < batch.rows(); ++i)
    for (Eigen::Index d = 0; d < batch.cols(); ++d)
      strong(i, d) += policy.sigma_strong * normal(rng);
  if (policy.dropout_fraction > 0.0) {
    for (Eigen::Index i = 0; i < batch.rows(); ++i)
      for (Eigen::Index d = 0; d < batch.cols(); ++d)
        if (uniform(rng) < policy.dropout_fraction) strong(i, d) = 0.0;
  }
  return {std::move(weak), std::move(strong)};
}

MixupPlan make_mixup_plan(int batch_size, double alpha, std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup alpha must be > 0");
  MixupPlan plan;
  plan.partner.resize(std::max(batch_size, 0));
  std::iota(plan.partner.begin(), plan.partner.end(), 0);
  if (batch_size < 2) {
    plan.lambda = 1.0;
    return plan;
  }
  plan.lambda = beta_draw(rng, alpha);
  std::shuffle(plan.partner.begin(), plan.partner.end(), rng);
  return plan;
}

Eigen::MatrixXd mix_inputs(const Eigen::MatrixXd& x, const MixupPlan& plan) {
  if (x.rows() != static_cast<Eigen::Index>(plan.partner.size())) {
    throw ConfigError("mix_inputs: plan size mismatch");
  }
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = plan.lambda * x.row(i) +
                 (1.0 - plan.lambda) * x.row(plan.partner[i]);
  }
  return out;
}

// ---- serialization ----

void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  const std::int64_t rows = m.rows(), cols = m.cols();
  os.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
  os.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * rows * cols));
}

Eigen::MatrixXd read_matrix(std::istream& is) {
  std::int64_t rows = 0, cols = 0;
  is.read(reinterpret_cast<char*>(&rows), sizeof(rows));
  is.read(reinterpret_cast<char*>(&cols), sizeof(cols));
  if (!is || rows < 0 || cols < 0) throw ConfigError("corrupt matrix header");
  Eigen::MatrixXd m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * rows * cols));
  if (!is) throw ConfigError("corrupt matrix payload");
  return m;
}

static void write_vector(std::ostream& os, const Eigen::VectorXd& v) {
  write_matrix(os, v);
}

static Eigen::VectorXd read_vector(std::istream& is) {
  Eigen::MatrixXd m = read_matrix(is);
  return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(m.data(), m.size()));
}

static void write_layer(std::ostream& os, const LinearLayer& l) {
  write_matrix(os, l.w);
  write_vector(os, l.b);
  write_matrix(os, l.mw);
  write_vector(os, l.mb);
}

static void read_layer(std::istream& is, LinearLayer& l) {
  l.w = read_matrix(is);
  l.b = read_vector(is);
  l.mw = read_matrix(is);
  l.mb = read_vector(is);
  l.gw = Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols());
  l.gb = Eigen::VectorXd::Zero(l.b.size());
}

static void write_mlp(std::ostream& os, const Mlp& m) {
  const std::int64_t n = static_cast<std::int64_t>(m.layers.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  const std::uint8_t rl = m.relu_last ? 1 : 0;
  os.write(reinterpret_cast<const char*>(&rl), sizeof(rl));
  for (const auto& l : m.layers) write_layer(os, l);
}

static void read_mlp(std::istream& is, Mlp& m) {
  std::int64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  std::uint8_t rl = 0;
  is.read(reinterpret_cast<char*>(&rl), sizeof(rl));
  if (!is || n < 0) throw ConfigError("corrupt mlp header");
  m.layers.resize(n);
  m.relu_last = rl != 0;
  for (auto& l : m.layers) read_layer(is, l);
}

void ModelBundle::save(std::ostream& os) const {
  const std::int32_t dims[6] = {shape_.input_dim,  shape_.trunk_hidden,
                                shape_.feature_dim, shape_.proj_hidden,
                                shape_.proj_dim,    shape_.classes};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  os.write(reinterpret_cast<const char*>(&tau_), sizeof(tau_));
  const std::uint8_t pinit = protos_initialized_ ? 1 : 0;
  os.write(reinterpret_cast<const char*>(&pinit), sizeof(pinit));
  write_mlp(os, trunk_);
  write_mlp(os, proj_);
  write_layer(os, ova_);
  write_matrix(os, protos_);
  write_matrix(os, protos_mom_);
}

ModelBundle ModelBundle::load(std::istream& is) {
  ModelBundle m;
  std::int32_t dims[6];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  is.read(reinterpret_cast<char*>(&m.tau_), sizeof(m.tau_));
  std::uint8_t pinit = 0;
  is.read(reinterpret_cast<char*>(&pinit), sizeof(pinit));
  if (!is) throw ConfigError("corrupt model header");
  m.shape_ = ModelShape{dims[0], dims[1], dims[2], dims[3], dims[4], dims[5]};
  m.protos_initialized_ = pinit != 0;
  read_mlp(is, m.trunk_);
  read_mlp(is, m.proj_);
  read_layer(is, m.ova_);
  m.protos_ = read_matrix(is);
  m.protos_mom_ = read_matrix(is);
  m.protos_grad_ = Eigen::MatrixXd::Zero(m.protos_.rows(), m.protos_.cols());
  return m;
}

static bool same(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

bool ModelBundle::equal_weights(const ModelBundle& o) const {
  auto layer_eq = [](const LinearLayer& a, const LinearLayer& b) {
    return same(a.w, b.w) && a.b == b.b && same(a.mw, b.mw) && a.mb == b.mb;
  };
  if (trunk_.layers.size() != o.trunk_.layers.size() ||
      proj_.layers.size() != o.proj_.layers.size()) {
    return false;
  }
  for (std::size_t l = 0; l < trunk_.layers.size(); ++l)
    if (!layer_eq(trunk_.layers[l], o.trunk_.layers[l])) return false;
  for (std::size_t l = 0; l < proj_.layers.size(); ++l)
    if (!layer_eq(proj_.layers[l], o.proj_.layers[l])) return false;
  return layer_eq(ova_, o.ova_) && same(protos_, o.protos_) &&
         same(protos_mom_, o.protos_mom_) &&
         protos_initialized_ == o.protos_initialized_;
}

}  // namespace drsl
