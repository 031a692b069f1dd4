#pragma once

// Differentiable objectives: a strongly convex quadratic, the 2-D toy saddle
// function, a square linear autoencoder, and a ReLU MLP with softmax head.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssamlab/numerics.hpp"

namespace ssamlab {

/// Anything with a loss and an analytic gradient over a flat parameter vector.
template <class O>
concept GradientOracle = requires(const O& o, std::span<const double> w, std::span<double> g) {
  { o.dim() } -> std::convertible_to<std::size_t>;
  { o.loss(w) } -> std::convertible_to<double>;
  { o.loss_grad(w, g) } -> std::convertible_to<double>;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Quadratic f(x) = x^T H x / 2 with H = A A^T / (2d) + delta I.

class QuadraticProblem {
 public:
  /// A is d x 2d with i.i.d. N(0, a_std^2) entries drawn from stream (seed, 0).
  static QuadraticProblem make(std::size_t d, double delta, std::uint64_t seed, double a_std = 1.0) {
    if (d == 0) throw std::invalid_argument("quadratic_make: d must be >= 1");
    if (!(delta > 0.0)) throw std::invalid_argument("quadratic_make: delta must be > 0");
    RngStream rng = derive_stream(seed, 0);
    RowMatrix a(d, 2 * d);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = a_std == 0.0 ? 0.0 : a_std * rng.gaussian();
    RowMatrix h = (a * a.transpose()) / (2.0 * static_cast<double>(d));
    h.diagonal().array() += delta;
    // Symmetrize exactly; the product is symmetric only up to rounding.
    RowMatrix sym = 0.5 * (h + h.transpose());
    return QuadraticProblem(std::move(sym), delta, seed);
  }

  /// Quadratic with an explicitly given symmetric positive-definite Hessian.
  static QuadraticProblem from_hessian(const RowMatrix& h) {
    if (h.rows() != h.cols() || h.rows() == 0) throw std::invalid_argument("from_hessian: H must be square");
    if (!h.isApprox(h.transpose(), 1e-12)) throw std::invalid_argument("from_hessian: H must be symmetric");
    return QuadraticProblem(h, 0.0, 0);
  }

  static QuadraticProblem diagonal(std::span<const double> diag) {
    RowMatrix h = RowMatrix::Zero(static_cast<Eigen::Index>(diag.size()), static_cast<Eigen::Index>(diag.size()));
    for (std::size_t i = 0; i < diag.size(); ++i) h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = diag[i];
    return from_hessian(h);
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(h_.rows()); }
  const RowMatrix& hessian() const noexcept { return h_; }
  double delta() const noexcept { return delta_; }
  std::uint64_t gen_seed() const noexcept { return seed_; }

  void hess_vec(std::span<const double> x, std::span<double> out) const {
    Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    Eigen::Map<Eigen::VectorXd> ov(out.data(), static_cast<Eigen::Index>(out.size()));
    ov.noalias() = h_ * xv;
  }

  double loss(std::span<const double> x) const {
    Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    return 0.5 * xv.dot(h_ * xv);
  }

  double loss_grad(std::span<const double> x, std::span<double> g) const {
    hess_vec(x, g);
    return 0.5 * dot(x, g);
  }

 private:
  QuadraticProblem(RowMatrix h, double delta, std::uint64_t seed) : h_(std::move(h)), delta_(delta), seed_(seed) {}

  RowMatrix h_;
  double delta_;
  std::uint64_t seed_;
};

inline QuadraticProblem quadratic_make(std::size_t d, double delta, std::uint64_t seed) {
  return QuadraticProblem::make(d, delta, seed);
}

// ---------------------------------------------------------------------------
// f(x1, x2) = x1^4/4 - x1 x2 + x2^2/2: strict saddle at the origin, global
// minima at (1, 1) and (-1, -1).

struct Toy2DProblem {
  std::size_t dim() const noexcept { return 2; }

  double loss(std::span<const double> x) const {
    const double a = x[0], b = x[1];
    return 0.25 * a * a * a * a - a * b + 0.5 * b * b;
  }

  double loss_grad(std::span<const double> x, std::span<double> g) const {
    const double a = x[0], b = x[1];
    g[0] = a * a * a - b;
    g[1] = b - a;
    return 0.25 * a * a * a * a - a * b + 0.5 * b * b;
  }
};

struct LossGrad {
  double loss;
  ParamVector grad;
};

inline LossGrad toy2d_loss_grad(const ParamVector& x) {
  if (x.size() != 2) throw std::invalid_argument("toy2d_loss_grad: expects a 2-vector");
  LossGrad out{0.0, ParamVector(2)};
  out.loss = Toy2DProblem{}.loss_grad(x, out.grad);
  return out;
}

// ---------------------------------------------------------------------------
// Linear autoencoder L(W1, W2) = ||W2 W1 - I||_F^2 / 2. Parameters are packed
// as [W1 row-major | W2 row-major].

class LinearAutoencoderProblem {
 public:
  explicit LinearAutoencoderProblem(std::size_t d) : d_(d), params_(2 * d * d, 0.0) {
    if (d == 0) throw std::invalid_argument("linear autoencoder: d must be >= 1");
  }

  LinearAutoencoderProblem(std::size_t d, ParamVector params) : d_(d), params_(std::move(params)) {
    if (d == 0 || params_.size() != 2 * d * d)
      throw std::invalid_argument("linear autoencoder: parameter length must be 2 d^2");
  }

  std::size_t d() const noexcept { return d_; }
  std::size_t dim() const noexcept { return 2 * d_ * d_; }
  const ParamVector& params() const noexcept { return params_; }
  ParamVector& params() noexcept { return params_; }

  double loss(std::span<const double> w) const {
    const auto [w1, w2] = split(w);
    RowMatrix r = w2 * w1;
    r.diagonal().array() -= 1.0;
    return 0.5 * r.squaredNorm();
  }

  double loss_grad(std::span<const double> w, std::span<double> g) const {
    const auto [w1, w2] = split(w);
    RowMatrix r = w2 * w1;
    r.diagonal().array() -= 1.0;
    const auto n = static_cast<Eigen::Index>(d_);
    Eigen::Map<RowMatrix> g1(g.data(), n, n);
    Eigen::Map<RowMatrix> g2(g.data() + d_ * d_, n, n);
    g1.noalias() = w2.transpose() * r;
    g2.noalias() = r * w1.transpose();
    return 0.5 * r.squaredNorm();
  }

 private:
  std::pair<Eigen::Map<const RowMatrix>, Eigen::Map<const RowMatrix>> split(std::span<const double> w) const {
    const auto n = static_cast<Eigen::Index>(d_);
    return {Eigen::Map<const RowMatrix>(w.data(), n, n), Eigen::Map<const RowMatrix>(w.data() + d_ * d_, n, n)};
  }

  std::size_t d_;
  ParamVector params_;
};

/// W1, W2 elementwise i.i.d. N(0, init_std^2) from stream (seed, 0).
inline LinearAutoencoderProblem lae_make(std::size_t d, double init_std, std::uint64_t seed) {
  if (!(init_std >= 0.0)) throw std::invalid_argument("lae_make: init_std must be >= 0");
  LinearAutoencoderProblem p(d);
  RngStream rng = derive_stream(seed, 0);
  add_gaussian(rng, init_std, p.params());
  return p;
}

inline LossGrad lae_loss_grad(const LinearAutoencoderProblem& p) {
  LossGrad out{0.0, ParamVector(p.dim())};
  out.loss = p.loss_grad(p.params(), out.grad);
  return out;
}

// ---------------------------------------------------------------------------
// Classification data and the MLP.

struct Dataset {
  std::size_t n = 0;
  std::size_t p = 0;
  std::size_t classes = 0;
  std::vector<double> features;  // n x p, row-major
  std::vector<int> labels;

  std::span<const double> row(std::size_t i) const { return {features.data() + i * p, p}; }

  void validate() const {
    if (features.size() != n * p || labels.size() != n) throw std::invalid_argument("dataset: inconsistent sizes");
    for (double v : features)
      if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite feature");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= classes) throw std::invalid_argument("dataset: label out of range");
  }

  void push_back(std::span<const double> x, int y) {
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(y);
    ++n;
  }
};

inline void shuffle_indices(RngStream& rng, std::span<std::size_t> idx) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

/// Gaussian blobs around class centers spaced one unit apart.
///
/// Centers sit on a circle in the first two coordinates (on a line when p = 1)
/// with adjacent centers at distance 1; every coordinate gets N(0, spread^2)
/// noise. Labels cycle through the classes, so counts differ by at most one.
inline Dataset synth_classification(std::size_t n, std::size_t p, std::size_t classes, std::uint64_t seed,
                                    double spread = 0.25) {
  if (classes < 2 || n < classes) throw std::invalid_argument("synth_classification: need n >= classes >= 2");
  if (p == 0) throw std::invalid_argument("synth_classification: p must be >= 1");
  Dataset ds;
  ds.p = p;
  ds.classes = classes;
  RngStream rng = derive_stream(seed, 0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_indices(rng, order);
  const double radius = 1.0 / (2.0 * std::sin(std::numbers::pi / static_cast<double>(classes)));
  std::vector<double> x(p);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = order[i] % classes;
    for (double& v : x) v = spread * rng.gaussian();
    if (p == 1) {
      x[0] += static_cast<double>(c);
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
      x[0] += radius * std::cos(angle);
      x[1] += radius * std::sin(angle);
    }
    ds.push_back(x, static_cast<int>(c));
  }
  return ds;
}

struct PerturbedPair {
  Dataset s;
  Dataset s_prime;
  std::size_t removed_index;
  std::size_t replaced_index;
};

/// Removes one random example z from s0 to form S, then builds S' by
/// overwriting one random position of S with z.
inline PerturbedPair dataset_perturb_one(const Dataset& s0, std::uint64_t seed) {
  if (s0.n < 2) throw std::invalid_argument("dataset_perturb_one: need at least 2 examples");
  RngStream rng = derive_stream(seed, 0);
  const std::size_t removed = rng.below(s0.n);
  Dataset s;
  s.p = s0.p;
  s.classes = s0.classes;
  s.features.reserve((s0.n - 1) * s0.p);
  s.labels.reserve(s0.n - 1);
  for (std::size_t i = 0; i < s0.n; ++i)
    if (i != removed) s.push_back(s0.row(i), s0.labels[i]);
  const std::size_t replaced = rng.below(s.n);
  Dataset sp = s;
  std::copy_n(s0.row(removed).begin(), s0.p, sp.features.begin() + static_cast<std::ptrdiff_t>(replaced * s0.p));
  sp.labels[replaced] = s0.labels[removed];
  return {std::move(s), std::move(sp), removed, replaced};
}

/// Fully connected ReLU network with a softmax cross-entropy head.
///
/// Layer l stores W_l (out x in, row-major) followed by b_l (out) in the flat
/// parameter vector.
class MlpProblem {
 public:
  explicit MlpProblem(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw std::invalid_argument("mlp: need at least input and output widths");
    for (std::size_t w : widths_)
      if (w == 0) throw std::invalid_argument("mlp: widths must be positive");
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      offsets_.push_back(off);
      off += widths_[l] * widths_[l + 1] + widths_[l + 1];
    }
    count_ = off;
  }

  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  std::size_t param_count() const noexcept { return count_; }
  std::size_t layers() const noexcept { return widths_.size() - 1; }
  std::size_t input_width() const noexcept { return widths_.front(); }
  std::size_t classes() const noexcept { return widths_.back(); }

  /// He-normal weights, zero biases.
  ParamVector init(RngStream& rng) const {
    ParamVector w(count_, 0.0);
    for (std::size_t l = 0; l < layers(); ++l) {
      const double std = std::sqrt(2.0 / static_cast<double>(widths_[l]));
      for (std::size_t k = 0; k < widths_[l] * widths_[l + 1]; ++k) w[offsets_[l] + k] = std * rng.gaussian();
    }
    return w;
  }

  struct Workspace {
    std::vector<std::vector<double>> acts;
    std::vector<std::vector<double>> deltas;
  };

  Workspace make_workspace() const {
    Workspace ws;
    for (std::size_t w : widths_) {
      ws.acts.emplace_back(w, 0.0);
      ws.deltas.emplace_back(w, 0.0);
    }
    return ws;
  }

  /// Mean cross-entropy over data[idx]; accumulates the mean gradient into grad
  /// (overwritten) unless grad is empty.
  double loss_grad(std::span<const double> w, const Dataset& data, std::span<const std::size_t> idx,
                   std::span<double> grad, Workspace& ws) const {
    check(w, data);
    if (idx.empty()) throw std::invalid_argument("mlp: empty batch");
    const bool want_grad = !grad.empty();
    if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
    double total = 0.0;
    for (std::size_t i : idx) {
      total += forward(w, data.row(i), ws, data.labels[i]);
      if (!want_grad) continue;
      const std::size_t last = layers();
      auto& out = ws.acts[last];
      auto& d_out = ws.deltas[last];
      for (std::size_t k = 0; k < out.size(); ++k) d_out[k] = out[k];
      d_out[static_cast<std::size_t>(data.labels[i])] -= 1.0;
      for (std::size_t l = last; l-- > 0;) {
        const std::size_t in = widths_[l], outw = widths_[l + 1];
        const double* wl = w.data() + offsets_[l];
        double* gw = grad.data() + offsets_[l];
        double* gb = gw + in * outw;
        const auto& a_in = ws.acts[l];
        const auto& d = ws.deltas[l + 1];
        for (std::size_t o = 0; o < outw; ++o) {
          const double dv = d[o];
          if (dv == 0.0) continue;
          double* row = gw + o * in;
          for (std::size_t j = 0; j < in; ++j) row[j] += dv * a_in[j];
          gb[o] += dv;
        }
        if (l == 0) break;
        auto& d_prev = ws.deltas[l];
        std::fill(d_prev.begin(), d_prev.end(), 0.0);
        for (std::size_t o = 0; o < outw; ++o) {
          const double dv = d[o];
          if (dv == 0.0) continue;
          const double* row = wl + o * in;
          for (std::size_t j = 0; j < in; ++j) d_prev[j] += dv * row[j];
        }
        for (std::size_t j = 0; j < in; ++j)
          if (a_in[j] <= 0.0) d_prev[j] = 0.0;
      }
    }
    const double inv = 1.0 / static_cast<double>(idx.size());
    if (want_grad) scale(inv, grad);
    return total * inv;
  }

  /// Class probabilities for one input (valid until the next call on ws).
  std::span<const double> probabilities(std::span<const double> w, std::span<const double> x, Workspace& ws) const {
    forward(w, x, ws, -1);
    return ws.acts.back();
  }

  double mean_loss(std::span<const double> w, const Dataset& data) const {
    auto ws = make_workspace();
    std::vector<std::size_t> idx(data.n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return loss_grad(w, data, idx, {}, ws);
  }

  /// Fraction of misclassified examples.
  double error_rate(std::span<const double> w, const Dataset& data) const {
    check(w, data);
    auto ws = make_workspace();
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < data.n; ++i) {
      auto prob = probabilities(w, data.row(i), ws);
      const auto best = static_cast<int>(std::max_element(prob.begin(), prob.end()) - prob.begin());
      if (best != data.labels[i]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(data.n);
  }

 private:
  void check(std::span<const double> w, const Dataset& data) const {
    if (w.size() != count_) throw std::invalid_argument("mlp: parameter length does not match architecture");
    if (data.p != widths_.front()) throw std::invalid_argument("mlp: feature width does not match input layer");
  }

  // Fills ws.acts (the last entry ends up holding softmax probabilities) and
  // returns the cross-entropy against `label`, or 0 when label < 0.
  double forward(std::span<const double> w, std::span<const double> x, Workspace& ws, int label) const {
    std::copy(x.begin(), x.end(), ws.acts[0].begin());
    for (std::size_t l = 0; l < layers(); ++l) {
      const std::size_t in = widths_[l], outw = widths_[l + 1];
      const double* wl = w.data() + offsets_[l];
      const double* bl = wl + in * outw;
      const auto& a_in = ws.acts[l];
      auto& a_out = ws.acts[l + 1];
      const bool hidden = l + 1 < layers();
      for (std::size_t o = 0; o < outw; ++o) {
        const double* row = wl + o * in;
        double z = bl[o];
        for (std::size_t j = 0; j < in; ++j) z += row[j] * a_in[j];
        a_out[o] = hidden ? std::max(z, 0.0) : z;
      }
    }
    auto& logits = ws.acts.back();
    const double mx = *std::max_element(logits.begin(), logits.end());
    const double z_label = label >= 0 ? logits[static_cast<std::size_t>(label)] : 0.0;
    double sum = 0.0;
    for (double& v : logits) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : logits) v /= sum;
    return label >= 0 ? std::log(sum) + mx - z_label : 0.0;
  }

  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
  std::size_t count_ = 0;
};

inline LossGrad mlp_loss_grad(const MlpProblem& m, const ParamVector& w, const Dataset& batch,
                              std::span<const std::size_t> idx) {
  auto ws = m.make_workspace();
  LossGrad out{0.0, ParamVector(m.param_count())};
  out.loss = m.loss_grad(w, batch, idx, out.grad, ws);
  return out;
}

inline LossGrad mlp_loss_grad(const MlpProblem& m, const ParamVector& w, const Dataset& batch) {
  std::vector<std::size_t> idx(batch.n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return mlp_loss_grad(m, w, batch, idx);
}

/// GradientOracle over a mini-batch of a dataset. Holds scratch buffers, so
/// one instance must not be shared between threads.
class MlpOracle {
 public:
  MlpOracle(const MlpProblem& m, const Dataset& data) : m_(&m), data_(&data), ws_(m.make_workspace()) {
    if (data.p != m.input_width()) throw std::invalid_argument("mlp: feature width does not match input layer");
    use_full_batch();
  }

  void set_batch(std::span<const std::size_t> idx) { batch_.assign(idx.begin(), idx.end()); }

  void use_full_batch() {
    batch_.resize(data_->n);
    std::iota(batch_.begin(), batch_.end(), std::size_t{0});
  }

  std::size_t dim() const noexcept { return m_->param_count(); }

  double loss(std::span<const double> w) const { return m_->loss_grad(w, *data_, batch_, {}, ws_); }

  double loss_grad(std::span<const double> w, std::span<double> g) const {
    return m_->loss_grad(w, *data_, batch_, g, ws_);
  }

 private:
  const MlpProblem* m_;
  const Dataset* data_;
  std::vector<std::size_t> batch_;
  mutable MlpProblem::Workspace ws_;
};

}  // namespace ssamlab
