#pragma once

// SGD, SAM (w + rho g) and SAM* (w + rho g/|g|), each optionally with
// gradient renormalization: the descent gradient g_asc is rescaled by
// gamma_t = |g_t| / |g_asc| before it reaches the base optimizer. SAM with
// renormalization is SSAM.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "ssamlab/numerics.hpp"
#include "ssamlab/problems.hpp"

namespace ssamlab {

enum class Family { SGD, SAM, SAM_STAR };

struct OptimizerConfig {
  Family family = Family::SGD;
  bool renormalize = false;
  double eta = 0.01;
  double rho = 0.0;
  double momentum = 0.0;
  double weight_decay = 0.0;
  /// Reuse the ascent-step noise draw for the descent gradient instead of
  /// drawing fresh noise.
  bool reuse_noise = false;

  static OptimizerConfig sgd(double eta) { return {Family::SGD, false, eta, 0.0}; }
  static OptimizerConfig sam(double eta, double rho) { return {Family::SAM, false, eta, rho}; }
  static OptimizerConfig sam_star(double eta, double rho) { return {Family::SAM_STAR, false, eta, rho}; }
  static OptimizerConfig ssam(double eta, double rho) { return {Family::SAM, true, eta, rho}; }

  bool is_sgd() const noexcept { return family == Family::SGD; }
  bool renormalizes() const noexcept { return renormalize && !is_sgd(); }

  /// Display name: SGD, SAM, SAM*, SSAM or SSAM*.
  std::string name() const {
    switch (family) {
      case Family::SGD: return "SGD";
      case Family::SAM: return renormalize ? "SSAM" : "SAM";
      case Family::SAM_STAR: return renormalize ? "SSAM*" : "SAM*";
    }
    return "?";
  }

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("optimizer: eta must be > 0");
    if (!(rho >= 0.0)) throw std::invalid_argument("optimizer: rho must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
  }
};

/// Parses SGD / SAM / SAM* / SSAM / SSAM* (case-insensitive, sam_star and
/// ssam_star accepted too) into a config with the given eta and rho.
inline OptimizerConfig parse_optimizer(std::string_view name, double eta, double rho) {
  std::string s;
  for (char c : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  OptimizerConfig cfg;
  if (s == "sgd") cfg = OptimizerConfig::sgd(eta);
  else if (s == "sam") cfg = OptimizerConfig::sam(eta, rho);
  else if (s == "sam*" || s == "sam_star") cfg = OptimizerConfig::sam_star(eta, rho);
  else if (s == "ssam") cfg = OptimizerConfig::ssam(eta, rho);
  else if (s == "ssam*" || s == "ssam_star") {
    cfg = OptimizerConfig::sam_star(eta, rho);
    cfg.renormalize = true;
  } else {
    throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
  }
  return cfg;
}

struct StepRecord {
  long t = 0;
  double loss = 0.0;
  double grad_norm = 0.0;      // |g_t|, noise included
  double asc_grad_norm = 0.0;  // |g_t^asc|, noise included
  double gamma = 1.0;          // |g_t| / |g_t^asc|, recorded even without renormalization
  double step_norm = 0.0;      // |w_{t+1} - w_t|
  double eff_grad_norm = 0.0;  // norm of the gradient handed to the base optimizer
  bool degenerate = false;     // zero ascent gradient (or zero g for SAM*)
};

/// Non-finite loss, gradient or iterate at step t.
struct DivergenceError : std::runtime_error {
  DivergenceError(long step, const std::string& what)
      : std::runtime_error("diverged at step " + std::to_string(step) + ": " + what), t(step) {}
  long t;
};

struct DegenerateGradientError : std::domain_error {
  using std::domain_error::domain_error;
};

class OptState;

template <class O>
StepRecord step(const OptimizerConfig& cfg, OptState& st, const O& oracle, std::span<double> w, double noise_std,
                RngStream& rng);

/// Per-run optimizer state: momentum buffer, step counter and scratch space.
class OptState {
 public:
  explicit OptState(std::size_t dim)
      : buffer(dim, 0.0), g_(dim), w_asc_(dim), g_asc_(dim), noise_(dim) {}

  ParamVector buffer;
  long t = 0;

 private:
  template <class O>
  friend StepRecord step(const OptimizerConfig&, OptState&, const O&, std::span<double>, double, RngStream&);

  ParamVector g_, w_asc_, g_asc_, noise_;
};

/// SAM: w + rho g. SAM*: w + rho g/|g|. SGD: w.
inline ParamVector ascent_point(const ParamVector& w, const ParamVector& g, double rho, Family family) {
  if (!(rho >= 0.0)) throw std::invalid_argument("ascent_point: rho must be >= 0");
  ParamVector out = w;
  switch (family) {
    case Family::SGD: break;
    case Family::SAM: axpy(rho, g, out); break;
    case Family::SAM_STAR: {
      const double n = norm2(g);
      if (n == 0.0) throw DegenerateGradientError("ascent_point: SAM* ascent undefined for a zero gradient");
      axpy(rho / n, g, out);
      break;
    }
  }
  return out;
}

struct RenormFactor {
  double gamma;
  bool degenerate;  // |g_asc| == 0 while |g| != 0
};

inline RenormFactor renorm_factor_from_norms(double grad_norm, double asc_grad_norm) {
  if (asc_grad_norm == 0.0) return {1.0, grad_norm != 0.0};
  return {grad_norm / asc_grad_norm, false};
}

/// |g| / |g_asc|, or 1 when |g_asc| = 0.
inline RenormFactor renorm_factor(std::span<const double> g, std::span<const double> g_asc) {
  return renorm_factor_from_norms(norm2(g), norm2(g_asc));
}

namespace detail {

inline bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace detail

/// One optimizer step, updating w in place.
///
/// g_t = grad F(w) + noise; w_asc from the family's ascent rule; g_asc =
/// grad F(w_asc) + noise (fresh draw unless cfg.reuse_noise); the effective
/// gradient (gamma_t g_asc with renormalization, g_asc otherwise, g_t for SGD)
/// then gets weight decay added, feeds the momentum buffer, and
/// w <- w - eta * buffer. Throws DivergenceError on any non-finite value.
template <class O>
StepRecord step(const OptimizerConfig& cfg, OptState& st, const O& oracle, std::span<double> w, double noise_std,
                RngStream& rng) {
  static_assert(GradientOracle<O>);
  StepRecord rec;
  rec.t = st.t;
  const double loss = oracle.loss_grad(w, st.g_);
  if (!std::isfinite(loss) || !detail::all_finite(st.g_)) throw DivergenceError(st.t, "non-finite loss or gradient");
  rec.loss = loss;

  if (noise_std > 0.0) {
    st.noise_.fill(0.0);
    add_gaussian(rng, noise_std, st.noise_);
    axpy(1.0, st.noise_, st.g_);
  }
  rec.grad_norm = norm2(st.g_);

  std::span<double> eff = st.g_;
  if (cfg.is_sgd()) {
    rec.asc_grad_norm = rec.grad_norm;
  } else {
    copy(w, st.w_asc_);
    if (cfg.family == Family::SAM) {
      axpy(cfg.rho, st.g_, st.w_asc_);
    } else if (rec.grad_norm > 0.0) {
      axpy(cfg.rho / rec.grad_norm, st.g_, st.w_asc_);
    } else {
      rec.degenerate = true;
    }
    const double asc_loss = oracle.loss_grad(st.w_asc_, st.g_asc_);
    if (!std::isfinite(asc_loss) || !detail::all_finite(st.g_asc_))
      throw DivergenceError(st.t, "non-finite gradient at the ascent point");
    if (noise_std > 0.0) {
      if (!cfg.reuse_noise) {
        st.noise_.fill(0.0);
        add_gaussian(rng, noise_std, st.noise_);
      }
      axpy(1.0, st.noise_, st.g_asc_);
    }
    rec.asc_grad_norm = norm2(st.g_asc_);
    const RenormFactor rf = renorm_factor_from_norms(rec.grad_norm, rec.asc_grad_norm);
    rec.gamma = rf.gamma;
    rec.degenerate = rec.degenerate || rf.degenerate;
    if (cfg.renormalize) scale(rf.gamma, st.g_asc_);
    eff = st.g_asc_;
  }
  rec.eff_grad_norm = cfg.renormalizes() || cfg.is_sgd() ? norm2(eff) : rec.asc_grad_norm;

  if (cfg.weight_decay > 0.0) axpy(cfg.weight_decay, w, eff);
  if (cfg.momentum > 0.0) {
    scale(cfg.momentum, st.buffer);
    axpy(1.0, eff, st.buffer);
  } else {
    copy(eff, st.buffer);
  }
  axpy(-cfg.eta, st.buffer, w);
  rec.step_norm = cfg.eta * norm2(st.buffer);
  ++st.t;
  if (!detail::all_finite(w)) throw DivergenceError(rec.t, "non-finite iterate");
  return rec;
}

/// Value-returning convenience over step().
template <class O>
std::pair<ParamVector, StepRecord> step_copy(const OptimizerConfig& cfg, OptState& st, const O& oracle,
                                             const ParamVector& w, double noise_std, RngStream& rng) {
  ParamVector next = w;
  StepRecord rec = step(cfg, st, oracle, next.span(), noise_std, rng);
  return {std::move(next), rec};
}

/// Relative deviation of the renormalized gradient norm from |g_t|.
inline double renorm_deviation(const StepRecord& r) {
  return std::abs(r.eff_grad_norm - r.grad_norm) / std::max(1.0, r.grad_norm);
}

}  // namespace ssamlab
