#pragma once

// Closed-form stability / convergence / excess-risk bounds for SGD, SAM and
// SSAM on mu-strongly convex, L-smooth, G-Lipschitz losses, plus Monte-Carlo
// harnesses that check the one-step inequalities behind them on quadratics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssamlab/numerics.hpp"
#include "ssamlab/optimizers.hpp"
#include "ssamlab/problems.hpp"

namespace ssamlab {

struct ConvexSpec {
  double mu = 1.0;
  double L = 1.0;
  double G = 1.0;
  double R = 1.0;

  void validate() const {
    if (!(mu > 0.0) || !(L >= mu) || !(G > 0.0) || !(R > 0.0))
      throw std::invalid_argument("ConvexSpec: need 0 < mu <= L, G > 0, R > 0");
  }
};

enum class BoundKind { SGD, SAM, SSAM };

inline std::string to_string(BoundKind k) {
  switch (k) {
    case BoundKind::SGD: return "SGD";
    case BoundKind::SAM: return "SAM";
    case BoundKind::SSAM: return "SSAM";
  }
  return "?";
}

/// Eigenvalues of a symmetric matrix in ascending order.
inline Eigen::VectorXd symmetric_eigenvalues(const RowMatrix& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(h), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  return es.eigenvalues();
}

/// mu and L are the extreme eigenvalues of H; G = L R bounds |grad| on the R-ball.
inline ConvexSpec convex_constants(const QuadraticProblem& p, double R) {
  if (!(R > 0.0)) throw std::invalid_argument("convex_constants: R must be > 0");
  const Eigen::VectorXd ev = symmetric_eigenvalues(p.hessian());
  const double mu = ev(0);
  const double L = ev(ev.size() - 1);
  return {mu, L, L * R, R};
}

/// Largest rho for which the SAM learning-rate bound is positive (infinite when mu == L).
inline double rho_feasibility_limit(const ConvexSpec& s) {
  if (s.L == s.mu) return std::numeric_limits<double>::infinity();
  return 4.0 * s.mu * s.mu / (s.L * (s.L - s.mu) * (s.L - s.mu));
}

/// (1/gamma_upp) [2/(mu+L) - (mu+L) / (2 mu L (mu/(rho L^2) + 1))].
/// gamma_upp = 1 gives the SAM bound; a non-positive result means no
/// learning rate satisfies the constraint.
inline double lr_bound(const ConvexSpec& s, double rho, double gamma_upp = 1.0) {
  if (!(rho > 0.0)) throw std::invalid_argument("lr_bound: rho must be > 0");
  if (!(gamma_upp > 0.0 && gamma_upp <= 1.0)) throw std::invalid_argument("lr_bound: gamma_upp must be in (0, 1]");
  const double mu = s.mu, L = s.L;
  const double bracket = 2.0 / (mu + L) - (mu + L) / (2.0 * mu * L * (mu / (rho * L * L) + 1.0));
  return bracket / gamma_upp;
}

/// Upper bound on gamma_t for a noise-free SAM step on a quadratic whose
/// Hessian spectrum lies in [mu, L]: |Hw| / |(I + rho H) H w| <= 1/(1 + rho mu).
inline double quadratic_gamma_upper(const ConvexSpec& s, double rho) { return 1.0 / (1.0 + rho * s.mu); }

enum class ContractionMode { SAM, SSAM };

struct CheckReport {
  std::string name;
  long trials = 0;      // accepted trials
  long rejected = 0;    // trials that left the R-ball
  long violations = 0;  // trials with margin < -tolerance
  double worst_margin = std::numeric_limits<double>::infinity();
  double tolerance = 1e-10;
  // config echo
  double mu = 0.0, L = 0.0, G = 0.0, R = 0.0, rho = 0.0, eta = 0.0;
  std::string mode;

  void record(double margin) {
    ++trials;
    worst_margin = std::min(worst_margin, margin);
    if (margin < -tolerance) ++violations;
  }

  void merge(const CheckReport& o) {
    trials += o.trials;
    rejected += o.rejected;
    violations += o.violations;
    worst_margin = std::min(worst_margin, o.worst_margin);
  }

  bool ok() const noexcept { return violations == 0; }
};

namespace detail {

inline void random_in_ball(RngStream& rng, double radius, std::span<double> out) {
  double n = 0.0;
  while (n == 0.0) {
    for (double& v : out) v = rng.gaussian();
    n = norm2(out);
  }
  const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(out.size()));
  scale(r / n, out);
}

// Even trials draw w and v independently; odd trials put v close to w so
// small separations are exercised as well.
inline void draw_pair(RngStream& rng, long trial, double radius, std::span<double> w, std::span<double> v) {
  random_in_ball(rng, radius, w);
  if (trial % 2 == 0) {
    random_in_ball(rng, radius, v);
  } else {
    random_in_ball(rng, radius * 1e-3, v);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += w[i];
    const double n = norm2(v);
    if (n > radius) scale(radius / n, v);
  }
}

struct SamQuadStep {
  ParamVector next;
  ParamVector asc;
  double gamma;
};

// Noise-free SAM step on a quadratic with descent scale `c` (c < 0 means use
// this iterate's own gamma_t).
inline SamQuadStep sam_quadratic_step(const QuadraticProblem& p, const ParamVector& w, double rho, double eta,
                                      double c) {
  ParamVector g(w.size()), g_asc(w.size());
  p.hess_vec(w, g);
  ParamVector asc = ascent_point(w, g, rho, Family::SAM);
  p.hess_vec(asc, g_asc);
  const double gamma = renorm_factor(g, g_asc).gamma;
  ParamVector next = w;
  axpy(-eta * (c < 0.0 ? gamma : c), g_asc, next);
  return {std::move(next), std::move(asc), gamma};
}

inline void check_lemma_preconditions(const ConvexSpec& s, double rho, double eta, ContractionMode mode) {
  s.validate();
  if (!(eta > 0.0)) throw std::invalid_argument("contraction check: eta must be > 0");
  const double gamma_upp = mode == ContractionMode::SSAM ? quadratic_gamma_upper(s, rho) : 1.0;
  const double bound = lr_bound(s, rho, gamma_upp);
  if (eta > bound * (1.0 + 1e-12)) throw std::invalid_argument("contraction check: eta exceeds the learning-rate bound");
}

inline double contraction_factor(const ConvexSpec& s, double rho, double eta, double c) {
  return 1.0 - (1.0 + s.mu * rho) * c * eta * s.mu * s.L / (s.mu + s.L);
}

}  // namespace detail

/// Same-example contraction: one noise-free SAM (or SSAM) step from w and v on
/// the same quadratic must satisfy
///   |v' - w'| <= (1 - (1 + mu rho) c eta mu L / (mu + L)) |v - w|,
/// with c = 1 for SAM and c = gamma_t of the w iterate for SSAM (shared by both
/// iterates). Pairs are drawn so that every point touched stays in the R-ball.
inline CheckReport check_contraction(const QuadraticProblem& p, const ConvexSpec& s, double rho, double eta,
                                     ContractionMode mode, long trials, std::uint64_t seed) {
  detail::check_lemma_preconditions(s, rho, eta, mode);
  CheckReport rep;
  rep.name = mode == ContractionMode::SAM ? "contraction_sam" : "contraction_ssam";
  rep.mode = mode == ContractionMode::SAM ? "SAM" : "SSAM";
  rep.mu = s.mu, rep.L = s.L, rep.G = s.G, rep.R = s.R, rep.rho = rho, rep.eta = eta;
  RngStream rng = derive_stream(seed, 0);
  const std::size_t d = p.dim();
  const double radius = s.R / (1.0 + rho * s.L);
  ParamVector w(d), v(d);
  for (long t = 0; t < trials; ++t) {
    detail::draw_pair(rng, t, radius, w, v);
    const auto sw = detail::sam_quadratic_step(p, w, rho, eta, mode == ContractionMode::SAM ? 1.0 : -1.0);
    const double c = mode == ContractionMode::SAM ? 1.0 : sw.gamma;
    const auto sv = detail::sam_quadratic_step(p, v, rho, eta, c);
    if (norm2(sw.asc) > s.R || norm2(sv.asc) > s.R || norm2(sw.next) > s.R || norm2(sv.next) > s.R) {
      ++rep.rejected;
      continue;
    }
    const double lhs = distance(sv.next, sw.next);
    const double rhs = detail::contraction_factor(s, rho, eta, c) * distance(v, w);
    rep.record(rhs - lhs);
  }
  return rep;
}

/// Different-example growth: w steps on problem a, v on problem b; then
///   |v' - w'| <= (1 - (1 + mu rho) c eta mu L/(mu + L)) |v - w| + 2 eta c G.
/// Both problems must have spectra inside [s.mu, s.L].
inline CheckReport check_different_example_growth(const QuadraticProblem& a, const QuadraticProblem& b,
                                                  const ConvexSpec& s, double rho, double eta, ContractionMode mode,
                                                  long trials, std::uint64_t seed) {
  detail::check_lemma_preconditions(s, rho, eta, mode);
  if (a.dim() != b.dim()) throw std::invalid_argument("growth check: problems differ in dimension");
  CheckReport rep;
  rep.name = mode == ContractionMode::SAM ? "growth_sam" : "growth_ssam";
  rep.mode = mode == ContractionMode::SAM ? "SAM" : "SSAM";
  rep.mu = s.mu, rep.L = s.L, rep.G = s.G, rep.R = s.R, rep.rho = rho, rep.eta = eta;
  RngStream rng = derive_stream(seed, 0);
  const double radius = s.R / (1.0 + rho * s.L);
  ParamVector w(a.dim()), v(a.dim());
  for (long t = 0; t < trials; ++t) {
    detail::draw_pair(rng, t, radius, w, v);
    const auto sw = detail::sam_quadratic_step(a, w, rho, eta, mode == ContractionMode::SAM ? 1.0 : -1.0);
    const double c = mode == ContractionMode::SAM ? 1.0 : sw.gamma;
    const auto sv = detail::sam_quadratic_step(b, v, rho, eta, c);
    if (norm2(sw.asc) > s.R || norm2(sv.asc) > s.R || norm2(sw.next) > s.R || norm2(sv.next) > s.R) {
      ++rep.rejected;
      continue;
    }
    const double lhs = distance(sv.next, sw.next);
    const double rhs = detail::contraction_factor(s, rho, eta, c) * distance(v, w) + 2.0 * eta * c * s.G;
    rep.record(rhs - lhs);
  }
  return rep;
}

/// <grad f(v) - grad f(w), v - w> >= mu L/(mu+L) |v-w|^2 + |grad f(v) - grad f(w)|^2/(mu+L).
inline CheckReport check_coercivity(const QuadraticProblem& p, const ConvexSpec& s, long trials, std::uint64_t seed) {
  s.validate();
  CheckReport rep;
  rep.name = "coercivity";
  rep.mode = "-";
  rep.mu = s.mu, rep.L = s.L, rep.G = s.G, rep.R = s.R;
  RngStream rng = derive_stream(seed, 0);
  const std::size_t d = p.dim();
  ParamVector w(d), v(d), gw(d), gv(d);
  for (long t = 0; t < trials; ++t) {
    detail::draw_pair(rng, t, s.R, w, v);
    p.hess_vec(w, gw);
    p.hess_vec(v, gv);
    const ParamVector dg = gv - gw;
    const ParamVector dx = v - w;
    const double lhs = dot(dg, dx);
    const double rhs = s.mu * s.L / (s.mu + s.L) * dot(dx, dx) + dot(dg, dg) / (s.mu + s.L);
    rep.record(lhs - rhs);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Bounds

namespace detail {

inline void check_bound_inputs(const ConvexSpec& s, double rho, double eta, BoundKind kind, double gamma_upp) {
  s.validate();
  if (!(rho >= 0.0)) throw std::invalid_argument("bound: rho must be >= 0");
  if (!(eta >= 0.0)) throw std::invalid_argument("bound: eta must be >= 0");
  if (kind == BoundKind::SSAM && !(gamma_upp > 0.0 && gamma_upp < 1.0))
    throw std::invalid_argument("bound: SSAM requires gamma_upp in (0, 1)");
}

/// sum_{t<T} b^t for b in [0, 1]. Every operation adds or multiplies
/// nonnegative values, so the rounded result is monotone in b. Up to 1e6 terms
/// Horner's iterates are also nondecreasing in T; beyond that binary doubling
/// keeps the cost logarithmic and monotonicity in T holds only up to rounding.
inline double geometric_sum(double b, double T) {
  const auto steps = static_cast<std::uint64_t>(T);
  double sum = 0.0, power = 1.0;  // sum_{t<m} b^t and b^m for the prefix m
  if (steps <= 1000000) {
    for (std::uint64_t t = 0; t < steps; ++t) sum = 1.0 + b * sum;
    return sum;
  }
  for (int bit = 63; bit >= 0; --bit) {
    sum += power * sum;
    power *= power;
    if ((steps >> bit) & 1u) {
      sum = 1.0 + b * sum;
      power *= b;
    }
  }
  return sum;
}

}  // namespace detail

/// Uniform-stability bound on the generalization error after T steps:
///   SGD : 2G^2(mu+L)/(n mu L)          * {1 - [1 - eta mu L/(mu+L)]^T}
///   SAM : 2G^2(mu+L)/(n mu L (1+mu rho)) * {1 - [1 - (1+mu rho) eta mu L/(mu+L)]^T}
///   SSAM: as SAM with eta replaced by gamma_upp * eta inside the bracket.
/// Throws when the contraction base leaves [0, 1].
inline double stability_bound(const ConvexSpec& s, double n, double rho, double eta, double T, BoundKind kind,
                              double gamma_upp = 1.0) {
  detail::check_bound_inputs(s, rho, eta, kind, gamma_upp);
  if (!(n >= 1.0)) throw std::invalid_argument("stability_bound: n must be >= 1");
  if (!(T >= 0.0 && T <= 9e15 && std::floor(T) == T))
    throw std::invalid_argument("stability_bound: T must be a nonnegative integer");
  const double mu = s.mu, L = s.L, G = s.G;
  const double x = eta * mu * L / (mu + L);
  double a = 1.0 + mu * rho;
  if (kind == BoundKind::SGD) a = 1.0;
  const double g = kind == BoundKind::SSAM ? gamma_upp : 1.0;
  const double base = 1.0 - a * g * x;
  if (!(base >= 0.0 && base <= 1.0)) throw std::invalid_argument("stability_bound: contraction base outside [0, 1]");
  if (x == 0.0) return 0.0;
  // (1 - base^T) / a = g x sum_{t<T} base^t. The sum is evaluated on SAM's base
  // so SAM and SGD differ only through a monotone evaluation of the sum, and
  // SSAM is SAM's sum times a ratio of saturating terms that rounds to <= 1.
  // Both orderings therefore hold exactly in floating point, ties included.
  const double b = 1.0 - a * x;
  double sum;
  if (kind == BoundKind::SSAM && b >= 0.0) {
    const double num = -std::expm1(T * std::log1p(-a * g * x)), den = -std::expm1(T * std::log1p(-a * x));
    sum = detail::geometric_sum(b, T) * std::min(1.0, num / den);
  } else {
    sum = g * detail::geometric_sum(base, T);
  }
  return 2.0 * G * G * (mu + L) / (n * mu * L) * x * sum;
}

/// Optimization-error bound after T steps (T may be +infinity):
///   SAM : [1 - 2 eta mu rho (mu+L)]^T gap + L G^2 (rho^2 L + eta) / (4 mu rho (mu+L))
///   SSAM: [1 - gamma_upp eta mu rho (mu+L)]^T gap + L G^2 (rho^2 L + gamma_upp eta) / (4 mu rho (mu+L))
inline double convergence_bound(const ConvexSpec& s, double rho, double eta, double T, BoundKind kind,
                                 double gamma_upp, double initial_gap) {
  if (kind == BoundKind::SGD) throw std::invalid_argument("convergence_bound: kind must be SAM or SSAM");
  detail::check_bound_inputs(s, rho, eta, kind, gamma_upp);
  if (!(rho > 0.0)) throw std::invalid_argument("convergence_bound: rho must be > 0");
  if (!(initial_gap >= 0.0)) throw std::invalid_argument("convergence_bound: initial_gap must be >= 0");
  if (!(T >= 0.0)) throw std::invalid_argument("convergence_bound: T must be >= 0");
  const double mu = s.mu, L = s.L, G = s.G;
  const double g = kind == BoundKind::SSAM ? gamma_upp : 1.0;
  const double base = kind == BoundKind::SAM ? 1.0 - 2.0 * eta * mu * rho * (mu + L) : 1.0 - g * eta * mu * rho * (mu + L);
  if (!(base >= 0.0 && base < 1.0)) throw std::invalid_argument("convergence_bound: contraction base outside [0, 1)");
  const double residual = L * G * G * (rho * rho * L + g * eta) / (4.0 * mu * rho * (mu + L));
  const double geometric = std::isinf(T) ? 0.0 : std::pow(base, T) * initial_gap;
  return geometric + residual;
}

/// T -> infinity excess-risk bound: stability limit plus convergence residual.
inline double excess_risk_bound(const ConvexSpec& s, double n, double rho, double eta, BoundKind kind,
                                double gamma_upp = 1.0) {
  const double inf = std::numeric_limits<double>::infinity();
  const double conv = convergence_bound(s, rho, eta, inf, kind, gamma_upp, 0.0);
  // The stability bound is validated at T = 1 (base check); its T -> inf limit
  // is the prefactor alone.
  stability_bound(s, n, rho, eta, 1.0, kind, gamma_upp);
  const double gen = 2.0 * s.G * s.G * (s.mu + s.L) / (n * s.mu * s.L * (1.0 + s.mu * rho));
  return gen + conv;
}

// ---------------------------------------------------------------------------
// Hessian spectrum from gradients

/// Central-difference Hessian-vector product along v.
template <class O>
ParamVector hvp(const O& oracle, const ParamVector& w, const ParamVector& v, double fd_step = 1e-5) {
  const double vn = norm2(v);
  if (!(vn > 0.0)) throw std::invalid_argument("hvp: v must be nonzero");
  const std::size_t d = w.size();
  ParamVector plus = w, minus = w, gp(d), gm(d);
  axpy(fd_step / vn, v, plus);
  axpy(-fd_step / vn, v, minus);
  oracle.loss_grad(plus, gp);
  oracle.loss_grad(minus, gm);
  ParamVector out(d);
  const double k = vn / (2.0 * fd_step);
  for (std::size_t i = 0; i < d; ++i) out[i] = (gp[i] - gm[i]) * k;
  return out;
}

struct EigenEstimate {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Top-k Hessian eigenvalues by power iteration with Gram-Schmidt deflation
/// against previously found eigenvectors. Stops an eigenpair when successive
/// Rayleigh quotients differ by less than tol * (|lambda| + 1e-12) or after
/// `iters` iterations (then flagged as not converged). Sorted descending.
template <class O>
std::vector<EigenEstimate> top_k_eigs(const O& oracle, const ParamVector& w, int k, int iters, double tol,
                                      std::uint64_t seed, double fd_step = 1e-5) {
  if (k < 1) throw std::invalid_argument("top_k_eigs: k must be >= 1");
  const std::size_t d = w.size();
  if (static_cast<std::size_t>(k) > d) throw std::invalid_argument("top_k_eigs: k exceeds the dimension");
  RngStream rng = derive_stream(seed, 0);
  std::vector<ParamVector> vecs;
  std::vector<EigenEstimate> out;
  auto orthonormalize = [&](ParamVector& v) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& u : vecs) axpy(-dot(u, v), u, v);
    const double n = norm2(v);
    if (n > 0.0) scale(1.0 / n, v);
    return n;
  };
  for (int e = 0; e < k; ++e) {
    ParamVector v = gaussian_vector(rng, d, 1.0);
    orthonormalize(v);
    EigenEstimate est;
    double prev = 0.0;
    for (int it = 0; it < iters; ++it) {
      ParamVector hv = hvp(oracle, w, v, fd_step);
      const double lambda = dot(v, hv);
      est.value = lambda;
      est.iterations = it + 1;
      if (it > 0 && std::abs(lambda - prev) < tol * (std::abs(lambda) + 1e-12)) {
        est.converged = true;
        break;
      }
      prev = lambda;
      if (orthonormalize(hv) == 0.0) {  // v lies in the null space of the deflated operator
        est.value = 0.0;
        est.converged = true;
        break;
      }
      v = std::move(hv);
    }
    vecs.push_back(v);
    out.push_back(est);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.value > b.value; });
  return out;
}

}  // namespace ssamlab
