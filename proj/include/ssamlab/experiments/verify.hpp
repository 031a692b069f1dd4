#pragma once

// Monte-Carlo verification of the one-step inequalities over random quadratic
// instances, and tabulated bound evaluation for a given ConvexSpec.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ssamlab/experiments/common.hpp"
#include "ssamlab/theory.hpp"

namespace ssamlab {

inline constexpr std::uint64_t kTagTheory = 0x54484559;  // "THEY"
inline constexpr std::uint64_t kTagBounds = 0x424E4453;  // "BNDS"

/// One random instance of the theory suite: a problem pair of equal dimension
/// and delta, a spec covering both, and rho drawn strictly inside the
/// feasible range so that the learning-rate bound is positive.
struct TheoryInstance {
  QuadraticProblem a;
  QuadraticProblem b;
  ConvexSpec spec_a;
  ConvexSpec spec_ab;
  double rho;
};

inline TheoryInstance theory_instance(std::uint64_t seed, std::size_t index, double radius) {
  RngStream rng(seed, stream_key({kTagTheory, index}));
  const std::size_t d = 2 + static_cast<std::size_t>(rng.below(19));
  const double delta = std::pow(10.0, rng.uniform(-2.0, 0.7));
  QuadraticProblem a = quadratic_make(d, delta, stream_key({seed, kTagTheory, index, 0}));
  QuadraticProblem b = quadratic_make(d, delta, stream_key({seed, kTagTheory, index, 1}));
  const ConvexSpec sa = convex_constants(a, radius);
  const ConvexSpec sb = convex_constants(b, radius);
  ConvexSpec sab{std::min(sa.mu, sb.mu), std::max(sa.L, sb.L), 0.0, radius};
  sab.G = sab.L * radius;
  const double limit = std::min(rho_feasibility_limit(sab), 1.0);
  const double rho = rng.uniform(0.05, 0.95) * limit;
  return {std::move(a), std::move(b), sa, sab, rho};
}

/// All five harnesses (contraction SAM/SSAM, growth SAM/SSAM, coercivity) on
/// `instances` random instances with eta set exactly to the learning-rate
/// bound of each mode.
inline ExperimentOutput run_verify_theory(const ExperimentConfig& cfg) {
  const Provenance prov(cfg);
  const auto n = static_cast<std::size_t>(cfg.instances);
  constexpr std::size_t kChecks = 5;
  std::vector<CheckReport> reports(n * kChecks);
  std::vector<std::size_t> dims(n);

  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    const TheoryInstance inst = theory_instance(cfg.seed, i, cfg.radius);
    dims[i] = inst.a.dim();
    const std::uint64_t s = stream_key({cfg.seed, kTagTheory, i, 2});
    const double rho = inst.rho;
    const double eta_a = lr_bound(inst.spec_a, rho, 1.0);
    const double eta_a_ss = lr_bound(inst.spec_a, rho, quadratic_gamma_upper(inst.spec_a, rho));
    const double eta_ab = lr_bound(inst.spec_ab, rho, 1.0);
    const double eta_ab_ss = lr_bound(inst.spec_ab, rho, quadratic_gamma_upper(inst.spec_ab, rho));
    auto* out = &reports[i * kChecks];
    out[0] = check_contraction(inst.a, inst.spec_a, rho, eta_a, ContractionMode::SAM, cfg.trials, s);
    out[1] = check_contraction(inst.a, inst.spec_a, rho, eta_a_ss, ContractionMode::SSAM, cfg.trials, s + 1);
    out[2] = check_different_example_growth(inst.a, inst.b, inst.spec_ab, rho, eta_ab, ContractionMode::SAM,
                                            cfg.trials, s + 2);
    out[3] = check_different_example_growth(inst.a, inst.b, inst.spec_ab, rho, eta_ab_ss, ContractionMode::SSAM,
                                            cfg.trials, s + 3);
    out[4] = check_coercivity(inst.a, inst.spec_a, cfg.trials, s + 4);
  });

  ExperimentOutput res;
  res.id = "verify-theory";
  Table t = prov.table({"check", "instance", "mode", "dim", "mu", "L", "G", "R", "rho", "eta", "trials", "rejected",
                        "violations", "worst_margin"});
  Table totals = prov.table({"check", "instances", "trials", "rejected", "violations", "worst_margin"});
  std::vector<CheckReport> agg(kChecks);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < kChecks; ++c) {
      const CheckReport& r = reports[i * kChecks + c];
      prov.add(t, stream_key({cfg.seed, kTagTheory, i, 2}),
               {r.name, fmt(static_cast<long>(i)), r.mode, fmt(static_cast<long>(dims[i])), fmt(r.mu), fmt(r.L),
                fmt(r.G), fmt(r.R), fmt(r.rho), fmt(r.eta), fmt(r.trials), fmt(r.rejected), fmt(r.violations),
                fmt(r.worst_margin)});
      agg[c].name = r.name;
      agg[c].merge(r);
    }
  }
  long violations = 0;
  for (const auto& a : agg) {
    prov.add(totals, stream_key({kTagTheory}),
             {a.name, fmt(cfg.instances), fmt(a.trials), fmt(a.rejected), fmt(a.violations), fmt(a.worst_margin)});
    violations += a.violations;
  }
  res.tables.emplace_back("verify_theory", std::move(t));
  res.tables.emplace_back("verify_theory_totals", std::move(totals));
  res.summary["violations"] = violations;
  return res;
}

/// Max gamma_t over a noise-free SAM pilot run on a diagonal quadratic whose
/// spectrum spans [mu, L]; an empirical stand-in for gamma_upp.
inline double estimate_gamma_upp(const ConvexSpec& s, double rho, double eta, long steps, std::size_t dim,
                                 std::uint64_t seed) {
  std::vector<double> diag(std::max<std::size_t>(dim, 2));
  for (std::size_t i = 0; i < diag.size(); ++i)
    diag[i] = s.mu + (s.L - s.mu) * static_cast<double>(i) / static_cast<double>(diag.size() - 1);
  const QuadraticProblem q = QuadraticProblem::diagonal(diag);
  RngStream rng(seed, stream_key({kTagBounds, 0}));
  ParamVector w = gaussian_vector(rng, diag.size(), 1.0);
  OptState st(w.size());
  const OptimizerConfig oc = OptimizerConfig::sam(eta, rho);
  double g = 0.0;
  for (long t = 0; t < steps; ++t) {
    const StepRecord rec = step(oc, st, q, w.span(), 0.0, rng);
    if (rec.asc_grad_norm > 0.0) g = std::max(g, rec.gamma);
  }
  return g;
}

/// Stability, convergence and excess-risk bounds for kind SGD / SAM / SSAM /
/// all. bounds.gamma_upp <= 0 requests the pilot-run estimate.
inline ExperimentOutput run_bounds(const ExperimentConfig& cfg) {
  const Provenance prov(cfg);
  const ConvexSpec s{cfg.spec_mu, cfg.spec_L, cfg.spec_G, cfg.spec_R};
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bounds: ") + e.what());
  }
  const double rho = cfg.rho.at(0);
  const double eta = cfg.eta_grid().at(0);
  double gamma = cfg.gamma_upp;
  bool estimated = false;
  if (gamma <= 0.0) {
    gamma = estimate_gamma_upp(s, rho, eta, cfg.steps, static_cast<std::size_t>(cfg.dim), cfg.seed);
    estimated = true;
  }
  std::vector<BoundKind> kinds;
  if (cfg.kind == "all") kinds = {BoundKind::SGD, BoundKind::SAM, BoundKind::SSAM};
  else if (cfg.kind == "SGD") kinds = {BoundKind::SGD};
  else if (cfg.kind == "SAM") kinds = {BoundKind::SAM};
  else if (cfg.kind == "SSAM") kinds = {BoundKind::SSAM};
  else throw ConfigError("bounds: kind must be SGD, SAM, SSAM or all");

  ExperimentOutput res;
  res.id = "bounds";
  Table t = prov.table({"kind", "n", "rho", "eta", "T", "gamma_upp", "lr_bound", "stability_bound",
                        "convergence_bound", "excess_risk_bound"});
  try {
    for (BoundKind k : kinds) {
      const double g = k == BoundKind::SSAM ? gamma : 1.0;
      const double lr = k == BoundKind::SGD ? 2.0 / (s.mu + s.L) : lr_bound(s, rho, g);
      const double stab = stability_bound(s, cfg.bound_n, rho, eta, cfg.bound_T, k, g);
      std::string conv = "NA", excess = "NA";
      if (k != BoundKind::SGD) {
        conv = fmt(convergence_bound(s, rho, eta, cfg.bound_T, k, g, cfg.initial_gap));
        excess = fmt(excess_risk_bound(s, cfg.bound_n, rho, eta, k, g));
      }
      prov.add(t, stream_key({kTagBounds, static_cast<std::uint64_t>(k)}),
               {to_string(k), fmt(cfg.bound_n), fmt(rho), fmt(eta), fmt(cfg.bound_T),
                k == BoundKind::SSAM ? fmt(g) : "NA", fmt(lr), fmt(stab), conv, excess});
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bounds: ") + e.what());
  }
  res.tables.emplace_back("bounds", std::move(t));
  res.summary["gamma_upp"] = gamma;
  res.summary["gamma_upp_estimated"] = estimated;
  return res;
}

}  // namespace ssamlab
