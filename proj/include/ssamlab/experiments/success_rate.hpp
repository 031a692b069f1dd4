#pragma once

// Success-rate sweep on the 2-D toy landscape: many uniform starts per
// (rho, optimizer, eta) cell, counted as successes when the final iterate lies
// within success_tol of a global minimum. Start points are shared by every
// cell and the noise stream depends only on (eta index, start index), so SGD
// results cannot depend on rho.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ssamlab/experiments/common.hpp"
#include "ssamlab/optimizers.hpp"
#include "ssamlab/problems.hpp"

namespace ssamlab {

inline constexpr std::uint64_t kTagSuccess = 0x53554343;  // "SUCC"

/// True when x is within tol of (1, 1) or (-1, -1).
inline bool toy2d_success(std::span<const double> x, double tol) {
  const double a = std::hypot(x[0] - 1.0, x[1] - 1.0);
  const double b = std::hypot(x[0] + 1.0, x[1] + 1.0);
  return std::min(a, b) <= tol;
}

inline ExperimentOutput run_success_rate(const ExperimentConfig& cfg) {
  if (cfg.problem != "toy2d") throw ConfigError("success-rate: problem.kind must be toy2d");
  const Provenance prov(cfg);
  const std::vector<double> etas = cfg.eta_grid();
  const auto starts = static_cast<std::size_t>(cfg.starts);

  std::vector<ParamVector> start_points(starts);
  for (std::size_t s = 0; s < starts; ++s) {
    RngStream rng(cfg.seed, stream_key({kTagSuccess, 0, s}));
    const double a = rng.uniform(-cfg.start_box, cfg.start_box);
    const double b = rng.uniform(-cfg.start_box, cfg.start_box);
    start_points[s] = ParamVector{a, b};
  }

  struct Cell {
    std::size_t rho_idx, opt, eta_idx;
  };
  std::vector<Cell> cells;
  for (std::size_t j = 0; j < cfg.rho.size(); ++j)
    for (std::size_t i = 0; i < cfg.optimizers.size(); ++i)
      for (std::size_t k = 0; k < etas.size(); ++k) cells.push_back({j, i, k});

  struct CellOut {
    long successes = 0;
    long diverged = 0;
    RenormMonitor renorm;
  };
  std::vector<CellOut> outs(cells.size());
  const Toy2DProblem prob;
  const double noise_std = cfg.noise_std();

  parallel_for(cells.size(), cfg.jobs, [&](std::size_t c) {
    const auto [j, i, k] = cells[c];
    const OptimizerConfig oc = cfg.optimizer(i, etas[k], cfg.rho[j]);
    CellOut& out = outs[c];
    OptState st(2);
    ParamVector w(2);
    for (std::size_t s = 0; s < starts; ++s) {
      RngStream noise(cfg.seed, stream_key({kTagSuccess, 1, k, s}));
      w = start_points[s];
      st = OptState(2);
      try {
        for (long t = 0; t < cfg.steps; ++t) out.renorm.observe(oc, step(oc, st, prob, w.span(), noise_std, noise));
        if (toy2d_success(w, cfg.success_tol)) ++out.successes;
      } catch (const DivergenceError&) {
        ++out.diverged;
      }
    }
  });

  ExperimentOutput res;
  res.id = "success-rate";
  Table t = prov.table({"optimizer", "rho", "eta", "success_rate", "successes", "starts", "diverged"});
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto [j, i, k] = cells[c];
    const OptimizerConfig oc = cfg.optimizer(i, etas[k], cfg.rho[j]);
    const double rate = static_cast<double>(outs[c].successes) / static_cast<double>(starts);
    prov.add(t, stream_key({kTagSuccess, 1, k}),
             {oc.name(), fmt(cfg.rho[j]), fmt(etas[k]), fmt(rate), fmt(outs[c].successes), fmt(cfg.starts),
              fmt(outs[c].diverged)});
    res.renorm.merge(outs[c].renorm);
  }
  res.tables.emplace_back("success_rate", std::move(t));
  return res;
}

}  // namespace ssamlab
