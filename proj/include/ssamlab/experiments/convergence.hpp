#pragma once

// Noisy-ball convergence on a strongly convex quadratic. Each replicate fixes
// one start point and one gradient-noise stream that every (optimizer, rho)
// cell reuses, so differences between cells are not masked by noise draws.

#include <cstdint>
#include <string>
#include <vector>

#include "ssamlab/experiments/common.hpp"
#include "ssamlab/optimizers.hpp"
#include "ssamlab/problems.hpp"

namespace ssamlab {

inline constexpr std::uint64_t kTagConvergence = 0x434F4E56;  // "CONV"

inline QuadraticProblem convergence_problem(const ExperimentConfig& cfg) {
  return quadratic_make(static_cast<std::size_t>(cfg.dim), cfg.delta, cfg.seed);
}

inline ExperimentOutput run_convergence(const ExperimentConfig& cfg) {
  if (cfg.problem != "quadratic") throw ConfigError("convergence: problem.kind must be quadratic");
  const Provenance prov(cfg);
  const QuadraticProblem prob = convergence_problem(cfg);
  const double eta = cfg.eta_grid().at(0);
  const std::size_t d = prob.dim();
  if (cfg.tail > cfg.steps) throw ConfigError("convergence: run.tail exceeds run.steps");

  struct Cell {
    std::size_t replicate, opt, rho_idx;
  };
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < static_cast<std::size_t>(cfg.replicates); ++r)
    for (std::size_t i = 0; i < cfg.optimizers.size(); ++i) {
      const bool sgd = cfg.optimizer(i, eta, 0.0).is_sgd();
      for (std::size_t j = 0; j < (sgd ? 1 : cfg.rho.size()); ++j) cells.push_back({r, i, j});
    }

  struct CellOut {
    std::vector<std::pair<long, double>> trace;
    double tail_mean = 0.0;
    RunResult result;
    RenormMonitor renorm;
  };
  std::vector<CellOut> outs(cells.size());

  parallel_for(cells.size(), cfg.jobs, [&](std::size_t c) {
    const auto [r, i, j] = cells[c];
    const OptimizerConfig oc = cfg.optimizer(i, eta, cfg.rho.empty() ? 0.0 : cfg.rho[j]);
    RngStream init_rng(cfg.seed, stream_key({kTagConvergence, 0, r}));
    ParamVector w = gaussian_vector(init_rng, d, cfg.init_scale);
    RngStream noise(cfg.seed, stream_key({kTagConvergence, 1, r}));
    OptState st(d);
    CellOut& out = outs[c];
    double tail_sum = 0.0;
    const long tail_from = cfg.steps - cfg.tail;
    try {
      for (long t = 0; t < cfg.steps; ++t) {
        const StepRecord rec = step(oc, st, prob, w.span(), cfg.noise_std(), noise);
        out.renorm.observe(oc, rec);
        if (t % cfg.log_stride == 0) out.trace.emplace_back(t, rec.loss);
        if (t >= tail_from) tail_sum += rec.loss;
      }
      out.result.final_loss = prob.loss(w);
      if (cfg.steps % cfg.log_stride == 0) out.trace.emplace_back(cfg.steps, out.result.final_loss);
      out.tail_mean = tail_sum / static_cast<double>(cfg.tail);
      out.result.status = RunStatus::Success;
    } catch (const DivergenceError& e) {
      out.result.status = RunStatus::Divergence;
      out.result.diverged_at = e.t;
      out.result.final_loss = out.tail_mean = std::numeric_limits<double>::quiet_NaN();
    }
    out.result.steps = st.t;
  });

  ExperimentOutput res;
  res.id = "convergence";
  Table traj = prov.table({"optimizer", "rho", "step", "loss"});
  Table per_run = prov.table({"optimizer", "rho", "replicate", "tail_mean", "final_loss", "status"});
  Table terminal = prov.table({"optimizer", "rho", "tail_mean", "replicates"});
  std::vector<std::pair<std::size_t, std::size_t>> keys;  // (opt, rho_idx) in first-seen order
  std::vector<double> sums;
  std::vector<long> counts;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto [r, i, j] = cells[c];
    const OptimizerConfig oc = cfg.optimizer(i, eta, cfg.rho.empty() ? 0.0 : cfg.rho[j]);
    const std::string rho = oc.is_sgd() ? "NA" : fmt(oc.rho);
    const std::uint64_t sid = stream_key({kTagConvergence, 1, r});
    for (const auto& [t, l] : outs[c].trace) prov.add(traj, sid, {oc.name(), rho, fmt(t), fmt(l)});
    prov.add(per_run, sid,
             {oc.name(), rho, fmt(r), fmt(outs[c].tail_mean), fmt(outs[c].result.final_loss),
              to_string(outs[c].result.status)});
    std::size_t k = 0;
    while (k < keys.size() && keys[k] != std::pair{i, j}) ++k;
    if (k == keys.size()) {
      keys.emplace_back(i, j);
      sums.push_back(0.0);
      counts.push_back(0);
    }
    sums[k] += outs[c].tail_mean;
    ++counts[k];
    res.renorm.merge(outs[c].renorm);
  }
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const OptimizerConfig oc = cfg.optimizer(keys[k].first, eta, cfg.rho.empty() ? 0.0 : cfg.rho[keys[k].second]);
    prov.add(terminal, stream_key({kTagConvergence, 1}),
             {oc.name(), oc.is_sgd() ? "NA" : fmt(oc.rho), fmt(sums[k] / static_cast<double>(counts[k])),
              fmt(counts[k])});
  }
  res.tables.emplace_back("convergence", std::move(traj));
  res.tables.emplace_back("convergence_runs", std::move(per_run));
  res.tables.emplace_back("convergence_terminal", std::move(terminal));
  return res;
}

}  // namespace ssamlab
