#pragma once

// Saddle escape on the linear autoencoder: every optimizer starts from the
// same near-origin initialization and we record when the loss first drops
// below escape_fraction times its initial value.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssamlab/experiments/common.hpp"
#include "ssamlab/optimizers.hpp"
#include "ssamlab/problems.hpp"

namespace ssamlab {

inline constexpr std::uint64_t kTagEscape = 0x45534350;  // "ESCP"

struct EscapeCell {
  std::size_t replicate, opt, rho_idx;
};

inline ExperimentOutput run_escape(const ExperimentConfig& cfg) {
  if (cfg.problem != "lae") throw ConfigError("escape: problem.kind must be lae");
  const Provenance prov(cfg);
  const auto d = static_cast<std::size_t>(cfg.dim);
  const double eta = cfg.eta_grid().at(0);

  std::vector<EscapeCell> cells;
  for (std::size_t r = 0; r < static_cast<std::size_t>(cfg.replicates); ++r)
    for (std::size_t i = 0; i < cfg.optimizers.size(); ++i) {
      const bool sgd = cfg.optimizer(i, eta, 0.0).is_sgd();
      for (std::size_t j = 0; j < (sgd ? 1 : cfg.rho.size()); ++j) cells.push_back({r, i, j});
    }

  struct CellOut {
    std::vector<std::pair<long, double>> trace;
    RunResult result;
    RenormMonitor renorm;
  };
  std::vector<CellOut> outs(cells.size());

  parallel_for(cells.size(), cfg.jobs, [&](std::size_t c) {
    const auto [r, i, j] = cells[c];
    RngStream init_rng(cfg.seed, stream_key({kTagEscape, 0, r}));
    ParamVector w(2 * d * d);
    add_gaussian(init_rng, cfg.init_std, w);
    const LinearAutoencoderProblem prob(d);
    const OptimizerConfig oc = cfg.optimizer(i, eta, cfg.rho.empty() ? 0.0 : cfg.rho[j]);
    RngStream noise(cfg.seed, stream_key({kTagEscape, 1, r, i, j}));
    OptState st(w.size());
    CellOut& out = outs[c];
    const double initial = prob.loss(w);
    const double threshold = cfg.escape_fraction * initial;
    double loss = initial;
    try {
      for (long t = 0; t < cfg.steps; ++t) {
        const StepRecord rec = step(oc, st, prob, w.span(), cfg.noise_std(), noise);
        out.renorm.observe(oc, rec);
        loss = rec.loss;
        if (t % cfg.log_stride == 0) out.trace.emplace_back(t, rec.loss);
        if (!out.result.escape_step && rec.loss < threshold) out.result.escape_step = t;
      }
      loss = prob.loss(w);
      if (cfg.steps % cfg.log_stride == 0) out.trace.emplace_back(cfg.steps, loss);
      if (!out.result.escape_step && loss < threshold) out.result.escape_step = cfg.steps;
      out.result.status = out.result.escape_step ? RunStatus::Success : RunStatus::Failure;
    } catch (const DivergenceError& e) {
      out.result.status = RunStatus::Divergence;
      out.result.diverged_at = e.t;
      out.result.escape_step.reset();
      loss = std::numeric_limits<double>::quiet_NaN();
    }
    out.result.final_loss = loss;
    out.result.steps = st.t;
  });

  ExperimentOutput res;
  res.id = "escape";
  Table traj = prov.table({"optimizer", "rho", "step", "loss"});
  Table summary = prov.table({"optimizer", "rho", "replicate", "escape_step", "final_loss", "status"});
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto [r, i, j] = cells[c];
    const OptimizerConfig oc = cfg.optimizer(i, eta, cfg.rho.empty() ? 0.0 : cfg.rho[j]);
    const std::string name = oc.name();
    const std::string rho = oc.is_sgd() ? "NA" : fmt(oc.rho);
    const std::uint64_t sid = stream_key({kTagEscape, 1, r, i, j});
    for (const auto& [t, l] : outs[c].trace) prov.add(traj, sid, {name, rho, fmt(t), fmt(l)});
    const auto& rr = outs[c].result;
    prov.add(summary, sid,
             {name, rho, fmt(r), rr.escape_step ? fmt(*rr.escape_step) : "NA", fmt(rr.final_loss), to_string(rr.status)});
    res.renorm.merge(outs[c].renorm);
  }
  res.tables.emplace_back("escape", std::move(traj));
  res.tables.emplace_back("escape_summary", std::move(summary));
  return res;
}

}  // namespace ssamlab
