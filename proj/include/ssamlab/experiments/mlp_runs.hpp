#pragma once

// Experiments on the ReLU MLP: twin-dataset stability, renormalization-factor
// tracking, Hessian sharpness after training, and the learning-rate sweep.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ssamlab/experiments/common.hpp"
#include "ssamlab/idx.hpp"
#include "ssamlab/optimizers.hpp"
#include "ssamlab/problems.hpp"
#include "ssamlab/theory.hpp"

namespace ssamlab {

inline constexpr std::uint64_t kTagMlpData = 0x44415441;   // "DATA"
inline constexpr std::uint64_t kTagMlpInit = 0x494E4954;   // "INIT"
inline constexpr std::uint64_t kTagMlpOrder = 0x4F524452;  // "ORDR"
inline constexpr std::uint64_t kTagMlpNoise = 0x4E4F4953;  // "NOIS"
inline constexpr std::uint64_t kTagStability = 0x53544142;
inline constexpr std::uint64_t kTagRenorm = 0x52454E4F;
inline constexpr std::uint64_t kTagSharpness = 0x53485250;
inline constexpr std::uint64_t kTagLrSweep = 0x4C525357;

struct MlpSetup {
  MlpProblem model;
  Dataset train;
  Dataset test;
};

/// Training/test data (synthetic blobs or IDX files) and the matching network.
inline MlpSetup mlp_setup(const ExperimentConfig& cfg) {
  Dataset train, test;
  if (cfg.data == "synthetic") {
    const auto p = static_cast<std::size_t>(cfg.features), k = static_cast<std::size_t>(cfg.classes);
    train = synth_classification(static_cast<std::size_t>(cfg.n), p, k, stream_key({cfg.seed, kTagMlpData, 0}),
                                 cfg.spread);
    test = synth_classification(static_cast<std::size_t>(cfg.test_n), p, k, stream_key({cfg.seed, kTagMlpData, 1}),
                                cfg.spread);
  } else if (cfg.data == "idx") {
    train = idx_dataset(load_idx(cfg.train_images), load_idx(cfg.train_labels), static_cast<std::size_t>(cfg.n));
    test = idx_dataset(load_idx(cfg.test_images), load_idx(cfg.test_labels), static_cast<std::size_t>(cfg.test_n));
    test.classes = train.classes = std::max(train.classes, test.classes);
  } else {
    throw ConfigError("problem.data must be synthetic or idx");
  }
  train.validate();
  test.validate();
  std::vector<std::size_t> widths{train.p};
  for (long h : cfg.hidden) {
    if (h < 1) throw ConfigError("problem.hidden widths must be >= 1");
    widths.push_back(static_cast<std::size_t>(h));
  }
  widths.push_back(train.classes);
  return {MlpProblem(std::move(widths)), std::move(train), std::move(test)};
}

/// Example order for one epoch; shared by every run of a replicate.
inline std::vector<std::size_t> epoch_order(const ExperimentConfig& cfg, std::size_t replicate, long epoch,
                                            std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RngStream rng(cfg.seed, stream_key({kTagMlpOrder, replicate, static_cast<std::uint64_t>(epoch)}));
  shuffle_indices(rng, idx);
  return idx;
}

/// One pass over `order` in consecutive mini-batches. Throws DivergenceError.
template <class OnStep>
void train_epoch(const OptimizerConfig& oc, OptState& st, MlpOracle& oracle, ParamVector& w,
                 std::span<const std::size_t> order, std::size_t batch, double noise_std, RngStream& noise,
                 OnStep&& on_step) {
  for (std::size_t b = 0; b < order.size(); b += batch) {
    oracle.set_batch(order.subspan(b, std::min(batch, order.size() - b)));
    on_step(step(oc, st, oracle, w.span(), noise_std, noise));
  }
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------

/// Twin training on S and S' (one example replaced) from a shared
/// initialization with a shared example order; logs the parameter distance
/// and the generalization gap (test minus train cross-entropy) per epoch.
inline ExperimentOutput run_stability(const ExperimentConfig& cfg) {
  if (cfg.problem != "mlp") throw ConfigError("stability: problem.kind must be mlp");
  const Provenance prov(cfg);
  const MlpSetup setup = mlp_setup(cfg);
  const double eta = cfg.eta_grid().at(0);
  const double rho = cfg.rho.empty() ? 0.0 : cfg.rho.front();
  const auto reps = static_cast<std::size_t>(cfg.replicates);
  const std::size_t nopt = cfg.optimizers.size();

  struct EpochRow {
    long epoch;
    double distance, train, test;
  };
  struct CellOut {
    std::vector<EpochRow> rows;
    RunResult result;
    double r = 0.0;
    RenormMonitor renorm;
  };
  std::vector<CellOut> outs(reps * nopt);

  parallel_for(outs.size(), cfg.jobs, [&](std::size_t c) {
    const std::size_t r = c / nopt, i = c % nopt;
    const OptimizerConfig oc = cfg.optimizer(i, eta, rho);
    const PerturbedPair pair = dataset_perturb_one(setup.train, stream_key({cfg.seed, kTagStability, r}));
    const Dataset& s = pair.s;
    const Dataset& sp = cfg.perturb ? pair.s_prime : pair.s;
    RngStream init_rng(cfg.seed, stream_key({kTagMlpInit, r}));
    ParamVector w = setup.model.init(init_rng), v = w;
    OptState st_w(w.size()), st_v(v.size());
    MlpOracle ow(setup.model, s), ov(setup.model, sp);
    RngStream noise_w(cfg.seed, stream_key({kTagMlpNoise, r, i})), noise_v = noise_w;
    CellOut& out = outs[c];
    auto log_epoch = [&](long e) {
      out.rows.push_back({e, distance(w, v), setup.model.mean_loss(w, s), setup.model.mean_loss(w, setup.test)});
    };
    try {
      log_epoch(0);
      for (long e = 1; e <= cfg.epochs; ++e) {
        const auto order = epoch_order(cfg, r, e, s.n);
        const auto b = static_cast<std::size_t>(cfg.batch_size);
        train_epoch(oc, st_w, ow, w, order, b, cfg.noise_std(), noise_w,
                    [&](const StepRecord& rec) { out.renorm.observe(oc, rec); });
        train_epoch(oc, st_v, ov, v, order, b, cfg.noise_std(), noise_v,
                    [&](const StepRecord& rec) { out.renorm.observe(oc, rec); });
        log_epoch(e);
      }
      out.result.status = RunStatus::Success;
      out.result.final_loss = out.rows.back().train;
    } catch (const DivergenceError& e) {
      out.result.status = RunStatus::Divergence;
      out.result.diverged_at = e.t;
      out.result.final_loss = std::numeric_limits<double>::quiet_NaN();
    }
    std::vector<double> dist, gap;
    for (const auto& row : out.rows) {
      dist.push_back(row.distance);
      gap.push_back(row.test - row.train);
    }
    out.r = pearson(dist, gap);
  });

  ExperimentOutput res;
  res.id = "stability";
  Table t = prov.table({"optimizer", "epoch", "param_distance", "train_err", "test_err", "gen_gap"});
  Table summary = prov.table({"optimizer", "replicate", "final_distance", "final_gen_gap", "pearson_r", "status"});
  for (std::size_t c = 0; c < outs.size(); ++c) {
    const std::size_t r = c / nopt, i = c % nopt;
    const std::string name = cfg.optimizer(i, eta, rho).name();
    const std::uint64_t sid = stream_key({kTagMlpNoise, r, i});
    for (const auto& row : outs[c].rows)
      prov.add(t, sid,
               {name, fmt(row.epoch), fmt(row.distance), fmt(row.train), fmt(row.test), fmt(row.test - row.train)});
    const bool any = !outs[c].rows.empty();
    prov.add(summary, sid,
             {name, fmt(r), any ? fmt(outs[c].rows.back().distance) : "NA",
              any ? fmt(outs[c].rows.back().test - outs[c].rows.back().train) : "NA", fmt(outs[c].r),
              to_string(outs[c].result.status)});
    res.renorm.merge(outs[c].renorm);
  }
  res.tables.emplace_back("stability", std::move(t));
  res.tables.emplace_back("stability_summary", std::move(summary));
  return res;
}

// ---------------------------------------------------------------------------

/// gamma_t over training for each rho with the first configured optimizer
/// (SAM by default). problem.kind = quadratic1d runs the scalar quadratic
/// mu x^2 / 2 from x = 1, where gamma_t = 1/(1 + rho mu) exactly.
inline ExperimentOutput run_renorm_tracking(const ExperimentConfig& cfg) {
  const Provenance prov(cfg);
  const double eta = cfg.eta_grid().at(0);
  const bool scalar = cfg.problem == "quadratic1d";
  if (!scalar && cfg.problem != "mlp") throw ConfigError("renorm-track: problem.kind must be mlp or quadratic1d");
  std::optional<MlpSetup> setup;
  if (!scalar) setup = mlp_setup(cfg);

  struct CellOut {
    std::vector<std::pair<long, double>> gammas;      // logged steps
    std::vector<std::pair<long, double>> epoch_mean;  // epoch -> mean gamma
    RunResult result;
    RenormMonitor renorm;
  };
  std::vector<CellOut> outs(cfg.rho.size());

  parallel_for(outs.size(), cfg.jobs, [&](std::size_t j) {
    const OptimizerConfig oc = cfg.optimizer(0, eta, cfg.rho[j]);
    CellOut& out = outs[j];
    RngStream noise(cfg.seed, stream_key({kTagRenorm, j}));
    try {
      if (scalar) {
        const std::vector<double> diag{cfg.mu};
        const QuadraticProblem q = QuadraticProblem::diagonal(diag);
        ParamVector w{1.0};
        OptState st(1);
        for (long t = 0; t < cfg.steps; ++t) {
          const StepRecord rec = step(oc, st, q, w.span(), cfg.noise_std(), noise);
          out.renorm.observe(oc, rec);
          if (t % cfg.log_stride == 0) out.gammas.emplace_back(t, rec.gamma);
          out.epoch_mean.emplace_back(t, rec.gamma);
        }
      } else {
        MlpOracle oracle(setup->model, setup->train);
        RngStream init_rng(cfg.seed, stream_key({kTagMlpInit, 0}));
        ParamVector w = setup->model.init(init_rng);
        OptState st(w.size());
        for (long e = 1; e <= cfg.epochs; ++e) {
          const auto order = epoch_order(cfg, 0, e, setup->train.n);
          double sum = 0.0;
          long count = 0;
          train_epoch(oc, st, oracle, w, order, static_cast<std::size_t>(cfg.batch_size), cfg.noise_std(), noise,
                      [&](const StepRecord& rec) {
                        out.renorm.observe(oc, rec);
                        if (rec.t % cfg.log_stride == 0) out.gammas.emplace_back(rec.t, rec.gamma);
                        sum += rec.gamma;
                        ++count;
                      });
          out.epoch_mean.emplace_back(e, sum / static_cast<double>(count));
        }
      }
      out.result.status = RunStatus::Success;
    } catch (const DivergenceError& e) {
      out.result.status = RunStatus::Divergence;
      out.result.diverged_at = e.t;
    }
  });

  ExperimentOutput res;
  res.id = "renorm-track";
  Table steps = prov.table({"rho", "step", "gamma"});
  Table epochs = prov.table({"rho", "epoch", "mean_gamma"});
  Table summary = prov.table({"optimizer", "rho", "mean_gamma", "frac_epochs_below_one", "status"});
  for (std::size_t j = 0; j < outs.size(); ++j) {
    const std::uint64_t sid = stream_key({kTagRenorm, j});
    const std::string rho = fmt(cfg.rho[j]);
    for (const auto& [t, g] : outs[j].gammas) prov.add(steps, sid, {rho, fmt(t), fmt(g)});
    double total = 0.0;
    long below = 0;
    for (const auto& [e, g] : outs[j].epoch_mean) {
      if (!scalar) prov.add(epochs, sid, {rho, fmt(e), fmt(g)});
      total += g;
      if (g < 1.0) ++below;
    }
    const auto ne = static_cast<double>(outs[j].epoch_mean.size());
    prov.add(summary, sid,
             {cfg.optimizer(0, eta, cfg.rho[j]).name(), rho, ne > 0 ? fmt(total / ne) : "NA",
              ne > 0 ? fmt(static_cast<double>(below) / ne) : "NA", to_string(outs[j].result.status)});
    res.renorm.merge(outs[j].renorm);
  }
  res.tables.emplace_back("renorm", std::move(steps));
  if (!scalar) res.tables.emplace_back("renorm_epochs", std::move(epochs));
  res.tables.emplace_back("renorm_summary", std::move(summary));
  return res;
}

// ---------------------------------------------------------------------------

/// Top-k Hessian eigenvalues of the full training loss after training each
/// optimizer from a shared initialization. problem.kind = quadratic compares
/// power iteration against the dense eigensolver instead.
inline ExperimentOutput run_sharpness(const ExperimentConfig& cfg) {
  const Provenance prov(cfg);
  const auto k = static_cast<int>(cfg.top_k);
  ExperimentOutput res;
  res.id = "sharpness";
  Table t = prov.table({"optimizer", "replicate", "eig_rank", "eigenvalue", "converged"});

  if (cfg.problem == "quadratic") {
    const QuadraticProblem q = quadratic_make(static_cast<std::size_t>(cfg.dim), cfg.delta, cfg.seed);
    const ParamVector w0(q.dim());
    const std::uint64_t sid = stream_key({kTagSharpness, 0});
    const auto power = top_k_eigs(q, w0, k, static_cast<int>(cfg.power_iters), cfg.power_tol, stream_key({cfg.seed, sid}),
                                  cfg.fd_step);
    const Eigen::VectorXd dense = symmetric_eigenvalues(q.hessian());
    for (int e = 0; e < k; ++e) {
      prov.add(t, sid, {"power", "0", fmt(e + 1), fmt(power[e].value), fmt(power[e].converged)});
      prov.add(t, sid, {"dense", "0", fmt(e + 1), fmt(dense(dense.size() - 1 - e)), "true"});
    }
    res.tables.emplace_back("sharpness", std::move(t));
    return res;
  }
  if (cfg.problem != "mlp") throw ConfigError("sharpness: problem.kind must be mlp or quadratic");

  const MlpSetup setup = mlp_setup(cfg);
  const double eta = cfg.eta_grid().at(0);
  const double rho = cfg.rho.empty() ? 0.0 : cfg.rho.front();
  const auto reps = static_cast<std::size_t>(cfg.replicates);
  const std::size_t nopt = cfg.optimizers.size();
  struct CellOut {
    std::vector<EigenEstimate> eigs;
    RunResult result;
    RenormMonitor renorm;
  };
  std::vector<CellOut> outs(reps * nopt);

  parallel_for(outs.size(), cfg.jobs, [&](std::size_t c) {
    const std::size_t r = c / nopt, i = c % nopt;
    const OptimizerConfig oc = cfg.optimizer(i, eta, rho);
    RngStream init_rng(cfg.seed, stream_key({kTagMlpInit, r}));
    ParamVector w = setup.model.init(init_rng);
    OptState st(w.size());
    MlpOracle oracle(setup.model, setup.train);
    RngStream noise(cfg.seed, stream_key({kTagMlpNoise, r, i}));
    CellOut& out = outs[c];
    try {
      for (long e = 1; e <= cfg.epochs; ++e)
        train_epoch(oc, st, oracle, w, epoch_order(cfg, r, e, setup.train.n), static_cast<std::size_t>(cfg.batch_size),
                    cfg.noise_std(), noise, [&](const StepRecord& rec) { out.renorm.observe(oc, rec); });
      oracle.use_full_batch();
      out.eigs = top_k_eigs(oracle, w, k, static_cast<int>(cfg.power_iters), cfg.power_tol,
                            stream_key({cfg.seed, kTagSharpness, r, i}), cfg.fd_step);
      out.result.status = RunStatus::Success;
    } catch (const DivergenceError& e) {
      out.result.status = RunStatus::Divergence;
      out.result.diverged_at = e.t;
    }
  });

  for (std::size_t c = 0; c < outs.size(); ++c) {
    const std::size_t r = c / nopt, i = c % nopt;
    const std::string name = cfg.optimizer(i, eta, rho).name();
    const std::uint64_t sid = stream_key({kTagMlpNoise, r, i});
    for (std::size_t e = 0; e < outs[c].eigs.size(); ++e)
      prov.add(t, sid,
               {name, fmt(r), fmt(static_cast<long>(e + 1)), fmt(outs[c].eigs[e].value), fmt(outs[c].eigs[e].converged)});
    res.renorm.merge(outs[c].renorm);
  }
  res.tables.emplace_back("sharpness", std::move(t));
  return res;
}

// ---------------------------------------------------------------------------

/// Terminal training loss/accuracy per (optimizer, eta) at a fixed rho.
inline ExperimentOutput run_lr_sweep(const ExperimentConfig& cfg) {
  if (cfg.problem != "mlp") throw ConfigError("lr-sweep: problem.kind must be mlp");
  const Provenance prov(cfg);
  const MlpSetup setup = mlp_setup(cfg);
  const std::vector<double> etas = cfg.eta_grid();
  const double rho = cfg.rho.empty() ? 0.0 : cfg.rho.front();
  const std::size_t nopt = cfg.optimizers.size();
  struct CellOut {
    double loss = std::numeric_limits<double>::quiet_NaN();
    double acc = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
    RenormMonitor renorm;
  };
  std::vector<CellOut> outs(nopt * etas.size());

  parallel_for(outs.size(), cfg.jobs, [&](std::size_t c) {
    const std::size_t i = c / etas.size(), k = c % etas.size();
    const OptimizerConfig oc = cfg.optimizer(i, etas[k], rho);
    RngStream init_rng(cfg.seed, stream_key({kTagMlpInit, 0}));
    ParamVector w = setup.model.init(init_rng);
    OptState st(w.size());
    MlpOracle oracle(setup.model, setup.train);
    RngStream noise(cfg.seed, stream_key({kTagLrSweep, k}));
    CellOut& out = outs[c];
    try {
      for (long e = 1; e <= cfg.epochs; ++e)
        train_epoch(oc, st, oracle, w, epoch_order(cfg, 0, e, setup.train.n), static_cast<std::size_t>(cfg.batch_size),
                    cfg.noise_std(), noise, [&](const StepRecord& rec) { out.renorm.observe(oc, rec); });
      out.loss = setup.model.mean_loss(w, setup.train);
      out.acc = 1.0 - setup.model.error_rate(w, setup.train);
      out.diverged = !std::isfinite(out.loss);
    } catch (const DivergenceError&) {
      out.diverged = true;
    }
  });

  ExperimentOutput res;
  res.id = "lr-sweep";
  Table t = prov.table({"optimizer", "eta", "final_train_loss", "final_train_acc", "diverged"});
  for (std::size_t c = 0; c < outs.size(); ++c) {
    const std::size_t i = c / etas.size(), k = c % etas.size();
    prov.add(t, stream_key({kTagLrSweep, k}),
             {cfg.optimizer(i, etas[k], rho).name(), fmt(etas[k]), fmt(outs[c].loss), fmt(outs[c].acc),
              fmt(outs[c].diverged)});
    res.renorm.merge(outs[c].renorm);
  }
  res.tables.emplace_back("lr_sweep", std::move(t));
  return res;
}

}  // namespace ssamlab
