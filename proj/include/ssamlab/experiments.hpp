#pragma once

// Experiment registry: desk-scale defaults per experiment id and dispatch.

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ssamlab/experiments/common.hpp"
#include "ssamlab/experiments/config.hpp"
#include "ssamlab/experiments/convergence.hpp"
#include "ssamlab/experiments/escape.hpp"
#include "ssamlab/experiments/mlp_runs.hpp"
#include "ssamlab/experiments/success_rate.hpp"
#include "ssamlab/experiments/verify.hpp"

namespace ssamlab {

inline const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids = {"escape",    "success-rate", "convergence",   "stability", "renorm-track",
                                               "sharpness", "lr-sweep",     "verify-theory", "bounds"};
  return ids;
}

/// Desk-scale defaults; a config file overlays these.
inline ExperimentConfig default_config(std::string_view id) {
  ExperimentConfig c;
  c.id = std::string(id);
  if (id == "escape") {
    c.problem = "lae";
    c.dim = 20;
    c.init_std = 0.01;
    c.optimizers = {"SGD", "SAM", "SSAM"};
    c.rho = {0.02, 0.05, 0.08};
    c.eta = {1e-3};
    c.steps = 5000;
    c.replicates = 10;
    c.log_stride = 50;
  } else if (id == "success-rate") {
    c.problem = "toy2d";
    c.optimizers = {"SGD", "SAM", "SAM*", "SSAM"};
    c.rho = {0.05, 0.2, 0.4};
    c.eta_min = 1e-3;
    c.eta_max = 0.3;
    c.eta_count = 20;
    c.starts = 500;
    c.steps = 10000;
    c.noise_variance = 0.005;
  } else if (id == "convergence") {
    c.problem = "quadratic";
    c.dim = 20;
    c.delta = 0.01;
    c.optimizers = {"SGD", "SAM", "SSAM"};
    c.rho = {0.01, 0.05, 0.2, 0.5, 1.0, 2.0};
    c.eta = {1e-3};
    c.steps = 100000;
    c.tail = 1000;
    c.noise_variance = 1e-4;
    c.replicates = 4;
    c.log_stride = 1000;
  } else if (id == "stability") {
    c.problem = "mlp";
    c.optimizers = {"SGD", "SAM", "SSAM"};
    c.rho = {0.05};
    c.eta = {0.01};
    c.epochs = 30;
    c.batch_size = 1;
    c.replicates = 3;
  } else if (id == "renorm-track") {
    c.problem = "mlp";
    c.optimizers = {"SAM"};
    c.rho = {0.01, 0.05, 0.2};
    c.eta = {0.01};
    c.epochs = 30;
    c.batch_size = 8;
    c.log_stride = 10;
  } else if (id == "sharpness") {
    c.problem = "mlp";
    c.optimizers = {"SGD", "SAM", "SSAM"};
    c.rho = {0.05};
    c.eta = {0.01};
    c.epochs = 30;
    c.replicates = 3;
  } else if (id == "lr-sweep") {
    c.problem = "mlp";
    c.optimizers = {"SGD", "SAM", "SSAM"};
    c.rho = {1.0};
    c.eta_min = 0.01;
    c.eta_max = 3.16;
    c.eta_count = 12;
    c.epochs = 100;
    c.batch_size = 32;
  } else if (id == "verify-theory") {
    c.problem = "quadratic";
    c.instances = 100;
    c.trials = 10000;
    c.radius = 1.0;
  } else if (id == "bounds") {
    c.problem = "quadratic";
    c.rho = {0.05};
    c.eta = {0.01};
    c.steps = 1000;
  } else {
    throw ConfigError("unknown experiment '" + std::string(id) + "'");
  }
  return c;
}

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  if (cfg.id == "escape") return run_escape(cfg);
  if (cfg.id == "success-rate") return run_success_rate(cfg);
  if (cfg.id == "convergence") return run_convergence(cfg);
  if (cfg.id == "stability") return run_stability(cfg);
  if (cfg.id == "renorm-track") return run_renorm_tracking(cfg);
  if (cfg.id == "sharpness") return run_sharpness(cfg);
  if (cfg.id == "lr-sweep") return run_lr_sweep(cfg);
  if (cfg.id == "verify-theory") return run_verify_theory(cfg);
  if (cfg.id == "bounds") return run_bounds(cfg);
  throw ConfigError("unknown experiment '" + cfg.id + "'");
}

}  // namespace ssamlab
