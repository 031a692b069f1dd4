#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "ssamlab/experiments.hpp"

using namespace ssamlab;

namespace {

ExperimentConfig config(const std::string& id, const std::string& overlay = "") {
  return parse_config_string(overlay, default_config(id));
}

// Small grids for every experiment; each finishes in well under a second.
const std::map<std::string, std::string>& small_overlays() {
  static const std::map<std::string, std::string> m = {
      {"escape", "[problem]\ndim = 4\n[run]\nsteps = 300\n[experiment]\nreplicates = 2\n"},
      {"success-rate", "[optimizer]\neta_count = 3\n[run]\nsteps = 200\nstarts = 20\n"},
      {"convergence", "[problem]\ndim = 5\n[run]\nsteps = 2000\ntail = 100\n[experiment]\nreplicates = 2\n"},
      {"stability", "[problem]\nn = 30\ntest_n = 50\nhidden = 6\n[run]\nepochs = 3\n[experiment]\nreplicates = 2\n"},
      {"renorm-track", "[problem]\nn = 40\nhidden = 6\n[run]\nepochs = 3\n"},
      {"sharpness", "[problem]\nn = 30\nhidden = 6\n[run]\nepochs = 2\ntop_k = 2\n[experiment]\nreplicates = 2\n"},
      {"lr-sweep", "[problem]\nn = 40\nhidden = 6\n[optimizer]\neta_count = 4\n[run]\nepochs = 2\n"},
      {"verify-theory", "[theory]\ninstances = 3\ntrials = 200\n"},
      {"bounds", ""},
  };
  return m;
}

std::vector<double> column(const Table& t, const std::string& c) {
  std::vector<double> v;
  for (std::size_t r = 0; r < t.size(); ++r) v.push_back(t.num(r, c));
  return v;
}

}  // namespace

// --- cross-cutting properties --------------------------------------------------

TEST(Experiments, CsvIsIndependentOfWorkerCount) {
  for (const auto& [id, overlay] : small_overlays()) {
    ExperimentConfig a = config(id, overlay), b = a;
    a.jobs = 1;
    b.jobs = 3;
    const ExperimentOutput oa = run_experiment(a), ob = run_experiment(b);
    ASSERT_EQ(oa.tables.size(), ob.tables.size()) << id;
    for (std::size_t k = 0; k < oa.tables.size(); ++k)
      EXPECT_EQ(oa.tables[k].second.to_csv(), ob.tables[k].second.to_csv()) << id << " " << oa.tables[k].first;
  }
}

TEST(Experiments, EveryRowCarriesProvenance) {
  for (const auto& [id, overlay] : small_overlays()) {
    const ExperimentConfig c = config(id, overlay);
    const std::string hash = config_hash(c);
    const ExperimentOutput out = run_experiment(c);
    EXPECT_FALSE(out.tables.empty()) << id;
    for (const auto& [stem, t] : out.tables) {
      ASSERT_TRUE(t.has("master_seed") && t.has("stream_id") && t.has("config_hash")) << stem;
      for (std::size_t r = 0; r < t.size(); ++r) {
        EXPECT_EQ(t.at(r, "master_seed"), fmt(c.seed));
        EXPECT_EQ(t.at(r, "config_hash"), hash);
        EXPECT_FALSE(t.at(r, "stream_id").empty());
      }
      // CSV output parses back to the same table.
      EXPECT_EQ(parse_csv(t.to_csv()).rows, t.rows) << stem;
    }
  }
}

TEST(Experiments, SeedChangesResults) {
  ExperimentConfig a = config("escape", small_overlays().at("escape")), b = a;
  b.seed = a.seed + 1;
  EXPECT_NE(run_experiment(a).table("escape").to_csv(), run_experiment(b).table("escape").to_csv());
}

TEST(Experiments, RenormalizationHoldsOnEverySsamStep) {
  for (const auto& [id, overlay] : small_overlays()) {
    const ExperimentOutput out = run_experiment(config(id, overlay));
    EXPECT_LE(out.renorm.max_deviation, 1e-12) << id;
  }
}

TEST(Experiments, UnknownIdIsAConfigError) {
  EXPECT_THROW(default_config("nope"), ConfigError);
  ExperimentConfig c;
  c.id = "nope";
  EXPECT_THROW(run_experiment(c), ConfigError);
}

// --- escape --------------------------------------------------------------------

TEST(Escape, ExactSaddleNeverMoves) {
  const auto out = run_experiment(config("escape", "[problem]\ndim = 4\ninit_std = 0\n[run]\nsteps = 100\n"
                                                   "[experiment]\nreplicates = 1\n"));
  const Table& s = out.table("escape_summary");
  ASSERT_EQ(s.size(), 7u);  // SGD once plus SAM and SSAM at three radii
  for (std::size_t r = 0; r < s.size(); ++r) {
    EXPECT_EQ(s.at(r, "escape_step"), "NA");
    EXPECT_EQ(s.at(r, "status"), "failure");
  }
  for (double l : column(out.table("escape"), "loss")) EXPECT_EQ(l, column(out.table("escape"), "loss").front());
}

TEST(Escape, SgdReportsRhoAsNa) {
  const auto out = run_experiment(config("escape", small_overlays().at("escape")));
  const Table sgd = out.table("escape_summary").where("optimizer", "SGD");
  ASSERT_EQ(sgd.size(), 2u);
  for (std::size_t r = 0; r < sgd.size(); ++r) EXPECT_EQ(sgd.at(r, "rho"), "NA");
}

TEST(Escape, OrderingOnDeskProblem) {
  const auto out = run_experiment(config("escape", "[experiment]\nreplicates = 3\n"));
  const Table& s = out.table("escape_summary");
  auto step_of = [&](const std::string& opt, const std::string& rho, long rep) {
    for (std::size_t r = 0; r < s.size(); ++r)
      if (s.at(r, "optimizer") == opt && s.at(r, "rho") == rho && s.at(r, "replicate") == fmt(rep))
        return s.num(r, "escape_step");
    ADD_FAILURE() << opt << " " << rho;
    return 0.0;
  };
  for (long rep = 0; rep < 3; ++rep) {
    double prev = step_of("SGD", "NA", rep);
    for (const char* rho : {"0.02", "0.05", "0.08"}) {
      const double sam = step_of("SAM", rho, rep);
      EXPECT_LE(step_of("SGD", "NA", rep), sam);
      EXPECT_LE(prev, sam);
      EXPECT_LE(step_of("SSAM", rho, rep), sam);
      prev = sam;
    }
  }
}

// --- success rate --------------------------------------------------------------

TEST(SuccessRate, SgdCurveIsIdenticalAcrossRho) {
  const auto out = run_experiment(config("success-rate", small_overlays().at("success-rate")));
  const Table sgd = out.table("success_rate").where("optimizer", "SGD");
  ASSERT_EQ(sgd.size(), 9u);
  for (std::size_t r = 3; r < sgd.size(); ++r) EXPECT_EQ(sgd.at(r, "successes"), sgd.at(r % 3, "successes"));
}

TEST(SuccessRate, RatesAreExactFractions) {
  const auto out = run_experiment(config("success-rate", small_overlays().at("success-rate")));
  const Table& t = out.table("success_rate");
  for (std::size_t r = 0; r < t.size(); ++r) {
    EXPECT_EQ(t.at(r, "starts"), "20");
    EXPECT_EQ(t.num(r, "success_rate"), std::stod(t.at(r, "successes")) / 20.0);
    EXPECT_LE(t.num(r, "successes") + t.num(r, "diverged"), 20.0);
  }
}

TEST(SuccessRate, ToyMinimaAreSuccesses) {
  EXPECT_TRUE(toy2d_success(std::vector<double>{1.0, 1.0}, 0.1));
  EXPECT_TRUE(toy2d_success(std::vector<double>{-1.0, -1.0}, 0.1));
  EXPECT_TRUE(toy2d_success(std::vector<double>{1.05, 0.95}, 0.1));
  EXPECT_FALSE(toy2d_success(std::vector<double>{0.0, 0.0}, 0.1));
  EXPECT_FALSE(toy2d_success(std::vector<double>{std::nan(""), 1.0}, 0.1));
}

TEST(SuccessRate, SmallStepSamStarStaysReliable) {
  const auto out = run_experiment(config(
      "success-rate", "[optimizer]\nnames = SAM*\nrho = 0.05\neta_count = 0\neta = 0.001\n[run]\nstarts = 100\n"));
  EXPECT_GE(out.table("success_rate").num(0, "success_rate"), 0.95);
}

// --- convergence ---------------------------------------------------------------

TEST(Convergence, NoiseFreeRunsReachTheMinimum) {
  const auto out = run_experiment(config(
      "convergence", "[problem]\ndim = 5\ndelta = 0.5\n[optimizer]\neta = 0.1\nrho = 0.05, 0.2\n"
                     "[run]\nsteps = 3000\ntail = 10\nnoise_variance = 0\n[experiment]\nreplicates = 2\n"));
  for (double v : column(out.table("convergence_runs"), "final_loss")) EXPECT_LT(v, 1e-12);
}

TEST(Convergence, TerminalTableAveragesReplicates) {
  const auto out = run_experiment(config("convergence", small_overlays().at("convergence")));
  const Table& runs = out.table("convergence_runs");
  const Table& term = out.table("convergence_terminal");
  for (std::size_t r = 0; r < term.size(); ++r) {
    const Table mine = runs.where("optimizer", term.at(r, "optimizer")).where("rho", term.at(r, "rho"));
    ASSERT_EQ(mine.size(), 2u);
    EXPECT_NEAR(term.num(r, "tail_mean"), (mine.num(0, "tail_mean") + mine.num(1, "tail_mean")) / 2, 1e-18);
  }
}

// --- MLP experiments -----------------------------------------------------------

TEST(Stability, IdenticalDatasetsGiveZeroDistance) {
  const auto out =
      run_experiment(config("stability", "[problem]\nn = 30\nhidden = 6\n[run]\nepochs = 3\nperturb = false\n"));
  for (double d : column(out.table("stability"), "param_distance")) EXPECT_EQ(d, 0.0);
}

TEST(Stability, DistanceStartsAtZeroAndGapIsTestMinusTrain) {
  const auto out = run_experiment(config("stability", small_overlays().at("stability")));
  const Table& t = out.table("stability");
  bool moved = false;
  for (std::size_t r = 0; r < t.size(); ++r) {
    if (t.at(r, "epoch") == "0") EXPECT_EQ(t.num(r, "param_distance"), 0.0);
    else moved |= t.num(r, "param_distance") > 0.0;
    EXPECT_NEAR(t.num(r, "gen_gap"), t.num(r, "test_err") - t.num(r, "train_err"), 1e-12);
  }
  EXPECT_TRUE(moved);
}

TEST(Stability, DeskOrderingAndCorrelation) {
  const auto out = run_experiment(config("stability"));
  const Table& s = out.table("stability_summary");
  int ordered = 0;
  for (long rep = 0; rep < 3; ++rep) {
    const Table t = s.where("replicate", fmt(rep));
    const double sgd = t.where("optimizer", "SGD").num(0, "final_distance");
    const double sam = t.where("optimizer", "SAM").num(0, "final_distance");
    const double ssam = t.where("optimizer", "SSAM").num(0, "final_distance");
    ordered += ssam <= sam && sam <= sgd;
  }
  EXPECT_GE(ordered, 2);
  for (double r : column(s, "pearson_r")) EXPECT_GT(r, 0.0);
}

TEST(RenormTrack, ScalarQuadraticGammaIsConstant) {
  const auto out = run_experiment(config(
      "renorm-track", "[problem]\nkind = quadratic1d\nmu = 2\n[optimizer]\nrho = 0.1, 0.3\neta = 0.05\n"
                      "[run]\nsteps = 200\n[experiment]\nlog_stride = 1\n"));
  const Table& t = out.table("renorm");
  ASSERT_EQ(t.size(), 400u);
  for (std::size_t r = 0; r < t.size(); ++r)
    EXPECT_NEAR(t.num(r, "gamma"), 1.0 / (1.0 + t.num(r, "rho") * 2.0), 1e-12);
}

TEST(RenormTrack, DeskGammaBelowOneAndDecreasingInRho) {
  const auto out = run_experiment(config("renorm-track"));
  const Table& s = out.table("renorm_summary");
  ASSERT_EQ(s.size(), 3u);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_GE(s.num(r, "frac_epochs_below_one"), 0.95);
  EXPECT_GT(s.num(0, "mean_gamma"), s.num(1, "mean_gamma"));
  EXPECT_GT(s.num(1, "mean_gamma"), s.num(2, "mean_gamma"));
}

TEST(Sharpness, QuadraticPowerIterationMatchesDense) {
  const auto out = run_experiment(config("sharpness", "[problem]\nkind = quadratic\ndim = 20\ndelta = 0.01\n"
                                                      "[run]\npower_iters = 10000\npower_tol = 1e-13\nfd_step = 1e-3\n"));
  const Table& t = out.table("sharpness");
  const Table power = t.where("optimizer", "power"), dense = t.where("optimizer", "dense");
  ASSERT_EQ(power.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(power.at(k, "converged"), "true");
    EXPECT_NEAR(power.num(k, "eigenvalue"), dense.num(k, "eigenvalue"), 1e-6 * dense.num(k, "eigenvalue"));
  }
}

TEST(Sharpness, SamFlattensRelativeToSgd) {
  const auto out = run_experiment(config("sharpness", "[run]\ntop_k = 1\n"));
  const Table& t = out.table("sharpness");
  int flatter = 0;
  for (long rep = 0; rep < 3; ++rep) {
    const Table r = t.where("replicate", fmt(rep));
    flatter += r.where("optimizer", "SAM").num(0, "eigenvalue") < r.where("optimizer", "SGD").num(0, "eigenvalue");
  }
  EXPECT_GE(flatter, 2);
}

// Not reproduced on the desk MLP; see the decisions log.
TEST(Sharpness, DISABLED_SsamFlattestInMostSeeds) {
  const auto out = run_experiment(config("sharpness", "[run]\ntop_k = 1\n"));
  const Table& t = out.table("sharpness");
  int flatter = 0;
  for (long rep = 0; rep < 3; ++rep) {
    const Table r = t.where("replicate", fmt(rep));
    flatter += r.where("optimizer", "SSAM").num(0, "eigenvalue") <= r.where("optimizer", "SAM").num(0, "eigenvalue");
  }
  EXPECT_GE(flatter, 2);
}

TEST(LrSweep, SmallestRateConvergesForAll) {
  const auto out = run_experiment(config("lr-sweep"));
  const Table& t = out.table("lr_sweep");
  const std::string smallest = t.at(0, "eta");
  for (std::size_t r = 0; r < t.size(); ++r)
    if (t.at(r, "eta") == smallest) {
      EXPECT_EQ(t.at(r, "diverged"), "false") << t.at(r, "optimizer");
    }
}

TEST(LrSweep, SsamStableAtLeastAsFarAsSam) {
  const auto out = run_experiment(config("lr-sweep"));
  const Table& t = out.table("lr_sweep");
  auto largest_ok = [&](const std::string& opt) {
    double best = 0.0;
    const Table o = t.where("optimizer", opt);
    for (std::size_t r = 0; r < o.size(); ++r)
      if (o.at(r, "diverged") == "false") best = std::max(best, o.num(r, "eta"));
    return best;
  };
  EXPECT_GE(largest_ok("SSAM"), largest_ok("SAM"));
}

// Not reproduced on the desk MLP: no run produces a non-finite loss, so the
// largest converging SGD rate is the grid maximum, where all three stall near
// chance. See the decisions log.
TEST(LrSweep, DISABLED_SamFailsWhereSgdStillConverges) {
  const auto out = run_experiment(config("lr-sweep"));
  const Table& t = out.table("lr_sweep");
  const Table sgd = t.where("optimizer", "SGD"), sam = t.where("optimizer", "SAM");
  std::size_t k = 0;
  for (std::size_t r = 0; r < sgd.size(); ++r)
    if (sgd.at(r, "diverged") == "false") k = r;
  EXPECT_TRUE(sam.at(k, "diverged") == "true" || sam.num(k, "final_train_loss") > 10 * sgd.num(k, "final_train_loss"));
}

TEST(MlpSetup, RejectsUnknownDataSource) {
  EXPECT_THROW(run_experiment(config("stability", "[problem]\ndata = csv\n")), ConfigError);
  EXPECT_THROW(run_experiment(config("stability", "[problem]\nkind = toy2d\n")), ConfigError);
}

TEST(Pearson, KnownValues) {
  const std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8}, z{4, 3, 2, 1}, c{1, 1, 1, 1};
  EXPECT_NEAR(pearson(x, y), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, z), -1.0, 1e-15);
  EXPECT_TRUE(std::isnan(pearson(x, c)));
}

// --- theory drivers ------------------------------------------------------------

TEST(VerifyTheory, NoViolationsAndAllChecksReported) {
  const auto out = run_experiment(config("verify-theory", small_overlays().at("verify-theory")));
  EXPECT_EQ(out.summary.at("violations").get<long>(), 0);
  const Table& tot = out.table("verify_theory_totals");
  std::set<std::string> checks;
  for (std::size_t r = 0; r < tot.size(); ++r) {
    checks.insert(tot.at(r, "check"));
    EXPECT_EQ(tot.at(r, "violations"), "0");
    EXPECT_EQ(tot.num(r, "trials") + tot.num(r, "rejected"), 600.0);
  }
  EXPECT_EQ(checks, (std::set<std::string>{"contraction_sam", "contraction_ssam", "growth_sam", "growth_ssam",
                                           "coercivity"}));
}

TEST(VerifyTheory, InstancesAreFeasibleAndReproducible) {
  for (std::size_t i = 0; i < 20; ++i) {
    const TheoryInstance a = theory_instance(4, i, 1.0), b = theory_instance(4, i, 1.0);
    EXPECT_EQ(a.rho, b.rho);
    EXPECT_GT(a.rho, 0.0);
    EXPECT_LT(a.rho, rho_feasibility_limit(a.spec_ab));
    EXPECT_LE(a.spec_ab.mu, a.spec_a.mu);
    EXPECT_GE(a.spec_ab.L, a.spec_a.L);
  }
}

TEST(Bounds, AllKindsOrderedAndNaForSgd) {
  const auto out = run_experiment(config("bounds", "[bounds]\ngamma_upp = 0.8\n"));
  const Table& t = out.table("bounds");
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t.at(0, "kind"), "SGD");
  EXPECT_EQ(t.at(0, "convergence_bound"), "NA");
  EXPECT_EQ(t.at(0, "gamma_upp"), "NA");
  EXPECT_LE(t.num(1, "stability_bound"), t.num(0, "stability_bound"));
  EXPECT_LE(t.num(2, "stability_bound"), t.num(1, "stability_bound"));
  EXPECT_LT(t.num(2, "excess_risk_bound"), t.num(1, "excess_risk_bound"));
}

TEST(Bounds, PilotEstimateOfGammaIsBelowOne) {
  const auto out = run_experiment(config("bounds", "[bounds]\ngamma_upp = 0\nkind = SSAM\n"));
  EXPECT_TRUE(out.summary.at("gamma_upp_estimated").get<bool>());
  const double g = out.summary.at("gamma_upp").get<double>();
  EXPECT_GT(g, 0.0);
  EXPECT_LT(g, 1.0);
  EXPECT_EQ(out.table("bounds").size(), 1u);
}

TEST(Bounds, InvalidInputsAreConfigErrors) {
  EXPECT_THROW(run_experiment(config("bounds", "[bounds]\nkind = ADAM\n")), ConfigError);
  EXPECT_THROW(run_experiment(config("bounds", "[bounds]\nmu = 2\nL = 1\n")), ConfigError);
  EXPECT_THROW(run_experiment(config("bounds", "[optimizer]\neta = 5\n")), ConfigError);
}
