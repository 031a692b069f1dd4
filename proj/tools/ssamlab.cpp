// ssamlab: run experiments and theory checks from INI configs.
//
// Exit codes: 0 ok, 1 usage/config error, 2 verification violations, 3 I/O error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <system_error>
#include <vector>

#include "CLI11.hpp"
#include "ssamlab/experiments.hpp"
#include "ssamlab/plot.hpp"

namespace fs = std::filesystem;
using namespace ssamlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitViolations = 2;
constexpr int kExitIo = 3;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Files written so far; removed if the run fails part-way.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

  void open() {
    std::error_code ec;
    if (!fs::exists(dir_, ec)) {
      if (!fs::create_directories(dir_, ec) || ec) throw IoError("cannot create output directory " + dir_.string());
      created_dir_ = true;
    }
  }

  void write(const std::string& name, const std::string& body) {
    const fs::path p = dir_ / name;
    files_.push_back(p);
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << body;
    out.close();
    if (!out) throw IoError("write failed for " + p.string());
  }

  void rollback() noexcept {
    std::error_code ec;
    for (const auto& f : files_) fs::remove(f, ec);
    if (created_dir_) fs::remove(dir_, ec);  // only removes an empty directory
    files_.clear();
  }

  const std::vector<fs::path>& files() const noexcept { return files_; }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
  bool created_dir_ = false;
};

int run(const std::string& id, const std::string& config_path, const std::string& out_flag,
        const std::optional<std::uint64_t>& seed, const std::optional<long>& jobs, bool plot,
        const std::string& kind) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path, default_config(id));
    if (cfg.id != id) throw ConfigError("config is for '" + cfg.id + "', not '" + id + "'");
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    if (!kind.empty()) cfg.kind = kind;
    if (!out_flag.empty()) cfg.out_dir = out_flag;
    else if (const char* env = std::getenv("SSAMLAB_OUT"); env && *env) cfg.out_dir = env;
    cfg.validate();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  OutputSet outputs(cfg.out_dir);
  try {
    const ExperimentOutput res = run_experiment(cfg);
    outputs.open();
    for (const auto& [stem, table] : res.tables) outputs.write(stem + ".csv", table.to_csv());
    outputs.write(id + ".meta.json", sidecar(cfg, res).dump(2) + "\n");
    if (plot) {
      const auto [stem, spec] = default_plot(id, cfg.problem);
      if (!stem.empty()) outputs.write(stem + ".svg", render_svg(res.table(stem), spec));
    }
    for (const auto& f : outputs.files()) std::cout << "wrote " << f.string() << "\n";
    if (res.summary.contains("violations")) {
      const long v = res.summary["violations"].get<long>();
      std::cout << "violations: " << v << "\n";
      if (v > 0) return kExitViolations;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    outputs.rollback();
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    outputs.rollback();
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    outputs.rollback();
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAM / SSAM optimizer laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir, kind;
  std::optional<std::uint64_t> seed;
  std::optional<long> jobs;
  bool plot = false;

  for (const auto& id : experiment_ids()) {
    CLI::App* sub = app.add_subcommand(id, "run " + id);
    sub->add_option("--config,-c", config_path, "INI config file")->required();
    sub->add_option("--out,-o", out_dir, "output directory (overrides SSAMLAB_OUT and output.dir)");
    sub->add_option("--seed", seed, "master seed override");
    sub->add_option("--jobs,-j", jobs, "worker threads (0 = all cores)");
    sub->add_flag("--plot", plot, "also write an SVG chart");
    if (id == "bounds") sub->add_option("--kind", kind, "SGD, SAM, SSAM or all");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  for (CLI::App* sub : app.get_subcommands())
    return run(sub->get_name(), config_path, out_dir, seed, jobs, plot, kind);
  return kExitConfig;
}
