#pragma once

// Tables, provenance, run summaries and the deterministic worker pool shared
// by all experiment drivers.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ssamlab/experiments/config.hpp"
#include "ssamlab/optimizers.hpp"

namespace ssamlab {

/// A CSV table of pre-formatted cells.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw std::out_of_range("table has no column '" + std::string(name) + "'");
  }
  bool has(std::string_view name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
  }
  const std::string& at(std::size_t r, std::string_view c) const { return rows.at(r)[col(c)]; }
  double num(std::size_t r, std::string_view c) const { return std::stod(at(r, c)); }
  std::size_t size() const noexcept { return rows.size(); }
  bool empty() const noexcept { return rows.empty(); }

  void add(std::vector<std::string> cells) {
    if (cells.size() != columns.size()) throw std::logic_error("table row width mismatch");
    rows.push_back(std::move(cells));
  }

  /// Rows where column `c` equals `v`.
  Table where(std::string_view c, std::string_view v) const {
    Table t{columns, {}};
    const std::size_t k = col(c);
    for (const auto& r : rows)
      if (r[k] == v) t.rows.push_back(r);
    return t;
  }

  std::string to_csv() const {
    std::string out;
    auto put = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        const std::string& c = cells[i];
        if (c.find_first_of(",\"\n") != std::string::npos) {
          out += '"';
          for (char ch : c) {
            if (ch == '"') out += '"';
            out += ch;
          }
          out += '"';
        } else {
          out += c;
        }
      }
      out += '\n';
    };
    put(columns);
    for (const auto& r : rows) put(r);
    return out;
  }
};

/// Parses CSV produced by Table::to_csv (quoted cells allowed).
inline Table parse_csv(std::string_view text) {
  Table t;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      any = true;
    } else if (ch == ',') {
      row.push_back(std::move(cell));
      cell.clear();
    } else if (ch == '\n') {
      row.push_back(std::move(cell));
      cell.clear();
      if (t.columns.empty()) t.columns = std::move(row);
      else t.add(std::move(row));
      row.clear();
      any = false;
    } else if (ch != '\r') {
      cell += ch;
      any = true;
    }
  }
  if (any || !row.empty()) {
    row.push_back(std::move(cell));
    if (t.columns.empty()) t.columns = std::move(row);
    else t.add(std::move(row));
  }
  return t;
}

inline Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

/// Appends master_seed, stream_id and config_hash to every row.
struct Provenance {
  std::uint64_t master_seed = 0;
  std::string config_hash;

  explicit Provenance(const ExperimentConfig& cfg) : master_seed(cfg.seed), config_hash(ssamlab::config_hash(cfg)) {}

  Table table(std::vector<std::string> columns) const {
    columns.insert(columns.end(), {"master_seed", "stream_id", "config_hash"});
    return Table{std::move(columns), {}};
  }

  void add(Table& t, std::uint64_t stream_id, std::vector<std::string> cells) const {
    cells.push_back(fmt(master_seed));
    cells.push_back(fmt(stream_id));
    cells.push_back(config_hash);
    t.add(std::move(cells));
  }
};

enum class RunStatus { Success, Failure, Divergence };

inline std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Success: return "success";
    case RunStatus::Failure: return "failure";
    case RunStatus::Divergence: return "divergence";
  }
  return "?";
}

/// Terminal summary of one run.
struct RunResult {
  RunStatus status = RunStatus::Failure;
  double final_loss = 0.0;
  long steps = 0;
  std::optional<long> escape_step;
  std::optional<long> diverged_at;
  double max_renorm_deviation = 0.0;  // over renormalizing steps only
  long renorm_steps = 0;
};

/// Max |‖eff‖ − ‖g‖| / max(1, ‖g‖) over renormalizing steps.
struct RenormMonitor {
  double max_deviation = 0.0;
  long steps = 0;

  void observe(const OptimizerConfig& cfg, const StepRecord& r) {
    if (!cfg.renormalizes() || r.asc_grad_norm == 0.0) return;
    max_deviation = std::max(max_deviation, renorm_deviation(r));
    ++steps;
  }
  void merge(const RenormMonitor& o) {
    max_deviation = std::max(max_deviation, o.max_deviation);
    steps += o.steps;
  }
};

/// Everything an experiment produces: named tables plus a JSON summary.
struct ExperimentOutput {
  std::string id;
  std::vector<std::pair<std::string, Table>> tables;  // file stem -> table
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();
  RenormMonitor renorm;

  const Table& table(std::string_view stem) const {
    for (const auto& [name, t] : tables)
      if (name == stem) return t;
    throw std::out_of_range("no table '" + std::string(stem) + "'");
  }
};

/// Runs f(0..n-1) on up to `jobs` threads (0 = hardware concurrency). Callers
/// write results into per-index slots, so output never depends on scheduling.
/// The exception of the lowest failing index is rethrown.
template <class F>
void parallel_for(std::size_t n, long jobs, F&& f) {
  std::size_t workers = jobs <= 0 ? std::max(1u, std::thread::hardware_concurrency()) : static_cast<std::size_t>(jobs);
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto body = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Metadata sidecar: config echo, effective seed, config hash, summary.
inline nlohmann::ordered_json sidecar(const ExperimentConfig& cfg, const ExperimentOutput& out) {
  nlohmann::ordered_json j;
  j["experiment"] = out.id;
  j["seed"] = cfg.seed;
  j["config_hash"] = config_hash(cfg);
  nlohmann::ordered_json echo = nlohmann::ordered_json::object();
  for (const auto& [k, v] : cfg.echo()) echo[k] = v;
  j["config"] = echo;
  std::vector<std::string> files;
  for (const auto& [stem, _] : out.tables) files.push_back(stem + ".csv");
  j["tables"] = files;
  j["renorm_max_deviation"] = out.renorm.max_deviation;
  j["renorm_steps"] = out.renorm.steps;
  j["notes"] = "SGD ignores rho and renormalize";
  j["summary"] = out.summary;
  return j;
}

}  // namespace ssamlab
