#pragma once

// Experiment configuration: a flat INI file ([section] key = value) whose
// list-valued keys are comma-separated. Every field has a desk-scale default;
// unknown keys are rejected so typos cannot silently fall back to defaults.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/uuid/detail/sha1.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "ssamlab/optimizers.hpp"

namespace ssamlab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest round-trip decimal form, independent of the C locale.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
inline std::string fmt(long v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(const std::string& v) { return v; }

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const std::string t = trim(text);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size())
    throw ConfigError("config: cannot parse '" + t + "' for key " + key);
  return v;
}

inline void parse_into(const std::string&, const std::string& text, std::string& out) { out = trim(text); }
inline void parse_into(const std::string& key, const std::string& text, double& out) {
  out = parse_number<double>(key, text);
}
inline void parse_into(const std::string& key, const std::string& text, long& out) {
  // Accept integral values written in scientific notation (1e5).
  const double d = parse_number<double>(key, text);
  if (d != std::floor(d) || std::abs(d) > 9.0e15) throw ConfigError("config: key " + key + " must be an integer");
  out = static_cast<long>(d);
}
inline void parse_into(const std::string& key, const std::string& text, std::uint64_t& out) {
  out = parse_number<std::uint64_t>(key, text);
}
inline void parse_into(const std::string& key, const std::string& text, bool& out) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") out = true;
  else if (t == "false" || t == "0" || t == "no") out = false;
  else throw ConfigError("config: key " + key + " expects a boolean");
}
inline void parse_into(const std::string& key, const std::string& text, std::vector<double>& out) {
  out.clear();
  for (const auto& item : split_list(text)) out.push_back(parse_number<double>(key, item));
}
inline void parse_into(const std::string& key, const std::string& text, std::vector<long>& out) {
  out.clear();
  for (const auto& item : split_list(text)) {
    long v;
    parse_into(key, item, v);
    out.push_back(v);
  }
}
inline void parse_into(const std::string&, const std::string& text, std::vector<std::string>& out) {
  out = split_list(text);
}

inline std::string echo_value(const std::string& v) { return v; }
inline std::string echo_value(double v) { return fmt(v); }
inline std::string echo_value(long v) { return fmt(v); }
inline std::string echo_value(std::uint64_t v) { return fmt(v); }
inline std::string echo_value(bool v) { return fmt(v); }
template <class T>
std::string echo_value(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += echo_value(v[i]);
  }
  return s;
}

}  // namespace detail

/// All knobs of one experiment or theory run. Which fields matter depends on
/// `id`; the rest are echoed but unused.
struct ExperimentConfig {
  // [experiment]
  std::string id = "escape";
  std::uint64_t seed = 1;
  long replicates = 1;
  long jobs = 1;
  long log_stride = 1;

  // [problem]
  std::string problem = "lae";  // lae | toy2d | quadratic | quadratic1d | mlp
  long dim = 20;
  double delta = 0.01;
  double init_std = 0.01;
  double mu = 1.0;  // quadratic1d curvature
  std::string data = "synthetic";  // synthetic | idx
  long n = 200;
  long test_n = 2000;
  long features = 10;
  long classes = 4;
  double spread = 0.75;
  std::vector<long> hidden = {32, 32};
  std::string train_images, train_labels, test_images, test_labels;

  // [optimizer]
  std::vector<std::string> optimizers = {"SGD", "SAM", "SSAM"};
  std::vector<double> rho = {0.05};
  std::vector<double> eta = {0.001};
  double eta_min = 0.0;  // log grid, used when eta_count > 0
  double eta_max = 0.0;
  long eta_count = 0;
  double momentum = 0.0;
  double weight_decay = 0.0;
  bool reuse_noise = false;

  // [run]
  long steps = 1000;
  long epochs = 10;
  long batch_size = 1;
  double noise_variance = 0.0;
  double escape_fraction = 0.5;
  double success_tol = 0.1;
  long starts = 500;
  double start_box = 2.0;
  long tail = 1000;
  bool perturb = true;
  double init_scale = 1.0;  // quadratic start point std
  long top_k = 5;
  long power_iters = 2000;
  double power_tol = 1e-9;
  double fd_step = 1e-4;

  // [theory] / [bounds]
  long instances = 100;
  long trials = 10000;
  double radius = 1.0;
  double spec_mu = 0.5, spec_L = 1.0, spec_G = 1.0, spec_R = 1.0;
  double bound_n = 1000.0;
  double bound_T = 1000.0;
  double gamma_upp = 0.9;
  double initial_gap = 1.0;
  std::string kind = "all";

  std::string out_dir = "out";

  template <class F>
  void visit(F&& f) {
    f("experiment.id", id);
    f("experiment.seed", seed);
    f("experiment.replicates", replicates);
    f("experiment.jobs", jobs);
    f("experiment.log_stride", log_stride);
    f("problem.kind", problem);
    f("problem.dim", dim);
    f("problem.delta", delta);
    f("problem.init_std", init_std);
    f("problem.mu", mu);
    f("problem.data", data);
    f("problem.n", n);
    f("problem.test_n", test_n);
    f("problem.features", features);
    f("problem.classes", classes);
    f("problem.spread", spread);
    f("problem.hidden", hidden);
    f("problem.train_images", train_images);
    f("problem.train_labels", train_labels);
    f("problem.test_images", test_images);
    f("problem.test_labels", test_labels);
    f("optimizer.names", optimizers);
    f("optimizer.rho", rho);
    f("optimizer.eta", eta);
    f("optimizer.eta_min", eta_min);
    f("optimizer.eta_max", eta_max);
    f("optimizer.eta_count", eta_count);
    f("optimizer.momentum", momentum);
    f("optimizer.weight_decay", weight_decay);
    f("optimizer.reuse_noise", reuse_noise);
    f("run.steps", steps);
    f("run.epochs", epochs);
    f("run.batch_size", batch_size);
    f("run.noise_variance", noise_variance);
    f("run.escape_fraction", escape_fraction);
    f("run.success_tol", success_tol);
    f("run.starts", starts);
    f("run.start_box", start_box);
    f("run.tail", tail);
    f("run.perturb", perturb);
    f("run.init_scale", init_scale);
    f("run.top_k", top_k);
    f("run.power_iters", power_iters);
    f("run.power_tol", power_tol);
    f("run.fd_step", fd_step);
    f("theory.instances", instances);
    f("theory.trials", trials);
    f("theory.radius", radius);
    f("bounds.mu", spec_mu);
    f("bounds.L", spec_L);
    f("bounds.G", spec_G);
    f("bounds.R", spec_R);
    f("bounds.n", bound_n);
    f("bounds.T", bound_T);
    f("bounds.gamma_upp", gamma_upp);
    f("bounds.initial_gap", initial_gap);
    f("bounds.kind", kind);
    f("output.dir", out_dir);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<ExperimentConfig*>(this)->visit([&](const char* k, const auto& v) { f(k, v); });
  }

  /// Learning-rate grid: `eta`, or eta_count log-spaced values in [eta_min, eta_max].
  std::vector<double> eta_grid() const {
    if (eta_count <= 0) return eta;
    std::vector<double> g;
    if (eta_count == 1) return {eta_min};
    const double a = std::log10(eta_min), b = std::log10(eta_max);
    for (long i = 0; i < eta_count; ++i)
      g.push_back(std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(eta_count - 1)));
    return g;
  }

  double noise_std() const { return std::sqrt(noise_variance); }

  OptimizerConfig optimizer(std::size_t name_idx, double eta_v, double rho_v) const {
    OptimizerConfig c = parse_optimizer(optimizers.at(name_idx), eta_v, rho_v);
    c.momentum = momentum;
    c.weight_decay = weight_decay;
    c.reuse_noise = reuse_noise;
    return c;
  }

  void validate() const {
    if (replicates < 1) throw ConfigError("config: experiment.replicates must be >= 1");
    if (jobs < 0) throw ConfigError("config: experiment.jobs must be >= 0");
    if (log_stride < 1) throw ConfigError("config: experiment.log_stride must be >= 1");
    if (!(noise_variance >= 0.0)) throw ConfigError("config: run.noise_variance must be >= 0");
    if (optimizers.empty()) throw ConfigError("config: optimizer.names is empty");
    if (eta_count > 0 && !(eta_min > 0.0 && eta_max >= eta_min))
      throw ConfigError("config: log eta grid needs 0 < eta_min <= eta_max");
    if (eta_count <= 0 && eta.empty()) throw ConfigError("config: optimizer.eta is empty");
    for (std::size_t i = 0; i < optimizers.size(); ++i) {
      try {
        for (double e : eta_grid()) {
          optimizer(i, e, rho.empty() ? 0.0 : rho.front()).validate();
          for (double r : rho) optimizer(i, e, r).validate();
        }
      } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("config: ") + ex.what());
      }
    }
    if (steps < 0 || epochs < 0 || batch_size < 1 || starts < 1 || tail < 1)
      throw ConfigError("config: run.* counts out of range");
    if (n < 2 || features < 1 || classes < 2) throw ConfigError("config: problem sizes out of range");
    if (dim < 1) throw ConfigError("config: problem.dim must be >= 1");
    if (!(bound_T >= 0.0 && std::floor(bound_T) == bound_T)) throw ConfigError("config: bounds.T must be an integer >= 0");
  }

  /// Canonical "key = value" lines in declaration order.
  std::string canonical_text() const {
    std::string s;
    visit([&](const char* k, const auto& v) {
      // Where results go and how many threads compute them do not change them.
      if (std::string_view(k) == "output.dir" || std::string_view(k) == "experiment.jobs") return;
      s += k;
      s += " = ";
      s += detail::echo_value(v);
      s += "\n";
    });
    return s;
  }

  std::vector<std::pair<std::string, std::string>> echo() const {
    std::vector<std::pair<std::string, std::string>> out;
    visit([&](const char* k, const auto& v) { out.emplace_back(k, detail::echo_value(v)); });
    return out;
  }
};

/// Git-style blob hash: SHA-1 of "blob <len>\0" + content, lowercase hex.
inline std::string git_blob_sha1(std::string_view content) {
  boost::uuids::detail::sha1 h;
  const std::string head = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  h.process_bytes(head.data(), head.size());
  h.process_bytes(content.data(), content.size());
  boost::uuids::detail::sha1::digest_type dig;
  h.get_digest(dig);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned word : dig)
    for (int shift = 28; shift >= 0; shift -= 4) out += hex[(word >> shift) & 0xF];
  return out;
}

inline std::string config_hash(const ExperimentConfig& c) { return git_blob_sha1(c.canonical_text()); }

/// Overlays an INI stream onto `base`.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::set<std::string> known;
  base.visit([&](const char* key, auto& field) {
    known.insert(key);
    if (auto v = tree.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '.')))
      detail::parse_into(key, *v, field);
  });
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, _] : body)
      if (!known.count(section + "." + key)) throw ConfigError("config: unknown key " + section + "." + key);
  }
  base.validate();
  return base;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  return parse_config(in, std::move(base));
}

inline ExperimentConfig parse_config_string(const std::string& text, ExperimentConfig base = {}) {
  std::istringstream in(text);
  return parse_config(in, std::move(base));
}

}  // namespace ssamlab
