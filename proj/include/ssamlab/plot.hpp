#pragma once

// Static SVG line charts from result tables.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssamlab/experiments/common.hpp"

namespace ssamlab {

struct PlotSpec {
  std::string x;
  std::string y;
  std::vector<std::string> series;  // columns whose joined values name a series
  bool log_x = false;
  bool log_y = false;
  std::string title;
  int width = 640;
  int height = 400;
};

struct PlotError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string px(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 2);
  return std::string(buf, r.ptr);
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::optional<double> cell_value(const std::string& s, bool log) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
  if (log) {
    if (v <= 0.0) return std::nullopt;
    return std::log10(v);
  }
  return v;
}

}  // namespace detail

/// Renders one polyline per series (a circle for single-point series). Rows
/// sharing a series and an x value are averaged. Non-numeric cells, and
/// non-positive ones on a log axis, are skipped.
inline std::string render_svg(const Table& table, const PlotSpec& spec) {
  if (table.empty()) throw PlotError("plot: table is empty");
  const std::size_t cx = table.col(spec.x), cy = table.col(spec.y);
  std::vector<std::size_t> cs;
  for (const auto& s : spec.series) cs.push_back(table.col(s));

  struct Series {
    std::string name;
    std::vector<double> xs, sums;
    std::vector<long> counts;
  };
  std::vector<Series> series;
  for (const auto& row : table.rows) {
    const auto x = detail::cell_value(row[cx], spec.log_x);
    const auto y = detail::cell_value(row[cy], spec.log_y);
    if (!x || !y) continue;
    std::string name;
    for (std::size_t k = 0; k < cs.size(); ++k) name += (k ? " " : "") + row[cs[k]];
    auto it = std::find_if(series.begin(), series.end(), [&](const Series& s) { return s.name == name; });
    if (it == series.end()) {
      series.push_back({name, {}, {}, {}});
      it = series.end() - 1;
    }
    const auto px = std::find(it->xs.begin(), it->xs.end(), *x);
    if (px == it->xs.end()) {
      it->xs.push_back(*x);
      it->sums.push_back(*y);
      it->counts.push_back(1);
    } else {
      const auto k = static_cast<std::size_t>(px - it->xs.begin());
      it->sums[k] += *y;
      ++it->counts[k];
    }
  }
  if (series.empty()) throw PlotError("plot: no plottable points");

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.xs.size(); ++k) {
      const double y = s.sums[k] / static_cast<double>(s.counts[k]);
      x0 = std::min(x0, s.xs[k]);
      x1 = std::max(x1, s.xs[k]);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;

  const double left = 70, right = 160, top = 30, bottom = 50;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
  auto sy = [&](double v) { return top + (1.0 - (v - y0) / (y1 - y0)) * ph; };
  auto label = [](double v, bool log) {
    const double shown = log ? std::pow(10.0, v) : v;
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, shown, std::chars_format::general, 3);
    return std::string(buf, r.ptr);
  };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) + "\" height=\"" +
       std::to_string(spec.height) + "\" viewBox=\"0 0 " + std::to_string(spec.width) + " " +
       std::to_string(spec.height) + "\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!spec.title.empty())
    o += "<text x=\"" + detail::px(left) + "\" y=\"18\" font-size=\"14\">" + detail::xml_escape(spec.title) +
         "</text>\n";
  o += "<rect x=\"" + detail::px(left) + "\" y=\"" + detail::px(top) + "\" width=\"" + detail::px(pw) +
       "\" height=\"" + detail::px(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
    o += "<text x=\"" + detail::px(sx(fx)) + "\" y=\"" + detail::px(top + ph + 16) +
         "\" font-size=\"10\" text-anchor=\"middle\">" + label(fx, spec.log_x) + "</text>\n";
    o += "<text x=\"" + detail::px(left - 6) + "\" y=\"" + detail::px(sy(fy) + 3) +
         "\" font-size=\"10\" text-anchor=\"end\">" + label(fy, spec.log_y) + "</text>\n";
  }
  o += "<text x=\"" + detail::px(left + pw / 2) + "\" y=\"" + detail::px(spec.height - 10.0) +
       "\" font-size=\"12\" text-anchor=\"middle\">" + detail::xml_escape(spec.x + (spec.log_x ? " (log)" : "")) +
       "</text>\n";
  o += "<text x=\"14\" y=\"" + detail::px(top + ph / 2) + "\" font-size=\"12\" transform=\"rotate(-90 14 " +
       detail::px(top + ph / 2) + ")\" text-anchor=\"middle\">" +
       detail::xml_escape(spec.y + (spec.log_y ? " (log)" : "")) + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string color = palette[k % 10];
    std::vector<std::size_t> order(s.xs.size());
    for (std::size_t q = 0; q < order.size(); ++q) order[q] = q;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s.xs[a] < s.xs[b]; });
    if (order.size() == 1) {
      const std::size_t q = order[0];
      o += "<circle cx=\"" + detail::px(sx(s.xs[q])) + "\" cy=\"" +
           detail::px(sy(s.sums[q] / static_cast<double>(s.counts[q]))) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    } else {
      o += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t q = 0; q < order.size(); ++q) {
        const std::size_t i = order[q];
        if (q) o += ' ';
        o += detail::px(sx(s.xs[i])) + "," + detail::px(sy(s.sums[i] / static_cast<double>(s.counts[i])));
      }
      o += "\"/>\n";
    }
    const double ly = top + 12.0 + 16.0 * static_cast<double>(k);
    o += "<line x1=\"" + detail::px(left + pw + 10) + "\" y1=\"" + detail::px(ly - 4) + "\" x2=\"" +
         detail::px(left + pw + 30) + "\" y2=\"" + detail::px(ly - 4) + "\" stroke=\"" + color +
         "\" stroke-width=\"2\"/>\n";
    o += "<text x=\"" + detail::px(left + pw + 34) + "\" y=\"" + detail::px(ly) + "\" font-size=\"11\">" +
         detail::xml_escape(s.name.empty() ? spec.y : s.name) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

/// Default chart per experiment: (table stem, spec); empty stem means none.
inline std::pair<std::string, PlotSpec> default_plot(const std::string& id, const std::string& problem = "") {
  if (id == "escape") return {"escape", {"step", "loss", {"optimizer", "rho"}, false, true, "loss vs step"}};
  if (id == "success-rate")
    return {"success_rate", {"eta", "success_rate", {"optimizer", "rho"}, true, false, "success rate vs eta"}};
  if (id == "convergence")
    return {"convergence", {"step", "loss", {"optimizer", "rho"}, false, true, "loss vs step"}};
  if (id == "stability")
    return {"stability", {"epoch", "param_distance", {"optimizer"}, false, false, "twin parameter distance"}};
  if (id == "renorm-track") {
    if (problem == "quadratic1d") return {"renorm", {"step", "gamma", {"rho"}, false, false, "gamma_t"}};
    return {"renorm_epochs", {"epoch", "mean_gamma", {"rho"}, false, false, "epoch-mean gamma_t"}};
  }
  if (id == "sharpness")
    return {"sharpness", {"eig_rank", "eigenvalue", {"optimizer"}, false, false, "top Hessian eigenvalues"}};
  if (id == "lr-sweep")
    return {"lr_sweep", {"eta", "final_train_loss", {"optimizer"}, true, true, "final train loss vs eta"}};
  if (id == "verify-theory")
    return {"verify_theory", {"instance", "worst_margin", {"check"}, false, false, "worst margin per instance"}};
  return {"", {}};
}

}  // namespace ssamlab
