#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "acd/hierarchy.hpp"

namespace acd {

/// Diverging colors normalized per figure by the largest absolute score:
/// negative is red, zero white, positive blue.
struct RenderSpec {
  double max_abs = 0.0;  // 0 means derive from the figure's scores
  int cell = 18;         // image unit size in pixels
};

namespace svg {

inline std::string num(double v, const char* fmt = "%.3f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string diverging(double v, double max_abs) {
  const double t = max_abs > 0 ? std::clamp(v / max_abs, -1.0, 1.0) : 0.0;
  int r, g, b;
  if (t >= 0) {
    r = g = int(std::lround(255 * (1 - t)));
    b = 255;
  } else {
    r = 255;
    g = b = int(std::lround(255 * (1 + t)));
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

inline std::string gray(double t) {
  const int v = int(std::lround(255 * std::clamp(t, 0.0, 1.0)));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", v, v, v);
  return buf;
}

inline const char* category(std::size_t i) {
  static constexpr std::array<const char*, 10> palette{"#ff7f0e", "#2ca02c", "#9467bd", "#e377c2", "#17becf",
                                                       "#bcbd22", "#8c564b", "#d62728", "#1f77b4", "#7f7f7f"};
  return palette[i % palette.size()];
}

inline std::string rect(double x, double y, double w, double h, const std::string& fill,
                        const std::string& extra = "") {
  return "<rect x=\"" + num(x, "%.1f") + "\" y=\"" + num(y, "%.1f") + "\" width=\"" + num(w, "%.1f") +
         "\" height=\"" + num(h, "%.1f") + "\" fill=\"" + fill + "\"" + extra + "/>\n";
}

inline std::string text(double x, double y, const std::string& s, int size = 11,
                        const char* anchor = "middle") {
  return "<text x=\"" + num(x, "%.1f") + "\" y=\"" + num(y, "%.1f") + "\" font-size=\"" + std::to_string(size) +
         "\" text-anchor=\"" + anchor + "\" font-family=\"sans-serif\">" + escape(s) + "</text>\n";
}

inline std::string document(double w, double h, const std::string& body, const std::string& meta) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         num(w, "%.0f") + "\" height=\"" + num(h, "%.0f") + "\" viewBox=\"0 0 " + num(w, "%.0f") + " " +
         num(h, "%.0f") + "\">\n<desc>" + escape(meta) + "</desc>\n" +
         rect(0, 0, w, h, "#ffffff") + body + "</svg>\n";
}

}  // namespace svg

namespace detail {

inline double figure_max_abs(const RenderSpec& spec, const std::vector<double>& scores) {
  if (spec.max_abs > 0) return spec.max_abs;
  double m = 0.0;
  for (double s : scores) m = std::max(m, std::abs(s));
  return m;
}

inline std::string render_text(const Hierarchy& h, const RenderSpec& spec) {
  const std::size_t n = h.unit_count();
  std::vector<double> x0(n + 1, 10.0);
  for (std::size_t t = 0; t < n; ++t)
    x0[t + 1] = x0[t] + std::max(56.0, 7.5 * double(h.tokens.at(t).size()) + 14.0);

  // Rows: unit scores at the bottom, then one row per iteration that added a
  // multi-token phrase, root on top.
  std::map<std::uint32_t, std::vector<const HierarchyNode*>> by_iteration;
  std::vector<double> scores = h.unit_scores;
  for (const auto& node : h.nodes)
    if (node.members.size() > 1) {
      by_iteration[node.iteration].push_back(&node);
      scores.push_back(node.score);
    }
  const double max_abs = figure_max_abs(spec, scores);
  const double row_h = 34.0;
  const std::size_t rows = by_iteration.size() + 1;
  const double height = 40.0 + row_h * double(rows) + 20.0;
  std::string body;
  double y = 30.0 + row_h * double(rows - 1);
  for (std::size_t t = 0; t < n; ++t) {
    body += svg::rect(x0[t], y, x0[t + 1] - x0[t] - 2, row_h - 4, svg::diverging(h.unit_scores[t], max_abs),
                      " stroke=\"#999999\"");
    body += svg::text((x0[t] + x0[t + 1]) / 2, y + 13, h.tokens[t]);
    body += svg::text((x0[t] + x0[t + 1]) / 2, y + 26, svg::num(h.unit_scores[t], "%.2f"), 10);
  }
  for (const auto& [iteration, nodes] : by_iteration) {
    y -= row_h;
    body += svg::text(x0[0] - 4, y + 19, std::to_string(iteration), 9, "end");
    for (const auto* node : nodes) {
      const auto a = node->members.front(), b = node->members.back() + 1;
      body += svg::rect(x0[a], y, x0[b] - x0[a] - 2, row_h - 4, svg::diverging(node->score, max_abs),
                        " stroke=\"#555555\"");
      body += svg::text((x0[a] + x0[b]) / 2, y + 19, svg::num(node->score, "%.2f"));
    }
  }
  body += svg::text(10, 18, "class " + std::to_string(h.target_class) + " (" +
                                std::string(to_string(h.scorer.method)) + "), max |score| " +
                                svg::num(max_abs, "%.3g"),
                    12, "start");
  return svg::document(x0[n] + 10, height, body,
                       "color scale: blue positive, white neutral, red negative; normalized by max |score| = " +
                           svg::num(max_abs, "%.6g"));
}

inline std::string render_image(const Hierarchy& h, const RenderSpec& spec) {
  const double cell = spec.cell;
  const double pw = cell * double(h.grid_w), ph = cell * double(h.grid_h);
  const double gap = 16.0;

  std::vector<int> parent(h.nodes.size(), -1);
  for (const auto& node : h.nodes)
    for (auto c : node.children) parent[c] = int(node.id);

  // Patches are multi-unit nodes and singletons popped on their own. A patch
  // continues the lineage of its largest child patch, otherwise starts one.
  auto is_patch = [&](const HierarchyNode& node) {
    if (node.members.size() > 1) return true;
    if (node.iteration >= h.merge_iteration) return false;
    return parent[node.id] < 0 || h.nodes[std::size_t(parent[node.id])].iteration > node.iteration;
  };
  std::vector<int> lineage(h.nodes.size(), -1);
  int lineages = 0;
  for (const auto& node : h.nodes) {
    if (!is_patch(node)) continue;
    const HierarchyNode* best = nullptr;
    for (auto c : node.children)
      if (lineage[c] >= 0 && (!best || h.nodes[c].members.size() > best->members.size())) best = &h.nodes[c];
    lineage[node.id] = best ? lineage[best->id] : lineages++;
  }

  std::uint32_t last = 0;
  for (const auto& node : h.nodes) last = std::max(last, node.iteration);
  const std::size_t panels = last + 1;  // unit map + one per iteration
  std::vector<double> scores = h.unit_scores;
  for (const auto& node : h.nodes) scores.push_back(node.score);
  const double max_abs = figure_max_abs(spec, scores);
  float max_intensity = 0.0f;
  for (float v : h.unit_intensity) max_intensity = std::max(max_intensity, std::abs(v));
  if (max_intensity == 0.0f) max_intensity = 1.0f;

  std::string body;
  const double top = 30.0;
  // panel 0: unit-level score map
  for (std::size_t u = 0; u < h.unit_count(); ++u)
    body += svg::rect(10 + cell * double(u % h.grid_w), top + cell * double(u / h.grid_w), cell, cell,
                      svg::diverging(h.unit_scores[u], max_abs));
  body += svg::text(10 + pw / 2, top + ph + 14, "unit scores", 10);

  // panels 1..last: background intensity plus the roots alive after that iteration
  for (std::uint32_t it = 1; it <= last; ++it) {
    const double ox = 10 + double(it) * (pw + gap);
    for (std::size_t u = 0; u < h.unit_count(); ++u)
      body += svg::rect(ox + cell * double(u % h.grid_w), top + cell * double(u / h.grid_w), cell, cell,
                        svg::gray(h.unit_intensity[u] / max_intensity));
    for (const auto& node : h.nodes) {
      if (node.iteration > it || lineage[node.id] < 0) continue;
      if (parent[node.id] >= 0 && h.nodes[std::size_t(parent[node.id])].iteration <= it) continue;
      for (auto u : node.members)
        body += svg::rect(ox + cell * double(u % h.grid_w), top + cell * double(u / h.grid_w), cell, cell,
                          svg::category(std::size_t(lineage[node.id])), " fill-opacity=\"0.55\"");
    }
    body += svg::text(ox + pw / 2, top + ph + 14, "iteration " + std::to_string(it), 10);
  }

  // score series per lineage
  const double chart_top = top + ph + 30, chart_h = 120.0;
  const double chart_w = double(panels) * (pw + gap) - gap;
  double lo = 0.0, hi = 0.0;
  for (const auto& node : h.nodes)
    if (lineage[node.id] >= 0) {
      lo = std::min(lo, node.score);
      hi = std::max(hi, node.score);
    }
  if (hi == lo) hi = lo + 1.0;
  auto px = [&](double it) { return 10 + chart_w * (last > 0 ? it / double(last) : 0.0); };
  auto py = [&](double s) { return chart_top + chart_h * (1.0 - (s - lo) / (hi - lo)); };
  body += svg::rect(10, chart_top, chart_w, chart_h, "none", " stroke=\"#cccccc\"");
  body += "<line x1=\"10\" x2=\"" + svg::num(10 + chart_w, "%.1f") + "\" y1=\"" + svg::num(py(0), "%.1f") +
          "\" y2=\"" + svg::num(py(0), "%.1f") + "\" stroke=\"#999999\" stroke-dasharray=\"3,3\"/>\n";
  for (int l = 0; l < lineages; ++l) {
    std::string points;
    for (const auto& node : h.nodes)
      if (lineage[node.id] == l)
        points += svg::num(px(node.iteration), "%.1f") + "," + svg::num(py(node.score), "%.1f") + " ";
    body += "<polyline fill=\"none\" stroke=\"" + std::string(svg::category(std::size_t(l))) +
            "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
  }
  body += svg::text(10, chart_top + chart_h + 14, svg::num(lo, "%.3g"), 9, "start");
  body += svg::text(10, chart_top - 4, svg::num(hi, "%.3g"), 9, "start");
  body += svg::text(10, 18, "class " + std::to_string(h.target_class) + " (" +
                                std::string(to_string(h.scorer.method)) + "), max |score| " +
                                svg::num(max_abs, "%.3g"),
                    12, "start");
  return svg::document(chart_w + 20, chart_top + chart_h + 24, body,
                       "color scale: blue positive, white neutral, red negative; normalized by max |score| = " +
                           svg::num(max_abs, "%.6g"));
}

}  // namespace detail

/// Text: one row per iteration above the per-token scores. Images: the
/// unit score map, then the patches alive after each iteration, then each
/// patch's score across iterations.
inline std::string render_hierarchy_svg(const Hierarchy& h, const RenderSpec& spec = {}) {
  return h.domain == Domain::text ? detail::render_text(h, spec) : detail::render_image(h, spec);
}

/// Heat map of unit-level scores: a token strip or a unit grid.
inline std::string render_unit_map_svg(const std::vector<double>& scores, std::size_t grid_h, std::size_t grid_w,
                                       const std::vector<std::string>& tokens = {}, const RenderSpec& spec = {}) {
  const double max_abs = detail::figure_max_abs(spec, scores);
  std::string body;
  double w, h;
  if (!tokens.empty()) {
    double x = 10;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const double cw = std::max(56.0, 7.5 * double(tokens[t].size()) + 14.0);
      body += svg::rect(x, 30, cw - 2, 30, svg::diverging(scores[t], max_abs), " stroke=\"#999999\"");
      body += svg::text(x + cw / 2, 43, tokens[t]);
      body += svg::text(x + cw / 2, 56, svg::num(scores[t], "%.2f"), 10);
      x += cw;
    }
    w = x + 10;
    h = 70;
  } else {
    const double cell = spec.cell;
    for (std::size_t u = 0; u < scores.size(); ++u)
      body += svg::rect(10 + cell * double(u % grid_w), 30 + cell * double(u / grid_w), cell, cell,
                        svg::diverging(scores[u], max_abs));
    w = 20 + cell * double(grid_w);
    h = 40 + cell * double(grid_h);
  }
  body += svg::text(10, 18, "max |score| " + svg::num(max_abs, "%.3g"), 12, "start");
  return svg::document(w, h, body,
                       "color scale: blue positive, white neutral, red negative; normalized by max |score| = " +
                           svg::num(max_abs, "%.6g"));
}

}  // namespace acd
