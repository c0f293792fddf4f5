#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "acd/cd.hpp"
#include "acd/error.hpp"
#include "acd/scorers.hpp"
#include "acd/units.hpp"

namespace acd {

inline constexpr int kHierarchyFormatVersion = 1;

using NodeId = std::uint32_t;

struct HierarchyNode {
  NodeId id = 0;
  std::uint32_t iteration = 0;
  double score = 0.0;
  std::vector<UnitIndex> members;  // sorted, unique
  std::vector<NodeId> children;
};

/// Agglomeration settings. k is the fraction-of-max threshold in percent.
struct AcdParams {
  double k = 95.0;
  std::size_t max_iters = 5;
  bool smooth = false;

  static AcdParams text_defaults() { return {90.0, 5, false}; }
  static AcdParams image_defaults() { return {95.0, 5, false}; }
};

struct Hierarchy {
  Domain domain = Domain::image;
  std::size_t target_class = 0;
  ScorerSpec scorer;
  AcdParams params;
  std::size_t grid_h = 1;
  std::size_t grid_w = 1;
  std::size_t superpixel = 1;
  std::vector<std::string> tokens;   // text only
  std::vector<float> unit_intensity;  // image only: mean feature value per unit
  std::vector<double> unit_scores;    // singleton score per unit
  /// Nodes created at or after this iteration come from the final merge and
  /// need not be 4-connected.
  std::uint32_t merge_iteration = std::numeric_limits<std::uint32_t>::max();
  std::vector<HierarchyNode> nodes;  // nodes[i].id == i
  std::vector<NodeId> roots;

  std::size_t unit_count() const noexcept { return grid_h * grid_w; }
};

// ---------------------------------------------------------------------------
// Unit-set helpers shared by validation and agglomeration.

inline std::vector<UnitIndex> set_union(const std::vector<UnitIndex>& a, const std::vector<UnitIndex>& b) {
  std::vector<UnitIndex> out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline bool is_contiguous(const std::vector<UnitIndex>& members) {
  return !members.empty() && members.back() - members.front() + 1 == members.size();
}

inline bool is_4_connected(const std::vector<UnitIndex>& members, std::size_t grid_h, std::size_t grid_w) {
  if (members.empty()) return false;
  std::vector<std::uint8_t> in(grid_h * grid_w, 0), seen(grid_h * grid_w, 0);
  for (auto u : members) in[u] = 1;
  std::vector<UnitIndex> stack{members.front()};
  seen[members.front()] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    ++reached;
    const std::size_t y = u / grid_w, x = u % grid_w;
    auto visit = [&](std::size_t v) {
      if (in[v] && !seen[v]) {
        seen[v] = 1;
        stack.push_back(UnitIndex(v));
      }
    };
    if (y > 0) visit(u - grid_w);
    if (y + 1 < grid_h) visit(u + grid_w);
    if (x > 0) visit(u - 1);
    if (x + 1 < grid_w) visit(u + 1);
  }
  return reached == members.size();
}

/// Throws InternalError describing the first violated tree invariant.
inline void validate_hierarchy(const Hierarchy& h) {
  auto fail = [](const std::string& what) { throw InternalError("malformed hierarchy: " + what); };
  const std::size_t n = h.unit_count();
  std::vector<int> parent(h.nodes.size(), -1);
  for (std::size_t i = 0; i < h.nodes.size(); ++i) {
    const auto& node = h.nodes[i];
    const auto tag = "node " + std::to_string(i);
    if (node.id != i) fail(tag + " has id " + std::to_string(node.id));
    if (node.members.empty()) fail(tag + " is empty");
    if (!std::is_sorted(node.members.begin(), node.members.end()) ||
        std::adjacent_find(node.members.begin(), node.members.end()) != node.members.end())
      fail(tag + " members not sorted and unique");
    if (node.members.back() >= n) fail(tag + " member out of range");
    if (!std::isfinite(node.score)) fail(tag + " score is not finite");
    if (h.domain == Domain::text && !is_contiguous(node.members)) fail(tag + " is not a contiguous span");
    if (h.domain == Domain::image && node.iteration < h.merge_iteration &&
        !is_4_connected(node.members, h.grid_h, h.grid_w))
      fail(tag + " is not 4-connected");
    if (node.children.empty()) {
      if (node.members.size() != 1) fail(tag + " is a leaf with " + std::to_string(node.members.size()) + " units");
      continue;
    }
    std::vector<UnitIndex> covered;
    for (auto c : node.children) {
      if (c >= i) fail(tag + " child " + std::to_string(c) + " is not an earlier node");
      if (parent[c] != -1) fail("node " + std::to_string(c) + " has two parents");
      parent[c] = int(i);
      const auto& child = h.nodes[c];
      if (child.iteration > node.iteration) fail(tag + " is older than child " + std::to_string(c));
      std::vector<UnitIndex> overlap;
      std::set_intersection(covered.begin(), covered.end(), child.members.begin(), child.members.end(),
                            std::back_inserter(overlap));
      if (!overlap.empty()) fail(tag + " has overlapping children");
      covered = set_union(covered, child.members);
    }
    if (covered != node.members) fail(tag + " members differ from the union of its children");
  }
  std::vector<NodeId> roots;
  for (std::size_t i = 0; i < h.nodes.size(); ++i)
    if (parent[i] == -1) roots.push_back(NodeId(i));
  auto listed = h.roots;
  std::sort(listed.begin(), listed.end());
  if (listed != roots) fail("root list does not match parentless nodes");
  if (h.domain == Domain::text && (roots.size() != 1 || h.nodes[roots[0]].members.size() != n))
    fail("text hierarchy must end in a single root covering all tokens");
}

// ---------------------------------------------------------------------------
// File format

namespace detail {

inline nlohmann::json members_to_json(Domain domain, const std::vector<UnitIndex>& m) {
  if (domain == Domain::text) return {m.front(), m.back() + 1};
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < m.size();) {
    std::size_t j = i + 1;
    while (j < m.size() && m[j] == m[j - 1] + 1) ++j;
    runs.push_back({m[i], j - i});
    i = j;
  }
  return runs;
}

inline std::vector<UnitIndex> members_from_json(Domain domain, const nlohmann::json& j) {
  std::vector<UnitIndex> m;
  if (domain == Domain::text) {
    for (auto u = j.at(0).get<UnitIndex>(); u < j.at(1).get<UnitIndex>(); ++u) m.push_back(u);
    return m;
  }
  for (const auto& run : j)
    for (UnitIndex k = 0; k < run.at(1).get<UnitIndex>(); ++k) m.push_back(run.at(0).get<UnitIndex>() + k);
  return m;
}

}  // namespace detail

inline nlohmann::json scorer_to_json(const ScorerSpec& s) {
  return {{"method", to_string(s.method)},
          {"cd_bias", s.variant.bias == BiasRule::proportional ? "proportional" : "naive"},
          {"cd_relu", s.variant.relu == ReluRule::activation_of_beta ? "standard" : "shapley"},
          {"reference", s.reference_value}};
}

inline ScorerSpec scorer_from_json(const nlohmann::json& j, std::size_t target_class) {
  ScorerSpec s;
  const auto method = score_method_from_string(j.at("method").get<std::string>());
  if (!method) throw DataError("unknown scorer method");
  s.method = *method;
  s.variant.bias = j.at("cd_bias") == "naive" ? BiasRule::all_to_beta_naive : BiasRule::proportional;
  s.variant.relu = j.at("cd_relu") == "shapley" ? ReluRule::shapley : ReluRule::activation_of_beta;
  s.reference_value = j.at("reference").get<float>();
  s.target_class = target_class;
  return s;
}

inline nlohmann::json hierarchy_to_json(const Hierarchy& h) {
  using nlohmann::json;
  json nodes = json::array();
  for (const auto& n : h.nodes)
    nodes.push_back({{"id", n.id},
                     {"iteration", n.iteration},
                     {"score", n.score},
                     {"members", detail::members_to_json(h.domain, n.members)},
                     {"children", n.children}});
  json units{{"grid", {h.grid_h, h.grid_w}}, {"scores", h.unit_scores}};
  if (h.domain == Domain::text)
    units["tokens"] = h.tokens;
  else {
    units["superpixel"] = h.superpixel;
    units["intensity"] = h.unit_intensity;
  }
  return {{"format_version", kHierarchyFormatVersion},
          {"domain", to_string(h.domain)},
          {"target_class", h.target_class},
          {"scorer", scorer_to_json(h.scorer)},
          {"params", {{"k", h.params.k}, {"max_iters", h.params.max_iters}, {"smooth", h.params.smooth}}},
          {"merge_iteration", h.merge_iteration},
          {"units", std::move(units)},
          {"nodes", std::move(nodes)},
          {"roots", h.roots}};
}

inline Hierarchy hierarchy_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kHierarchyFormatVersion)
      throw VersionError("unsupported hierarchy format version");
    Hierarchy h;
    h.domain = j.at("domain") == "text" ? Domain::text : Domain::image;
    h.target_class = j.at("target_class").get<std::size_t>();
    h.scorer = scorer_from_json(j.at("scorer"), h.target_class);
    const auto& p = j.at("params");
    h.params = {p.at("k").get<double>(), p.at("max_iters").get<std::size_t>(), p.at("smooth").get<bool>()};
    h.merge_iteration = j.at("merge_iteration").get<std::uint32_t>();
    const auto& units = j.at("units");
    h.grid_h = units.at("grid").at(0).get<std::size_t>();
    h.grid_w = units.at("grid").at(1).get<std::size_t>();
    h.unit_scores = units.at("scores").get<std::vector<double>>();
    if (h.domain == Domain::text) {
      h.tokens = units.at("tokens").get<std::vector<std::string>>();
    } else {
      h.superpixel = units.at("superpixel").get<std::size_t>();
      h.unit_intensity = units.at("intensity").get<std::vector<float>>();
    }
    for (const auto& n : j.at("nodes"))
      h.nodes.push_back({n.at("id").get<NodeId>(), n.at("iteration").get<std::uint32_t>(),
                         n.at("score").get<double>(), detail::members_from_json(h.domain, n.at("members")),
                         n.at("children").get<std::vector<NodeId>>()});
    h.roots = j.at("roots").get<std::vector<NodeId>>();
    validate_hierarchy(h);
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed hierarchy file: ") + e.what());
  } catch (const InternalError& e) {
    throw DataError(e.what());
  }
}

inline void save_hierarchy(const Hierarchy& h, const std::filesystem::path& path) {
  validate_hierarchy(h);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << hierarchy_to_json(h).dump(2) << '\n';
}

inline Hierarchy load_hierarchy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return hierarchy_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace acd
