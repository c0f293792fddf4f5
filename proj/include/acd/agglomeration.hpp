#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acd/error.hpp"
#include "acd/hierarchy.hpp"
#include "acd/parallel.hpp"
#include "acd/scorers.hpp"
#include "acd/units.hpp"

namespace acd {

/// A token span [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

inline std::vector<UnitIndex> span_members(Span s) {
  std::vector<UnitIndex> m;
  for (auto u = s.start; u < s.end; ++u) m.push_back(UnitIndex(u));
  return m;
}

/// The span extended by one token on either side, where possible.
inline std::vector<Span> candidate_groups_text(Span span, std::size_t length) {
  if (span.start >= span.end || span.end > length) throw ShapeError("invalid token span");
  std::vector<Span> out;
  if (span.start > 0) out.push_back({span.start - 1, span.end});
  if (span.end < length) out.push_back({span.start, span.end + 1});
  return out;
}

/// Units 4-adjacent to the group but outside it, in ascending order.
inline std::vector<UnitIndex> boundary_units(const std::vector<UnitIndex>& group, std::size_t grid_h,
                                             std::size_t grid_w) {
  std::vector<std::uint8_t> state(grid_h * grid_w, 0);
  for (auto u : group) state[u] = 1;
  std::vector<UnitIndex> out;
  for (auto u : group) {
    const std::size_t y = u / grid_w, x = u % grid_w;
    auto mark = [&](std::size_t v) {
      if (state[v] == 0) {
        state[v] = 2;
        out.push_back(UnitIndex(v));
      }
    };
    if (y > 0) mark(u - grid_w);
    if (y + 1 < grid_h) mark(u + grid_w);
    if (x > 0) mark(u - 1);
    if (x + 1 < grid_w) mark(u + 1);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// One candidate per 4-adjacent unit: the group plus that unit.
inline std::vector<std::vector<UnitIndex>> candidate_groups_image(const std::vector<UnitIndex>& group,
                                                                  std::size_t grid_h, std::size_t grid_w) {
  std::vector<std::vector<UnitIndex>> out;
  for (auto u : boundary_units(group, grid_h, grid_w)) out.push_back(set_union(group, {u}));
  return out;
}

/// Fills holes: complement components that do not reach the grid border
/// join the group.
inline std::vector<UnitIndex> smooth_patch(const std::vector<UnitIndex>& group, std::size_t grid_h,
                                           std::size_t grid_w) {
  std::vector<std::uint8_t> state(grid_h * grid_w, 0);  // 1 = group, 2 = reaches border
  for (auto u : group) state[u] = 1;
  std::vector<std::size_t> stack;
  auto seed = [&](std::size_t v) {
    if (state[v] == 0) {
      state[v] = 2;
      stack.push_back(v);
    }
  };
  for (std::size_t x = 0; x < grid_w; ++x) {
    seed(x);
    seed((grid_h - 1) * grid_w + x);
  }
  for (std::size_t y = 0; y < grid_h; ++y) {
    seed(y * grid_w);
    seed(y * grid_w + grid_w - 1);
  }
  while (!stack.empty()) {
    const auto v = stack.back();
    stack.pop_back();
    const std::size_t y = v / grid_w, x = v % grid_w;
    if (y > 0) seed(v - grid_w);
    if (y + 1 < grid_h) seed(v + grid_w);
    if (x > 0) seed(v - 1);
    if (x + 1 < grid_w) seed(v + 1);
  }
  std::vector<UnitIndex> out;
  for (std::size_t v = 0; v < state.size(); ++v)
    if (state[v] != 2) out.push_back(UnitIndex(v));
  return out;
}

// ---------------------------------------------------------------------------

struct QueueEntry {
  std::vector<UnitIndex> group;
  double priority = 0.0;
  std::uint64_t order = 0;  // insertion counter, breaks priority ties
};

/// Priority queue of candidate groups supporting the fraction-of-max pop.
class ScoreQueue {
 public:
  void push(std::vector<UnitIndex> group, double priority) {
    if (!std::isfinite(priority)) throw NumericError("non-finite queue priority");
    entries_.push_back({std::move(group), priority, counter_++});
  }

  bool empty() const noexcept { return entries_.empty(); }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<QueueEntry>& entries() const noexcept { return entries_; }

  template <class Pred>
  void erase_if(Pred pred) {
    std::erase_if(entries_, pred);
  }

  /// With m the highest priority: when m > 0 pops every entry with priority
  /// >= (k/100) m, otherwise only the single best entry. Result is ordered
  /// by priority, then insertion.
  std::vector<QueueEntry> pop_top_k_percentile(double k) {
    if (entries_.empty()) throw InternalError("pop from an empty score queue");
    if (!(k > 0.0 && k <= 100.0)) throw NumericError("k must be in (0, 100]");
    auto better = [](const QueueEntry& a, const QueueEntry& b) {
      return a.priority != b.priority ? a.priority > b.priority : a.order < b.order;
    };
    std::sort(entries_.begin(), entries_.end(), better);
    const double top = entries_.front().priority;
    std::size_t count = 1;
    if (top > 0.0) {
      const double threshold = k / 100.0 * top;
      while (count < entries_.size() && entries_[count].priority >= threshold) ++count;
    }
    std::vector<QueueEntry> popped(std::make_move_iterator(entries_.begin()),
                                   std::make_move_iterator(entries_.begin() + std::ptrdiff_t(count)));
    entries_.erase(entries_.begin(), entries_.begin() + std::ptrdiff_t(count));
    return popped;
  }

 private:
  std::vector<QueueEntry> entries_;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------

/// Memoized group scoring over units. Batches run in parallel.
class UnitScorer {
 public:
  UnitScorer(const GroupScorer& scorer, const UnitLayout& layout) : scorer_(&scorer), layout_(&layout) {}

  double operator()(const std::vector<UnitIndex>& group) {
    if (auto it = cache_.find(group); it != cache_.end()) return it->second;
    const double s = evaluate(group);
    cache_.emplace(group, s);
    return s;
  }

  std::vector<double> score_all(const std::vector<std::vector<UnitIndex>>& groups) {
    std::vector<const std::vector<UnitIndex>*> missing;
    for (const auto& g : groups)
      if (!cache_.contains(g)) missing.push_back(&g);
    std::sort(missing.begin(), missing.end(), [](auto a, auto b) { return *a < *b; });
    missing.erase(std::unique(missing.begin(), missing.end(), [](auto a, auto b) { return *a == *b; }),
                  missing.end());
    std::vector<double> fresh(missing.size());
    parallel_for(missing.size(), [&](std::size_t i) { fresh[i] = evaluate(*missing[i]); });
    for (std::size_t i = 0; i < missing.size(); ++i) cache_.emplace(*missing[i], fresh[i]);
    std::vector<double> out;
    out.reserve(groups.size());
    for (const auto& g : groups) out.push_back(cache_.at(g));
    return out;
  }

  std::size_t evaluations() const noexcept { return evaluations_; }

 private:
  double evaluate(const std::vector<UnitIndex>& group) const {
    const double s = (*scorer_)(layout_->mask(group));
    if (!std::isfinite(s)) throw NumericError("scorer returned a non-finite score for a group of " +
                                              std::to_string(group.size()) + " units");
    ++evaluations_;
    return s;
  }

  const GroupScorer* scorer_;
  const UnitLayout* layout_;
  std::map<std::vector<UnitIndex>, double> cache_;
  mutable std::atomic<std::size_t> evaluations_{0};
};

using GroupScoreFn = std::function<double(const std::vector<UnitIndex>&)>;

/// Merges the current roots pairwise until one remains. Each step joins the
/// pair whose union gains the most over its higher-scoring member; ties go to
/// the pair with the lowest root ids. Unions need not be adjacent.
inline void final_merge(Hierarchy& h, const GroupScoreFn& score,
                        const std::function<void(const std::vector<std::vector<UnitIndex>>&)>& prefetch = {}) {
  auto roots = h.roots;
  std::sort(roots.begin(), roots.end());
  std::uint32_t iteration = h.merge_iteration;
  while (roots.size() > 1) {
    if (prefetch) {
      std::vector<std::vector<UnitIndex>> unions;
      for (std::size_t i = 0; i < roots.size(); ++i)
        for (std::size_t j = i + 1; j < roots.size(); ++j)
          unions.push_back(set_union(h.nodes[roots[i]].members, h.nodes[roots[j]].members));
      prefetch(unions);
    }
    std::size_t bi = 0, bj = 1;
    double best = -std::numeric_limits<double>::infinity(), best_score = 0.0;
    for (std::size_t i = 0; i < roots.size(); ++i)
      for (std::size_t j = i + 1; j < roots.size(); ++j) {
        const auto& a = h.nodes[roots[i]];
        const auto& b = h.nodes[roots[j]];
        const double s = score(set_union(a.members, b.members));
        const double gain = s - std::max(a.score, b.score);
        if (gain > best) {
          best = gain;
          best_score = s;
          bi = i;
          bj = j;
        }
      }
    HierarchyNode node;
    node.id = NodeId(h.nodes.size());
    node.iteration = iteration++;
    node.score = best_score;
    node.members = set_union(h.nodes[roots[bi]].members, h.nodes[roots[bj]].members);
    node.children = {roots[bi], roots[bj]};
    h.nodes.push_back(std::move(node));
    roots.erase(roots.begin() + std::ptrdiff_t(bj));
    roots.erase(roots.begin() + std::ptrdiff_t(bi));
    roots.push_back(h.nodes.back().id);
  }
  h.roots = roots;
}

/// Attaches every unit outside the hierarchy as a leaf under a new root that
/// spans the whole input, so each unit has a place in the ordering.
inline void complete_coverage(Hierarchy& h, const GroupScoreFn& score) {
  std::vector<std::uint8_t> covered(h.unit_count(), 0);
  for (auto r : h.roots)
    for (auto u : h.nodes[r].members) covered[u] = 1;
  std::vector<UnitIndex> missing;
  for (std::size_t u = 0; u < covered.size(); ++u)
    if (!covered[u]) missing.push_back(UnitIndex(u));
  if (missing.empty()) return;
  std::uint32_t iteration = h.merge_iteration;
  for (const auto& n : h.nodes) iteration = std::max(iteration, n.iteration + 1);
  std::vector<NodeId> children = h.roots;
  for (auto u : missing) {
    h.nodes.push_back({NodeId(h.nodes.size()), iteration, h.unit_scores.at(u), {u}, {}});
    children.push_back(h.nodes.back().id);
  }
  std::vector<UnitIndex> all(h.unit_count());
  for (std::size_t u = 0; u < all.size(); ++u) all[u] = UnitIndex(u);
  h.nodes.push_back({NodeId(h.nodes.size()), iteration + 1, score(all), all, children});
  h.roots = {h.nodes.back().id};
}

namespace detail {

/// Mutable state of one agglomeration run.
class TreeBuilder {
 public:
  TreeBuilder(Hierarchy& h, UnitScorer& score, bool smooth)
      : h_(h), score_(score), smooth_(smooth), root_of_(h.unit_count(), kNone) {}

  bool covered(const std::vector<UnitIndex>& group) const {
    const auto r = root_of_[group.front()];
    return r != kNone && std::all_of(group.begin(), group.end(), [&](auto u) { return root_of_[u] == r; });
  }

  bool is_root(NodeId id) const { return root_of_[h_.nodes[id].members.front()] == id; }

  bool all_covered() const {
    const auto r = root_of_.front();
    return r != kNone && std::all_of(root_of_.begin(), root_of_.end(), [&](auto v) { return v == r; });
  }

  /// Adds a popped group, absorbing any roots it overlaps. Returns the new
  /// node, or nothing when an existing root already covers the group.
  std::optional<NodeId> add(std::vector<UnitIndex> group, std::uint32_t iteration) {
    std::vector<NodeId> absorbed;
    for (;;) {
      bool grew = false;
      for (auto u : std::vector<UnitIndex>(group)) {
        const auto r = root_of_[u];
        if (r == kNone || std::find(absorbed.begin(), absorbed.end(), r) != absorbed.end()) continue;
        absorbed.push_back(r);
        group = set_union(group, h_.nodes[r].members);
        grew = true;
      }
      if (smooth_ && h_.domain == Domain::image) {
        auto filled = smooth_patch(group, h_.grid_h, h_.grid_w);
        if (filled != group) {
          group = std::move(filled);
          grew = true;
        }
      }
      if (!grew) break;
    }
    if (absorbed.size() == 1 && h_.nodes[absorbed[0]].members == group) return std::nullopt;

    std::sort(absorbed.begin(), absorbed.end());
    std::vector<NodeId> children = absorbed;
    if (group.size() > 1) {
      for (auto u : group)
        if (root_of_[u] == kNone) {
          h_.nodes.push_back({NodeId(h_.nodes.size()), iteration, h_.unit_scores[u], {u}, {}});
          children.push_back(h_.nodes.back().id);
        }
    }
    const NodeId id = NodeId(h_.nodes.size());
    h_.nodes.push_back({id, iteration, group.size() == 1 ? h_.unit_scores[group[0]] : score_(group), group,
                        std::move(children)});
    for (auto u : group) root_of_[u] = id;
    return id;
  }

  void finish_roots() {
    h_.roots.clear();
    for (std::size_t i = 0; i < h_.nodes.size(); ++i)
      if (is_root(NodeId(i))) h_.roots.push_back(NodeId(i));
  }

 private:
  static constexpr NodeId kNone = std::numeric_limits<NodeId>::max();
  Hierarchy& h_;
  UnitScorer& score_;
  bool smooth_;
  std::vector<NodeId> root_of_;
};

}  // namespace detail

/// Builds the hierarchy for one prediction.
///
/// Every unit is scored alone and queued. Each round pops the groups within
/// k% of the best priority, adds them to the tree, and queues their one-unit
/// extensions with priority score(extension) - score(group). Text stops once
/// one span covers every token. Images stop after `max_iters` rounds, merge
/// the remaining roots pairwise, then hang unselected units under a final
/// root. Node scores are absolute group scores.
inline Hierarchy acd(const Model& model, const Tensor& x, const ScorerSpec& spec, const AcdParams& params,
                     const UnitLayout& layout, std::vector<std::string> tokens = {}) {
  if (!(params.k > 0.0 && params.k <= 100.0)) throw NumericError("k must be in (0, 100]");
  if (layout.domain == Domain::image && params.max_iters < 1) throw ShapeError("max_iters must be at least 1");
  const GroupScorer scorer(model, x, spec);
  if (scorer.feature_tensor().shape() != layout.feature_shape)
    throw ShapeError("unit layout " + shape_str(layout.feature_shape) + " does not match model features " +
                     shape_str(scorer.feature_tensor().shape()));
  UnitScorer score(scorer, layout);

  Hierarchy h;
  h.domain = layout.domain;
  h.target_class = spec.target_class;
  h.scorer = spec;
  h.params = params;
  h.grid_h = layout.grid_h;
  h.grid_w = layout.grid_w;
  h.superpixel = layout.superpixel;
  h.tokens = std::move(tokens);
  const std::size_t n = layout.unit_count();
  if (layout.domain == Domain::image) {
    h.unit_intensity.resize(n);
    const auto& feats = scorer.feature_tensor();
    for (std::size_t u = 0; u < n; ++u) {
      const auto idx = layout.features_of(UnitIndex(u));
      double s = 0.0;
      for (auto f : idx) s += feats[f];
      h.unit_intensity[u] = static_cast<float>(s / double(idx.size()));
    }
  }

  std::vector<std::vector<UnitIndex>> singletons(n);
  for (std::size_t u = 0; u < n; ++u) singletons[u] = {UnitIndex(u)};
  h.unit_scores = score.score_all(singletons);

  ScoreQueue queue;
  for (std::size_t u = 0; u < n; ++u) queue.push(singletons[u], h.unit_scores[u]);

  detail::TreeBuilder tree(h, score, params.smooth);
  const std::size_t round_limit = layout.domain == Domain::text ? 4 * n * n + 16 : params.max_iters;
  std::uint32_t iteration = 0;
  while (!tree.all_covered()) {
    queue.erase_if([&](const QueueEntry& e) { return tree.covered(e.group); });
    if (queue.empty()) {
      if (layout.domain == Domain::text) throw InternalError("text agglomeration ran out of candidates");
      break;
    }
    if (iteration >= round_limit) {
      if (layout.domain == Domain::text) throw InternalError("text agglomeration did not terminate");
      break;
    }
    ++iteration;
    std::vector<NodeId> created;
    for (auto& entry : queue.pop_top_k_percentile(params.k))
      if (auto id = tree.add(std::move(entry.group), iteration)) created.push_back(*id);

    std::vector<std::vector<UnitIndex>> candidates;
    std::vector<NodeId> bases;
    for (auto id : created) {
      if (!tree.is_root(id)) continue;
      const auto& members = h.nodes[id].members;
      if (layout.domain == Domain::text) {
        for (auto s : candidate_groups_text({members.front(), std::size_t(members.back()) + 1}, n)) {
          candidates.push_back(span_members(s));
          bases.push_back(id);
        }
      } else {
        for (auto& c : candidate_groups_image(members, h.grid_h, h.grid_w)) {
          candidates.push_back(std::move(c));
          bases.push_back(id);
        }
      }
    }
    const auto scores = score.score_all(candidates);
    for (std::size_t i = 0; i < candidates.size(); ++i)
      queue.push(std::move(candidates[i]), scores[i] - h.nodes[bases[i]].score);
  }

  tree.finish_roots();
  h.merge_iteration = iteration + 1;
  if (layout.domain == Domain::image) {
    final_merge(
        h, [&](const std::vector<UnitIndex>& g) { return score(g); },
        [&](const std::vector<std::vector<UnitIndex>>& gs) { score.score_all(gs); });
    complete_coverage(h, [&](const std::vector<UnitIndex>& g) { return score(g); });
  }
  validate_hierarchy(h);
  return h;
}

}  // namespace acd
