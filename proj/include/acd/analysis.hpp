#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "acd/agglomeration.hpp"
#include "acd/backprop.hpp"
#include "acd/hierarchy.hpp"
#include "acd/io.hpp"
#include "acd/random.hpp"

namespace acd {

// ---------------------------------------------------------------------------
// Top phrases

struct PhraseRecord {
  std::vector<std::string> tokens;
  std::size_t length = 0;
  double mean_score = 0.0;
  std::size_t count = 0;
};

struct PhraseTable {
  struct Row {
    std::size_t length = 0;
    std::vector<PhraseRecord> positive;  // mean > 0, descending
    std::vector<PhraseRecord> negative;  // mean < 0, ascending
  };
  std::vector<Row> rows;  // one per requested length, in request order
};

/// Runs ACD on every record and averages each phrase's node score over all
/// of its occurrences, keyed by exact token sequence.
inline PhraseTable top_phrases(const std::vector<TextRecord>& corpus, const Model& model, const ScorerSpec& spec,
                               const std::vector<std::size_t>& lengths, std::size_t per_length,
                               const AcdParams& params = AcdParams::text_defaults()) {
  if (corpus.empty()) throw DataError("top_phrases needs a non-empty corpus");
  const std::set<std::size_t> wanted(lengths.begin(), lengths.end());
  std::map<std::vector<std::string>, std::pair<double, std::size_t>> totals;
  for (const auto& record : corpus) {
    const auto ids = encode_tokens(model, record.tokens);
    const auto layout = UnitLayout::text(record.tokens.size(), model.feature_shape());
    const auto h = acd(model, ids, spec, params, layout, record.tokens);
    for (const auto& node : h.nodes) {
      if (!wanted.contains(node.members.size())) continue;
      std::vector<std::string> phrase(record.tokens.begin() + node.members.front(),
                                      record.tokens.begin() + node.members.back() + 1);
      auto& [sum, count] = totals[phrase];
      sum += node.score;
      ++count;
    }
  }
  PhraseTable table;
  for (auto length : lengths) {
    PhraseTable::Row row{length, {}, {}};
    for (const auto& [phrase, total] : totals) {
      if (phrase.size() != length) continue;
      PhraseRecord r{phrase, length, total.first / double(total.second), total.second};
      if (r.mean_score > 0.0) row.positive.push_back(r);
      if (r.mean_score < 0.0) row.negative.push_back(r);
    }
    // stable sorts keep the lexicographic order of equal means
    std::stable_sort(row.positive.begin(), row.positive.end(),
                     [](const auto& a, const auto& b) { return a.mean_score > b.mean_score; });
    std::stable_sort(row.negative.begin(), row.negative.end(),
                     [](const auto& a, const auto& b) { return a.mean_score < b.mean_score; });
    if (row.positive.size() > per_length) row.positive.resize(per_length);
    if (row.negative.size() > per_length) row.negative.resize(per_length);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Pixel ranking and rank correlation

struct PixelRanking {
  std::vector<UnitIndex> order;    // units, earliest first
  std::vector<std::size_t> rank;   // rank[unit] = position in order
};

/// Orders units by when they entered the hierarchy. A unit enters with the
/// earliest node containing it (the largest such node on ties); units are
/// sorted by that node's iteration, then its score descending, then unit
/// index.
inline PixelRanking pixel_rank(const Hierarchy& h) {
  const std::size_t n = h.unit_count();
  std::vector<std::uint8_t> covered(n, 0);
  for (auto r : h.roots)
    for (auto u : h.nodes.at(r).members) covered[u] = 1;
  if (std::find(covered.begin(), covered.end(), 0) != covered.end())
    throw DataError("hierarchy does not cover all units; cannot rank them");

  constexpr std::size_t kUnset = SIZE_MAX;
  std::vector<std::size_t> entry(n, kUnset);
  for (std::size_t i = 0; i < h.nodes.size(); ++i) {
    const auto& node = h.nodes[i];
    for (auto u : node.members) {
      auto& e = entry[u];
      if (e == kUnset) {
        e = i;
        continue;
      }
      const auto& cur = h.nodes[e];
      if (node.iteration < cur.iteration ||
          (node.iteration == cur.iteration && node.members.size() > cur.members.size()))
        e = i;
    }
  }
  PixelRanking r;
  r.order.resize(n);
  std::iota(r.order.begin(), r.order.end(), UnitIndex{0});
  std::sort(r.order.begin(), r.order.end(), [&](UnitIndex a, UnitIndex b) {
    const auto& na = h.nodes[entry[a]];
    const auto& nb = h.nodes[entry[b]];
    return std::tuple(na.iteration, -na.score, a) < std::tuple(nb.iteration, -nb.score, b);
  });
  r.rank.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.rank[r.order[i]] = i;
  return r;
}

/// Spearman correlation of two untied rankings over the same units.
inline double rank_correlation(const PixelRanking& a, const PixelRanking& b) {
  const std::size_t n = a.rank.size();
  if (b.rank.size() != n) throw ShapeError("rankings cover different unit counts");
  if (n < 2) throw ShapeError("rank correlation needs at least 2 units");
  double d2 = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    const double d = double(a.rank[u]) - double(b.rank[u]);
    d2 += d * d;
  }
  const double nn = double(n);
  return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

struct StabilityResult {
  std::size_t original_class = 0;
  std::size_t adversarial_class = 0;
  double original_correlation = 0.0;     // hierarchies for the original class
  double adversarial_correlation = 0.0;  // hierarchies for the adversarial class
  double mean = 0.0;
};

/// Agreement between the hierarchies of x and x_adv, averaged over the two
/// predicted classes. `classes` overrides the predictions.
inline StabilityResult hierarchy_stability(const Model& model, const Tensor& x, const Tensor& x_adv,
                                           const ScorerSpec& scorer, const AcdParams& params,
                                           std::size_t superpixel = 1,
                                           std::optional<std::pair<std::size_t, std::size_t>> classes = {}) {
  StabilityResult r;
  if (classes) {
    std::tie(r.original_class, r.adversarial_class) = *classes;
  } else {
    r.original_class = predict(model, x);
    r.adversarial_class = predict(model, x_adv);
    if (r.original_class == r.adversarial_class)
      throw DataError("adversarial input does not change the predicted class");
  }
  const auto layout = UnitLayout::image(model.feature_shape(), superpixel);
  auto correlation = [&](std::size_t cls) {
    ScorerSpec spec = scorer;
    spec.target_class = cls;
    return rank_correlation(pixel_rank(acd(model, x, spec, params, layout)),
                            pixel_rank(acd(model, x_adv, spec, params, layout)));
  };
  r.original_correlation = correlation(r.original_class);
  r.adversarial_correlation = correlation(r.adversarial_class);
  r.mean = 0.5 * (r.original_correlation + r.adversarial_correlation);
  return r;
}

// ---------------------------------------------------------------------------
// Attacks

struct AttackResult {
  Tensor adversarial;
  double epsilon = 0.0;
  std::size_t adversarial_class = 0;
};

/// start, 2 start, 4 start, ...
inline std::vector<double> doubling_schedule(double start = 0.02, std::size_t count = 6) {
  std::vector<double> s;
  for (std::size_t j = 0; j < count; ++j) s.push_back(start * std::pow(2.0, double(j)));
  return s;
}

namespace detail {

template <class Direction>
std::optional<AttackResult> scheduled_attack(const Model& model, const Tensor& x, std::size_t label,
                                             std::span<const double> schedule, Direction direction) {
  for (std::size_t i = 0; i < schedule.size(); ++i)
    if (!(schedule[i] >= 0.0) || (i > 0 && schedule[i] < schedule[i - 1]))
      throw DataError("epsilon schedule must be increasing and non-negative");
  const auto original = predict(model, x);
  const Tensor grad = input_gradient(model, x, label, GradientTarget::cross_entropy);
  const auto step = direction(grad);
  if (!step) return std::nullopt;
  for (double eps : schedule) {
    if (eps == 0.0) continue;
    Tensor adv = x;
    for (std::size_t i = 0; i < adv.size(); ++i)
      adv[i] = std::clamp(static_cast<float>(x[i] + eps * (*step)[i]), 0.0f, 1.0f);
    const auto cls = predict(model, adv);
    if (cls != original) return AttackResult{std::move(adv), eps, cls};
  }
  return std::nullopt;
}

}  // namespace detail

/// x + eps * sign(grad of the loss) at the smallest scheduled eps that
/// changes the prediction, clipped to [0, 1].
inline std::optional<AttackResult> fgsm_attack(const Model& model, const Tensor& x, std::size_t label,
                                               std::span<const double> schedule) {
  return detail::scheduled_attack(model, x, label, schedule, [](const Tensor& g) -> std::optional<std::vector<double>> {
    std::vector<double> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] > 0 ? 1.0 : g[i] < 0 ? -1.0 : 0.0;
    return d;
  });
}

/// As fgsm_attack with the step along the L2-normalized loss gradient.
inline std::optional<AttackResult> gradient_attack(const Model& model, const Tensor& x, std::size_t label,
                                                   std::span<const double> schedule) {
  return detail::scheduled_attack(model, x, label, schedule, [](const Tensor& g) -> std::optional<std::vector<double>> {
    double norm = 0.0;
    for (float v : g.values()) norm += double(v) * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) return std::nullopt;
    std::vector<double> d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] / norm;
    return d;
  });
}

// ---------------------------------------------------------------------------

/// Copy of `model` with floor(fraction * N) of its N weight entries (biases
/// excluded) chosen at random and permuted among themselves.
inline Model weaken_model(const Model& model, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DataError("fraction must be in (0, 1]");
  Model out = model;
  std::vector<float*> slots;
  for (auto& layer : out.layers)
    if (layer.has_weights())
      for (auto& v : layer.weight.values()) slots.push_back(&v);
  const auto count = static_cast<std::size_t>(std::floor(fraction * double(slots.size())));
  if (count < 2) throw DataError("fraction selects fewer than 2 weights");
  Rng rng(seed);
  std::vector<std::size_t> positions(slots.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) std::swap(positions[i], positions[i + rng.below(positions.size() - i)]);
  positions.resize(count);
  std::vector<float> values;
  values.reserve(count);
  for (auto p : positions) values.push_back(*slots[p]);
  rng.shuffle(std::span(values));
  for (std::size_t i = 0; i < count; ++i) *slots[positions[i]] = values[i];
  return out;
}

}  // namespace acd
