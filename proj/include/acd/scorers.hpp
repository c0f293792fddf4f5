#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acd/cd.hpp"
#include "acd/model.hpp"
#include "acd/ops.hpp"
#include "acd/units.hpp"

namespace acd {

enum class ScoreMethod { cd, occlusion, buildup };

inline std::string_view to_string(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::cd: return "cd";
    case ScoreMethod::occlusion: return "occlusion";
    case ScoreMethod::buildup: return "buildup";
  }
  return "?";
}

inline std::optional<ScoreMethod> score_method_from_string(std::string_view s) {
  for (auto m : {ScoreMethod::cd, ScoreMethod::occlusion, ScoreMethod::buildup})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

/// How group importance is measured. All methods report pre-SoftMax logits.
struct ScorerSpec {
  ScoreMethod method = ScoreMethod::cd;
  CdVariant variant;          // cd only
  float reference_value = 0;  // occlusion and buildup; applied in feature space
  std::size_t target_class = 0;
};

/// Scores feature groups of one fixed input. Precomputes the features and
/// the unperturbed logit so repeated calls cost one pass each. Const calls
/// are safe to run concurrently.
class GroupScorer {
 public:
  GroupScorer(const Model& model, const Tensor& x, ScorerSpec spec)
      : model_(&model), features_(features(model, x)), spec_(spec) {
    if (!std::isfinite(spec.reference_value)) throw NumericError("reference value must be finite");
    const auto logits = forward_from(model, model.feature_prefix(), features_);
    if (spec.target_class >= logits.size())
      throw ShapeError("class index " + std::to_string(spec.target_class) + " out of range for " +
                       std::to_string(logits.size()) + " classes");
    logit_ = logits[spec.target_class];
  }

  double operator()(const GroupMask& mask) const {
    if (mask.shape() != features_.shape())
      throw ShapeError("mask shape " + shape_str(mask.shape()) + " does not match features " +
                       shape_str(features_.shape()));
    switch (spec_.method) {
      case ScoreMethod::cd:
        return cd_forward_features(*model_, features_, mask, spec_.variant).beta_logits[spec_.target_class];
      case ScoreMethod::occlusion: return logit_ - perturbed_logit(mask, true);
      case ScoreMethod::buildup: return perturbed_logit(mask, false);
    }
    return 0.0;
  }

  double logit() const noexcept { return logit_; }
  const ScorerSpec& spec() const noexcept { return spec_; }
  const Tensor& feature_tensor() const noexcept { return features_; }
  const Model& model() const noexcept { return *model_; }

 private:
  /// Logit with features inside (replace_inside) or outside the mask set to
  /// the reference value.
  double perturbed_logit(const GroupMask& mask, bool replace_inside) const {
    Tensor t = features_;
    for (std::size_t i = 0; i < t.size(); ++i)
      if (mask[i] == replace_inside) t[i] = spec_.reference_value;
    return forward_from(*model_, model_->feature_prefix(), std::move(t))[spec_.target_class];
  }

  const Model* model_;
  Tensor features_;
  ScorerSpec spec_;
  double logit_ = 0.0;
};

inline double score_group(const Model& model, const Tensor& x, const GroupMask& mask, const ScorerSpec& spec) {
  return GroupScorer(model, x, spec)(mask);
}

/// Singleton score of every unit: shape [grid_h, grid_w] for images, [tokens]
/// for text.
inline Tensor unit_level_map(const Model& model, const Tensor& x, const ScorerSpec& spec,
                             const UnitLayout& layout) {
  const GroupScorer scorer(model, x, spec);
  Tensor out(layout.domain == Domain::text ? Shape{layout.unit_count()} : Shape{layout.grid_h, layout.grid_w});
  for (std::size_t u = 0; u < layout.unit_count(); ++u) {
    const UnitIndex unit = UnitIndex(u);
    out[u] = static_cast<float>(scorer(layout.mask({&unit, 1})));
  }
  return out;
}

}  // namespace acd
