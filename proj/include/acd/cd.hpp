#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "acd/model.hpp"
#include "acd/ops.hpp"
#include "acd/tensor.hpp"

namespace acd {

enum class BiasRule { proportional, all_to_beta_naive };
enum class ReluRule { activation_of_beta, shapley };

struct CdVariant {
  BiasRule bias = BiasRule::proportional;
  ReluRule relu = ReluRule::activation_of_beta;

  /// The un-partitioned-bias, Shapley-ReLU ablation.
  static constexpr CdVariant naive() { return {BiasRule::all_to_beta_naive, ReluRule::shapley}; }

  friend bool operator==(const CdVariant&, const CdVariant&) = default;
};

/// Immutable indicator over the features of a CD input tensor.
class GroupMask {
 public:
  GroupMask(Shape shape, std::vector<std::uint8_t> bits) : shape_(std::move(shape)), bits_(std::move(bits)) {
    if (bits_.size() != shape_numel(shape_))
      throw ShapeError("mask has " + std::to_string(bits_.size()) + " entries, shape " +
                       shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)));
  }

  static GroupMask full(const Shape& shape) { return {shape, std::vector<std::uint8_t>(shape_numel(shape), 1)}; }
  static GroupMask empty(const Shape& shape) { return {shape, std::vector<std::uint8_t>(shape_numel(shape), 0)}; }

  static GroupMask from_indices(const Shape& shape, const std::vector<std::size_t>& indices) {
    std::vector<std::uint8_t> bits(shape_numel(shape), 0);
    for (auto i : indices) {
      if (i >= bits.size()) throw ShapeError("mask index " + std::to_string(i) + " out of range");
      bits[i] = 1;
    }
    return {shape, std::move(bits)};
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return bits_.size(); }
  bool operator[](std::size_t i) const noexcept { return bits_[i] != 0; }

  GroupMask complement() const {
    auto bits = bits_;
    for (auto& b : bits) b = !b;
    return {shape_, std::move(bits)};
  }

 private:
  Shape shape_;
  std::vector<std::uint8_t> bits_;
};

/// The group's part (beta) and everything else (gamma) of one activation.
struct DualActivation {
  Tensor beta;
  Tensor gamma;
  /// Set when the track descends from an empty side of the mask (the whole
  /// group or its complement), so it is zero by construction.
  bool beta_empty = false;
  bool gamma_empty = false;

  Tensor sum() const { return beta + gamma; }
};

inline DualActivation cd_init(const Tensor& x, const GroupMask& mask) {
  if (mask.shape() != x.shape())
    throw ShapeError("mask shape " + shape_str(mask.shape()) + " does not match input " +
                     shape_str(x.shape()));
  DualActivation d{Tensor(x.shape()), Tensor(x.shape())};
  std::size_t selected = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    (mask[i] ? d.beta : d.gamma)[i] = x[i];
    selected += mask[i];
  }
  d.beta_empty = selected == 0;
  d.gamma_empty = selected == x.size();
  return d;
}

/// Linear and conv2d layers: W applied to each track; the bias is split in
/// proportion to |W beta| and |W gamma| per output activation.
inline DualActivation cd_linear(const DualActivation& dual, const LayerSpec& layer,
                                CdVariant variant = {}, std::size_t index = 0) {
  if (layer.kind != LayerKind::linear && layer.kind != LayerKind::conv2d)
    throw UnsupportedLayerError("cd_linear applied to a " + std::string(to_string(layer.kind)) + " layer");
  const auto out_shape = layer_output_shape(layer, dual.beta.shape(), index);
  const auto wb = affine_accumulate(layer, dual.beta, out_shape);
  const auto wg = affine_accumulate(layer, dual.gamma, out_shape);
  // Degenerate 0/0 split: a whole zero track gets no bias. A track that is
  // empty by construction wins over one that merely died on the way.
  double degenerate_beta_share = 0.5;
  if (dual.gamma_empty) degenerate_beta_share = 1.0;
  else if (dual.beta_empty) degenerate_beta_share = 0.0;
  else if (dual.gamma.all_zero()) degenerate_beta_share = 1.0;
  else if (dual.beta.all_zero()) degenerate_beta_share = 0.0;

  DualActivation out{Tensor(out_shape), Tensor(out_shape), dual.beta_empty, dual.gamma_empty};
  for (std::size_t u = 0; u < wb.size(); ++u) {
    const double b = bias_for(layer, out_shape, u);
    double beta_share = 1.0, gamma_share = 0.0;
    if (variant.bias == BiasRule::proportional) {
      const double denom = std::abs(wb[u]) + std::abs(wg[u]);
      if (denom < 1e-12) {
        beta_share = degenerate_beta_share;
        gamma_share = 1.0 - degenerate_beta_share;
      } else {
        beta_share = std::abs(wb[u]) / denom;
        gamma_share = std::abs(wg[u]) / denom;
      }
    }
    out.beta[u] = static_cast<float>(wb[u] + b * beta_share);
    out.gamma[u] = static_cast<float>(wg[u] + b * gamma_share);
  }
  return out;
}

/// Both tracks are gathered at the cells that win max pooling of their sum.
inline DualActivation cd_maxpool(const DualActivation& dual, const LayerSpec& layer, std::size_t index = 0) {
  const auto pooled = maxpool2d_with_indices(dual.sum(), layer, index);
  DualActivation out{Tensor(pooled.values.shape()), Tensor(pooled.values.shape()), dual.beta_empty,
                     dual.gamma_empty};
  for (std::size_t o = 0; o < pooled.argmax.size(); ++o) {
    out.beta[o] = dual.beta[pooled.argmax[o]];
    out.gamma[o] = dual.gamma[pooled.argmax[o]];
  }
  return out;
}

inline DualActivation cd_relu(const DualActivation& dual, CdVariant variant = {}) {
  auto r = [](double v) { return v > 0.0 ? v : 0.0; };
  DualActivation out{Tensor(dual.beta.shape()), Tensor(dual.beta.shape()), dual.beta_empty, dual.gamma_empty};
  for (std::size_t i = 0; i < dual.beta.size(); ++i) {
    const double b = dual.beta[i], g = dual.gamma[i];
    const double total = r(double(dual.beta[i] + dual.gamma[i]));
    double beta;
    if (variant.relu == ReluRule::activation_of_beta) {
      beta = r(b);
    } else {
      // two-player Shapley value over {beta, gamma}
      beta = 0.5 * (r(b) + (total - r(g)));
    }
    out.beta[i] = static_cast<float>(beta);
    out.gamma[i] = static_cast<float>(total - beta);
  }
  return out;
}

inline DualActivation cd_dropout(const DualActivation& dual, float scale = 1.0f) {
  if (!(scale > 0.0f)) throw NumericError("dropout scale must be positive");
  DualActivation out = dual;
  if (scale != 1.0f) {
    for (auto& v : out.beta.values()) v *= scale;
    for (auto& v : out.gamma.values()) v *= scale;
  }
  return out;
}

inline DualActivation cd_layer(const DualActivation& dual, const LayerSpec& layer, CdVariant variant,
                               std::size_t index) {
  switch (layer.kind) {
    case LayerKind::linear:
    case LayerKind::conv2d: return cd_linear(dual, layer, variant, index);
    case LayerKind::maxpool2d: return cd_maxpool(dual, layer, index);
    case LayerKind::relu: return cd_relu(dual, variant);
    case LayerKind::dropout:
      layer_output_shape(layer, dual.beta.shape(), index);
      return cd_dropout(dual);
    case LayerKind::flatten: {
      const Shape flat{dual.beta.size()};
      return {dual.beta.reshaped(flat), dual.gamma.reshaped(flat), dual.beta_empty, dual.gamma_empty};
    }
    case LayerKind::embedding: break;
  }
  throw UnsupportedLayerError("layer " + std::to_string(index) + " (" + std::string(to_string(layer.kind)) +
                              "): not decomposable here; embeddings must be the first layer");
}

/// Decompositions after every layer past the embedding prefix. Entry 0 is
/// the decomposed feature tensor.
inline std::vector<DualActivation> cd_trace(const Model& model, const Tensor& x, const GroupMask& mask,
                                            CdVariant variant = {}) {
  std::vector<DualActivation> trace{cd_init(features(model, x), mask)};
  for (std::size_t i = model.feature_prefix(); i < model.layers.size(); ++i)
    trace.push_back(cd_layer(trace.back(), model.layers[i], variant, i));
  return trace;
}

struct CdResult {
  Tensor beta_logits;
  Tensor gamma_logits;
};

/// CD from an already computed feature tensor (the input to the first
/// non-embedding layer).
inline CdResult cd_forward_features(const Model& model, const Tensor& feats, const GroupMask& mask,
                                    CdVariant variant = {}) {
  DualActivation d = cd_init(feats, mask);
  for (std::size_t i = model.feature_prefix(); i < model.layers.size(); ++i)
    d = cd_layer(d, model.layers[i], variant, i);
  return {std::move(d.beta), std::move(d.gamma)};
}

/// Decomposes the logits g(x) into the contribution of `mask` and the rest.
/// For text models the mask indexes the embedded tokens.
inline CdResult cd_forward(const Model& model, const Tensor& x, const GroupMask& mask, CdVariant variant = {}) {
  return cd_forward_features(model, features(model, x), mask, variant);
}

}  // namespace acd
