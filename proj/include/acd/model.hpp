#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acd/error.hpp"
#include "acd/tensor.hpp"

namespace acd {

enum class LayerKind { linear, conv2d, maxpool2d, relu, dropout, flatten, embedding };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::relu: return "relu";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::embedding: return "embedding";
  }
  return "?";
}

inline std::optional<LayerKind> layer_kind_from_string(std::string_view name) {
  for (auto k : {LayerKind::linear, LayerKind::conv2d, LayerKind::maxpool2d, LayerKind::relu,
                 LayerKind::dropout, LayerKind::flatten, LayerKind::embedding})
    if (to_string(k) == name) return k;
  return std::nullopt;
}

struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

/// One layer of a feed-forward model.
///
/// linear:    weight [out, in], bias [out]; input must be rank 1.
/// conv2d:    weight [out_c, in_c, kh, kw], bias [out_c]; input is C x H x W,
///            zero padding.
/// maxpool2d: kernel and stride, no padding; input is C x H x W.
/// dropout:   identity at inference, p kept for bookkeeping.
/// embedding: weight [vocab, width]; input is a rank-1 vector of token ids,
///            output is 1 x tokens x width.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  Tensor weight;
  Tensor bias;
  Extent2 kernel;
  Extent2 stride;
  Extent2 padding{0, 0};
  float dropout_p = 0.0f;

  static LayerSpec linear(Tensor weight, Tensor bias) {
    LayerSpec l;
    l.kind = LayerKind::linear;
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    return l;
  }

  static LayerSpec linear(std::size_t in, std::size_t out) {
    return linear(Tensor({out, in}), Tensor({out}));
  }

  static LayerSpec conv2d(Tensor weight, Tensor bias, Extent2 stride = {1, 1},
                          Extent2 padding = {0, 0}) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    if (l.weight.rank() == 4) l.kernel = {l.weight.extent(2), l.weight.extent(3)};
    l.stride = stride;
    l.padding = padding;
    return l;
  }

  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels, Extent2 kernel,
                          Extent2 stride = {1, 1}, Extent2 padding = {0, 0}) {
    return conv2d(Tensor({out_channels, in_channels, kernel.h, kernel.w}), Tensor({out_channels}),
                  stride, padding);
  }

  static LayerSpec maxpool2d(Extent2 kernel, std::optional<Extent2> stride = std::nullopt) {
    LayerSpec l;
    l.kind = LayerKind::maxpool2d;
    l.kernel = kernel;
    l.stride = stride.value_or(kernel);
    return l;
  }

  static LayerSpec relu() { return LayerSpec{}; }

  static LayerSpec dropout(float p) {
    LayerSpec l;
    l.kind = LayerKind::dropout;
    l.dropout_p = p;
    return l;
  }

  static LayerSpec flatten() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
  }

  static LayerSpec embedding(Tensor weight) {
    LayerSpec l;
    l.kind = LayerKind::embedding;
    l.weight = std::move(weight);
    return l;
  }

  static LayerSpec embedding(std::size_t vocab_size, std::size_t width) {
    return embedding(Tensor({vocab_size, width}));
  }

  bool has_weights() const noexcept {
    return kind == LayerKind::linear || kind == LayerKind::conv2d || kind == LayerKind::embedding;
  }
};

namespace detail {

[[noreturn]] inline void layer_error(std::size_t index, const LayerSpec& layer,
                                     const std::string& what) {
  throw ShapeError("layer " + std::to_string(index) + " (" + std::string(to_string(layer.kind)) +
                   "): " + what);
}

inline std::size_t window_count(std::size_t in, std::size_t pad, std::size_t kernel,
                                std::size_t stride) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace detail

/// Output shape of `layer` applied to an input of shape `in`. Throws
/// ShapeError naming `index` on any inconsistency.
inline Shape layer_output_shape(const LayerSpec& layer, const Shape& in, std::size_t index) {
  using detail::layer_error;
  switch (layer.kind) {
    case LayerKind::linear: {
      if (layer.weight.rank() != 2) layer_error(index, layer, "weight must be rank 2");
      const auto out = layer.weight.extent(0);
      if (layer.bias.shape() != Shape{out})
        layer_error(index, layer, "bias shape " + shape_str(layer.bias.shape()) +
                                      " does not match weight " + shape_str(layer.weight.shape()));
      if (in.size() != 1 || in[0] != layer.weight.extent(1))
        layer_error(index, layer, "expects input [" + std::to_string(layer.weight.extent(1)) +
                                      "], got " + shape_str(in));
      return {out};
    }
    case LayerKind::conv2d: {
      if (layer.weight.rank() != 4) layer_error(index, layer, "weight must be rank 4");
      const auto& w = layer.weight.shape();
      if (layer.bias.shape() != Shape{w[0]})
        layer_error(index, layer, "bias shape " + shape_str(layer.bias.shape()) +
                                      " does not match weight " + shape_str(w));
      if (layer.kernel != Extent2{w[2], w[3]})
        layer_error(index, layer, "kernel extents disagree with weight shape");
      if (layer.stride.h == 0 || layer.stride.w == 0)
        layer_error(index, layer, "stride must be positive");
      if (in.size() != 3 || in[0] != w[1])
        layer_error(index, layer, "expects input with " + std::to_string(w[1]) +
                                      " channels (C x H x W), got " + shape_str(in));
      if (w[2] > in[1] + 2 * layer.padding.h || w[3] > in[2] + 2 * layer.padding.w)
        layer_error(index, layer, "kernel larger than padded input " + shape_str(in));
      return {w[0], detail::window_count(in[1], layer.padding.h, w[2], layer.stride.h),
              detail::window_count(in[2], layer.padding.w, w[3], layer.stride.w)};
    }
    case LayerKind::maxpool2d: {
      if (layer.kernel.h == 0 || layer.kernel.w == 0 || layer.stride.h == 0 || layer.stride.w == 0)
        layer_error(index, layer, "kernel and stride must be positive");
      if (in.size() != 3) layer_error(index, layer, "expects C x H x W input, got " + shape_str(in));
      if (layer.kernel.h > in[1] || layer.kernel.w > in[2])
        layer_error(index, layer, "kernel larger than input " + shape_str(in));
      return {in[0], detail::window_count(in[1], 0, layer.kernel.h, layer.stride.h),
              detail::window_count(in[2], 0, layer.kernel.w, layer.stride.w)};
    }
    case LayerKind::relu:
    case LayerKind::dropout:
      if (layer.kind == LayerKind::dropout && !(layer.dropout_p >= 0.0f && layer.dropout_p < 1.0f))
        layer_error(index, layer, "dropout probability must be in [0, 1)");
      return in;
    case LayerKind::flatten:
      return {shape_numel(in)};
    case LayerKind::embedding:
      if (layer.weight.rank() != 2) layer_error(index, layer, "weight must be rank 2");
      if (in.size() != 1) layer_error(index, layer, "expects rank-1 token ids, got " + shape_str(in));
      return {1, in[0], layer.weight.extent(1)};
  }
  layer_error(index, layer, "unknown layer kind");
}

/// Ordered layer list producing logits; SoftMax is applied outside it.
struct Model {
  std::vector<LayerSpec> layers;
  Shape input_shape;
  std::vector<std::string> class_labels;
  /// Token strings for text models, indexed by embedding row.
  std::vector<std::string> vocab;

  /// Shapes of every activation: entry 0 is the input, entry i+1 the output
  /// of layer i.
  std::vector<Shape> activation_shapes() const {
    std::vector<Shape> shapes{input_shape};
    for (std::size_t i = 0; i < layers.size(); ++i)
      shapes.push_back(layer_output_shape(layers[i], shapes.back(), i));
    return shapes;
  }

  std::size_t class_count() const {
    const auto out = activation_shapes().back();
    if (out.size() != 1) throw ShapeError("model output must be a vector, got " + shape_str(out));
    return out[0];
  }

  /// Number of leading embedding layers (0 or 1). Feature groups for text
  /// models live on the output of this prefix.
  std::size_t feature_prefix() const noexcept {
    return !layers.empty() && layers.front().kind == LayerKind::embedding ? 1 : 0;
  }

  Shape feature_shape() const { return activation_shapes().at(feature_prefix()); }

  void validate() const {
    if (input_shape.empty()) throw ShapeError("model input shape is empty");
    for (auto e : input_shape)
      if (e == 0) throw ShapeError("model input extents must be positive");
    for (std::size_t i = 1; i < layers.size(); ++i)
      if (layers[i].kind == LayerKind::embedding)
        throw ShapeError("layer " + std::to_string(i) + " (embedding): only allowed first");
    const auto classes = class_count();
    if (!class_labels.empty() && class_labels.size() != classes)
      throw ShapeError("model declares " + std::to_string(class_labels.size()) +
                       " class labels but produces " + std::to_string(classes) + " logits");
  }
};

}  // namespace acd
