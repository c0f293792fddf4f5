#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "acd/model.hpp"
#include "acd/tensor.hpp"

namespace acd {

/// Weighted sum of a linear or conv2d layer without its bias, accumulated in
/// double. Shared by forward inference and both CD tracks so that identical
/// inputs give bit-identical sums.
inline std::vector<double> affine_accumulate(const LayerSpec& layer, const Tensor& in,
                                             const Shape& out_shape) {
  std::vector<double> acc(shape_numel(out_shape), 0.0);
  const auto& w = layer.weight;
  if (layer.kind == LayerKind::linear) {
    const std::size_t outs = w.extent(0), ins = w.extent(1);
    for (std::size_t o = 0; o < outs; ++o) {
      double s = 0.0;
      const float* row = w.values().data() + o * ins;
      for (std::size_t i = 0; i < ins; ++i) s += double(row[i]) * double(in[i]);
      acc[o] = s;
    }
    return acc;
  }
  const std::size_t oc = w.extent(0), ic = w.extent(1), kh = w.extent(2), kw = w.extent(3);
  const std::size_t ih = in.extent(1), iw = in.extent(2);
  const std::size_t oh = out_shape[1], ow = out_shape[2];
  const auto sh = layer.stride.h, sw = layer.stride.w;
  const auto ph = static_cast<long>(layer.padding.h), pw = static_cast<long>(layer.padding.w);
  for (std::size_t o = 0; o < oc; ++o) {
    double* plane = acc.data() + o * oh * ow;
    for (std::size_t c = 0; c < ic; ++c) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const double wv = w.values()[((o * ic + c) * kh + ki) * kw + kj];
          if (wv == 0.0) continue;
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = long(y * sh + ki) - ph;
            if (iy < 0 || iy >= long(ih)) continue;
            const float* row = in.values().data() + (c * ih + std::size_t(iy)) * iw;
            double* orow = plane + y * ow;
            for (std::size_t x = 0; x < ow; ++x) {
              const long ix = long(x * sw + kj) - pw;
              if (ix < 0 || ix >= long(iw)) continue;
              orow[x] += wv * double(row[ix]);
            }
          }
        }
      }
    }
  }
  return acc;
}

/// Bias entry feeding output element `flat` of a linear or conv2d layer.
inline double bias_for(const LayerSpec& layer, const Shape& out_shape, std::size_t flat) {
  if (layer.kind == LayerKind::linear) return layer.bias[flat];
  return layer.bias[flat / (out_shape[1] * out_shape[2])];
}

inline Tensor affine(const LayerSpec& layer, const Tensor& in, std::size_t index = 0) {
  const auto out_shape = layer_output_shape(layer, in.shape(), index);
  const auto acc = affine_accumulate(layer, in, out_shape);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < acc.size(); ++i)
    out[i] = static_cast<float>(acc[i] + bias_for(layer, out_shape, i));
  return out;
}

inline Tensor conv2d(const Tensor& in, const LayerSpec& layer) {
  if (layer.kind != LayerKind::conv2d) throw ShapeError("conv2d called with a non-conv layer");
  return affine(layer, in);
}

inline Tensor linear(const Tensor& in, const LayerSpec& layer) {
  if (layer.kind != LayerKind::linear) throw ShapeError("linear called with a non-linear layer");
  return affine(layer, in);
}

struct PoolResult {
  Tensor values;
  /// Flat input index attaining the max, per output cell.
  std::vector<std::size_t> argmax;
};

/// Max pooling that also reports which input cell won each window. Ties go
/// to the lowest flat index.
inline PoolResult maxpool2d_with_indices(const Tensor& in, const LayerSpec& layer,
                                         std::size_t index = 0) {
  const auto out_shape = layer_output_shape(layer, in.shape(), index);
  PoolResult r{Tensor(out_shape), std::vector<std::size_t>(shape_numel(out_shape))};
  const std::size_t ih = in.extent(1), iw = in.extent(2);
  const std::size_t oh = out_shape[1], ow = out_shape[2];
  std::size_t o = 0;
  for (std::size_t c = 0; c < out_shape[0]; ++c)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x, ++o) {
        std::size_t best = (c * ih + y * layer.stride.h) * iw + x * layer.stride.w;
        for (std::size_t ki = 0; ki < layer.kernel.h; ++ki)
          for (std::size_t kj = 0; kj < layer.kernel.w; ++kj) {
            const std::size_t at = (c * ih + y * layer.stride.h + ki) * iw + x * layer.stride.w + kj;
            // row-major scan visits indices in increasing order, so strict >
            // keeps the lowest index on ties
            if (in[at] > in[best]) best = at;
          }
        r.argmax[o] = best;
        r.values[o] = in[best];
      }
  return r;
}

inline Tensor relu(const Tensor& in) {
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
  return out;
}

inline std::size_t token_index(float id, std::size_t vocab, std::size_t layer_index) {
  const auto rounded = std::lround(id);
  if (rounded < 0 || std::size_t(rounded) >= vocab || float(rounded) != id)
    throw ShapeError("layer " + std::to_string(layer_index) + " (embedding): token id " +
                     std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
  return std::size_t(rounded);
}

inline Tensor embed(const Tensor& ids, const LayerSpec& layer, std::size_t index = 0) {
  const auto out_shape = layer_output_shape(layer, ids.shape(), index);
  const std::size_t vocab = layer.weight.extent(0), width = layer.weight.extent(1);
  Tensor out(out_shape);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto row = token_index(ids[t], vocab, index);
    std::copy_n(layer.weight.values().begin() + row * width, width,
                out.values().begin() + t * width);
  }
  return out;
}

/// Inference-mode application of one layer; `index` is only used in errors.
inline Tensor apply_layer(const LayerSpec& layer, const Tensor& in, std::size_t index) {
  switch (layer.kind) {
    case LayerKind::linear:
    case LayerKind::conv2d: return affine(layer, in, index);
    case LayerKind::maxpool2d: return maxpool2d_with_indices(in, layer, index).values;
    case LayerKind::relu: return relu(in);
    case LayerKind::dropout:
      layer_output_shape(layer, in.shape(), index);
      return in;
    case LayerKind::flatten: return in.reshaped({in.size()});
    case LayerKind::embedding: return embed(in, layer, index);
  }
  throw UnsupportedLayerError("layer " + std::to_string(index) + ": unsupported kind");
}

/// Runs layers [first, end) on `activation`.
inline Tensor forward_from(const Model& model, std::size_t first, Tensor activation) {
  for (std::size_t i = first; i < model.layers.size(); ++i)
    activation = apply_layer(model.layers[i], activation, i);
  return activation;
}

inline void check_input(const Model& model, const Tensor& x) {
  if (x.shape() != model.input_shape)
    throw ShapeError("input shape " + shape_str(x.shape()) + " does not match model input " +
                     shape_str(model.input_shape));
}

/// Logits g(x), before SoftMax.
inline Tensor forward(const Model& model, const Tensor& x) {
  check_input(model, x);
  return forward_from(model, 0, x);
}

/// Every activation of a forward pass: entry 0 is x, entry i+1 the output
/// of layer i.
inline std::vector<Tensor> forward_trace(const Model& model, const Tensor& x) {
  check_input(model, x);
  std::vector<Tensor> acts{x};
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    acts.push_back(apply_layer(model.layers[i], acts.back(), i));
  return acts;
}

/// Input to the first non-embedding layer; the tensor feature groups index.
inline Tensor features(const Model& model, const Tensor& x) {
  check_input(model, x);
  Tensor t = x;
  for (std::size_t i = 0; i < model.feature_prefix(); ++i) t = apply_layer(model.layers[i], t, i);
  return t;
}

inline Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw ShapeError("softmax of empty input");
  const float m = *std::max_element(logits.values().begin(), logits.values().end());
  std::vector<double> e(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += e[i] = std::exp(double(logits[i]) - m);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(e[i] / total);
  return out;
}

inline std::size_t predict(const Model& model, const Tensor& x) { return argmax(forward(model, x)); }

}  // namespace acd
