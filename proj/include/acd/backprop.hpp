#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "acd/model.hpp"
#include "acd/ops.hpp"
#include "acd/tensor.hpp"

namespace acd {

/// Parameter gradients of one layer; empty tensors for parameter-free layers.
struct LayerGrads {
  Tensor weight;
  Tensor bias;
};

inline std::vector<LayerGrads> zero_grads(const Model& model) {
  std::vector<LayerGrads> g(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (!l.weight.empty()) g[i].weight = Tensor(l.weight.shape());
    if (!l.bias.empty()) g[i].bias = Tensor(l.bias.shape());
  }
  return g;
}

/// Back-propagates `grad_out` through one layer given its forward input.
/// Accumulates parameter gradients into `grads` when non-null and returns the
/// gradient with respect to `in` (empty for embedding layers).
inline Tensor backward_layer(const LayerSpec& layer, const Tensor& in, const Tensor& grad_out,
                             LayerGrads* grads, std::size_t index) {
  switch (layer.kind) {
    case LayerKind::linear: {
      const std::size_t outs = layer.weight.extent(0), ins = layer.weight.extent(1);
      Tensor gin(in.shape());
      for (std::size_t i = 0; i < ins; ++i) {
        double s = 0.0;
        for (std::size_t o = 0; o < outs; ++o)
          s += double(layer.weight[o * ins + i]) * double(grad_out[o]);
        gin[i] = static_cast<float>(s);
      }
      if (grads) {
        for (std::size_t o = 0; o < outs; ++o) {
          const float g = grad_out[o];
          if (g == 0.0f) continue;
          grads->bias[o] += g;
          for (std::size_t i = 0; i < ins; ++i) grads->weight[o * ins + i] += g * in[i];
        }
      }
      return gin;
    }
    case LayerKind::conv2d: {
      const auto& w = layer.weight;
      const std::size_t oc = w.extent(0), ic = w.extent(1), kh = w.extent(2), kw = w.extent(3);
      const std::size_t ih = in.extent(1), iw = in.extent(2);
      const std::size_t oh = grad_out.extent(1), ow = grad_out.extent(2);
      const auto ph = long(layer.padding.h), pw = long(layer.padding.w);
      Tensor gin(in.shape());
      for (std::size_t o = 0; o < oc; ++o) {
        const float* g = grad_out.values().data() + o * oh * ow;
        if (grads) {
          double s = 0.0;
          for (std::size_t k = 0; k < oh * ow; ++k) s += g[k];
          grads->bias[o] += static_cast<float>(s);
        }
        for (std::size_t c = 0; c < ic; ++c)
          for (std::size_t ki = 0; ki < kh; ++ki)
            for (std::size_t kj = 0; kj < kw; ++kj) {
              const std::size_t widx = ((o * ic + c) * kh + ki) * kw + kj;
              const float wv = w[widx];
              double dw = 0.0;
              for (std::size_t y = 0; y < oh; ++y) {
                const long iy = long(y * layer.stride.h + ki) - ph;
                if (iy < 0 || iy >= long(ih)) continue;
                for (std::size_t x = 0; x < ow; ++x) {
                  const long ix = long(x * layer.stride.w + kj) - pw;
                  if (ix < 0 || ix >= long(iw)) continue;
                  const std::size_t at = (c * ih + std::size_t(iy)) * iw + std::size_t(ix);
                  const float gv = g[y * ow + x];
                  gin[at] += wv * gv;
                  dw += double(gv) * double(in[at]);
                }
              }
              if (grads) grads->weight[widx] += static_cast<float>(dw);
            }
      }
      return gin;
    }
    case LayerKind::maxpool2d: {
      const auto pooled = maxpool2d_with_indices(in, layer, index);
      Tensor gin(in.shape());
      for (std::size_t o = 0; o < pooled.argmax.size(); ++o) gin[pooled.argmax[o]] += grad_out[o];
      return gin;
    }
    case LayerKind::relu: {
      // subgradient 0 at 0
      Tensor gin(in.shape());
      for (std::size_t i = 0; i < in.size(); ++i) gin[i] = in[i] > 0.0f ? grad_out[i] : 0.0f;
      return gin;
    }
    case LayerKind::dropout: return grad_out;
    case LayerKind::flatten: return grad_out.reshaped(in.shape());
    case LayerKind::embedding: {
      if (grads) {
        const std::size_t vocab = layer.weight.extent(0), width = layer.weight.extent(1);
        for (std::size_t t = 0; t < in.size(); ++t) {
          const auto row = token_index(in[t], vocab, index);
          for (std::size_t e = 0; e < width; ++e)
            grads->weight[row * width + e] += grad_out[t * width + e];
        }
      }
      return {};
    }
  }
  throw UnsupportedLayerError("layer " + std::to_string(index) + ": unsupported kind");
}

/// Reverse pass over a forward trace. Returns the gradient with respect to
/// the model input (empty when the model starts with an embedding).
inline Tensor backward(const Model& model, const std::vector<Tensor>& acts, Tensor grad,
                       std::vector<LayerGrads>* grads) {
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    grad = backward_layer(model.layers[i], acts[i], grad, grads ? &(*grads)[i] : nullptr, i);
  }
  return grad;
}

/// d loss / d logits for softmax cross-entropy with the given label.
inline Tensor cross_entropy_grad(const Tensor& logits, std::size_t label) {
  Tensor g = softmax(logits);
  g[label] -= 1.0f;
  return g;
}

inline double cross_entropy(const Tensor& logits, std::size_t label) {
  const float m = *std::max_element(logits.values().begin(), logits.values().end());
  double total = 0.0;
  for (float v : logits.values()) total += std::exp(double(v) - m);
  return std::log(total) + m - logits[label];
}

enum class GradientTarget { logit, cross_entropy };

/// Gradient of logit[class_index] (or of the cross-entropy loss against
/// class_index) with respect to the input.
inline Tensor input_gradient(const Model& model, const Tensor& x, std::size_t class_index,
                             GradientTarget target = GradientTarget::logit) {
  if (model.feature_prefix() > 0)
    throw UnsupportedLayerError(
        "layer 0 (embedding): input gradient is undefined for token-id inputs");
  const auto acts = forward_trace(model, x);
  const Tensor& logits = acts.back();
  if (class_index >= logits.size())
    throw ShapeError("class index " + std::to_string(class_index) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  Tensor seed(logits.shape());
  if (target == GradientTarget::logit)
    seed[class_index] = 1.0f;
  else
    seed = cross_entropy_grad(logits, class_index);
  return backward(model, acts, std::move(seed), nullptr);
}

}  // namespace acd
