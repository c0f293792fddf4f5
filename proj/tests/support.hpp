#pragma once

// Test helpers: random models, independent nested-loop oracles, fixtures.

#include <cmath>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "acd/acd.hpp"

namespace acd {

inline void PrintTo(const Tensor& t, std::ostream* os) {
  *os << shape_str(t.shape()) << " {";
  for (std::size_t i = 0; i < t.size() && i < 16; ++i) *os << (i ? ", " : "") << t[i];
  if (t.size() > 16) *os << ", ...";
  *os << "}";
}

}  // namespace acd

namespace testing_support {

using namespace acd;

inline std::filesystem::path data_dir() { return ACD_TEST_DATA_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("acd_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::vector<float> as_vector(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline void randomize_weights(Model& m, Rng& rng, double scale = 0.6) {
  for (auto& l : m.layers) {
    if (l.kind == LayerKind::linear || l.kind == LayerKind::conv2d || l.kind == LayerKind::embedding)
      l.weight = random_tensor(l.weight.shape(), rng, -scale, scale);
    if (l.kind == LayerKind::linear || l.kind == LayerKind::conv2d)
      l.bias = random_tensor(l.bias.shape(), rng, -scale, scale);
  }
}

/// Random feed-forward model with at most six layers, drawing on every
/// layer kind. Image models start from [C, H, W], vector models from [n],
/// text models from token ids.
inline Model random_model(Rng& rng) {
  Model m;
  const auto family = rng.below(3);
  const std::size_t classes = 2 + rng.below(3);
  if (family == 0) {
    const std::size_t c = 1 + rng.below(2), hw = 4 + rng.below(4);
    m.input_shape = {c, hw, hw + rng.below(2)};
    const std::size_t oc = 1 + rng.below(3);
    const std::size_t pad = rng.below(2);
    m.layers.push_back(LayerSpec::conv2d(c, oc, {2 + rng.below(2), 2}, {1 + rng.below(2), 1}, {pad, pad}));
    if (rng.below(2)) m.layers.push_back(LayerSpec::relu());
    if (rng.below(2)) m.layers.push_back(LayerSpec::maxpool2d({2, 2}, Extent2{1 + rng.below(2), 1 + rng.below(2)}));
    else m.layers.push_back(LayerSpec::dropout(0.25f));
    m.layers.push_back(LayerSpec::flatten());
    const auto flat = shape_numel(m.activation_shapes().back());
    m.layers.push_back(LayerSpec::linear(flat, classes));
  } else if (family == 1) {
    const std::size_t n = 3 + rng.below(8);
    m.input_shape = {n};
    std::size_t width = n;
    const std::size_t hidden_layers = 1 + rng.below(2);
    for (std::size_t i = 0; i < hidden_layers; ++i) {
      const std::size_t h = 2 + rng.below(6);
      m.layers.push_back(LayerSpec::linear(width, h));
      m.layers.push_back(rng.below(4) ? LayerSpec::relu() : LayerSpec::dropout(0.5f));
      width = h;
    }
    m.layers.push_back(LayerSpec::linear(width, classes));
  } else {
    const std::size_t len = 3 + rng.below(5), width = 2 + rng.below(3), vocab = 6;
    m.input_shape = {len};
    m.layers.push_back(LayerSpec::embedding(vocab, width));
    m.layers.push_back(LayerSpec::conv2d(1, 2 + rng.below(2), {2, width}, {1, 1}, {rng.below(2), 0}));
    m.layers.push_back(LayerSpec::relu());
    const auto conv_h = m.activation_shapes().back()[1];
    m.layers.push_back(LayerSpec::maxpool2d({conv_h, 1}));
    m.layers.push_back(LayerSpec::flatten());
    const auto flat = shape_numel(m.activation_shapes().back());
    m.layers.push_back(LayerSpec::linear(flat, classes));
    m.vocab = {"<pad>", "<unk>", "a", "b", "c", "d"};
  }
  randomize_weights(m, rng);
  m.validate();
  return m;
}

/// Valid input for a model: token ids for embedding models, reals otherwise.
inline Tensor random_input(const Model& m, Rng& rng) {
  Tensor x(m.input_shape);
  if (m.feature_prefix() == 1) {
    const auto vocab = m.layers.front().weight.extent(0);
    for (auto& v : x.values()) v = static_cast<float>(rng.below(vocab));
  } else {
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  return x;
}

// ---------------------------------------------------------------------------
// Nested-loop oracles, written independently of the library kernels.

inline Tensor oracle_conv2d(const Tensor& in, const LayerSpec& l) {
  const long C = long(in.extent(0)), H = long(in.extent(1)), W = long(in.extent(2));
  const long O = long(l.weight.extent(0)), KH = long(l.weight.extent(2)), KW = long(l.weight.extent(3));
  const long SH = long(l.stride.h), SW = long(l.stride.w), PH = long(l.padding.h), PW = long(l.padding.w);
  const long OH = (H + 2 * PH - KH) / SH + 1, OW = (W + 2 * PW - KW) / SW + 1;
  Tensor out({std::size_t(O), std::size_t(OH), std::size_t(OW)});
  for (long o = 0; o < O; ++o)
    for (long y = 0; y < OH; ++y)
      for (long x = 0; x < OW; ++x) {
        long double acc = l.bias[std::size_t(o)];
        for (long c = 0; c < C; ++c)
          for (long i = 0; i < KH; ++i)
            for (long j = 0; j < KW; ++j) {
              const long iy = y * SH + i - PH, ix = x * SW + j - PW;
              if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
              acc += (long double)l.weight[std::size_t(((o * C + c) * KH + i) * KW + j)] *
                     in[std::size_t((c * H + iy) * W + ix)];
            }
        out[std::size_t((o * OH + y) * OW + x)] = float(acc);
      }
  return out;
}

inline Tensor oracle_linear(const Tensor& in, const LayerSpec& l) {
  const std::size_t O = l.weight.extent(0), I = l.weight.extent(1);
  Tensor out({O});
  for (std::size_t o = 0; o < O; ++o) {
    long double acc = l.bias[o];
    for (std::size_t i = 0; i < I; ++i) acc += (long double)l.weight[o * I + i] * in[i];
    out[o] = float(acc);
  }
  return out;
}

inline Tensor oracle_maxpool(const Tensor& in, const LayerSpec& l) {
  const std::size_t C = in.extent(0), H = in.extent(1), W = in.extent(2);
  const std::size_t OH = (H - l.kernel.h) / l.stride.h + 1, OW = (W - l.kernel.w) / l.stride.w + 1;
  Tensor out({C, OH, OW});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t x = 0; x < OW; ++x) {
        float best = -INFINITY;
        for (std::size_t i = 0; i < l.kernel.h; ++i)
          for (std::size_t j = 0; j < l.kernel.w; ++j)
            best = std::max(best, in[(c * H + y * l.stride.h + i) * W + x * l.stride.w + j]);
        out[(c * OH + y) * OW + x] = best;
      }
  return out;
}

inline Tensor oracle_forward(const Model& m, const Tensor& x) {
  Tensor a = x;
  for (const auto& l : m.layers) {
    switch (l.kind) {
      case LayerKind::linear: a = oracle_linear(a, l); break;
      case LayerKind::conv2d: a = oracle_conv2d(a, l); break;
      case LayerKind::maxpool2d: a = oracle_maxpool(a, l); break;
      case LayerKind::relu:
        for (auto& v : a.values()) v = v > 0 ? v : 0.0f;
        break;
      case LayerKind::dropout: break;
      case LayerKind::flatten: a = a.reshaped({a.size()}); break;
      case LayerKind::embedding: {
        const std::size_t T = a.size(), E = l.weight.extent(1);
        Tensor e({1, T, E});
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t k = 0; k < E; ++k) e[t * E + k] = l.weight[std::size_t(a[t]) * E + k];
        a = e;
        break;
      }
    }
  }
  return a;
}

/// True when a and b share every ReLU sign pattern and max-pool selection,
/// so the network is one affine map on the segment between them.
inline bool same_linear_region(const Model& m, const Tensor& a, const Tensor& b) {
  const auto ta = forward_trace(m, a), tb = forward_trace(m, b);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    if (l.kind == LayerKind::relu) {
      for (std::size_t j = 0; j < ta[i].size(); ++j)
        if ((ta[i][j] > 0) != (tb[i][j] > 0)) return false;
    } else if (l.kind == LayerKind::maxpool2d) {
      if (maxpool2d_with_indices(ta[i], l).argmax != maxpool2d_with_indices(tb[i], l).argmax) return false;
    }
  }
  return true;
}

/// Largest |central difference - analytic gradient| over `probes` input
/// coordinates whose +-h segment stays inside one linear region.
inline double gradient_check(const Model& m, const Tensor& x, std::size_t cls, GradientTarget target, Rng& rng,
                             int probes, double h = 1e-3) {
  const auto g = input_gradient(m, x, cls, target);
  auto f = [&](const Tensor& in) {
    const auto y = forward(m, in);
    return target == GradientTarget::logit ? double(y[cls]) : cross_entropy(y, cls);
  };
  double worst = 0;
  int taken = 0;
  for (int attempt = 0; taken < probes && attempt < 50 * probes; ++attempt) {
    const auto i = rng.below(x.size());
    Tensor hi = x, lo = x;
    hi[i] = float(x[i] + h);
    lo[i] = float(x[i] - h);
    if (!same_linear_region(m, lo, hi)) continue;
    const double step = double(hi[i]) - double(lo[i]);
    worst = std::max(worst, std::abs((f(hi) - f(lo)) / step - g[i]));
    ++taken;
  }
  if (taken < probes) throw InternalError("too few kink-free probes");
  return worst;
}

/// Composes the weights of a bias-free all-linear model into one matrix.
inline std::vector<std::vector<double>> compose_linear(const Model& m) {
  const std::size_t n = m.input_shape[0];
  std::vector<std::vector<double>> total(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) total[i][i] = 1.0;
  for (const auto& l : m.layers) {
    if (l.kind != LayerKind::linear) continue;
    const std::size_t O = l.weight.extent(0), I = l.weight.extent(1);
    std::vector<std::vector<double>> next(O, std::vector<double>(n, 0.0));
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < I; ++i)
        for (std::size_t j = 0; j < n; ++j) next[o][j] += double(l.weight[o * I + i]) * total[i][j];
    total = std::move(next);
  }
  return total;
}

inline Model bias_free_linear_model(std::size_t inputs, std::size_t classes, std::size_t depth, Rng& rng) {
  Model m;
  m.input_shape = {inputs};
  std::size_t width = inputs;
  for (std::size_t d = 0; d < depth; ++d) {
    const std::size_t out = d + 1 == depth ? classes : 3 + rng.below(4);
    auto l = LayerSpec::linear(width, out);
    l.weight = random_tensor(l.weight.shape(), rng);
    m.layers.push_back(l);
    if (d + 1 < depth && rng.below(2)) m.layers.push_back(LayerSpec::dropout(0.1f));
    width = out;
  }
  return m;
}

inline std::vector<Sample> mnist_train(std::size_t limit = SIZE_MAX) {
  return load_mnist(data_dir() / "mnist_subset/train-images.idx3-ubyte",
                    data_dir() / "mnist_subset/train-labels.idx1-ubyte", limit);
}

inline std::vector<Sample> mnist_test(std::size_t limit = SIZE_MAX) {
  return load_mnist(data_dir() / "mnist_subset/test-images.idx3-ubyte",
                    data_dir() / "mnist_subset/test-labels.idx1-ubyte", limit);
}

/// The fixture CNN trained on the bundled MNIST subset; trained once per
/// process.
inline const TrainResult& trained_mnist_cnn() {
  static const TrainResult result = [] {
    TrainConfig cfg;
    cfg.seed = 7;
    return train_fixture(architectures::mnist_cnn(), mnist_train(), mnist_test(), cfg);
  }();
  return result;
}

}  // namespace testing_support
