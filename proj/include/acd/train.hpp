#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "acd/backprop.hpp"
#include "acd/io.hpp"
#include "acd/model.hpp"
#include "acd/random.hpp"

namespace acd {

struct TrainConfig {
  std::size_t epochs = 5;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct TrainReport {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

struct TrainResult {
  Model model;
  TrainReport report;
};

inline double accuracy(const Model& model, const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : samples) hits += predict(model, s.input) == s.label;
  return double(hits) / double(samples.size());
}

/// Keeps the <pad> embedding at zero so padding adds nothing to a text
/// model's features.
inline void zero_pad_row(Model& model) {
  if (model.feature_prefix() == 0) return;
  auto& w = model.layers.front().weight;
  for (std::size_t e = 0; e < w.extent(1); ++e) w[kPadToken * w.extent(1) + e] = 0.0f;
}

/// Fresh weights: uniform in +-1/sqrt(fan_in) for linear and conv layers,
/// uniform in +-0.5 for embeddings (padding row zero).
inline Model initialize_weights(Model model, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& layer : model.layers) {
    if (!layer.has_weights()) continue;
    double bound = 0.5;
    if (layer.kind != LayerKind::embedding) {
      const auto& s = layer.weight.shape();
      const auto fan_in = shape_numel(s) / s[0];
      bound = 1.0 / std::sqrt(double(fan_in));
    }
    for (auto& v : layer.weight.values()) v = static_cast<float>(rng.uniform(-bound, bound));
    for (auto& v : layer.bias.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  }
  zero_pad_row(model);
  return model;
}

/// Minibatch SGD with momentum on softmax cross-entropy. Deterministic for a
/// given seed; dropout layers stay inactive.
inline TrainResult train_fixture(const Model& arch, const std::vector<Sample>& train,
                                 const std::vector<Sample>& test, const TrainConfig& config) {
  if (train.empty()) throw DataError("training set is empty");
  arch.validate();
  for (const auto& s : train)
    if (s.input.shape() != arch.input_shape)
      throw ShapeError("training sample shape " + shape_str(s.input.shape()) + " does not match model input " +
                       shape_str(arch.input_shape));
  TrainResult result{initialize_weights(arch, config.seed), {}};
  Model& model = result.model;
  auto velocity = zero_grads(model);
  Rng rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      auto grads = zero_grads(model);
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train[order[k]];
        const auto acts = forward_trace(model, s.input);
        const double loss = cross_entropy(acts.back(), s.label);
        if (!std::isfinite(loss)) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch << ", sample " << order[k] << " (learning rate "
             << config.learning_rate << ")";
          throw NumericError(os.str());
        }
        epoch_loss += loss;
        backward(model, acts, cross_entropy_grad(acts.back(), s.label), &grads);
      }
      const float scale = static_cast<float>(config.learning_rate / double(end - start));
      const float mu = static_cast<float>(config.momentum);
      for (std::size_t i = 0; i < model.layers.size(); ++i) {
        auto update = [&](Tensor& param, const Tensor& grad, Tensor& vel) {
          for (std::size_t j = 0; j < param.size(); ++j) {
            vel[j] = mu * vel[j] + grad[j];
            param[j] -= scale * vel[j];
          }
        };
        auto& layer = model.layers[i];
        if (!layer.weight.empty()) update(layer.weight, grads[i].weight, velocity[i].weight);
        if (!layer.bias.empty()) update(layer.bias, grads[i].bias, velocity[i].bias);
      }
      zero_pad_row(model);
    }
    result.report.epoch_loss.push_back(epoch_loss / double(train.size()));
  }
  result.report.train_accuracy = accuracy(model, train);
  result.report.test_accuracy = accuracy(model, test);
  return result;
}

}  // namespace acd
