#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "acd/model.hpp"

namespace acd::architectures {

/// Small MNIST CNN: two conv/relu/pool stages and two dense layers.
inline Model mnist_cnn() {
  Model m;
  m.input_shape = {1, 28, 28};
  m.layers = {LayerSpec::conv2d(1, 8, {5, 5}),  LayerSpec::relu(), LayerSpec::maxpool2d({2, 2}),
              LayerSpec::conv2d(8, 16, {5, 5}), LayerSpec::relu(), LayerSpec::maxpool2d({2, 2}),
              LayerSpec::flatten(),             LayerSpec::linear(256, 64), LayerSpec::relu(),
              LayerSpec::dropout(0.5f),         LayerSpec::linear(64, 10)};
  for (int c = 0; c < 10; ++c) m.class_labels.push_back(std::to_string(c));
  return m;
}

/// Text CNN over `length` padded tokens: width-3 convolution across the
/// embedding, max over time, dense read-out to negative/positive.
inline Model text_cnn(std::vector<std::string> vocab, std::size_t length, std::size_t width = 16,
                      std::size_t filters = 24) {
  Model m;
  m.input_shape = {length};
  m.vocab = std::move(vocab);
  m.layers = {LayerSpec::embedding(m.vocab.size(), width),
              LayerSpec::conv2d(1, filters, {3, width}, {1, 1}, {1, 0}),
              LayerSpec::relu(),
              LayerSpec::maxpool2d({length, 1}),
              LayerSpec::flatten(),
              LayerSpec::linear(filters, 2)};
  m.class_labels = {"negative", "positive"};
  return m;
}

}  // namespace acd::architectures
