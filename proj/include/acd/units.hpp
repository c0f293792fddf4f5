#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "acd/cd.hpp"
#include "acd/tensor.hpp"

namespace acd {

enum class Domain { text, image };

inline std::string_view to_string(Domain d) { return d == Domain::text ? "text" : "image"; }

using UnitIndex = std::uint32_t;

/// Maps interpretable units (tokens, pixels, superpixels) onto the features
/// of the CD input tensor. Units form a grid_h x grid_w grid in row-major
/// order; text is a single row.
struct UnitLayout {
  Domain domain = Domain::image;
  Shape feature_shape;
  std::size_t grid_h = 1;
  std::size_t grid_w = 1;
  std::size_t superpixel = 1;

  /// `tokens` leading rows of a 1 x length x width embedding output.
  static UnitLayout text(std::size_t tokens, const Shape& feature_shape) {
    if (feature_shape.size() != 3 || feature_shape[0] != 1)
      throw ShapeError("text features must be 1 x tokens x width, got " + shape_str(feature_shape));
    if (tokens == 0 || tokens > feature_shape[1])
      throw ShapeError("token count " + std::to_string(tokens) + " does not fit feature shape " +
                       shape_str(feature_shape));
    return {Domain::text, feature_shape, 1, tokens, 1};
  }

  /// s x s blocks over a C x H x W image, spanning all channels; blocks at
  /// the right and bottom edges are truncated when s does not divide.
  static UnitLayout image(const Shape& feature_shape, std::size_t superpixel = 1) {
    if (feature_shape.size() != 3)
      throw ShapeError("image features must be C x H x W, got " + shape_str(feature_shape));
    if (superpixel == 0) throw ShapeError("superpixel size must be positive");
    return {Domain::image, feature_shape, (feature_shape[1] + superpixel - 1) / superpixel,
            (feature_shape[2] + superpixel - 1) / superpixel, superpixel};
  }

  std::size_t unit_count() const noexcept { return grid_h * grid_w; }

  /// Flat feature indices covered by one unit, ascending within each channel.
  std::vector<std::size_t> features_of(UnitIndex unit) const {
    std::vector<std::size_t> out;
    if (domain == Domain::text) {
      const std::size_t width = feature_shape[2];
      for (std::size_t e = 0; e < width; ++e) out.push_back(unit * width + e);
      return out;
    }
    const std::size_t channels = feature_shape[0], h = feature_shape[1], w = feature_shape[2];
    const std::size_t gy = unit / grid_w, gx = unit % grid_w;
    const std::size_t y1 = std::min(h, (gy + 1) * superpixel), x1 = std::min(w, (gx + 1) * superpixel);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = gy * superpixel; y < y1; ++y)
        for (std::size_t x = gx * superpixel; x < x1; ++x) out.push_back((c * h + y) * w + x);
    return out;
  }

  GroupMask mask(std::span<const UnitIndex> units) const {
    std::vector<std::uint8_t> bits(shape_numel(feature_shape), 0);
    for (auto u : units) {
      if (u >= unit_count()) throw ShapeError("unit " + std::to_string(u) + " out of range");
      for (auto f : features_of(u)) bits[f] = 1;
    }
    return {feature_shape, std::move(bits)};
  }

  GroupMask mask_all() const {
    std::vector<UnitIndex> all(unit_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = UnitIndex(i);
    return mask(all);
  }
};

}  // namespace acd
