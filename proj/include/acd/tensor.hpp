#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "acd/error.hpp"

namespace acd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major float32 array.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  const std::vector<float>& vector() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Element of a rank-3 channels x height x width tensor.
  float& at(std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  float at(std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  bool all_zero() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return v == 0.0f; });
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_extents() const {
    for (auto e : shape_)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<float> data_;
};

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

inline std::size_t argmax(const Tensor& t) {
  if (t.empty()) throw ShapeError("argmax of empty tensor");
  return static_cast<std::size_t>(
      std::distance(t.values().begin(), std::max_element(t.values().begin(), t.values().end())));
}

}  // namespace acd
