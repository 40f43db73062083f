#ifndef ADVPROBE_TENSOR_HPP
#define ADVPROBE_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advprobe/error.hpp"

namespace advprobe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major float tensor. Images use the (H, W, C) layout.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor: shape " + shape_string(shape_) + " holds " +
                           std::to_string(shape_size(shape_)) + " values but data has " +
                           std::to_string(data_.size()));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// (h, w, c) element of a rank-3 tensor.
  float& at(std::size_t h, std::size_t w, std::size_t c) noexcept {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }
  float at(std::size_t h, std::size_t w, std::size_t c) const noexcept {
    return data_[(h * shape_[1] + w) * shape_[2] + c];
  }

  /// Same data under a different shape of equal size.
  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  bool all_finite() const noexcept {
    for (float v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_extents() const {
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (shape_[i] == 0) {
        throw DimensionError("tensor: axis " + std::to_string(i) + " of shape " +
                             shape_string(shape_) + " has zero extent");
      }
    }
  }

  Shape shape_;
  std::vector<float> data_;
};

/// Pixel image in (H, W, C) layout with values in [0, 1].
using ImageTensor = Tensor;

/// Class probabilities: non-negative, summing to one.
using ProbVector = std::vector<double>;

using ClassIndex = std::size_t;

/// Largest absolute coordinate difference between two equally shaped tensors.
inline double linf_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("linf_distance: shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    best = std::max(best, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return best;
}

inline std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace advprobe

#endif  // ADVPROBE_TENSOR_HPP
