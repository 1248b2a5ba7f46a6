#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "renetseg/error.hpp"

namespace renetseg {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major array with shape metadata. Images and feature maps use
/// height x width x channels layout.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  /// Throws Errc::invalid_shape for an empty shape or a zero dimension.
  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)) {
    if (shape_.empty()) fail(Errc::invalid_shape, "tensor shape is empty");
    for (std::size_t d : shape_) {
      if (d == 0) {
        fail(Errc::invalid_shape,
             "tensor shape has a zero dimension: " + shape_string(shape_));
      }
    }
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : BasicTensor(std::move(shape)) {
    if (data.size() != data_.size()) {
      fail(Errc::shape_mismatch,
           "tensor data length " + std::to_string(data.size()) +
               " does not match shape " + shape_string(shape_));
    }
    data_ = std::move(data);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-3 (h, w, c) accessors.
  T& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  const T& at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  /// Same data, new shape with equal element count.
  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// tensor_create: constant-filled tensor of the given shape.
inline Tensor tensor_create(const Shape& shape, float fill) {
  return Tensor(shape, fill);
}

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  if (t.empty()) return {};
  std::vector<To> out(t.data().begin(), t.data().end());
  return BasicTensor<To>(t.shape(), std::move(out));
}

template <typename T>
void require_shape(const BasicTensor<T>& t, const Shape& expected,
                   const char* what) {
  if (t.shape() != expected) {
    fail(Errc::shape_mismatch, std::string(what) + ": expected shape " +
                                   shape_string(expected) + ", got " +
                                   shape_string(t.shape()));
  }
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    fail(Errc::shape_mismatch, std::string(what) + ": expected rank " +
                                   std::to_string(rank) + ", got shape " +
                                   shape_string(t.shape()));
  }
}

}  // namespace renetseg
