#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>

#include "advmark/errors.hpp"

namespace advmark {

/// NCHW extent of a dense tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

inline std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

template <class S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense NCHW tensor over an Eigen array. Value type; copies are deep.
template <class S>
class Tensor {
 public:
  using Scalar = S;
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(shape), data_(Storage::Zero(shape.numel())) {}
  Tensor(Shape shape, S fill) : shape_(shape), data_(Storage::Constant(shape.numel(), fill)) {}
  Tensor(Shape shape, Storage data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != shape_.numel()) {
      throw DimensionError("tensor storage size does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t numel() const { return shape_.numel(); }
  bool empty() const { return data_.size() == 0; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  S& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  S operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  /// Row-major H×W view of one channel plane.
  Eigen::Map<RowMatrix<S>> plane(int n, int c) {
    return {data() + index(n, c, 0, 0), shape_.h, shape_.w};
  }
  Eigen::Map<const RowMatrix<S>> plane(int n, int c) const {
    return {data() + index(n, c, 0, 0), shape_.h, shape_.w};
  }

  /// Samples [first, first+count) as a new tensor.
  Tensor samples(int first, int count = 1) const {
    Shape s{count, shape_.c, shape_.h, shape_.w};
    const auto per = static_cast<Eigen::Index>(shape_.sample_size());
    return Tensor(s, data_.segment(first * per, count * per));
  }

  Tensor reshaped(Shape s) const {
    if (s.numel() != numel()) throw DimensionError("reshape " + shape_.str() + " -> " + s.str());
    return Tensor(s, data_);
  }

  template <class T>
  Tensor<T> cast() const {
    return Tensor<T>(shape_, data_.template cast<T>());
  }

 private:
  Shape shape_{};
  Storage data_;
};

/// Stack equally shaped single-sample tensors along N.
template <class S>
Tensor<S> stack(const std::vector<Tensor<S>>& items) {
  if (items.empty()) throw DimensionError("stack of zero tensors");
  Shape s = items.front().shape();
  int total = 0;
  for (const auto& t : items) {
    if (t.c() != s.c || t.h() != s.h || t.w() != s.w) throw DimensionError("stack shape mismatch");
    total += t.n();
  }
  Tensor<S> out(Shape{total, s.c, s.h, s.w});
  Eigen::Index off = 0;
  for (const auto& t : items) {
    out.array().segment(off, t.array().size()) = t.array();
    off += t.array().size();
  }
  return out;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw DimensionError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
}

}  // namespace advmark
