#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "rwinpaint/errors.hpp"

namespace rwinpaint {

// NCHW extent. Filter banks reuse it as (out, in, kh, kw).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

// Heap buffers start on a fixed 64-byte boundary so vectorised reductions
// peel identically on every run (otherwise sums depend on malloc's whims).
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::initializer_list<T> values) : Tensor(shape, Buffer<T>(values)) {}
  Tensor(Shape shape, const std::vector<T>& values) : Tensor(shape, Buffer<T>(values.begin(), values.end())) {}
  Tensor(Shape shape, Buffer<T> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  Buffer<T>& storage() { return data_; }
  const Buffer<T>& storage() const { return data_; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Pointer to the start of sample n.
  T* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.plane(); }
  const T* sample(int n) const {
    return data_.data() + static_cast<std::size_t>(n) * shape_.c * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  Buffer<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeMismatchError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
  }
}

// Extract sample n as a 1-batch tensor.
template <typename T>
Tensor<T> slice_sample(const Tensor<T>& t, int n) {
  Shape s{1, t.c(), t.h(), t.w()};
  Tensor<T> out(s);
  std::copy_n(t.sample(n), s.size(), out.data());
  return out;
}

// Stack 1-batch tensors of equal shape along N.
template <typename T>
Tensor<T> stack_samples(std::span<const Tensor<T>> items) {
  if (items.empty()) return {};
  Shape s = items.front().shape();
  Shape out_shape{0, s.c, s.h, s.w};
  for (const auto& t : items) {
    if (t.c() != s.c || t.h() != s.h || t.w() != s.w) {
      throw DimensionError("stack_samples: mismatched sample " + t.shape().str());
    }
    out_shape.n += t.n();
  }
  Tensor<T> out(out_shape);
  std::size_t off = 0;
  for (const auto& t : items) {
    std::copy(t.data(), t.data() + t.size(), out.data() + off);
    off += t.size();
  }
  return out;
}

}  // namespace rwinpaint
