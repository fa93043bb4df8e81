#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace whc::nn {

/// Allocates on 64-byte boundaries. Vectorised reductions peel their head
/// according to the buffer address, so a fixed alignment keeps results
/// bitwise reproducible from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// batch x channels x height x width
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const { return std::size_t(n) * c * h * w; }
  std::size_t plane() const { return std::size_t(h) * w; }
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense NCHW tensor. Values are row-major within each channel plane.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  /// Copies `data`, zero-padded or truncated to the shape's size.
  Tensor(Shape shape, const std::vector<T>& data);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  AlignedVector<T>& vec() { return data_; }
  const AlignedVector<T>& vec() const { return data_; }

  T* plane(int b, int ch) { return data_.data() + (std::size_t(b) * shape_.c + ch) * shape_.plane(); }
  const T* plane(int b, int ch) const {
    return data_.data() + (std::size_t(b) * shape_.c + ch) * shape_.plane();
  }

  T& at(int b, int ch, int y, int x) { return plane(b, ch)[std::size_t(y) * shape_.w + x]; }
  T at(int b, int ch, int y, int x) const { return plane(b, ch)[std::size_t(y) * shape_.w + x]; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{0, 0, 0, 0};
  AlignedVector<T> data_;
};

template <typename T>
Tensor<T>::Tensor(Shape shape, const std::vector<T>& data) : shape_(shape), data_(data.begin(), data.end()) {
  data_.resize(shape_.size());
}

using Tensor4 = Tensor<float>;

}  // namespace whc::nn
