#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace mipslice::nn {

/// 64-byte aligned storage. Vectorised reductions peel differently depending on
/// the start address, so a fixed alignment keeps results bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

/// NCHW extents. 1D feature maps use w == 1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t count() const { return static_cast<std::size_t>(n) * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float* data() { return values_.data(); }
  const float* data() const { return values_.data(); }
  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  float& at(int n, int c, int h, int w) { return values_[offset(n, c, h, w)]; }
  float at(int n, int c, int h, int w) const { return values_[offset(n, c, h, w)]; }

  float* sample(int n) { return values_.data() + offset(n, 0, 0, 0); }
  const float* sample(int n) const { return values_.data() + offset(n, 0, 0, 0); }
  std::size_t sample_size() const { return static_cast<std::size_t>(shape_.c) * shape_.h * shape_.w; }

  void fill(float v);
  Tensor& operator+=(const Tensor& other);

 private:
  Shape shape_;
  FloatBuffer values_;
};

/// Channel-wise concatenation [a, b]; batch and spatial extents must agree.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Inverse of concat_channels for gradients: first `channels_a` channels, rest.
std::pair<Tensor, Tensor> split_channels(const Tensor& t, int channels_a);

/// Copies sample `index` of every tensor into a batch of one.
Tensor take_sample(const Tensor& t, int index);

}  // namespace mipslice::nn
