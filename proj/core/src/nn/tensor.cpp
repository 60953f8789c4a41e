#include "mipslice/nn/tensor.hpp"

#include <algorithm>
#include <cstring>

#include "mipslice/error.hpp"

namespace mipslice::nn {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) throw ShapeError("tensor: negative extent");
  values_.assign(shape.count(), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(shape), values_(values.begin(), values.end()) {
  if (values_.size() != shape_.count()) throw ShapeError("tensor: value count does not match " + shape_.str());
}

void Tensor::fill(float v) { std::fill(values_.begin(), values_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!(shape_ == other.shape_)) throw ShapeError("tensor +=: " + shape_.str() + " vs " + other.shape_.str());
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  Tensor out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t na = a.sample_size();
  const std::size_t nb = b.sample_size();
  for (int n = 0; n < sa.n; ++n) {
    std::memcpy(out.sample(n), a.sample(n), na * sizeof(float));
    std::memcpy(out.sample(n) + na, b.sample(n), nb * sizeof(float));
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, int channels_a) {
  const Shape& s = t.shape();
  if (channels_a < 0 || channels_a > s.c) throw ShapeError("split_channels: bad split");
  Tensor a({s.n, channels_a, s.h, s.w});
  Tensor b({s.n, s.c - channels_a, s.h, s.w});
  const std::size_t na = a.sample_size();
  const std::size_t nb = b.sample_size();
  for (int n = 0; n < s.n; ++n) {
    std::memcpy(a.sample(n), t.sample(n), na * sizeof(float));
    std::memcpy(b.sample(n), t.sample(n) + na, nb * sizeof(float));
  }
  return {std::move(a), std::move(b)};
}

Tensor take_sample(const Tensor& t, int index) {
  if (index < 0 || index >= t.n()) throw ShapeError("take_sample: index out of range");
  Tensor out({1, t.c(), t.h(), t.w()});
  std::memcpy(out.data(), t.sample(index), t.sample_size() * sizeof(float));
  return out;
}

}  // namespace mipslice::nn
