#include "mipslice/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "mipslice/error.hpp"

namespace mipslice::nn {

namespace {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

void init_uniform(Tensor& t, double limit, Rng& rng) {
  std::uniform_real_distribution<float> dist(static_cast<float>(-limit), static_cast<float>(limit));
  for (float& v : t.values()) v = dist(rng);
}

/// col has rows (c, ki, kj) and columns (y, x); zero padding kh/2, kw/2.
void im2col(const float* x, int channels, int height, int width, int kh, int kw, float* col) {
  const int ph = kh / 2;
  const int pw = kw / 2;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    const float* src = x + c * plane;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        float* dst = col + ((static_cast<std::size_t>(c) * kh + ki) * kw + kj) * plane;
        const int dx = kj - pw;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(width, width - dx);
        for (int y = 0; y < height; ++y) {
          float* row = dst + static_cast<std::size_t>(y) * width;
          const int sy = y + ki - ph;
          if (sy < 0 || sy >= height || x_hi <= x_lo) {
            std::fill(row, row + width, 0.0f);
            continue;
          }
          std::fill(row, row + x_lo, 0.0f);
          std::memcpy(row + x_lo, src + static_cast<std::size_t>(sy) * width + x_lo + dx,
                      static_cast<std::size_t>(x_hi - x_lo) * sizeof(float));
          std::fill(row + x_hi, row + width, 0.0f);
        }
      }
    }
  }
}

void col2im_add(const float* col, int channels, int height, int width, int kh, int kw, float* x) {
  const int ph = kh / 2;
  const int pw = kw / 2;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  for (int c = 0; c < channels; ++c) {
    float* dst = x + c * plane;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const float* src = col + ((static_cast<std::size_t>(c) * kh + ki) * kw + kj) * plane;
        const int dx = kj - pw;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(width, width - dx);
        for (int y = 0; y < height; ++y) {
          const int sy = y + ki - ph;
          if (sy < 0 || sy >= height) continue;
          const float* row = src + static_cast<std::size_t>(y) * width;
          float* out = dst + static_cast<std::size_t>(sy) * width + dx;
          for (int xx = x_lo; xx < x_hi; ++xx) out[xx] += row[xx];
        }
      }
    }
  }
}

void expect_channels(const Tensor& x, int channels, const char* what) {
  if (x.c() != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " + x.shape().str());
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel_h, int kernel_w, Rng& init, std::string name)
    : in_(in_channels), out_(out_channels), kh_(kernel_h), kw_(kernel_w) {
  if (in_channels < 1 || out_channels < 1) throw ShapeError("Conv2d: channel counts must be positive");
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) throw ShapeError("Conv2d: kernel extents must be odd");
  weight_.name = name + ".weight";
  weight_.value = Tensor({out_, in_, kh_, kw_});
  weight_.grad = Tensor(weight_.value.shape());
  bias_.name = name + ".bias";
  bias_.value = Tensor({1, out_, 1, 1});
  bias_.grad = Tensor(bias_.value.shape());
  // He-uniform for the leaky-ReLU trunks.
  init_uniform(weight_.value, std::sqrt(6.0 / (in_ * kh_ * kw_)), init);
}

Tensor Conv2d::infer(const Tensor& x) const {
  expect_channels(x, in_, "Conv2d");
  const int h = x.h();
  const int w = x.w();
  const int k = in_ * kh_ * kw_;
  const int p = h * w;
  Tensor y({x.n(), out_, h, w});
  ConstMapRM weight(weight_.value.data(), out_, k);
  Eigen::Map<const Eigen::VectorXf> bias(bias_.value.data(), out_);
  const bool pointwise = kh_ == 1 && kw_ == 1;
  FloatBuffer col(pointwise ? 0 : static_cast<std::size_t>(k) * p);
  for (int n = 0; n < x.n(); ++n) {
    const float* src = x.sample(n);
    if (!pointwise) {
      im2col(src, in_, h, w, kh_, kw_, col.data());
      src = col.data();
    }
    MapRM out(y.sample(n), out_, p);
    out.noalias() = weight * ConstMapRM(src, k, p);
    out.colwise() += bias;
  }
  return y;
}

Tensor Conv2d::forward(const Tensor& x, Rng&) {
  input_ = x;
  return infer(x);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const int h = input_.h();
  const int w = input_.w();
  const int k = in_ * kh_ * kw_;
  const int p = h * w;
  if (!(grad_out.shape() == Shape{input_.n(), out_, h, w})) throw ShapeError("Conv2d::backward: gradient shape");
  Tensor grad_in(input_.shape());
  ConstMapRM weight(weight_.value.data(), out_, k);
  MapRM weight_grad(weight_.grad.data(), out_, k);
  Eigen::Map<Eigen::VectorXf> bias_grad(bias_.grad.data(), out_);
  const bool pointwise = kh_ == 1 && kw_ == 1;
  FloatBuffer col(pointwise ? 0 : static_cast<std::size_t>(k) * p);
  MatrixRM col_grad(k, p);
  for (int n = 0; n < input_.n(); ++n) {
    const float* src = input_.sample(n);
    if (!pointwise) {
      im2col(src, in_, h, w, kh_, kw_, col.data());
      src = col.data();
    }
    ConstMapRM gy(grad_out.sample(n), out_, p);
    weight_grad.noalias() += gy * ConstMapRM(src, k, p).transpose();
    bias_grad += gy.rowwise().sum();
    if (pointwise) {
      MapRM(grad_in.sample(n), k, p).noalias() = weight.transpose() * gy;
    } else {
      col_grad.noalias() = weight.transpose() * gy;
      col2im_add(col_grad.data(), in_, h, w, kh_, kw_, grad_in.sample(n));
    }
  }
  return grad_in;
}

void Conv2d::collect(std::vector<Parameter*>& params, std::vector<Tensor*>&) {
  params.push_back(&weight_);
  params.push_back(&bias_);
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(int channels, std::string name, float momentum, float eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.name = name + ".gamma";
  gamma_.value = Tensor({1, channels, 1, 1}, 1.0f);
  gamma_.grad = Tensor(gamma_.value.shape());
  beta_.name = name + ".beta";
  beta_.value = Tensor({1, channels, 1, 1});
  beta_.grad = Tensor(beta_.value.shape());
  running_mean_ = Tensor({1, channels, 1, 1}, 0.0f);
  running_var_ = Tensor({1, channels, 1, 1}, 1.0f);
}

Tensor BatchNorm::infer(const Tensor& x) const {
  expect_channels(x, channels_, "BatchNorm");
  Tensor y(x.shape());
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  for (int c = 0; c < channels_; ++c) {
    const float inv = 1.0f / std::sqrt(running_var_.data()[c] + eps_);
    const float scale = gamma_.value.data()[c] * inv;
    const float shift = beta_.value.data()[c] - running_mean_.data()[c] * scale;
    for (int n = 0; n < x.n(); ++n) {
      const float* src = x.data() + x.offset(n, c, 0, 0);
      float* dst = y.data() + y.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
    }
  }
  return y;
}

Tensor BatchNorm::forward(const Tensor& x, Rng&) {
  expect_channels(x, channels_, "BatchNorm");
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  const double count = static_cast<double>(plane) * x.n();
  normalized_ = Tensor(x.shape());
  inv_std_.assign(channels_, 0.0f);
  Tensor y(x.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum = 0.0;
    double sq = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const float* src = x.data() + x.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        sum += src[i];
        sq += static_cast<double>(src[i]) * src[i];
      }
    }
    const double mean = sum / count;
    const double var = std::max(0.0, sq / count - mean * mean);
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = static_cast<float>(inv);
    const float g = gamma_.value.data()[c];
    const float b = beta_.value.data()[c];
    for (int n = 0; n < x.n(); ++n) {
      const float* src = x.data() + x.offset(n, c, 0, 0);
      float* xhat = normalized_.data() + normalized_.offset(n, c, 0, 0);
      float* dst = y.data() + y.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[i] = static_cast<float>((src[i] - mean) * inv);
        dst[i] = g * xhat[i] + b;
      }
    }
    const double unbiased = count > 1 ? var * count / (count - 1) : var;
    running_mean_.data()[c] = momentum_ * running_mean_.data()[c] + (1.0f - momentum_) * static_cast<float>(mean);
    running_var_.data()[c] = momentum_ * running_var_.data()[c] + (1.0f - momentum_) * static_cast<float>(unbiased);
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  const Shape& s = normalized_.shape();
  if (!(grad_out.shape() == s)) throw ShapeError("BatchNorm::backward: gradient shape");
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const double count = static_cast<double>(plane) * s.n;
  Tensor grad_in(s);
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* dy = grad_out.data() + grad_out.offset(n, c, 0, 0);
      const float* xhat = normalized_.data() + normalized_.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += static_cast<double>(dy[i]) * xhat[i];
      }
    }
    gamma_.grad.data()[c] += static_cast<float>(sum_dy_xhat);
    beta_.grad.data()[c] += static_cast<float>(sum_dy);
    const double g = gamma_.value.data()[c];
    const double k = g * inv_std_[c] / count;
    for (int n = 0; n < s.n; ++n) {
      const float* dy = grad_out.data() + grad_out.offset(n, c, 0, 0);
      const float* xhat = normalized_.data() + normalized_.offset(n, c, 0, 0);
      float* dx = grad_in.data() + grad_in.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        dx[i] = static_cast<float>(k * (count * dy[i] - sum_dy - xhat[i] * sum_dy_xhat));
      }
    }
  }
  return grad_in;
}

void BatchNorm::collect(std::vector<Parameter*>& params, std::vector<Tensor*>& buffers) {
  params.push_back(&gamma_);
  params.push_back(&beta_);
  buffers.push_back(&running_mean_);
  buffers.push_back(&running_var_);
}

// ---------------------------------------------------------------- activations

Tensor LeakyRelu::infer(const Tensor& x) const {
  Tensor y(x.shape());
  const float* src = x.data();
  float* dst = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] > 0.0f ? src[i] : alpha_ * src[i];
  return y;
}

Tensor LeakyRelu::forward(const Tensor& x, Rng&) {
  input_ = x;
  return infer(x);
}

Tensor LeakyRelu::backward(const Tensor& grad_out) {
  Tensor g(grad_out.shape());
  const float* src = input_.data();
  const float* dy = grad_out.data();
  float* dst = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] = src[i] > 0.0f ? dy[i] : alpha_ * dy[i];
  return g;
}

Tensor Sigmoid::infer(const Tensor& x) const {
  Tensor y(x.shape());
  const float* src = x.data();
  float* dst = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float v = src[i];
    if (v >= 0.0f) {
      dst[i] = 1.0f / (1.0f + std::exp(-v));
    } else {
      const float e = std::exp(v);
      dst[i] = e / (1.0f + e);
    }
  }
  return y;
}

Tensor Sigmoid::forward(const Tensor& x, Rng&) {
  output_ = infer(x);
  return output_;
}

Tensor Sigmoid::backward(const Tensor& grad_out) {
  Tensor g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const float y = output_.data()[i];
    g.data()[i] = grad_out.data()[i] * y * (1.0f - y);
  }
  return g;
}

// ---------------------------------------------------------------- pooling

Tensor MaxPool::pool(const Tensor& x, std::vector<std::uint32_t>* argmax) const {
  const int oh = x.h() / ph_;
  const int ow = x.w() / pw_;
  if (oh < 1 || ow < 1) throw ShapeError("MaxPool: input " + x.shape().str() + " smaller than the window");
  Tensor y({x.n(), x.c(), oh, ow});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t out = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const std::size_t base = x.offset(n, c, 0, 0);
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j, ++out) {
          float best = -std::numeric_limits<float>::infinity();
          std::uint32_t best_idx = 0;
          for (int di = 0; di < ph_; ++di) {
            const std::size_t row = base + static_cast<std::size_t>(i * ph_ + di) * x.w() + j * pw_;
            for (int dj = 0; dj < pw_; ++dj) {
              const float v = x.data()[row + dj];
              if (v > best) {
                best = v;
                best_idx = static_cast<std::uint32_t>(row + dj);
              }
            }
          }
          y.data()[out] = best;
          if (argmax) (*argmax)[out] = best_idx;
        }
      }
    }
  }
  return y;
}

Tensor MaxPool::infer(const Tensor& x) const { return pool(x, nullptr); }

Tensor MaxPool::forward(const Tensor& x, Rng&) {
  input_shape_ = x.shape();
  return pool(x, &argmax_);
}

Tensor MaxPool::backward(const Tensor& grad_out) {
  Tensor g(input_shape_);
  for (std::size_t i = 0; i < grad_out.size(); ++i) g.data()[argmax_[i]] += grad_out.data()[i];
  return g;
}

Tensor RowMax::reduce(const Tensor& x, std::vector<std::uint32_t>* argmax) const {
  Tensor y({x.n(), x.c(), x.h(), 1});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t out = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int i = 0; i < x.h(); ++i, ++out) {
        const std::size_t row = x.offset(n, c, i, 0);
        const float* src = x.data() + row;
        const auto best = std::max_element(src, src + x.w());
        y.data()[out] = *best;
        if (argmax) (*argmax)[out] = static_cast<std::uint32_t>(row + (best - src));
      }
    }
  }
  return y;
}

Tensor RowMax::infer(const Tensor& x) const { return reduce(x, nullptr); }

Tensor RowMax::forward(const Tensor& x, Rng&) {
  input_shape_ = x.shape();
  return reduce(x, &argmax_);
}

Tensor RowMax::backward(const Tensor& grad_out) {
  Tensor g(input_shape_);
  for (std::size_t i = 0; i < grad_out.size(); ++i) g.data()[argmax_[i]] += grad_out.data()[i];
  return g;
}

Tensor Upsample::infer(const Tensor& x) const {
  Tensor y({x.n(), x.c(), x.h() * fh_, x.w() * fw_});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int i = 0; i < y.h(); ++i) {
        const float* src = x.data() + x.offset(n, c, i / fh_, 0);
        float* dst = y.data() + y.offset(n, c, i, 0);
        for (int j = 0; j < y.w(); ++j) dst[j] = src[j / fw_];
      }
    }
  }
  return y;
}

Tensor Upsample::forward(const Tensor& x, Rng&) { return infer(x); }

Tensor Upsample::backward(const Tensor& grad_out) {
  Tensor g({grad_out.n(), grad_out.c(), grad_out.h() / fh_, grad_out.w() / fw_});
  for (int n = 0; n < grad_out.n(); ++n) {
    for (int c = 0; c < grad_out.c(); ++c) {
      for (int i = 0; i < grad_out.h(); ++i) {
        const float* src = grad_out.data() + grad_out.offset(n, c, i, 0);
        float* dst = g.data() + g.offset(n, c, i / fh_, 0);
        for (int j = 0; j < grad_out.w(); ++j) dst[j / fw_] += src[j];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------- dropout

Tensor Dropout::forward(const Tensor& x, Rng& rng) {
  mask_ = Tensor(x.shape(), 1.0f);
  if (p_ > 0.0f) {
    const float keep = 1.0f - p_;
    std::bernoulli_distribution draw(keep);
    if (channelwise_) {
      const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
      for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
          const float m = draw(rng) ? 1.0f / keep : 0.0f;
          float* dst = mask_.data() + mask_.offset(n, c, 0, 0);
          std::fill(dst, dst + plane, m);
        }
      }
    } else {
      for (float& m : mask_.values()) m = draw(rng) ? 1.0f / keep : 0.0f;
    }
  }
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = x.data()[i] * mask_.data()[i];
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  Tensor g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = grad_out.data()[i] * mask_.data()[i];
  return g;
}

// ---------------------------------------------------------------- dense

Dense::Dense(int in_features, int out_features, Rng& init, std::string name) : in_(in_features), out_(out_features) {
  weight_.name = name + ".weight";
  weight_.value = Tensor({out_, in_, 1, 1});
  weight_.grad = Tensor(weight_.value.shape());
  bias_.name = name + ".bias";
  bias_.value = Tensor({1, out_, 1, 1});
  bias_.grad = Tensor(bias_.value.shape());
  init_uniform(weight_.value, std::sqrt(6.0 / (in_ + out_)), init);
}

Tensor Dense::infer(const Tensor& x) const {
  if (static_cast<int>(x.sample_size()) != in_) {
    throw ShapeError("Dense: expected " + std::to_string(in_) + " features, got " + x.shape().str());
  }
  Tensor y({x.n(), out_, 1, 1});
  MapRM out(y.data(), x.n(), out_);
  out.noalias() = ConstMapRM(x.data(), x.n(), in_) * ConstMapRM(weight_.value.data(), out_, in_).transpose();
  out.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.data(), out_);
  return y;
}

Tensor Dense::forward(const Tensor& x, Rng&) {
  input_ = x;
  return infer(x);
}

Tensor Dense::backward(const Tensor& grad_out) {
  const int n = input_.n();
  ConstMapRM gy(grad_out.data(), n, out_);
  ConstMapRM x(input_.data(), n, in_);
  MapRM(weight_.grad.data(), out_, in_).noalias() += gy.transpose() * x;
  Eigen::Map<Eigen::RowVectorXf>(bias_.grad.data(), out_) += gy.colwise().sum();
  Tensor g(input_.shape());
  MapRM(g.data(), n, in_).noalias() = gy * ConstMapRM(weight_.value.data(), out_, in_);
  return g;
}

void Dense::collect(std::vector<Parameter*>& params, std::vector<Tensor*>&) {
  params.push_back(&weight_);
  params.push_back(&bias_);
}

// ---------------------------------------------------------------- sequential

Tensor Sequential::infer(const Tensor& x) const {
  Tensor y = x;
  for (const auto& layer : layers_) y = layer->infer(y);
  return y;
}

Tensor Sequential::forward(const Tensor& x, Rng& rng) {
  Tensor y = x;
  for (auto& layer : layers_) y = layer->forward(y, rng);
  return y;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect(std::vector<Parameter*>& params, std::vector<Tensor*>& buffers) {
  for (auto& layer : layers_) layer->collect(params, buffers);
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<Parameter*> params, Options options) : params_(std::move(params)), options_(options) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->grad.fill(0.0f);
}

void Adam::step() {
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const auto step_size = static_cast<float>(options_.learning_rate * std::sqrt(correction2) / correction1);
  const auto eps = static_cast<float>(options_.epsilon * std::sqrt(correction2));
  const auto fb1 = static_cast<float>(b1);
  const auto fb2 = static_cast<float>(b2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    float* w = params_[i]->value.data();
    const float* g = params_[i]->grad.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (std::size_t k = 0; k < params_[i]->value.size(); ++k) {
      m[k] = fb1 * m[k] + (1.0f - fb1) * g[k];
      v[k] = fb2 * v[k] + (1.0f - fb2) * g[k] * g[k];
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) + eps);
    }
  }
}

}  // namespace mipslice::nn
