#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mipslice/nn/tensor.hpp"
#include "mipslice/random.hpp"

namespace mipslice::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// A differentiable operation.
///
/// `infer` is the evaluation-mode pass: const, no caching, safe to call from
/// several threads on one instance. `forward` is the training-mode pass; it
/// caches what `backward` needs, so forward/backward pairs must not interleave
/// on one instance. `backward` accumulates parameter gradients and returns the
/// gradient with respect to the forward input.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor infer(const Tensor& x) const = 0;
  virtual Tensor forward(const Tensor& x, Rng& rng) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  /// Trainable parameters and non-trainable state (e.g. running statistics).
  virtual void collect(std::vector<Parameter*>& params, std::vector<Tensor*>& buffers) {}
};

/// Stride-1 convolution with "same" zero padding; odd kernel extents only.
class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel_h, int kernel_w, Rng& init, std::string name);

  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& params, std::vector<Tensor*>& buffers) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  int kh_ = 0;
  int kw_ = 0;
  Parameter weight_;  // (out, in, kh, kw)
  Parameter bias_;    // (1, out, 1, 1)
  Tensor input_;
};

class BatchNorm : public Layer {
 public:
  BatchNorm(int channels, std::string name, float momentum = 0.99f, float eps = 1e-3f);

  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& params, std::vector<Tensor*>& buffers) override;

 private:
  int channels_ = 0;
  float momentum_;
  float eps_;
  Parameter gamma_;
  Parameter beta_;
  Tensor running_mean_;
  Tensor running_var_;
  Tensor normalized_;
  std::vector<float> inv_std_;
};

/// alpha == 0 gives a plain ReLU.
class LeakyRelu : public Layer {
 public:
  explicit LeakyRelu(float alpha) : alpha_(alpha) {}

  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  float alpha_;
  Tensor input_;
};

class Sigmoid : public Layer {
 public:
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

/// Non-overlapping max-pool; trailing rows/columns that do not fill a window
/// are dropped.
class MaxPool : public Layer {
 public:
  MaxPool(int pool_h, int pool_w) : ph_(pool_h), pw_(pool_w) {}

  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor pool(const Tensor& x, std::vector<std::uint32_t>* argmax) const;
  int ph_;
  int pw_;
  Shape input_shape_;
  std::vector<std::uint32_t> argmax_;
};

/// Global horizontal max-pooling: (N, C, H, W) -> (N, C, H, 1).
class RowMax : public Layer {
 public:
  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor reduce(const Tensor& x, std::vector<std::uint32_t>* argmax) const;
  Shape input_shape_;
  std::vector<std::uint32_t> argmax_;
};

/// Nearest-neighbour upsampling by integer factors.
class Upsample : public Layer {
 public:
  Upsample(int factor_h, int factor_w) : fh_(factor_h), fw_(factor_w) {}

  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int fh_;
  int fw_;
};

/// Inverted dropout. Channel-wise ("spatial") mode zeroes whole feature maps.
class Dropout : public Layer {
 public:
  Dropout(float p, bool channelwise) : p_(p), channelwise_(channelwise) {}

  Tensor infer(const Tensor& x) const override { return x; }
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  float p_;
  bool channelwise_;
  Tensor mask_;
};

/// Fully connected layer on the flattened sample: (N, C, H, W) -> (N, out, 1, 1).
class Dense : public Layer {
 public:
  Dense(int in_features, int out_features, Rng& init, std::string name);

  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& params, std::vector<Tensor*>& buffers) override;

 private:
  int in_ = 0;
  int out_ = 0;
  Parameter weight_;  // (out, in, 1, 1)
  Parameter bias_;
  Tensor input_;
};

class Sequential : public Layer {
 public:
  template <class L, class... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor infer(const Tensor& x) const override;
  Tensor forward(const Tensor& x, Rng& rng) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(std::vector<Parameter*>& params, std::vector<Tensor*>& buffers) override;

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Adam with bias correction.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
  };

  Adam(std::vector<Parameter*> params, Options options);

  void step();
  void zero_grad();
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  Options options_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::int64_t t_ = 0;
};

}  // namespace mipslice::nn
