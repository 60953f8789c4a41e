#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "mipslice/models.hpp"
#include "mipslice/nn/layers.hpp"

using namespace mipslice;
using namespace mipslice::nn;

namespace {

Tensor random_tensor(Shape s, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(s);
  for (float& v : t.values()) v = static_cast<float>(uniform(rng, lo, hi));
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a.values()[i]) * b.values()[i];
  return acc;
}

bool close(double analytic, double numeric) {
  return std::abs(analytic - numeric) <= 1e-2 * std::max(std::abs(analytic), std::abs(numeric)) + 2e-3;
}

// Central-difference check of the input gradient and every parameter gradient
// of `layer` for the objective sum(forward(x) * g).
void check_gradients(Layer& layer, Tensor x, std::uint64_t seed, float eps = 1e-2f) {
  Rng rng = make_rng(seed, {1});
  auto objective = [&](const Tensor& in) {
    Rng r = make_rng(seed, {2});
    return layer.forward(in, r);
  };
  const Tensor y = objective(x);
  const Tensor g = random_tensor(y.shape(), rng);

  std::vector<Parameter*> params;
  std::vector<Tensor*> buffers;
  layer.collect(params, buffers);
  for (auto* p : params) p->grad.fill(0.0f);
  objective(x);
  const Tensor gx = layer.backward(g);
  ASSERT_EQ(gx.shape(), x.shape());
  std::vector<Tensor> param_grads;
  for (auto* p : params) param_grads.push_back(p->grad);

  const std::size_t step_x = std::max<std::size_t>(1, x.size() / 40);
  for (std::size_t i = 0; i < x.size(); i += step_x) {
    const float orig = x.values()[i];
    x.values()[i] = orig + eps;
    const double up = dot(objective(x), g);
    x.values()[i] = orig - eps;
    const double down = dot(objective(x), g);
    x.values()[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    EXPECT_PRED2(close, gx.values()[i], numeric) << "input index " << i;
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params[p]->value;
    const std::size_t step = std::max<std::size_t>(1, w.size() / 25);
    for (std::size_t i = 0; i < w.size(); i += step) {
      const float orig = w.values()[i];
      w.values()[i] = orig + eps;
      const double up = dot(objective(x), g);
      w.values()[i] = orig - eps;
      const double down = dot(objective(x), g);
      w.values()[i] = orig;
      EXPECT_PRED2(close, param_grads[p].values()[i], (up - down) / (2.0 * eps))
          << params[p]->name << " index " << i;
    }
  }
}

// Inputs kept away from zero so activation kinks and pooling ties are not crossed.
Tensor kink_free(Shape s, Rng& rng) {
  Tensor t(s);
  for (float& v : t.values()) {
    const double mag = uniform(rng, 0.1, 1.0);
    v = static_cast<float>(bernoulli(rng, 0.5) ? mag : -mag);
  }
  return t;
}

}  // namespace

TEST(Nn, ConvParameterCount) {
  Rng rng = make_rng(0);
  Conv2d conv(1, 8, 3, 3, rng, "c");
  EXPECT_EQ(count_parameters(conv), 80);
}

TEST(Nn, ConvMatchesDirectLoop) {
  Rng rng = make_rng(1);
  Conv2d conv(2, 3, 3, 1, rng, "c");
  for (float& v : conv.bias().value.values()) v = static_cast<float>(uniform(rng, -1, 1));
  const Tensor x = random_tensor({2, 2, 5, 4}, rng);
  const Tensor y = conv.infer(x);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 5, 4}));
  const Tensor& w = conv.weight().value;
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 3; ++o)
      for (int h = 0; h < 5; ++h)
        for (int c = 0; c < 4; ++c) {
          double acc = conv.bias().value.values()[o];
          for (int i = 0; i < 2; ++i)
            for (int k = 0; k < 3; ++k) {
              const int hh = h + k - 1;
              if (hh >= 0 && hh < 5) acc += w.at(o, i, k, 0) * x.at(n, i, hh, c);
            }
          ASSERT_NEAR(y.at(n, o, h, c), acc, 1e-5);
        }
}

TEST(Nn, ConvGradients) {
  Rng rng = make_rng(2);
  Conv2d conv(2, 3, 3, 3, rng, "c");
  check_gradients(conv, random_tensor({2, 2, 6, 5}, rng), 2);
}

TEST(Nn, BatchNormGradients) {
  Rng rng = make_rng(3);
  BatchNorm bn(3, "bn");
  check_gradients(bn, random_tensor({3, 3, 4, 2}, rng), 3, 5e-3f);
}

TEST(Nn, LeakyReluGradients) {
  Rng rng = make_rng(4);
  LeakyRelu act(0.05f);
  check_gradients(act, kink_free({2, 2, 3, 3}, rng), 4);
}

TEST(Nn, SigmoidGradients) {
  Rng rng = make_rng(5);
  Sigmoid s;
  check_gradients(s, random_tensor({1, 2, 4, 4}, rng, -3, 3), 5);
}

TEST(Nn, MaxPoolGradients) {
  Rng rng = make_rng(6);
  MaxPool pool(2, 2);
  check_gradients(pool, random_tensor({2, 2, 4, 6}, rng), 6, 1e-3f);
}

TEST(Nn, RowMaxGradientsAndShape) {
  Rng rng = make_rng(7);
  RowMax rm;
  const Tensor x = random_tensor({2, 3, 5, 7}, rng);
  EXPECT_EQ(rm.infer(x).shape(), (Shape{2, 3, 5, 1}));
  check_gradients(rm, x, 7, 1e-3f);
}

TEST(Nn, UpsampleGradients) {
  Rng rng = make_rng(8);
  Upsample up(2, 3);
  const Tensor x = random_tensor({1, 2, 3, 2}, rng);
  const Tensor y = up.infer(x);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 6, 6}));
  EXPECT_EQ(y.at(0, 1, 5, 5), x.at(0, 1, 2, 1));
  check_gradients(up, x, 8);
}

TEST(Nn, DropoutGradientsAndScaling) {
  Rng rng = make_rng(9);
  Dropout drop(0.25f, true);
  check_gradients(drop, random_tensor({2, 4, 3, 3}, rng), 9);
  Dropout elementwise(0.5f, false);
  check_gradients(elementwise, random_tensor({2, 2, 3, 3}, rng), 10);

  const Tensor ones({4, 16, 2, 2}, 1.0f);
  Rng r = make_rng(11);
  const Tensor y = drop.forward(ones, r);
  for (int n = 0; n < 4; ++n)
    for (int c = 0; c < 16; ++c) {
      const float v = y.at(n, c, 0, 0);
      EXPECT_TRUE(v == 0.0f || std::abs(v - 1.0f / 0.75f) < 1e-6f);
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) EXPECT_EQ(y.at(n, c, h, w), v);  // whole map kept or dropped
    }
  EXPECT_EQ(drop.infer(ones).values()[0], 1.0f);
}

TEST(Nn, DenseGradients) {
  Rng rng = make_rng(12);
  Dense dense(12, 3, rng, "d");
  check_gradients(dense, random_tensor({2, 3, 2, 2}, rng), 12);
}

TEST(Nn, SequentialGradients) {
  Rng rng = make_rng(13);
  Sequential seq;
  seq.add<Conv2d>(1, 4, 3, 3, rng, "a");
  seq.add<Sigmoid>();
  seq.add<Conv2d>(4, 2, 1, 1, rng, "b");
  check_gradients(seq, random_tensor({2, 1, 4, 4}, rng), 13);
  EXPECT_EQ(count_parameters(seq), 1 * 4 * 9 + 4 + 4 * 2 + 2);
}

TEST(Nn, AdamFirstStepHasLearningRateMagnitude) {
  Parameter p{"p", Tensor({1, 1, 1, 3}, std::vector<float>{1.0f, -2.0f, 0.5f}), Tensor({1, 1, 1, 3})};
  p.grad = Tensor({1, 1, 1, 3}, std::vector<float>{4.0f, -0.1f, 0.0f});
  Adam adam({&p}, {.learning_rate = 0.01});
  adam.step();
  EXPECT_NEAR(p.value.values()[0], 0.99, 1e-5);
  EXPECT_NEAR(p.value.values()[1], -1.99, 1e-5);
  EXPECT_EQ(p.value.values()[2], 0.5f);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Nn, AdamMinimisesQuadratic) {
  Parameter p{"p", Tensor({1, 1, 1, 1}, 3.0f), Tensor({1, 1, 1, 1})};
  Adam adam({&p}, {.learning_rate = 0.05});
  for (int i = 0; i < 500; ++i) {
    adam.zero_grad();
    p.grad.values()[0] = 2.0f * p.value.values()[0];
    adam.step();
  }
  EXPECT_NEAR(p.value.values()[0], 0.0, 0.05);
}

TEST(Nn, ConcatSplitRoundTrip) {
  Rng rng = make_rng(14);
  const Tensor a = random_tensor({2, 3, 2, 2}, rng);
  const Tensor b = random_tensor({2, 1, 2, 2}, rng);
  const Tensor ab = concat_channels(a, b);
  EXPECT_EQ(ab.shape(), (Shape{2, 4, 2, 2}));
  EXPECT_EQ(ab.at(1, 3, 1, 0), b.at(1, 0, 1, 0));
  const auto [a2, b2] = split_channels(ab, 3);
  EXPECT_EQ(a2.values().size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a2.values()[i], a.values()[i]);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b2.values()[i], b.values()[i]);
  const Tensor s = take_sample(ab, 1);
  EXPECT_EQ(s.shape(), (Shape{1, 4, 2, 2}));
  EXPECT_EQ(s.at(0, 2, 1, 1), ab.at(1, 2, 1, 1));
}
