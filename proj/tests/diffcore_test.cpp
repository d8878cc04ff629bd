#include <cmath>
#include <cstdint>
#include <vector>

#include <gtest/gtest.h>

#include "sceneadapt/diffcore/gradcheck.hpp"
#include "sceneadapt/diffcore/ops.hpp"
#include "support/oracles.hpp"

namespace sceneadapt {
namespace {

using testing::naive_conv2d;
using testing::random_tensor;
using testing::random_tensor_off_zero;

constexpr double kGradTol = 1e-4;

// Random linear functional so every element carries a distinct, nonzero weight.
Var<double> weighted_sum(Tape<double>& t, const Var<double>& y, std::uint64_t seed) {
  return sum(mul(y, t.constant(random_tensor<double>(y.shape(), seed, 0.5, 1.5))));
}

TEST(Conv2d, IdentityKernelIsNoOp) {
  Tape<float> t;
  const auto x = random_tensor<float>({2, 1, 4, 5}, 1);
  auto y = conv2d(t.constant(x), t.constant(Tensor<float>({1, 1, 1, 1}, 1.0f)),
                  t.constant(Tensor<float>({1}, 0.0f)), 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.value()[i], x[i]);
}

TEST(Conv2d, SummationKernel) {
  Tape<float> t;
  auto y = conv2d(t.constant(Tensor<float>({1, 1, 3, 3}, 1.0f)), t.constant(Tensor<float>({1, 1, 3, 3}, 1.0f)),
                  t.constant(Tensor<float>({1}, 0.0f)), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.value()[0], 9.0f);
}

TEST(Conv2d, MatchesLoopOracle) {
  struct Case {
    Shape x, k;
    std::size_t stride, pad;
  };
  const std::vector<Case> cases = {
      {{1, 2, 5, 5}, {3, 2, 3, 3}, 1, 0}, {{2, 3, 8, 7}, {4, 3, 3, 3}, 2, 1}, {{1, 4, 6, 6}, {2, 4, 1, 1}, 1, 0},
      {{1, 1, 9, 9}, {2, 1, 4, 4}, 2, 1}, {{3, 2, 5, 6}, {1, 2, 2, 3}, 1, 2},
  };
  std::uint64_t seed = 10;
  for (const Case& c : cases) {
    const auto x = random_tensor<double>(c.x, seed++);
    const auto k = random_tensor<double>(c.k, seed++);
    const auto b = random_tensor<double>({c.k[0]}, seed++);
    Tape<double> t;
    auto y = conv2d(t.constant(x), t.constant(k), t.constant(b), c.stride, c.pad);
    const auto ref = naive_conv2d(x, k, b, c.stride, c.pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-6);
  }
}

TEST(Conv2d, ChannelMismatchIsConfigError) {
  Tape<float> t;
  EXPECT_THROW(conv2d(t.constant(Tensor<float>({1, 3, 4, 4})), t.constant(Tensor<float>({2, 2, 3, 3})),
                      t.constant(Tensor<float>({2})), 1, 1),
               ConfigError);
  EXPECT_THROW(conv2d(t.constant(Tensor<float>({1, 2, 2, 2})), t.constant(Tensor<float>({1, 2, 5, 5})),
                      t.constant(Tensor<float>({1})), 1, 0),
               ConfigError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const std::size_t stride = 1 + s % 2, pad = s % 3 == 0 ? 0 : 1;
    const Shape xs{1 + s % 2, 2 + s % 2, 5 + s, 6};
    const Shape ks{2 + s % 3, xs[1], 3, 2 + s % 2};
    const auto x = random_tensor<double>(xs, 100 + s);
    const auto k = random_tensor<double>(ks, 200 + s);
    const auto b = random_tensor<double>({ks[0]}, 300 + s);

    const double ex = finite_diff_check<double>(
        [&](Tape<double>& t, const Var<double>& xv) {
          return weighted_sum(t, conv2d(xv, t.constant(k), t.constant(b), stride, pad), s);
        },
        x);
    const double ek = finite_diff_check<double>(
        [&](Tape<double>& t, const Var<double>& kv) {
          return weighted_sum(t, conv2d(t.constant(x), kv, t.constant(b), stride, pad), s);
        },
        k);
    const double eb = finite_diff_check<double>(
        [&](Tape<double>& t, const Var<double>& bv) {
          return weighted_sum(t, conv2d(t.constant(x), t.constant(k), bv, stride, pad), s);
        },
        b);
    EXPECT_LT(ex, kGradTol) << "seed " << s;
    EXPECT_LT(ek, kGradTol) << "seed " << s;
    EXPECT_LT(eb, kGradTol) << "seed " << s;
  }
}

TEST(Elementwise, Definitions) {
  Tape<double> t;
  auto x = t.constant(Tensor<double>({3}, std::vector<double>{-1.0, 2.0, 0.0}));
  EXPECT_EQ(relu(x).value()[0], 0.0);
  EXPECT_EQ(relu(x).value()[1], 2.0);
  EXPECT_EQ(sigmoid(x).value()[2], 0.5);
  auto m2 = t.constant(Tensor<double>::scalar(-2.0));
  EXPECT_NEAR(leaky_relu(m2, 0.2).value().item(), -0.4, 1e-15);
  EXPECT_EQ(scale(x, 3.0).value()[1], 6.0);
  EXPECT_EQ(add(x, x).value()[1], 4.0);
}

TEST(Elementwise, LogOfNonPositiveIsNumericError) {
  Tape<double> t(TapeOptions{.check_numerics = true});
  auto x = t.constant(Tensor<double>({2}, std::vector<double>{1.0, 0.0}));
  EXPECT_THROW(log(x), NumericError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  using Op = std::function<Var<double>(const Var<double>&)>;
  const std::vector<std::pair<const char*, Op>> ops = {
      {"relu", [](const Var<double>& v) { return relu(v); }},
      {"leaky_relu", [](const Var<double>& v) { return leaky_relu(v, 0.2); }},
      {"sigmoid", [](const Var<double>& v) { return sigmoid(v); }},
      {"scale", [](const Var<double>& v) { return scale(v, -1.7); }},
      {"add_scalar", [](const Var<double>& v) { return add_scalar(v, 0.3); }},
      {"abs", [](const Var<double>& v) { return abs(v); }},
      {"log", [](const Var<double>& v) { return log(add_scalar(abs(v), 0.1)); }},
      {"clamp", [](const Var<double>& v) { return clamp(v, -0.5, 0.5); }},
      {"add", [](const Var<double>& v) { return add(v, scale(v, 2.0)); }},
      {"sub", [](const Var<double>& v) { return sub(sigmoid(v), v); }},
      {"mul", [](const Var<double>& v) { return mul(v, sigmoid(v)); }},
      {"mean", [](const Var<double>& v) { return scale(mean(v), 5.0); }},
      {"upsample", [](const Var<double>& v) { return upsample_nearest2x(v); }},
      {"softmax", [](const Var<double>& v) { return softmax_channels(v); }},
  };
  for (const auto& [name, op] : ops) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Shape shape{1 + s % 2, 2 + s % 3, 3 + s % 2, 2 + s};
      // Keep clamp inputs away from the clamp bounds as well as from zero.
      auto x = random_tensor_off_zero<double>(shape, 1000 + s);
      for (auto& v : x.storage())
        if (std::abs(std::abs(v) - 0.5) < 0.05) v *= 1.3;
      const double err = finite_diff_check<double>(
          [&](Tape<double>& t, const Var<double>& xv) {
            auto y = op(xv);
            return y.value().size() == 1 ? y : weighted_sum(t, y, 7 + s);
          },
          x);
      EXPECT_LT(err, kGradTol) << name << " seed " << s;
    }
  }
}

TEST(Softmax, UniformLogits) {
  Tape<double> t;
  auto p = softmax_channels(t.constant(Tensor<double>({1, 4, 2, 2}, 3.0)));
  for (const double v : p.value().data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, Stabilized) {
  Tape<float> t;
  auto p = softmax_channels(t.constant(Tensor<float>({1, 2, 1, 1}, std::vector<float>{1000.0f, 0.0f})));
  EXPECT_NEAR(p.value()[0], 1.0f, 1e-6f);
  EXPECT_NEAR(p.value()[1], 0.0f, 1e-6f);
  EXPECT_TRUE(std::isfinite(p.value()[0]));
}

TEST(Softmax, DirectEvaluation) {
  Tape<double> t;
  auto p = softmax_channels(t.constant(Tensor<double>({1, 3, 1, 1}, std::vector<double>{1, 2, 3})));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(p.value()[0], std::exp(1.0) / z, 1e-12);
  EXPECT_NEAR(p.value()[0], 0.09003, 1e-5);
  EXPECT_NEAR(p.value()[1], 0.24473, 1e-5);
  EXPECT_NEAR(p.value()[2], 0.66524, 1e-5);
}

TEST(Softmax, RowsAreDistributions) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Tape<float> t;
    auto p = softmax_channels(t.constant(random_tensor<float>({2, 5, 4, 3}, s, -20.0f, 20.0f)));
    const auto& v = p.value();
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 3; ++x) {
          float total = 0;
          for (std::size_t c = 0; c < 5; ++c) {
            EXPECT_GE(v.at(n, c, y, x), 0.0f);
            EXPECT_LE(v.at(n, c, y, x), 1.0f);
            total += v.at(n, c, y, x);
          }
          EXPECT_NEAR(total, 1.0f, 1e-5f);
        }
  }
}

TEST(Upsample, ReplicatesAndSumsBack) {
  Tape<double> t;
  auto x = t.input(Tensor<double>({1, 1, 1, 1}, 5.0), true);
  auto y = upsample_nearest2x(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (const double v : y.value().data()) EXPECT_EQ(v, 5.0);
  t.backward(sum(y));
  EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(Upsample, AveragePoolingRoundTrip) {
  const auto x = random_tensor<float>({2, 3, 4, 5}, 77);
  Tape<float> t;
  const auto back = avg_pool2x(upsample_nearest2x(t.constant(x)).value());
  ASSERT_EQ(back.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(back[i], x[i]);
}

TEST(Backward, ScaleAndSigmoid) {
  {
    Tape<double> t;
    auto x = t.input(Tensor<double>::scalar(1.5), true);
    t.backward(sum(scale(x, 3.0)));
    EXPECT_EQ(x.grad()[0], 3.0);
  }
  {
    Tape<double> t;
    auto x = t.input(Tensor<double>({4}, 0.0), true);
    t.backward(sum(sigmoid(x)));
    for (const double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.25);
  }
}

TEST(Backward, ParameterGradientsAccumulateIntoLeaf) {
  Tensor<double> w({2}, std::vector<double>{1.0, -2.0});
  for (int rep = 0; rep < 2; ++rep) {
    Tape<double> t;
    t.backward(sum(scale(t.param(w), 2.0)));
  }
  ASSERT_TRUE(w.has_grad());
  EXPECT_EQ(w.grad()[0], 4.0);
  Tensor<double> frozen({2}, 1.0);
  Tape<double> t;
  t.backward(sum(mul(t.param(w), t.param(frozen, false))));
  EXPECT_FALSE(frozen.has_grad());
}

TEST(Backward, UsageErrors) {
  Tape<double> t;
  auto x = t.input(Tensor<double>({3}, 1.0), true);
  auto loss = sum(x);
  EXPECT_THROW(t.backward(x), UsageError);  // not scalar
  t.backward(loss);
  EXPECT_THROW(t.backward(loss), UsageError);  // second pass

  Tape<double> other;
  auto y = sum(other.input(Tensor<double>({2}, 1.0), true));
  Tape<double> third;
  EXPECT_THROW(third.backward(y), UsageError);  // foreign tensor
  EXPECT_THROW(third.backward(Var<double>{}), UsageError);
}

TEST(Backward, DetachBlocksGradient) {
  Tape<double> t;
  auto x = t.input(Tensor<double>({2}, 1.0), true);
  auto y = add(scale(x, 2.0), detach(scale(x, 5.0)));
  t.backward(sum(y));
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, CompositeGraphMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto k = random_tensor<double>({3, 2, 3, 3}, 50 + s);
    const auto b = random_tensor<double>({3}, 60 + s);
    const auto x = random_tensor<double>({1, 2, 4, 4}, 70 + s);
    const double err = finite_diff_check<double>(
        [&](Tape<double>& t, const Var<double>& xv) {
          auto h = leaky_relu(conv2d(xv, t.constant(k), t.constant(b), 1, 1), 0.2);
          auto p = softmax_channels(upsample_nearest2x(h));
          return mean(log(clamp(p, 1e-7, 1.0)));
        },
        x);
    EXPECT_LT(err, kGradTol);
  }
}

TEST(Backward, Deterministic) {
  const auto k = random_tensor<float>({4, 3, 3, 3}, 5);
  const auto b = random_tensor<float>({4}, 6);
  auto run = [&] {
    Tensor<float> x = random_tensor<float>({2, 3, 8, 8}, 7);
    Tape<float> t;
    auto xv = t.input(x, true);
    t.backward(mean(sigmoid(conv2d(xv, t.constant(k), t.constant(b), 2, 1))));
    return xv.grad();
  };
  EXPECT_EQ(run(), run());
}

TEST(FiniteDiff, SumHasExactGradient) {
  const double err = finite_diff_check<double>(
      [](Tape<double>&, const Var<double>& x) { return sum(x); }, random_tensor<double>({3, 4}, 3));
  EXPECT_LT(err, 1e-10);
}

TEST(Tape, NonFiniteCheck) {
  Tape<double> t(TapeOptions{.check_numerics = true});
  auto x = t.constant(Tensor<double>::scalar(1e308));
  EXPECT_THROW(scale(x, 10.0), NumericError);
}

}  // namespace
}  // namespace sceneadapt
