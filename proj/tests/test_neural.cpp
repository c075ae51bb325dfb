#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "generators.hpp"
#include "pmuev/errors.hpp"
#include "pmuev/neural/adam.hpp"
#include "pmuev/neural/grad_check.hpp"
#include "pmuev/neural/layers.hpp"
#include "pmuev/neural/loss.hpp"

using namespace pmuev;
using namespace pmuev::nn;
using TD = Tensor<double>;

namespace {

TD random_tensor(testgen::Gen& g, Shape s) {
  TD t(std::move(s));
  for (auto& v : t.values()) v = g.normal();
  return t;
}

constexpr double kTol = 1e-4;

}  // namespace

// ---- convolution

TEST(Conv, HandComputedValid) {
  Conv2D<double> c(1, 1, 2, Padding::Valid);
  c.weight().fill(0);
  c.weight()[0] = 1;  // (0,0)
  c.weight()[3] = 1;  // (1,1)
  TD x({1, 3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto& y = c.forward(x, Mode::Infer);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 1}));
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{6, 8, 12, 14}));
}

TEST(Conv, DeltaKernelSamePadding) {
  testgen::Gen g(1);
  Conv2D<double> c(2, 1, 3, Padding::Same);
  c.weight().fill(0);
  // centre tap for both input channels: weight index ((1*3+1)*2 + u)*1
  c.weight()[(4 * 2 + 0)] = 1;
  c.weight()[(4 * 2 + 1)] = 1;
  const TD x = random_tensor(g, {2, 5, 6, 2});
  const auto& y = c.forward(x, Mode::Infer);
  ASSERT_EQ(y.shape(), (Shape{2, 5, 6, 1}));
  for (std::size_t p = 0; p < 2 * 5 * 6; ++p) EXPECT_NEAR(y[p], x[2 * p] + x[2 * p + 1], 1e-14);

  Conv2D<double> one(1, 1, 3, Padding::Same);
  one.weight().fill(0);
  one.weight()[4] = 1;
  const TD z = random_tensor(g, {1, 4, 4, 1});
  const auto& w = one.forward(z, Mode::Infer);
  for (std::size_t p = 0; p < z.size(); ++p) EXPECT_EQ(w[p], z[p]);
}

TEST(Conv, TableShapesAndCounts) {
  Conv2D<float> c(2, 32, 3, Padding::Same);
  EXPECT_EQ(c.parameter_count(), 608u);
  EXPECT_EQ(c.output_shape({1, 120, 120, 2}), (Shape{1, 120, 120, 32}));
}

TEST(Conv, ValidShapeLaw) {
  testgen::for_all(30, 4, [](testgen::Gen& g, std::size_t) {
    const std::size_t k = g.index(1, 4), h = g.index(k, 12), w = g.index(k, 12);
    Conv2D<double> c(2, 3, k, Padding::Valid);
    const TD x = random_tensor(g, {1, h, w, 2});
    EXPECT_EQ(c.forward(x, Mode::Infer).shape(), (Shape{1, h - k + 1, w - k + 1, 3}));
  });
}

TEST(Conv, ShapeMismatch) {
  Conv2D<double> c(2, 3, 3, Padding::Same);
  TD x({1, 5, 5, 3});
  EXPECT_THROW(c.forward(x, Mode::Infer), ShapeError);
  Conv2D<double> v(1, 1, 5, Padding::Valid);
  TD small({1, 3, 3, 1});
  EXPECT_THROW(v.forward(small, Mode::Infer), ShapeError);
}

// ---- activations, pooling, dense

TEST(Relu, Definition) {
  ReLU<double> r;
  TD x({3}, {-1, 0, 2});
  const auto& y = r.forward(x, Mode::Train);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{0, 0, 2}));
  TD g({3}, {1, 1, 1});
  const auto& dx = r.backward(g);
  EXPECT_EQ(dx[0], 0);
  EXPECT_EQ(dx[2], 1);

  TD neg({4}, {-1, -2, -3, -4});
  r.forward(neg, Mode::Train);
  const auto& dz = r.backward(TD({4}, 1.0));
  for (auto v : dz.values()) EXPECT_EQ(v, 0.0);
}

TEST(MaxPool, Examples) {
  MaxPool2x2<double> p;
  TD x({1, 2, 2, 1}, {1, 2, 3, 4});
  EXPECT_EQ(p.forward(x, Mode::Infer)[0], 4);
  EXPECT_EQ(p.output_shape({1, 120, 120, 32}), (Shape{1, 60, 60, 32}));
  EXPECT_EQ(p.output_shape({1, 15, 15, 8}), (Shape{1, 8, 8, 8}));
}

TEST(MaxPool, TieRoutesToOneCell) {
  MaxPool2x2<double> p;
  TD x({1, 2, 2, 1}, 3.0);
  p.forward(x, Mode::Train);
  const auto& dx = p.backward(TD({1, 1, 1, 1}, 2.5));
  EXPECT_EQ(dx[0], 2.5);
  EXPECT_EQ(dx[1] + dx[2] + dx[3], 0.0);
}

TEST(MaxPool, GradientMassConserved) {
  testgen::for_all(30, 5, [](testgen::Gen& g, std::size_t) {
    MaxPool2x2<double> p;
    const TD x = random_tensor(g, {2, g.index(1, 9), g.index(1, 9), 3});
    const auto& y = p.forward(x, Mode::Train);
    const TD up = random_tensor(g, y.shape());
    const auto& dx = p.backward(up);
    const double a = std::accumulate(up.values().begin(), up.values().end(), 0.0);
    const double b = std::accumulate(dx.values().begin(), dx.values().end(), 0.0);
    EXPECT_NEAR(a, b, 1e-12);
  });
}

TEST(Spp, TableLength) {
  SpatialPyramidPool<float> s({1, 2, 4});
  EXPECT_EQ(s.output_shape({1, 15, 15, 128}), (Shape{1, 2688}));
}

TEST(Spp, HandComputedQuadrants) {
  SpatialPyramidPool<double> s({1, 2});
  TD x({1, 4, 4, 1});
  std::iota(x.values().begin(), x.values().end(), 1.0);
  const auto& y = s.forward(x, Mode::Infer);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{16, 6, 8, 14, 16}));
}

TEST(Spp, ConstantMap) {
  SpatialPyramidPool<double> s({1, 2, 4});
  TD x({1, 7, 9, 3}, -2.5);
  for (auto v : s.forward(x, Mode::Infer).values()) EXPECT_EQ(v, -2.5);
}

TEST(Spp, LengthIndependentOfSize) {
  testgen::Gen g(6);
  SpatialPyramidPool<double> s({1, 2, 4});
  for (std::size_t h = 4; h <= 40; ++h) {
    for (std::size_t w = 4; w <= 40; w += 3) {
      const TD x = random_tensor(g, {1, h, w, 3});
      ASSERT_EQ(s.forward(x, Mode::Infer).shape(), (Shape{1, 63}));
    }
  }
}

TEST(Spp, TooSmall) {
  SpatialPyramidPool<double> s({1, 2, 4});
  TD x({1, 3, 8, 1});
  EXPECT_THROW(s.forward(x, Mode::Infer), InputTooSmallError);
  EXPECT_EQ(s.min_input_size(), 4u);
}

TEST(Spp, OverlappingBinsCoverEveryCell) {
  // 5 rows at level 2: bins [0,3) and [2,5)
  SpatialPyramidPool<double> s({2});
  TD y({1, 5, 2, 1}, 0.0);
  y[2 * 2 + 0] = 9;  // row 2, col 0: inside both row bins
  const auto& out = s.forward(y, Mode::Infer);
  EXPECT_EQ(out[0], 9);
  EXPECT_EQ(out[2], 9);
  EXPECT_EQ(out[1], 0);
  EXPECT_EQ(out[3], 0);
}

TEST(Dense, TableCount) {
  Dense<float> d(2688, 5);
  EXPECT_EQ(d.parameter_count(), 13445u);
}

TEST(Dense, IdentityAndBias) {
  Dense<double> d(5, 5);
  d.weight().fill(0);
  for (std::size_t i = 0; i < 5; ++i) d.weight()[i * 5 + i] = 1;
  d.bias().fill(0);
  TD x({1, 5}, {1, -2, 3, -4, 5});
  const auto& y = d.forward(x, Mode::Infer);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(y[i], x[i]);

  d.weight().fill(0);
  d.bias() = TD({5}, {0.5, 1, 1.5, 2, 2.5});
  const auto& z = d.forward(x, Mode::Infer);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(z[i], d.bias()[i]);
}

TEST(Dense, ShapeMismatch) {
  Dense<double> d(4, 2);
  TD x({1, 5});
  EXPECT_THROW(d.forward(x, Mode::Infer), ShapeError);
}

// ---- batch norm

TEST(BatchNorm, StandardisesPerChannel) {
  testgen::Gen g(7);
  BatchNorm<double> bn(3);
  TD x = random_tensor(g, {4, 5, 5, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 3.0 * x[i] + static_cast<double>(i % 3) * 10.0;
  const auto& y = bn.forward(x, Mode::Train);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, sq = 0;
    const std::size_t m = 4 * 5 * 5;
    for (std::size_t i = c; i < y.size(); i += 3) mean += y[i];
    mean /= m;
    for (std::size_t i = c; i < y.size(); i += 3) sq += (y[i] - mean) * (y[i] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(sq / m, 1.0, 1e-4);  // eps inside the root shaves ~1e-6 per unit variance
  }
}

TEST(BatchNorm, ConstantChannel) {
  BatchNorm<double> bn(1);
  TD x({3, 2, 2, 1}, 4.0);
  for (auto v : bn.forward(x, Mode::Train).values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(BatchNorm, InferReadThrough) {
  BatchNorm<double> bn(1);
  bn.running_mean().fill(0);
  bn.running_var().fill(1);
  bn.gamma().fill(2);
  bn.beta().fill(1);
  TD x({1, 1, 1, 1}, 3.0);
  EXPECT_NEAR(bn.forward(x, Mode::Infer)[0], 7.0, 1e-4);
  EXPECT_NEAR(bn.forward(x, Mode::Infer)[0], 2.0 * 3.0 / std::sqrt(1.0 + 1e-5) + 1.0, 1e-12);
}

TEST(BatchNorm, RunningStatsMomentum) {
  BatchNorm<double> bn(1);
  TD x({2, 1, 1, 1}, {1.0, 3.0});
  bn.forward(x, Mode::Train);
  EXPECT_NEAR(bn.running_mean()[0], 0.1 * 2.0, 1e-12);
  EXPECT_GE(bn.running_var()[0], 0.0);
}

TEST(BatchNorm, BatchOfOneInTraining) {
  BatchNorm<double> bn(2);
  TD x({1, 3, 3, 2}, 1.0);
  EXPECT_THROW(bn.forward(x, Mode::Train), InvalidParameterError);
  EXPECT_NO_THROW(bn.forward(x, Mode::Infer));
}

TEST(BatchNorm, Counts) {
  BatchNorm<float> bn(32);
  EXPECT_EQ(bn.parameter_count(), 128u);
  EXPECT_EQ(bn.trainable_count(), 64u);
}

// ---- dropout

TEST(Dropout, RateZeroAndInferAreIdentity) {
  testgen::Gen g(8);
  const TD x = random_tensor(g, {3, 4});
  Dropout<double> zero(0.0, 1);
  EXPECT_EQ(zero.forward(x, Mode::Train).storage(), x.storage());
  Dropout<double> half(0.5, 1);
  EXPECT_EQ(half.forward(x, Mode::Infer).storage(), x.storage());
}

TEST(Dropout, MeanPreserved) {
  Dropout<double> d(0.5, 42);
  TD x({100000}, 1.0);
  const auto& y = d.forward(x, Mode::Train);
  const double mean = std::accumulate(y.values().begin(), y.values().end(), 0.0) / 1e5;
  // sd of the mean is 1/sqrt(1e5) ~ 0.0032
  EXPECT_NEAR(mean, 1.0, 0.016);
  std::size_t zeros = 0;
  for (auto v : y.values()) {
    if (v == 0) {
      ++zeros;
    } else {
      ASSERT_EQ(v, 2.0);
    }
  }
  EXPECT_NEAR(zeros / 1e5, 0.5, 0.008);
}

TEST(Dropout, InvalidRate) {
  EXPECT_THROW(Dropout<double>(1.0, 1), InvalidParameterError);
  EXPECT_THROW(Dropout<double>(-0.1, 1), InvalidParameterError);
}

TEST(Dropout, BackwardUsesSameMask) {
  testgen::Gen g(9);
  Dropout<double> d(0.25, 3);
  const TD x = random_tensor(g, {50});
  const TD y = d.forward(x, Mode::Train);
  const auto& dx = d.backward(TD({50}, 1.0));
  for (std::size_t i = 0; i < 50; ++i) EXPECT_NEAR(dx[i] * x[i], y[i], 1e-12);
}

// ---- loss

TEST(Loss, UniformLogits) {
  TD logits({1, 5}, 0.0);
  const std::vector<std::size_t> label{2};
  const auto r = softmax_cross_entropy(logits, label);
  EXPECT_NEAR(r.loss, std::log(5.0), 1e-12);
  for (auto p : r.probabilities.values()) EXPECT_NEAR(p, 0.2, 1e-15);
}

TEST(Loss, LargeLogitsStable) {
  TD logits({1, 2}, {1000, 0});
  const std::vector<std::size_t> label{0};
  const auto r = softmax_cross_entropy(logits, label);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(Loss, GradientDefinition) {
  TD logits({1, 2}, {0, 0});
  const std::vector<std::size_t> label{1};
  const auto r = softmax_cross_entropy(logits, label);
  EXPECT_NEAR(r.grad[0], 0.5, 1e-15);
  EXPECT_NEAR(r.grad[1], -0.5, 1e-15);
}

TEST(Loss, LabelOutOfRange) {
  TD logits({1, 3}, 0.0);
  const std::vector<std::size_t> label{3};
  EXPECT_THROW(softmax_cross_entropy(logits, label), OutOfRangeError);
}

TEST(Loss, BatchMeanAndFiniteDifference) {
  testgen::Gen g(10);
  TD logits = random_tensor(g, {4, 5});
  const std::vector<std::size_t> labels{0, 3, 4, 1};
  const auto r = softmax_cross_entropy(logits, labels);
  double sum = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    TD row({1, 5});
    for (std::size_t j = 0; j < 5; ++j) row[j] = logits[i * 5 + j];
    sum += softmax_cross_entropy(row, std::span<const std::size_t>(&labels[i], 1)).loss;
  }
  EXPECT_NEAR(r.loss, sum / 4, 1e-12);
  double worst = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    TD a = logits, b = logits;
    a[k] += 1e-5;
    b[k] -= 1e-5;
    const double num = (softmax_cross_entropy(a, labels).loss - softmax_cross_entropy(b, labels).loss) / 2e-5;
    worst = std::max(worst, relative_error(r.grad[k], num));
  }
  EXPECT_LT(worst, kTol);
}

TEST(Softmax, SumsToOneAndPositive) {
  testgen::for_all(100, 11, [](testgen::Gen& g, std::size_t) {
    TD logits = random_tensor(g, {3, g.index(2, 8)});
    for (auto& v : logits.values()) v *= 20;
    const TD p = softmax(logits);
    const std::size_t o = logits.dim(1);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < o; ++j) {
        EXPECT_GT(p[i * o + j], 0.0);
        s += p[i * o + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  });
}

// ---- adam

TEST(Adam, ZeroGradientLeavesParameters) {
  TD w({3}, {1, 2, 3}), g({3}, 0.0);
  Adam<double> opt;
  opt.step({{"w", &w, &g}});
  EXPECT_EQ(std::vector<double>(w.storage().begin(), w.storage().end()), (std::vector<double>{1, 2, 3}));
}

TEST(Adam, FirstStepClosedForm) {
  TD w({1}, 0.0), g({1}, 1.0);
  Adam<double> opt;
  opt.step({{"w", &w, &g}});
  EXPECT_NEAR(w[0], -1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, TwoStepsConstantGradient) {
  TD w({1}, 0.0), g({1}, 0.7);
  Adam<double> opt;
  opt.step({{"w", &w, &g}});
  opt.step({{"w", &w, &g}});
  EXPECT_EQ(opt.steps(), 2u);
  const double m = opt.first_moment(0)[0], v = opt.second_moment(0)[0];
  EXPECT_NEAR(m / (1 - 0.9 * 0.9), 0.7, 1e-12);
  EXPECT_NEAR(v / (1 - 0.999 * 0.999), 0.49, 1e-12);
  EXPECT_NEAR(w[0], -2e-3, 1e-10);
}

TEST(Adam, ShapeMismatch) {
  TD w({3}), g({2});
  Adam<double> opt;
  EXPECT_THROW(opt.step({{"w", &w, &g}}), ShapeError);
}

TEST(Adam, SecondMomentNonNegative) {
  testgen::Gen gen(12);
  TD w = random_tensor(gen, {20}), g({20});
  Adam<double> opt;
  for (int s = 0; s < 10; ++s) {
    g = random_tensor(gen, {20});
    opt.step({{"w", &w, &g}});
    for (double v : opt.second_moment(0)) ASSERT_GE(v, 0.0);
  }
}

// ---- finite differences

TEST(GradCheck, ConvSame) {
  testgen::Gen g(20);
  Conv2D<double> c(2, 3, 3, Padding::Same);
  c.init_he(g.rng());
  for (auto& b : c.bias().values()) b = g.normal();
  const auto r = grad_check(c, random_tensor(g, {2, 6, 6, 2}));
  EXPECT_LT(r.max_error(), kTol);
}

TEST(GradCheck, ConvValid) {
  testgen::Gen g(21);
  Conv2D<double> c(2, 3, 3, Padding::Valid);
  c.init_he(g.rng());
  const auto r = grad_check(c, random_tensor(g, {2, 6, 6, 2}));
  EXPECT_LT(r.max_error(), kTol);
}

TEST(GradCheck, Relu) {
  testgen::Gen g(22);
  ReLU<double> r;
  EXPECT_LT(grad_check(r, random_tensor(g, {2, 4, 4, 3})).max_error(), kTol);
}

TEST(GradCheck, BatchNormTrain) {
  testgen::Gen g(23);
  BatchNorm<double> bn(3);
  for (auto& v : bn.gamma().values()) v = g.normal();
  for (auto& v : bn.beta().values()) v = g.normal();
  EXPECT_LT(grad_check(bn, random_tensor(g, {4, 3, 3, 3})).max_error(), kTol);
}

TEST(GradCheck, BatchNormInfer) {
  testgen::Gen g(24);
  BatchNorm<double> bn(3);
  for (auto& v : bn.running_var().values()) v = g.uniform(0.5, 2);
  GradCheckOptions opt;
  opt.mode = Mode::Infer;
  EXPECT_LT(grad_check(bn, random_tensor(g, {2, 3, 3, 3}), opt).max_error(), kTol);
}

TEST(GradCheck, MaxPool) {
  testgen::Gen g(25);
  MaxPool2x2<double> p;
  EXPECT_LT(grad_check(p, random_tensor(g, {2, 5, 5, 3})).max_error(), kTol);
}

TEST(GradCheck, Spp) {
  testgen::Gen g(26);
  SpatialPyramidPool<double> s({1, 2, 4});
  EXPECT_LT(grad_check(s, random_tensor(g, {2, 5, 5, 3})).max_error(), kTol);
}

TEST(GradCheck, Dense) {
  testgen::Gen g(27);
  Dense<double> d(6, 4);
  d.init_he(g.rng());
  EXPECT_LT(grad_check(d, random_tensor(g, {3, 6})).max_error(), kTol);
}

TEST(GradCheck, DropoutSeeded) {
  testgen::Gen g(28);
  Dropout<double> d(0.3, 5);
  GradCheckOptions opt;
  opt.before_forward = [&d] { d.reseed(5); };
  EXPECT_LT(grad_check(d, random_tensor(g, {3, 8}), opt).max_error(), kTol);
}

TEST(GradCheck, StackedNetwork) {
  testgen::Gen g(29);
  Sequential<double> s;
  s.add<Conv2D<double>>("c", 2, 4, 3, Padding::Same).init_he(g.rng());
  s.add<ReLU<double>>("r");
  s.add<BatchNorm<double>>("b", 4);
  s.add<MaxPool2x2<double>>("p");
  s.add<SpatialPyramidPool<double>>("s", std::vector<std::size_t>{1, 2});
  s.add<Dense<double>>("d", 20, 5).init_he(g.rng());
  EXPECT_LT(grad_check(s, random_tensor(g, {4, 8, 8, 2})).max_error(), kTol);
}
