#include <gtest/gtest.h>

#include "bilevel/errors.hpp"
#include "bilevel/foe.hpp"
#include "bilevel/imaging.hpp"
#include "test_util.hpp"

using namespace bilevel;
using bilevel::test::random_image;

namespace {

int wrap(int i, int n) { return ((i % n) + n) % n; }

// Random parameters with moderate smoothing so finite differences are well conditioned.
Vector random_params(const FoEShape& shape, std::mt19937_64& rng, double log_nu = std::log(0.5)) {
  Vector th = test::randn(shape.param_dim(), rng, 0.3);
  th[0] = -0.5;
  for (int j = 0; j < shape.experts; ++j) th[shape.smoothing_offset(j)] = log_nu + 0.2 * th[shape.smoothing_offset(j)];
  return th;
}

// R(x) written out term by term, independent of conv2d and smoothed_l1.
double foe_value_oracle(const ImageTensor& x, const FoEShape& shape, const Vector& th) {
  const int k = shape.kernel_size, r = k / 2, C = shape.channels;
  double total = 0.0;
  for (int j = 0; j < shape.experts; ++j) {
    const double nu = std::exp(th[1 + shape.experts + j]);
    const double wj = std::exp(th[0] + th[1 + j]);
    const Eigen::Index off = 1 + 2 * shape.experts + j * k * k * C;
    double s = 0.0;
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx) {
        double t = 0.0;
        for (int a = 0; a < k; ++a)
          for (int b = 0; b < k; ++b)
            for (int c = 0; c < C; ++c)
              t += th[off + (a * k + b) * C + c] * x(wrap(y + r - a, x.height()), wrap(xx + r - b, x.width()), c);
        s += std::sqrt(t * t + nu * nu) - nu;
      }
    total += wj * s;
  }
  return total;
}

// J=1 with a delta kernel and theta0 = theta1 = 0.
Vector delta_params(const FoEShape& shape, double nu) {
  Vector th = Vector::Zero(shape.param_dim());
  th[shape.smoothing_offset(0)] = std::log(nu);
  const int k = shape.kernel_size;
  th[shape.kernel_offset(0) + ((k / 2) * k + k / 2) * shape.channels] = 1.0;
  return th;
}

}  // namespace

TEST(SmoothedL1, Examples) {
  EXPECT_EQ(smoothed_l1(Vector::Zero(4), 0.3), 0.0);
  EXPECT_NEAR(smoothed_l1((Vector(1) << 3).finished(), 4.0), 1.0, 1e-15);
  EXPECT_NEAR(smoothed_l1((Vector(2) << 3, -4).finished(), 1e-12), 7.0, 1e-6);
  EXPECT_THROW(smoothed_l1(Vector::Zero(1), 0.0), DomainError);
  EXPECT_THROW(smoothed_l1(Vector::Zero(1), -1.0), DomainError);
}

TEST(SmoothedL1, StableForTinyArguments) {
  // sqrt(t^2 + nu^2) - nu cancels catastrophically; the value must stay accurate
  const double t = 1e-9, nu = 1.0;
  EXPECT_NEAR(smoothed_l1((Vector(1) << t).finished(), nu), 0.5 * t * t, 1e-30);
}

TEST(FoEShape, LayoutAndDimension) {
  const FoEShape shape{10, 7, 3};
  EXPECT_EQ(shape.param_dim(), 1 + 20 + 1470);
  EXPECT_EQ(shape.weight_offset(0), 1);
  EXPECT_EQ(shape.smoothing_offset(0), 11);
  EXPECT_EQ(shape.kernel_offset(0), 21);
  EXPECT_EQ(shape.kernel_offset(9), 21 + 9 * 147);
  EXPECT_THROW((FoEShape{1, 4, 1}.validate()), ConfigError);
  EXPECT_THROW(FoEParams(shape, Vector::Zero(5)), DimensionError);
}

TEST(FoEInit, MatchesDocumentedDefaults) {
  const FoEShape shape{4, 5, 1};
  const Vector th = foe_initial_params(shape, 0.1, 7);
  EXPECT_DOUBLE_EQ(th[0], std::log(0.1));
  for (int j = 0; j < 4; ++j) {
    EXPECT_EQ(th[shape.weight_offset(j)], 0.0);
    EXPECT_DOUBLE_EQ(th[shape.smoothing_offset(j)], std::log(0.01));
  }
  const Vector kernels = th.tail(4 * 25);
  EXPECT_NEAR(kernels.mean(), 0.0, 0.1);
  const double sd = std::sqrt((kernels.array() - kernels.mean()).square().sum() / 99.0);
  EXPECT_NEAR(sd, 0.2, 0.05);
  EXPECT_EQ(foe_initial_params(shape, 0.1, 7), th);
  EXPECT_NE(foe_initial_params(shape, 0.1, 8), th);
}

TEST(FoEValue, ZeroImageAndDeltaReduction) {
  std::mt19937_64 rng(1);
  const FoEShape shape{2, 3, 1};
  const Vector th = random_params(shape, rng);
  EXPECT_EQ(foe_value(ImageTensor::constant(5, 5, 1, 0.0), FoEParams(shape, th)), 0.0);

  const FoEShape one{1, 3, 1};
  const Vector d = delta_params(one, 0.7);
  const ImageTensor x = random_image(5, 4, 1, rng);
  EXPECT_NEAR(foe_value(x, FoEParams(one, d)), smoothed_l1(x.data(), 0.7), 1e-13);
}

TEST(FoEValue, MatchesDirectSummation) {
  std::mt19937_64 rng(2);
  for (int c : {1, 3}) {
    const FoEShape shape{2, 3, c};
    const Vector th = random_params(shape, rng);
    const ImageTensor x = random_image(6, 6, c, rng);
    EXPECT_LT(test::rel_err(foe_value(x, FoEParams(shape, th)), foe_value_oracle(x, shape, th)), 1e-12);
  }
}

TEST(FoEGrad, DeltaReductionAndZero) {
  std::mt19937_64 rng(3);
  const FoEShape one{1, 3, 1};
  const double nu = 0.4;
  const Vector d = delta_params(one, nu);
  const ImageTensor x = random_image(4, 4, 1, rng);
  const Vector expect = x.data().array() / (x.data().array().square() + nu * nu).sqrt();
  EXPECT_LT(test::rel_err(foe_grad_x(x, FoEParams(one, d)).data(), expect), 1e-14);
  EXPECT_TRUE(foe_grad_x(ImageTensor::constant(4, 4, 1, 0.0), FoEParams(one, d)).data().isZero(0.0));

  const ImageTensor w = random_image(4, 4, 1, rng);
  const Vector hexpect = (nu * nu / (x.data().array().square() + nu * nu).pow(1.5)) * w.data().array();
  EXPECT_LT(test::rel_err(foe_hess_vec(x, FoEParams(one, d), w).data(), hexpect), 1e-14);
}

TEST(FoEGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const FoEShape shape{2, 3, 2};
  const Vector th = random_params(shape, rng);
  const FoEParams p(shape, th);
  const ImageTensor x = random_image(5, 5, 2, rng);
  const Vector g = foe_grad_x(x, p).data();
  Vector fd(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    fd[i] = test::central_diff([&](const Vector& v) { return foe_value(x.with_data(v), p); }, x.data(), i, 1e-6);
  }
  EXPECT_LT(test::rel_err(g, fd), 1e-5);
}

TEST(FoEHessVec, MatchesFiniteDifferencesAndIsPsd) {
  std::mt19937_64 rng(5);
  const FoEShape shape{3, 3, 1};
  const Vector th = random_params(shape, rng);
  const FoEParams p(shape, th);
  for (int trial = 0; trial < 5; ++trial) {
    const ImageTensor x = random_image(6, 6, 1, rng), w = random_image(6, 6, 1, rng);
    const double t = 1e-5;
    const Vector fd = (foe_grad_x(x.with_data(x.data() + t * w.data()), p).data() -
                       foe_grad_x(x.with_data(x.data() - t * w.data()), p).data()) / (2 * t);
    const ImageTensor hw = foe_hess_vec(x, p, w);
    EXPECT_LT(test::rel_err(hw.data(), fd), 1e-4);
    EXPECT_GE(dot(w, hw), -1e-10);
  }
  EXPECT_TRUE(foe_hess_vec(random_image(6, 6, 1, rng), p, ImageTensor::constant(6, 6, 1, 0.0)).data().isZero(0.0));
}

TEST(FoE, ConvexInX) {
  std::mt19937_64 rng(6);
  const FoEShape shape{3, 3, 1};
  const Vector th = random_params(shape, rng, std::log(0.05));
  const FoEParams p(shape, th);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const ImageTensor a = random_image(5, 5, 1, rng), b = random_image(5, 5, 1, rng);
    const double l = u(rng);
    const double mid = foe_value(a.with_data(l * a.data() + (1 - l) * b.data()), p);
    EXPECT_LE(mid, l * foe_value(a, p) + (1 - l) * foe_value(b, p) + 1e-10);
  }
}

TEST(FoE, ScaleConsistencyInTheta0) {
  std::mt19937_64 rng(7);
  const FoEShape shape{2, 3, 1};
  Vector th = random_params(shape, rng);
  const ImageTensor x = random_image(5, 5, 1, rng), w = random_image(5, 5, 1, rng);
  const double v0 = foe_value(x, FoEParams(shape, th));
  const Vector g0 = foe_grad_x(x, FoEParams(shape, th)).data();
  const Vector h0 = foe_hess_vec(x, FoEParams(shape, th), w).data();
  const double delta = 0.37;
  th[0] += delta;
  EXPECT_LT(test::rel_err(foe_value(x, FoEParams(shape, th)), std::exp(delta) * v0), 1e-14);
  EXPECT_LT(test::rel_err(foe_grad_x(x, FoEParams(shape, th)).data(), Vector(std::exp(delta) * g0)), 1e-14);
  EXPECT_LT(test::rel_err(foe_hess_vec(x, FoEParams(shape, th), w).data(), Vector(std::exp(delta) * h0)), 1e-14);
}

TEST(FoE, CurvatureBoundDominatesHessian) {
  std::mt19937_64 rng(8);
  const FoEShape shape{3, 3, 1};
  const Vector th = random_params(shape, rng, std::log(0.05));
  const FoEParams p(shape, th);
  const double bound = foe_curvature_bound(p);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageTensor x = random_image(6, 6, 1, rng, 0.05), w = random_image(6, 6, 1, rng);
    EXPECT_LE(dot(w, foe_hess_vec(x, p, w)), bound * dot(w, w) * (1 + 1e-12));
  }
}

TEST(LowerProblem, DenoiseDataTermLimits) {
  std::mt19937_64 rng(9);
  const FoEShape shape{2, 3, 1};
  Vector th = random_params(shape, rng);
  th[0] = -50.0;  // regulariser effectively off
  const FoEParams p(shape, th);
  const ImageTensor y = random_image(5, 5, 1, rng);
  const auto spec = LowerProblemSpec::denoise(y);
  EXPECT_EQ(spec.mu, 1.0);
  const ValueGrad at_y = lower_value_grad(spec, y, p);
  EXPECT_NEAR(at_y.value, 0.0, 1e-15);
  EXPECT_LT(at_y.gradient.data().norm(), 1e-15);
  const ImageTensor w = random_image(5, 5, 1, rng);
  EXPECT_LT(test::rel_err(lower_hess_vec(spec, y, p, w).data(), w.data()), 1e-15);
}

TEST(LowerProblem, DeblurDeltaKernelIsIdentity) {
  std::mt19937_64 rng(10);
  const FoEShape shape{1, 3, 1};
  Vector th = random_params(shape, rng);
  th[0] = -50.0;
  const ImageTensor y = random_image(5, 5, 1, rng), w = random_image(5, 5, 1, rng);
  const auto spec = LowerProblemSpec::deblur(y, ConvKernel::delta(3, 1));
  EXPECT_NEAR(spec.mu, 1.0, 1e-15);
  EXPECT_LT(test::rel_err(lower_hess_vec(spec, y, FoEParams(shape, th), w).data(), w.data()), 1e-15);
}

TEST(LowerProblem, DeblurRejectsNearSingularBlur) {
  const ImageTensor y = ImageTensor::constant(32, 32, 1, 0.5);
  EXPECT_THROW(LowerProblemSpec::deblur(y, gaussian_kernel(7, 2.0)), DefinitenessError);
  const auto ok = LowerProblemSpec::deblur(y, gaussian_kernel(7, 0.8));
  EXPECT_NEAR(ok.mu, circulant_spectrum_min(gaussian_kernel(7, 0.8), 32, 32), 0.0);
  EXPECT_NEAR(ok.data_lipschitz, 1.0, 1e-12);
}

TEST(LowerProblem, GradientAndHessianFiniteDifferences) {
  std::mt19937_64 rng(11);
  const FoEShape shape{2, 3, 1};
  const Vector th = random_params(shape, rng);
  const FoEParams p(shape, th);
  const ImageTensor y = random_image(6, 6, 1, rng), x = random_image(6, 6, 1, rng), w = random_image(6, 6, 1, rng);
  for (const auto& spec : {LowerProblemSpec::denoise(y), LowerProblemSpec::deblur(y, gaussian_kernel(3, 0.7))}) {
    Vector fd(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      fd[i] = test::central_diff([&](const Vector& v) { return lower_value_grad(spec, x.with_data(v), p).value; },
                                 x.data(), i, 1e-6);
    }
    EXPECT_LT(test::rel_err(lower_value_grad(spec, x, p).gradient.data(), fd), 1e-5);
    const double t = 1e-5;
    const Vector hfd = (lower_value_grad(spec, x.with_data(x.data() + t * w.data()), p).gradient.data() -
                        lower_value_grad(spec, x.with_data(x.data() - t * w.data()), p).gradient.data()) / (2 * t);
    const ImageTensor hw = lower_hess_vec(spec, x, p, w);
    EXPECT_LT(test::rel_err(hw.data(), hfd), 1e-4);
    EXPECT_GE(dot(w, hw), (spec.mu - 1e-8) * dot(w, w));
    EXPECT_GE(spec.lipschitz_estimate(p), spec.mu);
  }
}

TEST(MixedVjp, AnalyticIdentitiesAndZero) {
  std::mt19937_64 rng(12);
  const FoEShape shape{2, 3, 1};
  const Vector th = random_params(shape, rng);
  const FoEParams p(shape, th);
  const ImageTensor x = random_image(6, 6, 1, rng), q = random_image(6, 6, 1, rng);
  const auto spec = LowerProblemSpec::denoise(random_image(6, 6, 1, rng));
  const Vector v = mixed_vjp(spec, x, p, q);
  EXPECT_NEAR(v[0], dot(q, foe_grad_x(x, p)), 1e-12 * (1 + std::abs(v[0])));
  EXPECT_TRUE(mixed_vjp(spec, x, p, ImageTensor::constant(6, 6, 1, 0.0)).isZero(0.0));
}

TEST(MixedVjp, MatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int c : {1, 2}) {
    const FoEShape shape{2, 3, c};
    const Vector th = random_params(shape, rng);
    const ImageTensor x = random_image(6, 6, c, rng), q = random_image(6, 6, c, rng);
    const auto spec = LowerProblemSpec::denoise(random_image(6, 6, c, rng));
    const Vector v = mixed_vjp(spec, x, FoEParams(shape, th), q);
    auto inner = [&](const Vector& t) { return dot(q, lower_value_grad(spec, x, FoEParams(shape, t)).gradient); };
    for (Eigen::Index i = 0; i < th.size(); ++i) {
      const double fd = test::central_diff(inner, th, i, 1e-6);
      EXPECT_NEAR(v[i], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "component " << i;
    }
  }
}

TEST(FoESample, VectorInterfaceAgreesWithImageFunctions) {
  std::mt19937_64 rng(14);
  const FoEShape shape{2, 3, 1};
  const Vector th = random_params(shape, rng);
  const ImageTensor y = random_image(5, 5, 1, rng), target = random_image(5, 5, 1, rng);
  const FoESample s(shape, LowerProblemSpec::denoise(y), target);
  const ImageTensor x = random_image(5, 5, 1, rng);
  const ValueGrad vg = lower_value_grad(s.spec(), x, FoEParams(shape, th));
  EXPECT_EQ(s.lower_value(x.data(), th), vg.value);
  EXPECT_LT(test::rel_err(s.lower_grad(x.data(), th), vg.gradient.data()), 1e-15);
  EXPECT_DOUBLE_EQ(s.upper_value(x.data()), (x.data() - target.data()).squaredNorm());
  EXPECT_LT(test::rel_err(s.upper_grad(x.data()), Vector(2.0 * (x.data() - target.data()))), 1e-15);
  EXPECT_EQ(s.initial_point(), y.data());
  EXPECT_THROW(FoESample(shape, LowerProblemSpec::denoise(y), random_image(4, 5, 1, rng)), DimensionError);
}
