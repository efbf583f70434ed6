#include <gtest/gtest.h>

#include <cmath>

#include "bilevel/errors.hpp"
#include "bilevel/isgd.hpp"
#include "bilevel/quadratic.hpp"
#include "bilevel/theory.hpp"
#include "test_util.hpp"

using namespace bilevel;

namespace {

std::vector<Vector> thetas_around(const QuadraticInstance& inst, int count, std::uint64_t seed,
                                  double spread = 2.0) {
  std::mt19937_64 rng(seed);
  const Vector c = inst.minimizer();
  std::vector<Vector> out;
  for (int i = 0; i < count; ++i) out.push_back(c + test::randn(c.size(), rng, spread));
  return out;
}

SampleGradientFn exact_gradients(const QuadraticInstance& inst) {
  return [&inst](int i, const Vector& t) { return inst.exact_sample_gradient(i, t); };
}

HypergradOptions with_eps(double eps) {
  HypergradOptions o;
  o.epsilon = eps;
  o.warm_start = false;
  o.lower_max_iter = 100000;
  return o;
}

}  // namespace

TEST(AbcEstimate, DerivedConstantsFollowDefinitions) {
  AbcEstimate e;
  e.a = 0.3; e.b = 1.7; e.c = 2.5; e.zeta = 3.0; e.eta = 0.4;
  const double eps2 = 0.01;
  EXPECT_DOUBLE_EQ(e.b_zeta(), 1.0 - 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(e.c_zeta(eps2), 1.5 * eps2);
  EXPECT_DOUBLE_EQ(e.a_tilde(), 1.4 * 0.3 / 0.4);
  EXPECT_DOUBLE_EQ(e.b_tilde(), 1.4 * 1.7 / 0.4);
  EXPECT_DOUBLE_EQ(e.c_tilde(eps2), 1.4 * 2.5 / 0.4 + 1.4 * eps2);
  EXPECT_DOUBLE_EQ(e.c1(), e.b_zeta() / e.b_tilde());
  const auto w = e.with(1.0, 1.0);
  EXPECT_EQ(w.a, e.a);
  EXPECT_EQ(w.zeta, 1.0);
}

TEST(EstimateAbc, SingleSampleIsExact) {
  const auto inst = QuadraticInstance::random(8, 3, 1, 1);
  const auto est = estimate_abc(inst, thetas_around(inst, 20, 2), {1, 1});
  EXPECT_EQ(est.a, 0.0);
  EXPECT_EQ(est.b, 1.0);
  EXPECT_NEAR(est.c, 0.0, 1e-9);
}

TEST(EstimateAbc, FullBatchIsExact) {
  const auto inst = QuadraticInstance::random(8, 3, 6, 3);
  const auto est = estimate_abc(inst, thetas_around(inst, 20, 4), {6, 6});
  EXPECT_EQ(est.a, 0.0);
  EXPECT_EQ(est.b, 1.0);
  EXPECT_NEAR(est.c, 0.0, 1e-9);
}

TEST(EstimateAbc, HeldOutPointsSatisfyFittedBound) {
  const auto inst = QuadraticInstance::random(8, 3, 8, 5);
  const SamplingScheme scheme{8, 2};
  const auto fit = thetas_around(inst, 200, 6);
  const auto fresh = thetas_around(inst, 200, 7);
  const auto est = estimate_abc(inst, fit, scheme, fresh, 1e-9);
  EXPECT_EQ(est.samples, 201u);  // minimiser added
  EXPECT_EQ(est.heldout, 200u);
  EXPECT_EQ(est.heldout_violations, 0u);
  EXPECT_GE(est.c, 0.0);

  // re-check the fitted inequality independently on both sets
  const auto dist = batch_distribution(scheme);
  ASSERT_TRUE(dist.exhaustive);
  for (const auto* set : {&fit, &fresh}) {
    for (const auto& t : *set) {
      const Moments mo = compute_moments(inst, dist, t, inst.infimum());
      const double rhs = 2 * est.a * mo.f_gap + est.b * mo.grad_sq + est.c;
      EXPECT_LE(mo.exact_sq, rhs * (1 + 1e-9) + 1e-12);
    }
  }
}

TEST(EstimateAbc, RejectsEmptyFit) {
  const auto inst = QuadraticInstance::random(4, 2, 2, 1);
  EXPECT_ANY_THROW(estimate_abc(inst, {}, {2, 1}));
}

TEST(Moments, EnumerationMatchesDirectSums) {
  const auto inst = QuadraticInstance::random(6, 3, 4, 8);
  const SamplingScheme scheme{4, 2};
  const Vector t = Vector::Constant(3, 0.4);
  const Moments mo = compute_moments(inst, batch_distribution(scheme), t, inst.infimum());
  // E_v ||grad f_v||^2 by hand over the six equally likely pairs
  double e = 0.0;
  int pairs = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j, ++pairs)
      e += (0.5 * (inst.exact_sample_gradient(i, t) + inst.exact_sample_gradient(j, t))).squaredNorm();
  EXPECT_LT(test::rel_err(mo.exact_sq, e / pairs), 1e-13);
  EXPECT_LT(test::rel_err(mo.grad_sq, inst.exact_full_gradient(t).squaredNorm()), 1e-13);
  EXPECT_LT(test::rel_err(mo.f_gap, inst.exact_upper_loss(t) - inst.infimum()), 1e-12);
  EXPECT_EQ(mo.error_sq, 0.0);
}

TEST(BiasedAbc, NearExactGradientsHoldWithMargin) {
  const auto inst = QuadraticInstance::random(8, 3, 8, 9);
  const SamplingScheme scheme{8, 2};
  const auto thetas = thetas_around(inst, 30, 10);
  const auto abc = estimate_abc(inst, thetas, scheme);
  const auto grads = inexact_gradients(inst, with_eps(1e-10));
  const auto rep = check_biased_abc(inst, thetas, scheme, grads, abc);
  EXPECT_EQ(rep.violations(), 0u);
  EXPECT_TRUE(rep.exhaustive);
  for (const auto& r : rep.rows) {
    EXPECT_LT(r.error_sq, 1e-16);
    EXPECT_GE(r.bias_margin, 0.0);
  }
}

TEST(BiasedAbc, InexactGradientsSatisfyAllInequalities) {
  const auto inst = QuadraticInstance::random(8, 3, 8, 11);
  const SamplingScheme scheme{8, 2};
  const auto thetas = thetas_around(inst, 100, 12);
  const auto abc = estimate_abc(inst, thetas_around(inst, 100, 13), scheme);
  const auto grads = inexact_gradients(inst, with_eps(1e-2));
  for (double zeta : {0.6, 1.0, 5.0}) {
    for (double eta : {0.1, 1.0, 10.0}) {
      const auto rep = check_biased_abc(inst, thetas, scheme, grads, abc.with(zeta, eta),
                                        BiasedAbcOptions{zeta, eta, 1e-9, std::nullopt});
      EXPECT_EQ(rep.violations(), 0u) << "zeta " << zeta << " eta " << eta;
      ASSERT_EQ(rep.rows.size(), 100u);
      for (const auto& r : rep.rows) EXPECT_GT(r.error_sq, 0.0);
    }
  }
}

TEST(BiasedAbc, AdversarialBiasIsDetected) {
  const auto inst = QuadraticInstance::random(8, 3, 8, 14);
  const SamplingScheme scheme{8, 2};
  const auto thetas = thetas_around(inst, 20, 15);
  const auto abc = estimate_abc(inst, thetas, scheme);
  for (double kappa : {1.0, 2.0}) {
    // z_i = grad f_i - kappa grad f, while the estimator claims eps = 1e-3
    SampleGradientFn bad = [&](int i, const Vector& t) {
      return Vector(inst.exact_sample_gradient(i, t) - kappa * inst.exact_full_gradient(t));
    };
    BiasedAbcOptions o{0.6, 1.0, 1e-9, 1e-6};
    const auto rep = check_biased_abc(inst, thetas, scheme, bad, abc.with(0.6, 1.0), o);
    EXPECT_EQ(rep.bias_violations, thetas.size()) << kappa;
    // with the measured error, Young's inequality keeps the bound valid
    o.declared_error_sq.reset();
    EXPECT_EQ(check_biased_abc(inst, thetas, scheme, bad, abc.with(0.6, 1.0), o).bias_violations, 0u);
  }
}

TEST(BiasedAbc, RejectsSmallZeta) {
  const auto inst = QuadraticInstance::random(4, 2, 2, 1);
  const auto thetas = thetas_around(inst, 3, 1);
  const auto abc = estimate_abc(inst, thetas, {2, 1});
  EXPECT_THROW(check_biased_abc(inst, thetas, {2, 1}, exact_gradients(inst), abc,
                                BiasedAbcOptions{0.5, 1.0, 1e-9, std::nullopt}),
               DomainError);
}

TEST(Theorem1, ExactGradientPathHolds) {
  const auto inst = QuadraticInstance::random(8, 3, 8, 16);
  const SamplingScheme scheme{8, 2, SamplingStrategy::kWithoutReplacement, 100};
  const auto abc = estimate_abc(inst, thetas_around(inst, 100, 17), scheme);
  Theorem1Config cfg;
  cfg.theta0 = thetas_around(inst, 1, 18).front();
  cfg.scheme = scheme;
  cfg.alpha = abc.c1() / inst.gradient_lipschitz();
  cfg.iterations = 200;
  cfg.runs = 10;
  cfg.exact = true;
  const auto rep = theorem1_check(inst, cfg, abc);
  ASSERT_TRUE(rep.applicable) << rep.reason;
  EXPECT_EQ(rep.violations, 0u);
  EXPECT_GE(rep.min_margin, 0.0);
  ASSERT_EQ(rep.lhs.size(), 200u);
  for (double t : rep.tau) EXPECT_EQ(t, 0.0);
  for (std::size_t t = 1; t < rep.lhs.size(); ++t) EXPECT_LE(rep.lhs[t], rep.lhs[t - 1]);
}

TEST(Theorem1, InexactRunWithCorollaryStepHolds) {
  const auto inst = QuadraticInstance::random(8, 3, 8, 19);
  const SamplingScheme scheme{8, 2, SamplingStrategy::kWithoutReplacement, 200};
  const auto abc = estimate_abc(inst, thetas_around(inst, 100, 20), scheme);
  Theorem1Config cfg;
  cfg.theta0 = thetas_around(inst, 1, 21).front();
  cfg.scheme = scheme;
  cfg.accuracy = {AccuracyKind::kFixed, 1e-2, 1.0};
  cfg.hypergrad = with_eps(1e-2);
  const double delta0 = inst.exact_upper_loss(cfg.theta0) - inst.infimum();
  const auto cp = corollary_params(1e-2, {abc.a, abc.b, abc.c, abc.zeta, abc.eta,
                                          inst.gradient_lipschitz(), delta0});
  cfg.alpha = cp.alpha;
  cfg.iterations = 500;
  const auto rep = theorem1_check(inst, cfg, abc);
  ASSERT_TRUE(rep.applicable) << rep.reason;
  EXPECT_EQ(rep.violations, 0u);
  EXPECT_GT(rep.min_margin, 0.0);
  EXPECT_GT(rep.tau.back(), 0.0);
}

TEST(Theorem1, StepAboveThresholdIsNotApplicable) {
  const auto inst = QuadraticInstance::random(8, 3, 8, 22);
  const SamplingScheme scheme{8, 2};
  const auto abc = estimate_abc(inst, thetas_around(inst, 20, 23), scheme);
  Theorem1Config cfg;
  cfg.theta0 = Vector::Zero(3);
  cfg.scheme = scheme;
  cfg.alpha = 2.0 * abc.c1() / inst.gradient_lipschitz();
  const auto rep = theorem1_check(inst, cfg, abc);
  EXPECT_FALSE(rep.applicable);
  EXPECT_FALSE(rep.reason.empty());
  EXPECT_TRUE(rep.lhs.empty());
}
