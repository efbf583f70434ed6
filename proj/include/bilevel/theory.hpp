#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bilevel/hypergradient.hpp"
#include "bilevel/isgd.hpp"
#include "bilevel/linalg.hpp"
#include "bilevel/quadratic.hpp"
#include "bilevel/sampling.hpp"

namespace bilevel {

// Constants of the expected-smoothness (ABC) bound
//   E||grad f_v||^2 <= 2A (f - f_inf) + B ||grad f||^2 + C
// together with the biased-ABC quantities derived from them for given zeta, eta.
struct AbcEstimate {
  double a = 0.0;
  double b = 1.0;
  double c = 0.0;
  double zeta = 1.0;
  double eta = 1.0;
  std::size_t samples = 0;           // theta points used in the fit
  std::size_t heldout = 0;           // theta points checked after the fit
  std::size_t heldout_violations = 0;

  AbcEstimate with(double zeta_, double eta_) const;

  double b_zeta() const { return 1.0 - 1.0 / (2.0 * zeta); }
  double c_zeta(double eps_sq) const { return 0.5 * zeta * eps_sq; }
  double a_tilde() const { return (1.0 + eta) * a / eta; }
  double b_tilde() const { return (1.0 + eta) * b / eta; }
  double c_tilde(double eps_sq) const { return (1.0 + eta) * c / eta + (1.0 + eta) * eps_sq; }

  // Convergence-bound constants; tau bounds the summed error second moments.
  double c1() const { return b_zeta() / b_tilde(); }
  double c2() const { return 2.0 / b_zeta(); }
  double c3() const { return a_tilde(); }
  double c4(double tau) const {
    return (1.0 + eta) * c / (eta * b_zeta()) + (1.0 + eta) / b_zeta() * tau;
  }
  double c5(double tau) const { return zeta / b_zeta() * tau; }
};

// Per-sample stochastic gradient used in place of the exact grad f_i.
using SampleGradientFn = std::function<Vector(int index, const Vector& theta)>;

// Cold-started inexact hypergradients (no warm start, so z_i is a function of theta).
SampleGradientFn inexact_gradients(const QuadraticInstance& inst, const HypergradOptions& opts);

// Expectations over v ~ D at one theta.
struct Moments {
  double f_gap = 0.0;        // f(theta) - f_inf
  double grad_sq = 0.0;      // ||grad f||^2
  double exact_sq = 0.0;     // E||grad f_v||^2
  double inexact_sq = 0.0;   // E||z_v||^2
  double error_sq = 0.0;     // E||e_v||^2
  double error_norm = 0.0;   // E||e_v||
  double inner_z = 0.0;      // <grad f, E z_v>
  double inner_e = 0.0;      // <grad f, E e_v>
};

// Distribution over batches: exhaustive when small enough, else `mc_batches`
// Monte Carlo draws (flagged so callers only warn).
struct BatchDistribution {
  std::vector<WeightedBatch> batches;
  bool exhaustive = true;
};
BatchDistribution batch_distribution(const SamplingScheme& scheme, std::size_t max_support = 20000,
                                     std::size_t mc_batches = 4096);

Moments compute_moments(const QuadraticInstance& inst, const BatchDistribution& dist,
                        const Vector& theta, double f_inf, const SampleGradientFn* inexact = nullptr);

struct AbcGrid {
  // Candidates are {0} U {10^(e/steps_per_decade) : lo <= e/steps <= hi}.
  int lo_decade = -4;
  int hi_decade = 4;
  int steps_per_decade = 4;
  std::vector<double> values() const;
};

// Grid-searches (A, B), taking for each the smallest C that satisfies the bound
// on every fitting point; the minimiser of f is always added to the fitting set.
// Among (A, B) whose C is within rounding of the best, the smallest A then the
// smallest B is kept. Held-out points are checked with relative slack `slack`.
AbcEstimate estimate_abc(const QuadraticInstance& inst, const std::vector<Vector>& theta_fit,
                         const SamplingScheme& scheme, const std::vector<Vector>& theta_heldout = {},
                         double slack = 1e-9, const AbcGrid& grid = {});

struct BiasedAbcRow {
  double grad_sq = 0.0;
  double error_sq = 0.0;        // the eps^2(theta) used in c and C~
  double bias_margin = 0.0;     // <grad f, E z> - (b ||grad f||^2 - c)
  double abc_margin = 0.0;      // 2A~ gap + B~ ||grad f||^2 + C~ - E||z||^2
  double young_margin = 0.0;    // ||grad f||^2/(2 zeta) + zeta/2 (E||e||)^2 - |<grad f, E e>|
  double moment_margin = 0.0;   // (1+eta)/eta E||grad f_v||^2 + (1+eta) E||e||^2 - E||z||^2
  bool bias_ok = true;
  bool abc_ok = true;
  bool young_ok = true;
  bool moment_ok = true;
};

struct BiasedAbcReport {
  double zeta = 1.0;
  double eta = 1.0;
  bool exhaustive = true;
  std::vector<BiasedAbcRow> rows;
  std::size_t bias_violations = 0;
  std::size_t abc_violations = 0;
  std::size_t young_violations = 0;
  std::size_t moment_violations = 0;

  std::size_t violations() const {
    return bias_violations + abc_violations + young_violations + moment_violations;
  }
};

struct BiasedAbcOptions {
  double zeta = 1.0;
  double eta = 1.0;
  double slack = 1e-9;  // relative to the magnitude of the compared terms
  // Replaces the measured E||e_v||^2 in c and C~ by a declared bound.
  std::optional<double> declared_error_sq;
};

// Evaluates the biased-ABC pair and the two supporting inequalities at every
// theta, with `gradients` producing the per-sample z_i.
BiasedAbcReport check_biased_abc(const QuadraticInstance& inst,
                                 const std::vector<Vector>& thetas, const SamplingScheme& scheme,
                                 const SampleGradientFn& gradients, const AbcEstimate& abc,
                                 const BiasedAbcOptions& opts = {});

struct Theorem1Config {
  Vector theta0;
  SamplingScheme scheme;  // seed of run r is scheme.seed + r
  double alpha = 1e-3;
  AccuracySchedule accuracy;
  std::int64_t iterations = 100;
  int runs = 1;
  HypergradOptions hypergrad;  // warm_start is forced off
  // Exact gradients instead of inexact hypergradients (zero-bias path).
  bool exact = false;
};

struct Theorem1Report {
  bool applicable = true;
  std::string reason;
  double alpha = 0.0;
  double alpha_max = 0.0;  // c1 / L
  double lipschitz = 0.0;
  double delta0 = 0.0;
  double c1 = 0.0, c2 = 0.0, c3 = 0.0;
  // Per horizon T = 1..iterations (index T-1).
  std::vector<double> lhs;        // min_{t<T} mean_r ||grad f(theta_r^t)||^2
  std::vector<double> rhs;        // bound with tau(T) = sum_{k<=T} mean_r eps_k^2
  std::vector<double> tau;
  std::vector<double> mean_grad_sq;  // mean_r ||grad f(theta_r^t)||^2 for t = 0..iterations
  std::size_t violations = 0;
  double min_margin = 0.0;
};

Theorem1Report theorem1_check(const QuadraticInstance& inst, const Theorem1Config& cfg,
                              const AbcEstimate& abc);

}  // namespace bilevel
