#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bilevel/hypergradient.hpp"
#include "bilevel/linalg.hpp"
#include "bilevel/problem.hpp"
#include "bilevel/sampling.hpp"

namespace bilevel {

enum class StepKind { kConstant, kDecreasing };

// constant: alpha_k = alpha0. decreasing: alpha_k = alpha0 / sqrt(k) for k >= 1,
// and alpha0 at k = 0.
struct StepSchedule {
  StepKind kind = StepKind::kConstant;
  double alpha0 = 1e-3;
};

double step_size(const StepSchedule& s, std::int64_t k);

enum class AccuracyKind { kFixed, kSummable };

// fixed: eps_k = eps0. summable: eps_k = eps0 / (k+1)^{(1+rho)/2}, so that
// sum eps_k^2 < inf whenever rho > 0.
struct AccuracySchedule {
  AccuracyKind kind = AccuracyKind::kFixed;
  double epsilon0 = 1e-3;
  double rho = 1.0;
};

double accuracy(const AccuracySchedule& s, std::int64_t k);

struct IterationRecord {
  std::int64_t k = 0;
  std::int64_t epoch = 0;
  double batch_loss = 0.0;
  double grad_est_norm = 0.0;
  double alpha = 0.0;
  double epsilon = 0.0;
  CostLedger ledger;  // cumulative, after this iteration
  std::optional<double> epoch_metric;  // set on the last iteration of an epoch
  bool degraded = false;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double mean_metric = 0.0;
  double wall_seconds = 0.0;
};

struct RunTrace {
  Vector initial_params;
  CostLedger initial_ledger;
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
  // theta^k for every executed iteration followed by the final iterate, when
  // RunOptions::record_params is set.
  std::vector<Vector> params;
  Vector final_params;
};

struct RunOptions {
  HypergradOptions hypergrad;  // epsilon is overridden by the accuracy schedule
  bool record_params = false;
  // Resume support: first iteration index and the ledger at that point.
  std::int64_t start_iteration = 0;
  CostLedger start_ledger;
  // Caller-owned warm-start store; an internal one is used when null.
  WarmStartStore* warm_store = nullptr;
  // Per-sample quality metric (e.g. PSNR of x_tilde), averaged per epoch.
  std::function<double(int index, const Vector& x_tilde)> sample_metric;
  // Called after each update with the record and the new iterate.
  std::function<void(const IterationRecord&, const Vector& theta)> on_iteration;
};

class IsgdAborted : public std::runtime_error {
 public:
  IsgdAborted(const std::string& what, RunTrace trace, std::int64_t k)
      : std::runtime_error(what), trace_(std::move(trace)), k_(k) {}
  const RunTrace& trace() const { return trace_; }
  std::int64_t iteration() const { return k_; }

 private:
  RunTrace trace_;
  std::int64_t k_;
};

// Inexact stochastic gradient descent: T updates
//   theta^{k+1} = theta^k - alpha_k z_{v^k}(theta^k)
// starting at iteration options.start_iteration.
RunTrace isgd_run(const ProblemSet& problems, const Vector& theta0, const SamplingScheme& scheme,
                  const StepSchedule& steps, const AccuracySchedule& acc, std::int64_t iterations,
                  const RunOptions& options = {});

// Full-batch inexact gradient descent with fixed alpha and epsilon.
RunTrace deterministic_baseline_run(const ProblemSet& problems, const Vector& theta0, double alpha,
                                    double epsilon, std::int64_t iterations,
                                    const RunOptions& options = {});

struct CorollaryConstants {
  double a = 0.0;
  double b = 1.0;
  double c = 0.0;
  double zeta = 1.0;
  double eta = 1.0;
  double lipschitz = 1.0;  // L of grad f
  double delta0 = 1.0;     // f(theta^0) - f*
};

struct CorollaryParams {
  double iterations_real = 0.0;  // T(delta) before rounding
  std::int64_t iterations = 0;   // ceil(T(delta)), saturated at INT64_MAX
  double alpha = 0.0;            // alpha(delta), evaluated at the rounded T
};

// Iteration count and step size that drive min_t E||grad f(theta^t)||^2 to O(delta):
//   T = 12 d0 L / (zeta delta) * max{Bt/b, 12 d0 At / (zeta delta),
//                                    2(1+eta)(C + eta delta) / (eta zeta delta)}
//   alpha = min{1/sqrt(L At T), b/(L Bt), eta zeta delta / (2 L (1+eta)(C + eta delta))}
// with b = 1 - 1/(2 zeta), At = (1+eta)A/eta, Bt = (1+eta)B/eta.
CorollaryParams corollary_params(double delta, const CorollaryConstants& k);

}  // namespace bilevel
