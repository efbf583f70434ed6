#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bilevel/linalg.hpp"
#include "bilevel/problem.hpp"
#include "bilevel/sampling.hpp"

namespace bilevel {

// Cumulative work: lower-level solver iterations plus CG iterations.
struct CostLedger {
  std::int64_t lower_iterations = 0;
  std::int64_t linear_solver_iterations = 0;

  std::int64_t total() const { return lower_iterations + linear_solver_iterations; }
  CostLedger& operator+=(const CostLedger& other) {
    lower_iterations += other.lower_iterations;
    linear_solver_iterations += other.linear_solver_iterations;
    return *this;
  }
  friend bool operator==(const CostLedger&, const CostLedger&) = default;
};

struct HypergradOptions {
  double epsilon = 1e-3;
  // Absolute CG tolerance. Unset: mu * epsilon * max(1, ||grad g(x_tilde)||).
  std::optional<double> cg_tolerance;
  int lower_max_iter = 20000;
  int cg_max_iter = 2000;
  bool warm_start = true;
  int threads = 1;
};

// Previous lower solution and adjoint for one sample.
struct WarmStart {
  Vector x;
  Vector q;
};
using WarmStartStore = std::map<int, WarmStart>;

struct SampleDiagnostics {
  int index = 0;
  double weight = 0.0;
  int lower_iterations = 0;
  int cg_iterations = 0;
  double cg_residual = 0.0;
  double cg_tolerance = 0.0;
  bool cg_converged = false;
  double epsilon_certified = 0.0;
  double upper_loss = 0.0;
};

struct SampleHypergrad {
  Vector z;
  Vector x_tilde;
  Vector q;
  SampleDiagnostics diag;
};

// z_i = -mixed_vjp(x_tilde, theta, q) with H q = grad g_i(x_tilde), where x_tilde
// is certified eps-accurate and q is a CG solution of the Hessian system.
SampleHypergrad hypergrad_sample(const BilevelSample& sample, const Vector& theta,
                                 const HypergradOptions& opts, const WarmStart* warm = nullptr);

struct HypergradEstimate {
  Vector z;
  double epsilon_used = 0.0;
  // Largest per-sample CG tolerance used in this estimate.
  double cg_tolerance_used = 0.0;
  std::vector<SampleDiagnostics> samples;
  std::vector<Vector> states;  // x_tilde per batch entry
  CostLedger cost;
  double batch_loss = 0.0;  // weighted mean of g_i(x_tilde_i)
  bool degraded = false;    // some CG solve missed its tolerance
};

class HypergradientFailure : public std::runtime_error {
 public:
  HypergradientFailure(const std::string& what, std::vector<SampleDiagnostics> partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const std::vector<SampleDiagnostics>& partial() const { return partial_; }

 private:
  std::vector<SampleDiagnostics> partial_;
};

// Weighted mean of per-sample hypergradients over the batch. The ledger is
// advanced once, after all samples finish. With a store, warm starts are read
// from and written back to it.
HypergradEstimate minibatch_hypergradient(const ProblemSet& problems, const Batch& batch,
                                          const Vector& theta, const HypergradOptions& opts,
                                          WarmStartStore* store, CostLedger& ledger);

}  // namespace bilevel
