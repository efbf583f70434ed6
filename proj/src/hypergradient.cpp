#include "bilevel/hypergradient.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include <fmt/format.h>

#include "bilevel/errors.hpp"
#include "bilevel/lower_solver.hpp"

namespace bilevel {

SampleHypergrad hypergrad_sample(const BilevelSample& sample, const Vector& theta,
                                 const HypergradOptions& opts, const WarmStart* warm) {
  if (!(opts.epsilon > 0.0)) throw DomainError("hypergrad_sample: epsilon must be positive");
  if (opts.cg_tolerance && !(*opts.cg_tolerance > 0.0)) {
    throw DomainError("hypergrad_sample: cg tolerance must be positive");
  }
  if (theta.size() != sample.param_dim()) {
    throw DimensionError("hypergrad_sample: theta has wrong length");
  }

  const bool use_warm = opts.warm_start && warm != nullptr;
  const Vector x0 = use_warm && warm->x.size() == sample.state_dim() ? warm->x
                                                                      : sample.initial_point();
  LowerSolveResult lower = solve_lower(sample, theta, opts.epsilon, x0, opts.lower_max_iter);

  const Vector rhs = sample.upper_grad(lower.x_tilde);
  const double cg_tol = opts.cg_tolerance.value_or(lower.mu_used * opts.epsilon *
                                                   std::max(1.0, rhs.norm()));
  const Vector q0 = use_warm && warm->q.size() == sample.state_dim()
                        ? warm->q
                        : Vector::Zero(sample.state_dim());
  const Vector& x_tilde = lower.x_tilde;
  CgReport cg = conjugate_gradient(
      [&](const Vector& w) { return sample.lower_hess_vec(x_tilde, theta, w); }, rhs, cg_tol,
      opts.cg_max_iter, q0);

  SampleHypergrad out;
  out.z = -sample.mixed_vjp(x_tilde, theta, cg.solution);
  out.diag.lower_iterations = lower.iterations;
  out.diag.cg_iterations = cg.iterations;
  out.diag.cg_residual = cg.residual_norm;
  out.diag.cg_tolerance = cg_tol;
  out.diag.cg_converged = cg.converged;
  out.diag.epsilon_certified = lower.epsilon_certified;
  out.diag.upper_loss = sample.upper_value(x_tilde);
  out.q = std::move(cg.solution);
  out.x_tilde = std::move(lower.x_tilde);
  return out;
}

HypergradEstimate minibatch_hypergradient(const ProblemSet& problems, const Batch& batch,
                                          const Vector& theta, const HypergradOptions& opts,
                                          WarmStartStore* store, CostLedger& ledger) {
  if (batch.empty()) throw DomainError("minibatch_hypergradient: empty batch");
  for (const auto& e : batch) {
    if (e.index < 0 || e.index >= static_cast<int>(problems.size())) {
      throw DimensionError(fmt::format("minibatch_hypergradient: sample {} out of range", e.index));
    }
  }

  const size_t n = batch.size();
  std::vector<SampleHypergrad> results(n);
  std::vector<std::exception_ptr> errors(n);

  auto work = [&](size_t slot) {
    const auto& e = batch[slot];
    const WarmStart* warm = nullptr;
    if (store != nullptr) {
      auto it = store->find(e.index);
      if (it != store->end()) warm = &it->second;
    }
    try {
      results[slot] = hypergrad_sample(*problems[e.index], theta, opts, warm);
    } catch (...) {
      errors[slot] = std::current_exception();
    }
  };

  const int threads = std::clamp(opts.threads, 1, static_cast<int>(n));
  if (threads == 1) {
    for (size_t s = 0; s < n; ++s) work(s);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (size_t s = next++; s < n; s = next++) work(s);
      });
    }
  }

  // Aggregation runs in batch order so the result does not depend on scheduling.
  HypergradEstimate est;
  est.epsilon_used = opts.epsilon;
  std::vector<SampleDiagnostics> done;
  for (size_t s = 0; s < n; ++s) {
    if (errors[s]) {
      std::string msg = "unknown error";
      try {
        std::rethrow_exception(errors[s]);
      } catch (const std::exception& ex) {
        msg = ex.what();
      } catch (...) {
      }
      for (size_t t = s + 1; t < n; ++t) {
        if (!errors[t]) {
          results[t].diag.index = batch[t].index;
          results[t].diag.weight = batch[t].weight;
          done.push_back(results[t].diag);
        }
      }
      throw HypergradientFailure(
          fmt::format("hypergradient failed for sample {}: {}", batch[s].index, msg), done);
    }
    results[s].diag.index = batch[s].index;
    results[s].diag.weight = batch[s].weight;
    done.push_back(results[s].diag);
  }

  double total_weight = 0.0;
  est.z = Vector::Zero(theta.size());
  for (size_t s = 0; s < n; ++s) {
    const auto& r = results[s];
    est.z += batch[s].weight * r.z;
    est.batch_loss += batch[s].weight * r.diag.upper_loss;
    total_weight += batch[s].weight;
    est.cost.lower_iterations += r.diag.lower_iterations;
    est.cost.linear_solver_iterations += r.diag.cg_iterations;
    est.cg_tolerance_used = std::max(est.cg_tolerance_used, r.diag.cg_tolerance);
    if (!r.diag.cg_converged) est.degraded = true;
  }
  est.z /= total_weight;
  est.batch_loss /= total_weight;
  est.samples = std::move(done);

  est.states.reserve(n);
  for (size_t s = 0; s < n; ++s) {
    if (store != nullptr && opts.warm_start) {
      (*store)[batch[s].index] = WarmStart{results[s].x_tilde, results[s].q};
    }
    est.states.push_back(std::move(results[s].x_tilde));
  }
  ledger += est.cost;
  return est;
}

}  // namespace bilevel
