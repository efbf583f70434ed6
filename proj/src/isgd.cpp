#include "bilevel/isgd.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "bilevel/errors.hpp"

namespace bilevel {

double step_size(const StepSchedule& s, std::int64_t k) {
  if (k < 0) throw DomainError("step_size: k must be non-negative");
  if (!(s.alpha0 > 0.0)) throw DomainError("step_size: alpha0 must be positive");
  if (s.kind == StepKind::kConstant || k == 0) return s.alpha0;
  return s.alpha0 / std::sqrt(static_cast<double>(k));
}

double accuracy(const AccuracySchedule& s, std::int64_t k) {
  if (k < 0) throw DomainError("accuracy: k must be non-negative");
  if (!(s.epsilon0 > 0.0)) throw DomainError("accuracy: epsilon0 must be positive");
  if (s.kind == AccuracyKind::kFixed) return s.epsilon0;
  if (s.rho < 0.0) throw DomainError("accuracy: rho must be non-negative");
  return s.epsilon0 / std::pow(static_cast<double>(k + 1), 0.5 * (1.0 + s.rho));
}

RunTrace isgd_run(const ProblemSet& problems, const Vector& theta0, const SamplingScheme& scheme,
                  const StepSchedule& steps, const AccuracySchedule& acc, std::int64_t iterations,
                  const RunOptions& options) {
  if (iterations < 0) throw DomainError("isgd_run: iteration count must be non-negative");
  if (problems.empty()) throw ConfigError("isgd_run: empty problem set");
  scheme.validate();
  if (scheme.m != static_cast<int>(problems.size())) {
    throw ConfigError(fmt::format("isgd_run: scheme has m = {} but there are {} samples", scheme.m,
                                  problems.size()));
  }
  for (const auto& p : problems) {
    if (p->param_dim() != theta0.size()) {
      throw DimensionError("isgd_run: theta0 does not match the problem's parameter dimension");
    }
  }

  WarmStartStore local_store;
  WarmStartStore* store = options.warm_store != nullptr ? options.warm_store : &local_store;

  RunTrace trace;
  trace.initial_params = theta0;
  trace.initial_ledger = options.start_ledger;
  trace.iterations.reserve(static_cast<size_t>(iterations));

  Vector theta = theta0;
  CostLedger ledger = options.start_ledger;
  const std::int64_t per_epoch = scheme.iterations_per_epoch();
  double metric_sum = 0.0;
  std::int64_t metric_count = 0;
  auto epoch_start = std::chrono::steady_clock::now();

  const std::int64_t first = options.start_iteration;
  for (std::int64_t k = first; k < first + iterations; ++k) {
    if (options.record_params) trace.params.push_back(theta);
    const Batch batch = sample_batch(scheme, k);
    HypergradOptions hopts = options.hypergrad;
    hopts.epsilon = accuracy(acc, k);
    const double alpha = step_size(steps, k);

    HypergradEstimate est;
    try {
      est = minibatch_hypergradient(problems, batch, theta, hopts, store, ledger);
    } catch (const std::exception& ex) {
      trace.final_params = theta;
      throw IsgdAborted(fmt::format("iteration {}: {}", k, ex.what()), std::move(trace), k);
    }

    IterationRecord rec;
    rec.k = k;
    rec.epoch = k / per_epoch;
    rec.batch_loss = est.batch_loss;
    rec.grad_est_norm = est.z.norm();
    rec.alpha = alpha;
    rec.epsilon = hopts.epsilon;
    rec.ledger = ledger;
    rec.degraded = est.degraded;

    if (options.sample_metric) {
      for (size_t s = 0; s < batch.size(); ++s) {
        metric_sum += options.sample_metric(batch[s].index, est.states[s]);
        ++metric_count;
      }
      if ((k + 1) % per_epoch == 0) {
        const double mean = metric_count > 0 ? metric_sum / metric_count : 0.0;
        rec.epoch_metric = mean;
        const auto now = std::chrono::steady_clock::now();
        trace.epochs.push_back(
            {rec.epoch, mean, std::chrono::duration<double>(now - epoch_start).count()});
        epoch_start = now;
        metric_sum = 0.0;
        metric_count = 0;
      }
    }

    theta -= alpha * est.z;
    if (!theta.allFinite()) {
      trace.iterations.push_back(rec);
      trace.final_params = theta;
      throw IsgdAborted(fmt::format("iteration {}: parameters became non-finite", k),
                        std::move(trace), k);
    }
    trace.iterations.push_back(rec);
    if (options.on_iteration) options.on_iteration(rec, theta);
  }
  if (options.record_params) trace.params.push_back(theta);
  trace.final_params = std::move(theta);
  return trace;
}

RunTrace deterministic_baseline_run(const ProblemSet& problems, const Vector& theta0, double alpha,
                                    double epsilon, std::int64_t iterations,
                                    const RunOptions& options) {
  const int m = static_cast<int>(problems.size());
  SamplingScheme full{m, m, SamplingStrategy::kWithoutReplacement, 0};
  return isgd_run(problems, theta0, full, StepSchedule{StepKind::kConstant, alpha},
                  AccuracySchedule{AccuracyKind::kFixed, epsilon, 0.0}, iterations, options);
}

CorollaryParams corollary_params(double delta, const CorollaryConstants& k) {
  if (!(delta > 0.0)) throw DomainError("corollary_params: delta must be positive");
  if (!(k.zeta > 0.5)) throw DomainError("corollary_params: zeta must exceed 1/2");
  if (!(k.eta > 0.0)) throw DomainError("corollary_params: eta must be positive");
  if (k.a < 0.0 || k.b < 0.0 || k.c < 0.0 || !(k.lipschitz > 0.0) || !(k.delta0 > 0.0)) {
    throw DomainError("corollary_params: constants must be non-negative, L and delta0 positive");
  }
  const double inf = std::numeric_limits<double>::infinity();
  const double bz = 1.0 - 1.0 / (2.0 * k.zeta);
  const double at = (1.0 + k.eta) * k.a / k.eta;
  const double bt = (1.0 + k.eta) * k.b / k.eta;
  const double l = k.lipschitz;
  const double noise = k.c + k.eta * delta;

  const double t_real =
      12.0 * k.delta0 * l / (k.zeta * delta) *
      std::max({bt / bz, 12.0 * k.delta0 * at / (k.zeta * delta),
                2.0 * (1.0 + k.eta) * noise / (k.eta * k.zeta * delta)});

  CorollaryParams out;
  out.iterations_real = t_real;
  // saturates when T exceeds the integer range; alpha still uses the real ceil(T)
  const double t = std::max(1.0, std::ceil(t_real));
  constexpr auto kMaxIter = std::numeric_limits<std::int64_t>::max();
  out.iterations = t >= 0x1p63 ? kMaxIter : static_cast<std::int64_t>(t);
  const double a1 = at > 0.0 ? 1.0 / std::sqrt(l * at * t) : inf;
  const double a2 = bt > 0.0 ? bz / (l * bt) : inf;
  const double a3 = k.eta * k.zeta * delta / (2.0 * l * (1.0 + k.eta) * noise);
  out.alpha = std::min({a1, a2, a3});
  return out;
}

}  // namespace bilevel
