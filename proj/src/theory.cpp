#include "bilevel/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "bilevel/errors.hpp"

namespace bilevel {

namespace {

void check_zeta_eta(double zeta, double eta) {
  if (!(zeta > 0.5)) throw DomainError(fmt::format("zeta must exceed 1/2, got {}", zeta));
  if (!(eta > 0.0)) throw DomainError(fmt::format("eta must be positive, got {}", eta));
}

bool violated(double margin, double scale, double slack) {
  return margin < -slack * std::max(1.0, scale);
}

// Weighted mean sum_i v_i g_i / sum_i v_i over the batch.
Vector batch_mean(const std::vector<Vector>& per_sample, const Batch& batch) {
  Vector acc = Vector::Zero(per_sample.front().size());
  double total = 0.0;
  for (const auto& e : batch) {
    acc += e.weight * per_sample[e.index];
    total += e.weight;
  }
  return acc / total;
}

Batch full_batch(int m) {
  Batch all;
  for (int i = 0; i < m; ++i) all.push_back({i, 1.0});
  return all;
}

Moments moments_from(const std::vector<Vector>& exact, const std::vector<Vector>& inexact,
                     const BatchDistribution& dist, double f_gap) {
  const int m = static_cast<int>(exact.size());
  const Vector grad = batch_mean(exact, full_batch(m));
  Moments mo;
  mo.f_gap = f_gap;
  mo.grad_sq = grad.squaredNorm();
  Vector mean_z = Vector::Zero(grad.size());
  Vector mean_e = Vector::Zero(grad.size());
  for (const auto& wb : dist.batches) {
    const Vector gv = batch_mean(exact, wb.batch);
    const Vector zv = batch_mean(inexact, wb.batch);
    const Vector ev = zv - gv;
    mo.exact_sq += wb.probability * gv.squaredNorm();
    mo.inexact_sq += wb.probability * zv.squaredNorm();
    mo.error_sq += wb.probability * ev.squaredNorm();
    mo.error_norm += wb.probability * ev.norm();
    mean_z += wb.probability * zv;
    mean_e += wb.probability * ev;
  }
  mo.inner_z = grad.dot(mean_z);
  mo.inner_e = grad.dot(mean_e);
  return mo;
}

}  // namespace

AbcEstimate AbcEstimate::with(double zeta_, double eta_) const {
  check_zeta_eta(zeta_, eta_);
  AbcEstimate out = *this;
  out.zeta = zeta_;
  out.eta = eta_;
  return out;
}

SampleGradientFn inexact_gradients(const QuadraticInstance& inst, const HypergradOptions& opts) {
  auto samples = std::make_shared<ProblemSet>(inst.samples());
  HypergradOptions cold = opts;
  cold.warm_start = false;
  return [samples, cold](int i, const Vector& theta) {
    return hypergrad_sample(*(*samples)[i], theta, cold).z;
  };
}

BatchDistribution batch_distribution(const SamplingScheme& scheme, std::size_t max_support,
                                     std::size_t mc_batches) {
  BatchDistribution dist;
  try {
    dist.batches = enumerate_batches(scheme, max_support);
    return dist;
  } catch (const ConfigError&) {
  }
  dist.exhaustive = false;
  const double p = 1.0 / static_cast<double>(mc_batches);
  SamplingScheme iid = scheme;
  for (std::size_t k = 0; k < mc_batches; ++k) {
    // Every batch of the epoch scheme is a uniform S-subset; draw them from
    // independent epochs so the Monte Carlo sample is i.i.d.
    const auto epoch_len = static_cast<std::int64_t>(scheme.iterations_per_epoch());
    dist.batches.push_back({sample_batch(iid, static_cast<std::int64_t>(k) * epoch_len), p});
  }
  return dist;
}

Moments compute_moments(const QuadraticInstance& inst, const BatchDistribution& dist,
                        const Vector& theta, double f_inf, const SampleGradientFn* inexact) {
  std::vector<Vector> exact, approx;
  for (int i = 0; i < inst.m(); ++i) {
    exact.push_back(inst.exact_sample_gradient(i, theta));
    approx.push_back(inexact != nullptr ? (*inexact)(i, theta) : exact.back());
  }
  return moments_from(exact, approx, dist, inst.exact_upper_loss(theta) - f_inf);
}

std::vector<double> AbcGrid::values() const {
  std::vector<double> v{0.0};
  for (int e = lo_decade * steps_per_decade; e <= hi_decade * steps_per_decade; ++e) {
    v.push_back(std::pow(10.0, static_cast<double>(e) / steps_per_decade));
  }
  return v;
}

AbcEstimate estimate_abc(const QuadraticInstance& inst, const std::vector<Vector>& theta_fit,
                         const SamplingScheme& scheme, const std::vector<Vector>& theta_heldout,
                         double slack, const AbcGrid& grid) {
  if (theta_fit.empty()) throw DomainError("estimate_abc: empty theta sample list");
  const BatchDistribution dist = batch_distribution(scheme);
  const Vector theta_min = inst.minimizer();
  const double f_inf = inst.exact_upper_loss(theta_min);

  std::vector<Moments> fit;
  fit.push_back(compute_moments(inst, dist, theta_min, f_inf));
  for (const auto& t : theta_fit) fit.push_back(compute_moments(inst, dist, t, f_inf));

  double scale = 0.0;
  for (const auto& mo : fit) scale = std::max(scale, mo.exact_sq);

  const auto candidates = grid.values();
  struct Cand {
    double a, b, c;
  };
  std::vector<Cand> all;
  double c_best = std::numeric_limits<double>::infinity();
  for (double a : candidates) {
    for (double b : candidates) {
      double c = 0.0;
      for (const auto& mo : fit) {
        c = std::max(c, mo.exact_sq - 2.0 * a * mo.f_gap - b * mo.grad_sq);
      }
      all.push_back({a, b, c});
      c_best = std::min(c_best, c);
    }
  }
  const double tie = 1e-10 * std::max(1.0, scale);
  // candidates are ascending, so the first hit has the smallest A, then B
  const Cand* chosen = nullptr;
  for (const auto& cand : all) {
    if (cand.c <= c_best + tie) {
      chosen = &cand;
      break;
    }
  }

  AbcEstimate est;
  est.a = chosen->a;
  est.b = chosen->b;
  est.c = chosen->c;
  est.samples = fit.size();
  est.heldout = theta_heldout.size();
  for (const auto& t : theta_heldout) {
    const Moments mo = compute_moments(inst, dist, t, f_inf);
    const double rhs = 2.0 * est.a * mo.f_gap + est.b * mo.grad_sq + est.c;
    if (violated(rhs - mo.exact_sq, mo.exact_sq, slack)) ++est.heldout_violations;
  }
  return est;
}

BiasedAbcReport check_biased_abc(const QuadraticInstance& inst,
                                 const std::vector<Vector>& thetas, const SamplingScheme& scheme,
                                 const SampleGradientFn& gradients, const AbcEstimate& abc_in,
                                 const BiasedAbcOptions& opts) {
  check_zeta_eta(opts.zeta, opts.eta);
  const AbcEstimate abc = abc_in.with(opts.zeta, opts.eta);
  const BatchDistribution dist = batch_distribution(scheme);
  const double f_inf = inst.infimum();

  BiasedAbcReport rep;
  rep.zeta = opts.zeta;
  rep.eta = opts.eta;
  rep.exhaustive = dist.exhaustive;
  const double zeta = opts.zeta, eta = opts.eta;
  for (const auto& theta : thetas) {
    const Moments mo = compute_moments(inst, dist, theta, f_inf, &gradients);
    BiasedAbcRow row;
    row.grad_sq = mo.grad_sq;
    row.error_sq = opts.declared_error_sq.value_or(mo.error_sq);

    const double bias_rhs = abc.b_zeta() * mo.grad_sq - abc.c_zeta(row.error_sq);
    row.bias_margin = mo.inner_z - bias_rhs;
    row.bias_ok = !violated(row.bias_margin, std::max(std::abs(mo.inner_z), mo.grad_sq), opts.slack);

    const double abc_rhs =
        2.0 * abc.a_tilde() * mo.f_gap + abc.b_tilde() * mo.grad_sq + abc.c_tilde(row.error_sq);
    row.abc_margin = abc_rhs - mo.inexact_sq;
    row.abc_ok = !violated(row.abc_margin, std::max(abc_rhs, mo.inexact_sq), opts.slack);

    const double young_rhs = mo.grad_sq / (2.0 * zeta) + 0.5 * zeta * mo.error_norm * mo.error_norm;
    row.young_margin = young_rhs - std::abs(mo.inner_e);
    row.young_ok = !violated(row.young_margin, young_rhs, opts.slack);

    const double moment_rhs = (1.0 + eta) / eta * mo.exact_sq + (1.0 + eta) * mo.error_sq;
    row.moment_margin = moment_rhs - mo.inexact_sq;
    row.moment_ok = !violated(row.moment_margin, std::max(moment_rhs, mo.inexact_sq), opts.slack);

    rep.bias_violations += !row.bias_ok;
    rep.abc_violations += !row.abc_ok;
    rep.young_violations += !row.young_ok;
    rep.moment_violations += !row.moment_ok;
    rep.rows.push_back(row);
  }
  return rep;
}

Theorem1Report theorem1_check(const QuadraticInstance& inst, const Theorem1Config& cfg,
                              const AbcEstimate& abc) {
  check_zeta_eta(abc.zeta, abc.eta);
  if (cfg.iterations < 1) throw DomainError("theorem1_check: need at least one iteration");
  if (cfg.runs < 1) throw DomainError("theorem1_check: need at least one run");
  if (!(abc.b > 0.0)) throw DomainError("theorem1_check: constants missing (B must be positive)");
  if (cfg.theta0.size() != inst.d()) throw DimensionError("theorem1_check: theta0 has wrong length");

  Theorem1Report rep;
  rep.alpha = cfg.alpha;
  rep.lipschitz = inst.gradient_lipschitz();
  rep.c1 = abc.c1();
  rep.c2 = abc.c2();
  rep.c3 = abc.c3();
  rep.alpha_max = rep.c1 / rep.lipschitz;
  const double f_inf = inst.infimum();
  rep.delta0 = inst.exact_upper_loss(cfg.theta0) - f_inf;
  if (!(cfg.alpha > 0.0) || cfg.alpha > rep.alpha_max) {
    rep.applicable = false;
    rep.reason = fmt::format("step size {} outside (0, c1/L] = (0, {}]", cfg.alpha, rep.alpha_max);
    return rep;
  }

  const BatchDistribution dist = batch_distribution(cfg.scheme);
  const ProblemSet samples = inst.samples();
  const auto T = static_cast<size_t>(cfg.iterations);
  std::vector<double> grad_sq(T + 1, 0.0), err_sq(T + 1, 0.0);

  for (int r = 0; r < cfg.runs; ++r) {
    SamplingScheme scheme = cfg.scheme;
    scheme.seed = cfg.scheme.seed + static_cast<std::uint64_t>(r);
    Vector theta = cfg.theta0;
    for (size_t k = 0; k <= T; ++k) {
      std::vector<Vector> exact, approx;
      for (int i = 0; i < inst.m(); ++i) {
        exact.push_back(inst.exact_sample_gradient(i, theta));
        if (cfg.exact) {
          approx.push_back(exact.back());
        } else {
          HypergradOptions h = cfg.hypergrad;
          h.warm_start = false;
          h.epsilon = accuracy(cfg.accuracy, static_cast<std::int64_t>(k));
          approx.push_back(hypergrad_sample(*samples[i], theta, h).z);
        }
      }
      const Moments mo = moments_from(exact, approx, dist, 0.0);
      grad_sq[k] += mo.grad_sq / cfg.runs;
      err_sq[k] += mo.error_sq / cfg.runs;
      if (k == T) break;
      const Batch batch = sample_batch(scheme, static_cast<std::int64_t>(k));
      theta -= cfg.alpha * batch_mean(approx, batch);
    }
  }

  rep.mean_grad_sq = grad_sq;
  const double l = rep.lipschitz, a = cfg.alpha;
  double running_min = std::numeric_limits<double>::infinity();
  double tau = err_sq[0];
  rep.min_margin = std::numeric_limits<double>::infinity();
  for (size_t t = 1; t <= T; ++t) {
    running_min = std::min(running_min, grad_sq[t - 1]);
    tau += err_sq[t];
    const double growth = std::exp(static_cast<double>(t) * std::log1p(rep.c3 * l * a * a));
    const double bound = rep.c2 * growth / (a * static_cast<double>(t)) * rep.delta0 +
                         abc.c4(tau) * l * a + abc.c5(tau);
    rep.lhs.push_back(running_min);
    rep.rhs.push_back(bound);
    rep.tau.push_back(tau);
    const double margin = bound - running_min;
    rep.min_margin = std::min(rep.min_margin, margin);
    if (margin < 0.0) ++rep.violations;
  }
  return rep;
}

}  // namespace bilevel
