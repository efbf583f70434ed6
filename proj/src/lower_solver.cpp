#include "bilevel/lower_solver.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "bilevel/errors.hpp"

namespace bilevel {

LowerSolveResult solve_lower(const BilevelSample& sample, const Vector& theta, double epsilon,
                             const Vector& x0, int max_iter) {
  if (!(epsilon > 0.0)) throw DomainError("solve_lower: epsilon must be positive");
  if (max_iter < 0) throw DomainError("solve_lower: max_iter must be non-negative");
  if (x0.size() != sample.state_dim()) throw DimensionError("solve_lower: x0 has wrong length");

  const double mu = sample.strong_convexity(theta);
  const double lip = sample.smoothness(theta);
  if (!(mu > 0.0) || !(lip >= mu)) {
    throw DomainError(fmt::format("solve_lower: need 0 < mu <= L, got mu = {}, L = {}", mu, lip));
  }
  const double momentum = (std::sqrt(lip) - std::sqrt(mu)) / (std::sqrt(lip) + std::sqrt(mu));
  const double target = mu * epsilon;

  Vector x = x0;
  Vector y = x0;
  LowerSolveResult best;
  best.mu_used = mu;
  best.grad_norm = std::numeric_limits<double>::infinity();

  for (int it = 0;; ++it) {
    const Vector g = sample.lower_grad(y, theta);
    const double gn = g.norm();
    if (!std::isfinite(gn)) {
      throw LowerSolveFailure(fmt::format("solve_lower: non-finite gradient at iteration {}", it),
                              best);
    }
    if (gn < best.grad_norm) {
      best.x_tilde = y;
      best.grad_norm = gn;
      best.iterations = it;
      best.epsilon_certified = gn / mu;
    }
    if (gn <= target) {
      best.iterations = it;
      return best;
    }
    if (it == max_iter) {
      best.iterations = it;
      throw LowerSolveFailure(
          fmt::format("solve_lower: no certificate after {} iterations (best eps = {:.3e}, "
                      "requested {:.3e})",
                      it, best.epsilon_certified, epsilon),
          best);
    }
    Vector x_next = y - g / lip;
    y = x_next + momentum * (x_next - x);
    x = std::move(x_next);
  }
}

}  // namespace bilevel
