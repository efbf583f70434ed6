#pragma once

#include <stdexcept>

#include "bilevel/linalg.hpp"
#include "bilevel/problem.hpp"

namespace bilevel {

struct LowerSolveResult {
  Vector x_tilde;
  double grad_norm = 0.0;
  int iterations = 0;
  // grad_norm / mu_used; bounds ||x_tilde - x_hat|| by strong convexity.
  double epsilon_certified = 0.0;
  double mu_used = 0.0;
};

// Raised when the iteration budget runs out before ||grad h|| <= mu * eps.
class LowerSolveFailure : public std::runtime_error {
 public:
  LowerSolveFailure(const std::string& what, LowerSolveResult best)
      : std::runtime_error(what), best_(std::move(best)) {}
  const LowerSolveResult& best() const { return best_; }

 private:
  LowerSolveResult best_;
};

// Accelerated gradient descent with step 1/L and constant momentum
// (sqrt(L) - sqrt(mu)) / (sqrt(L) + sqrt(mu)), stopped by the a-posteriori
// certificate ||grad h(x, theta)|| <= mu * epsilon.
LowerSolveResult solve_lower(const BilevelSample& sample, const Vector& theta, double epsilon,
                             const Vector& x0, int max_iter);

}  // namespace bilevel
