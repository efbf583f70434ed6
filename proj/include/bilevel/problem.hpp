#pragma once

#include <memory>
#include <vector>

#include "bilevel/linalg.hpp"

namespace bilevel {

// One term i of the bilevel problem
//   min_theta (1/m) sum_i g_i(x_i(theta)),  x_i(theta) = argmin_x h_i(x, theta),
// with h_i(., theta) mu-strongly convex and L-smooth. States and parameters are
// flat vectors; imaging samples interpret the state as an image.
class BilevelSample {
 public:
  virtual ~BilevelSample() = default;

  virtual Eigen::Index state_dim() const = 0;
  virtual Eigen::Index param_dim() const = 0;

  virtual double lower_value(const Vector& x, const Vector& theta) const = 0;
  virtual Vector lower_grad(const Vector& x, const Vector& theta) const = 0;
  virtual Vector lower_hess_vec(const Vector& x, const Vector& theta, const Vector& w) const = 0;
  // Component t is q' d(grad_x h)/d theta_t.
  virtual Vector mixed_vjp(const Vector& x, const Vector& theta, const Vector& q) const = 0;

  virtual double upper_value(const Vector& x) const = 0;
  virtual Vector upper_grad(const Vector& x) const = 0;

  virtual double strong_convexity(const Vector& theta) const = 0;
  virtual double smoothness(const Vector& theta) const = 0;

  // Cold-start point for the lower solver (the observation y_i).
  virtual Vector initial_point() const = 0;
};

using SamplePtr = std::shared_ptr<const BilevelSample>;
using ProblemSet = std::vector<SamplePtr>;

}  // namespace bilevel
