#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Cholesky>

#include "bilevel/linalg.hpp"
#include "bilevel/problem.hpp"
#include "bilevel/sampling.hpp"

namespace bilevel {

// Analytic bilevel family used as ground truth:
//   h_i(x, theta) = 1/2 x'Qx - x'(B theta + y_i),   g_i(x) = 1/2 ||x - x*_i||^2
// so x_i(theta) = Q^{-1}(B theta + y_i) and grad f_i = B'Q^{-1}(x_i(theta) - x*_i).
class QuadraticInstance {
 public:
  QuadraticInstance(Matrix q, Matrix b, std::vector<Vector> observations,
                    std::vector<Vector> targets);

  // Q = G'G + 0.1 I with G standard normal; B, y_i, x*_i standard normal.
  static QuadraticInstance random(int n, int d, int m, std::uint64_t seed);

  int n() const { return static_cast<int>(data_->q.rows()); }
  int d() const { return static_cast<int>(data_->b.cols()); }
  int m() const { return static_cast<int>(data_->observations.size()); }

  const Matrix& q() const { return data_->q; }
  const Matrix& b() const { return data_->b; }
  const Vector& observation(int i) const { return data_->observations.at(i); }
  const Vector& target(int i) const { return data_->targets.at(i); }
  double mu() const { return data_->mu; }
  double lipschitz() const { return data_->lipschitz; }

  Vector exact_solution(int i, const Vector& theta) const;
  Vector exact_sample_gradient(int i, const Vector& theta) const;
  double exact_sample_loss(int i, const Vector& theta) const;

  // Weighted mean over the batch: sum_i v_i grad f_i / sum_i v_i.
  Vector exact_hypergradient(const Vector& theta, const Batch& batch) const;
  Vector exact_full_gradient(const Vector& theta) const;
  double exact_upper_loss(const Vector& theta) const;

  // ||B'Q^{-1}|| * ||Q^{-1}B||, the Lipschitz constant of grad f.
  double gradient_lipschitz() const;
  // argmin_theta f (least-squares solution of the normal equations) and f there.
  Vector minimizer() const;
  double infimum() const;

  ProblemSet samples() const;

 private:
  struct Data {
    Matrix q;
    Matrix b;
    std::vector<Vector> observations;
    std::vector<Vector> targets;
    Eigen::LLT<Matrix> llt;
    double mu = 0.0;
    double lipschitz = 0.0;
  };

  std::shared_ptr<const Data> data_;
};

// BilevelSample view of term i of a QuadraticInstance.
class QuadraticSample final : public BilevelSample {
 public:
  QuadraticSample(std::shared_ptr<const QuadraticInstance> instance, int index);

  Eigen::Index state_dim() const override;
  Eigen::Index param_dim() const override;
  double lower_value(const Vector& x, const Vector& theta) const override;
  Vector lower_grad(const Vector& x, const Vector& theta) const override;
  Vector lower_hess_vec(const Vector& x, const Vector& theta, const Vector& w) const override;
  Vector mixed_vjp(const Vector& x, const Vector& theta, const Vector& q) const override;
  double upper_value(const Vector& x) const override;
  Vector upper_grad(const Vector& x) const override;
  double strong_convexity(const Vector&) const override;
  double smoothness(const Vector&) const override;
  Vector initial_point() const override;

 private:
  std::shared_ptr<const QuadraticInstance> instance_;
  int index_;
};

}  // namespace bilevel
