#include "bilevel/quadratic.hpp"

#include <random>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <fmt/format.h>

#include "bilevel/errors.hpp"

namespace bilevel {

QuadraticInstance::QuadraticInstance(Matrix q, Matrix b, std::vector<Vector> observations,
                                     std::vector<Vector> targets) {
  const auto n = q.rows();
  if (q.cols() != n || b.rows() != n || n == 0 || b.cols() == 0) {
    throw DimensionError(fmt::format("quadratic instance: Q is {}x{}, B is {}x{}", q.rows(),
                                     q.cols(), b.rows(), b.cols()));
  }
  if (observations.empty() || observations.size() != targets.size()) {
    throw DimensionError("quadratic instance: need one target per observation");
  }
  for (size_t i = 0; i < observations.size(); ++i) {
    if (observations[i].size() != n || targets[i].size() != n) {
      throw DimensionError(fmt::format("quadratic instance: sample {} has wrong length", i));
    }
  }
  if ((q - q.transpose()).norm() > 1e-12 * (1.0 + q.norm())) {
    throw DefinitenessError("quadratic instance: Q is not symmetric");
  }

  auto data = std::make_shared<Data>();
  data->llt.compute(q);
  if (data->llt.info() != Eigen::Success) {
    throw DefinitenessError("quadratic instance: Q is not positive definite");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(q, Eigen::EigenvaluesOnly);
  data->mu = eig.eigenvalues().minCoeff();
  data->lipschitz = eig.eigenvalues().maxCoeff();
  if (!(data->mu > 0.0)) throw DefinitenessError("quadratic instance: Q is singular");
  data->q = std::move(q);
  data->b = std::move(b);
  data->observations = std::move(observations);
  data->targets = std::move(targets);
  data_ = std::move(data);
}

QuadraticInstance QuadraticInstance::random(int n, int d, int m, std::uint64_t seed) {
  if (n <= 0 || d <= 0 || m <= 0) throw DimensionError("quadratic instance: sizes must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix a(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) a(i, j) = normal(rng);
    return a;
  };
  const Matrix g = draw(n, n);
  Matrix q = g.transpose() * g + 0.1 * Matrix::Identity(n, n);
  q = 0.5 * (q + q.transpose()).eval();
  Matrix b = draw(n, d);
  std::vector<Vector> ys, xs;
  for (int i = 0; i < m; ++i) {
    ys.emplace_back(draw(n, 1).col(0));
    xs.emplace_back(draw(n, 1).col(0));
  }
  return QuadraticInstance(std::move(q), std::move(b), std::move(ys), std::move(xs));
}

Vector QuadraticInstance::exact_solution(int i, const Vector& theta) const {
  if (theta.size() != d()) throw DimensionError("quadratic instance: theta has wrong length");
  return data_->llt.solve(data_->b * theta + observation(i));
}

Vector QuadraticInstance::exact_sample_gradient(int i, const Vector& theta) const {
  const Vector residual = exact_solution(i, theta) - target(i);
  return data_->b.transpose() * data_->llt.solve(residual);
}

double QuadraticInstance::exact_sample_loss(int i, const Vector& theta) const {
  return 0.5 * (exact_solution(i, theta) - target(i)).squaredNorm();
}

Vector QuadraticInstance::exact_hypergradient(const Vector& theta, const Batch& batch) const {
  if (batch.empty()) throw DomainError("exact_hypergradient: empty batch");
  Vector acc = Vector::Zero(d());
  double total = 0.0;
  for (const auto& e : batch) {
    acc += e.weight * exact_sample_gradient(e.index, theta);
    total += e.weight;
  }
  return acc / total;
}

Vector QuadraticInstance::exact_full_gradient(const Vector& theta) const {
  Batch all;
  for (int i = 0; i < m(); ++i) all.push_back({i, 1.0});
  return exact_hypergradient(theta, all);
}

double QuadraticInstance::exact_upper_loss(const Vector& theta) const {
  double acc = 0.0;
  for (int i = 0; i < m(); ++i) acc += exact_sample_loss(i, theta);
  return acc / m();
}

double QuadraticInstance::gradient_lipschitz() const {
  const Matrix qinv_b = data_->llt.solve(data_->b);
  Eigen::JacobiSVD<Matrix> svd(qinv_b);
  const double s = svd.singularValues()(0);
  return s * s;
}

Vector QuadraticInstance::minimizer() const {
  // f(theta) = (1/m) sum_i 1/2 ||M theta + c_i||^2 with M = Q^{-1}B, c_i = Q^{-1}y_i - x*_i.
  const Matrix mmat = data_->llt.solve(data_->b);
  Vector cbar = Vector::Zero(n());
  for (int i = 0; i < m(); ++i) cbar += data_->llt.solve(observation(i)) - target(i);
  cbar /= m();
  return mmat.colPivHouseholderQr().solve(-cbar);
}

double QuadraticInstance::infimum() const { return exact_upper_loss(minimizer()); }

ProblemSet QuadraticInstance::samples() const {
  auto self = std::make_shared<const QuadraticInstance>(*this);
  ProblemSet out;
  for (int i = 0; i < m(); ++i) out.push_back(std::make_shared<QuadraticSample>(self, i));
  return out;
}

QuadraticSample::QuadraticSample(std::shared_ptr<const QuadraticInstance> instance, int index)
    : instance_(std::move(instance)), index_(index) {
  if (index_ < 0 || index_ >= instance_->m()) throw DimensionError("quadratic sample: bad index");
}

Eigen::Index QuadraticSample::state_dim() const { return instance_->n(); }
Eigen::Index QuadraticSample::param_dim() const { return instance_->d(); }

double QuadraticSample::lower_value(const Vector& x, const Vector& theta) const {
  return 0.5 * x.dot(instance_->q() * x) -
         x.dot(instance_->b() * theta + instance_->observation(index_));
}

Vector QuadraticSample::lower_grad(const Vector& x, const Vector& theta) const {
  return instance_->q() * x - instance_->b() * theta - instance_->observation(index_);
}

Vector QuadraticSample::lower_hess_vec(const Vector&, const Vector&, const Vector& w) const {
  return instance_->q() * w;
}

// d(grad_x h)/d theta = -B
Vector QuadraticSample::mixed_vjp(const Vector&, const Vector&, const Vector& q) const {
  return -(instance_->b().transpose() * q);
}

double QuadraticSample::upper_value(const Vector& x) const {
  return 0.5 * (x - instance_->target(index_)).squaredNorm();
}

Vector QuadraticSample::upper_grad(const Vector& x) const { return x - instance_->target(index_); }

double QuadraticSample::strong_convexity(const Vector&) const { return instance_->mu(); }
double QuadraticSample::smoothness(const Vector&) const { return instance_->lipschitz(); }
Vector QuadraticSample::initial_point() const { return instance_->observation(index_); }

}  // namespace bilevel
