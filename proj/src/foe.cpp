#include "bilevel/foe.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "bilevel/errors.hpp"

namespace bilevel {

namespace {

// phi_nu(t) = sqrt(t^2 + nu^2) - nu and its derivatives in t (and nu for the mixed term).
inline double phi(double t, double nu) { return t * t / (std::sqrt(t * t + nu * nu) + nu); }
inline double dphi(double t, double nu) { return t / std::sqrt(t * t + nu * nu); }
inline double d2phi(double t, double nu) {
  const double s = t * t + nu * nu;
  return nu * nu / (s * std::sqrt(s));
}
// nu * d/dnu dphi: chain factor for the log-parameterised smoothing.
inline double dphi_dlognu(double t, double nu) {
  const double s = t * t + nu * nu;
  return -t * nu * nu / (s * std::sqrt(s));
}

void check_image(const ImageTensor& x, const FoEShape& shape, const char* what) {
  if (x.channels() != shape.channels) {
    throw DimensionError(fmt::format("{}: image has {} channels, model expects {}", what,
                                     x.channels(), shape.channels));
  }
}

void check_same(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (!a.same_shape(b)) throw DimensionError(fmt::format("{}: shape mismatch", what));
}

}  // namespace

void FoEShape::validate() const {
  if (experts <= 0) throw ConfigError("FoE: number of experts must be positive");
  if (kernel_size <= 0 || kernel_size % 2 == 0) throw ConfigError("FoE: kernel size must be odd");
  if (channels <= 0) throw ConfigError("FoE: channels must be positive");
}

Eigen::Index FoEShape::param_dim() const { return 1 + 2 * experts + experts * kernel_len(); }

FoEParams::FoEParams(const FoEShape& shape, const Vector& theta) : shape_(shape), theta_(&theta) {
  shape_.validate();
  if (theta.size() != shape_.param_dim()) {
    throw DimensionError(fmt::format("FoE: parameter vector has length {}, layout needs {}",
                                     theta.size(), shape_.param_dim()));
  }
}

double FoEParams::smoothing(int j) const { return std::exp(log_smoothing(j)); }

double FoEParams::expert_weight(int j) const { return std::exp(log_scale() + log_weight(j)); }

ConvKernel FoEParams::kernel(int j) const {
  return ConvKernel(shape_.kernel_size, shape_.channels,
                    theta_->segment(shape_.kernel_offset(j), shape_.kernel_len()));
}

Vector foe_initial_params(const FoEShape& shape, double lambda_init, std::uint64_t seed) {
  shape.validate();
  if (!(lambda_init > 0.0)) throw DomainError("FoE: lambda_init must be positive");
  Vector theta = Vector::Zero(shape.param_dim());
  theta[0] = std::log(lambda_init);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / shape.kernel_size);
  for (int j = 0; j < shape.experts; ++j) {
    theta[shape.smoothing_offset(j)] = std::log(0.01);
    for (Eigen::Index t = 0; t < shape.kernel_len(); ++t) {
      theta[shape.kernel_offset(j) + t] = normal(rng);
    }
  }
  return theta;
}

double smoothed_l1(const Vector& z, double nu) {
  if (!(nu > 0.0)) throw DomainError(fmt::format("smoothed_l1: nu must be positive, got {}", nu));
  double acc = 0.0;
  for (double t : z) acc += phi(t, nu);
  return acc;
}

double foe_value(const ImageTensor& x, const FoEParams& p) {
  check_image(x, p.shape(), "foe_value");
  double acc = 0.0;
  for (int j = 0; j < p.shape().experts; ++j) {
    const ImageTensor t = conv2d(x, p.kernel(j));
    acc += p.expert_weight(j) * smoothed_l1(t.data(), p.smoothing(j));
  }
  return acc;
}

ImageTensor foe_grad_x(const ImageTensor& x, const FoEParams& p) {
  check_image(x, p.shape(), "foe_grad_x");
  ImageTensor g(x.height(), x.width(), x.channels());
  for (int j = 0; j < p.shape().experts; ++j) {
    const ConvKernel c = p.kernel(j);
    const double nu = p.smoothing(j);
    ImageTensor t = conv2d(x, c);
    for (auto& v : t.data()) v = dphi(v, nu);
    g.data() += p.expert_weight(j) * conv2d_adjoint(t, c).data();
  }
  return g;
}

ImageTensor foe_hess_vec(const ImageTensor& x, const FoEParams& p, const ImageTensor& w) {
  check_image(x, p.shape(), "foe_hess_vec");
  check_same(x, w, "foe_hess_vec");
  ImageTensor out(x.height(), x.width(), x.channels());
  for (int j = 0; j < p.shape().experts; ++j) {
    const ConvKernel c = p.kernel(j);
    const double nu = p.smoothing(j);
    const ImageTensor t = conv2d(x, c);
    ImageTensor u = conv2d(w, c);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] *= d2phi(t.data()[i], nu);
    out.data() += p.expert_weight(j) * conv2d_adjoint(u, c).data();
  }
  return out;
}

Vector foe_mixed_vjp(const ImageTensor& x, const FoEParams& p, const ImageTensor& q) {
  check_image(x, p.shape(), "foe_mixed_vjp");
  check_same(x, q, "foe_mixed_vjp");
  const FoEShape& shape = p.shape();
  Vector out = Vector::Zero(shape.param_dim());
  for (int j = 0; j < shape.experts; ++j) {
    const ConvKernel c = p.kernel(j);
    const double nu = p.smoothing(j);
    const double w = p.expert_weight(j);
    const ImageTensor t = conv2d(x, c);
    const ImageTensor u = conv2d(q, c);

    ImageTensor d1 = t, d2 = t;
    double inner = 0.0, inner_nu = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double ti = t.data()[i], ui = u.data()[i];
      d1.data()[i] = dphi(ti, nu);
      d2.data()[i] = ui * d2phi(ti, nu);
      inner += ui * d1.data()[i];
      inner_nu += ui * dphi_dlognu(ti, nu);
    }
    out[0] += w * inner;
    out[shape.weight_offset(j)] = w * inner;
    out[shape.smoothing_offset(j)] = w * inner_nu;
    // <c*q, phi'(c*x)> depends on c through both the forward and adjoint occurrence.
    const Vector gk = conv2d_kernel_grad(q, d1, shape.kernel_size).coefficients() +
                      conv2d_kernel_grad(x, d2, shape.kernel_size).coefficients();
    out.segment(shape.kernel_offset(j), shape.kernel_len()) = w * gk;
  }
  return out;
}

double foe_curvature_bound(const FoEParams& p) {
  double acc = 0.0;
  for (int j = 0; j < p.shape().experts; ++j) {
    const double l1 = p.kernel(j).coefficients().lpNorm<1>();
    acc += p.expert_weight(j) * l1 * l1 / p.smoothing(j);
  }
  return acc;
}

LowerProblemSpec LowerProblemSpec::denoise(ImageTensor y) {
  LowerProblemSpec s;
  s.mode = LowerMode::kDenoise;
  s.observation = std::move(y);
  s.mu = 1.0;
  s.data_lipschitz = 1.0;
  return s;
}

LowerProblemSpec LowerProblemSpec::deblur(ImageTensor y, ConvKernel blur) {
  if (blur.channels() != 1) throw DimensionError("deblur: blur kernel must have one channel");
  const auto spectrum = circulant_spectrum(blur, y.height(), y.width());
  const double lo = *std::min_element(spectrum.begin(), spectrum.end());
  const double hi = *std::max_element(spectrum.begin(), spectrum.end());
  if (lo < 1e-8) {
    throw DefinitenessError(fmt::format(
        "deblur: blur operator is numerically singular on a {}x{} grid (lambda_min = {:.3e})",
        y.height(), y.width(), lo));
  }
  LowerProblemSpec s;
  s.mode = LowerMode::kDeblur;
  s.observation = std::move(y);
  s.blur = std::move(blur);
  s.mu = lo;
  s.data_lipschitz = hi;
  return s;
}

double LowerProblemSpec::lipschitz_estimate(const FoEParams& p) const {
  return data_lipschitz + foe_curvature_bound(p);
}

ImageTensor LowerProblemSpec::forward(const ImageTensor& x) const {
  return mode == LowerMode::kDenoise ? x : conv2d_per_channel(x, blur);
}

ImageTensor LowerProblemSpec::adjoint(const ImageTensor& r) const {
  return mode == LowerMode::kDenoise ? r : conv2d_per_channel_adjoint(r, blur);
}

ValueGrad lower_value_grad(const LowerProblemSpec& spec, const ImageTensor& x,
                           const FoEParams& p) {
  check_same(x, spec.observation, "lower_value_grad");
  ImageTensor residual = spec.forward(x);
  residual.data() -= spec.observation.data();
  ValueGrad out;
  out.value = 0.5 * residual.data().squaredNorm() + foe_value(x, p);
  out.gradient = spec.adjoint(residual);
  out.gradient.data() += foe_grad_x(x, p).data();
  return out;
}

ImageTensor lower_hess_vec(const LowerProblemSpec& spec, const ImageTensor& x, const FoEParams& p,
                           const ImageTensor& w) {
  check_same(x, spec.observation, "lower_hess_vec");
  check_same(x, w, "lower_hess_vec");
  ImageTensor out = spec.adjoint(spec.forward(w));
  out.data() += foe_hess_vec(x, p, w).data();
  return out;
}

Vector mixed_vjp(const LowerProblemSpec& spec, const ImageTensor& x, const FoEParams& p,
                 const ImageTensor& q) {
  check_same(x, spec.observation, "mixed_vjp");
  // The data term does not depend on theta.
  return foe_mixed_vjp(x, p, q);
}

FoESample::FoESample(FoEShape shape, LowerProblemSpec spec, ImageTensor target)
    : shape_(shape), spec_(std::move(spec)), target_(std::move(target)) {
  shape_.validate();
  if (!target_.same_shape(spec_.observation)) {
    throw DimensionError("FoE sample: target and observation differ in shape");
  }
  if (target_.channels() != shape_.channels) {
    throw DimensionError("FoE sample: image channels do not match the model");
  }
}

double FoESample::lower_value(const Vector& x, const Vector& theta) const {
  return lower_value_grad(spec_, as_image(x), FoEParams(shape_, theta)).value;
}

Vector FoESample::lower_grad(const Vector& x, const Vector& theta) const {
  const ImageTensor img = as_image(x);
  ImageTensor residual = spec_.forward(img);
  residual.data() -= spec_.observation.data();
  return spec_.adjoint(residual).data() + foe_grad_x(img, FoEParams(shape_, theta)).data();
}

Vector FoESample::lower_hess_vec(const Vector& x, const Vector& theta, const Vector& w) const {
  return bilevel::lower_hess_vec(spec_, as_image(x), FoEParams(shape_, theta), as_image(w)).data();
}

Vector FoESample::mixed_vjp(const Vector& x, const Vector& theta, const Vector& q) const {
  return bilevel::mixed_vjp(spec_, as_image(x), FoEParams(shape_, theta), as_image(q));
}

double FoESample::upper_value(const Vector& x) const {
  return (x - target_.data()).squaredNorm();
}

Vector FoESample::upper_grad(const Vector& x) const { return 2.0 * (x - target_.data()); }

double FoESample::smoothness(const Vector& theta) const {
  return spec_.lipschitz_estimate(FoEParams(shape_, theta));
}

}  // namespace bilevel
