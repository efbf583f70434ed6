#pragma once

#include <cstdint>

#include "bilevel/linalg.hpp"
#include "bilevel/problem.hpp"

namespace bilevel {

// Field-of-Experts regulariser
//   R(x) = e^{theta_0} sum_j e^{theta_j} || c_j * x ||_{nu_j},  nu_j = e^{s_j},
// with ||z||_nu = sum_i sqrt(z_i^2 + nu^2) - nu.
//
// Parameter layout (length 1 + 2J + J k^2 C):
//   [theta_0 | theta_1 .. theta_J | s_1 .. s_J | c_1 .. c_J]
// where each kernel block uses the ConvKernel coefficient order.
struct FoEShape {
  int experts = 1;
  int kernel_size = 3;
  int channels = 1;

  void validate() const;
  Eigen::Index param_dim() const;
  Eigen::Index kernel_len() const {
    return static_cast<Eigen::Index>(kernel_size) * kernel_size * channels;
  }
  Eigen::Index weight_offset(int j) const { return 1 + j; }
  Eigen::Index smoothing_offset(int j) const { return 1 + experts + j; }
  Eigen::Index kernel_offset(int j) const { return 1 + 2 * experts + j * kernel_len(); }
};

// Read-only view of a parameter vector through an FoEShape. The vector must
// outlive the view.
class FoEParams {
 public:
  FoEParams(const FoEShape& shape, const Vector& theta);

  const FoEShape& shape() const { return shape_; }
  const Vector& raw() const { return *theta_; }

  double log_scale() const { return (*theta_)[0]; }
  double log_weight(int j) const { return (*theta_)[shape_.weight_offset(j)]; }
  double log_smoothing(int j) const { return (*theta_)[shape_.smoothing_offset(j)]; }
  double smoothing(int j) const;
  // e^{theta_0 + theta_j}
  double expert_weight(int j) const;
  ConvKernel kernel(int j) const;

 private:
  FoEShape shape_;
  const Vector* theta_;
};

// Kernels ~ N(0, 1/k^2), theta_0 = log(lambda_init), theta_j = 0, s_j = log(0.01).
Vector foe_initial_params(const FoEShape& shape, double lambda_init, std::uint64_t seed);

double smoothed_l1(const Vector& z, double nu);

double foe_value(const ImageTensor& x, const FoEParams& p);
ImageTensor foe_grad_x(const ImageTensor& x, const FoEParams& p);
ImageTensor foe_hess_vec(const ImageTensor& x, const FoEParams& p, const ImageTensor& w);
// Component t is <q, d(grad_x R)/d theta_t>.
Vector foe_mixed_vjp(const ImageTensor& x, const FoEParams& p, const ImageTensor& q);
// e^{theta_0} sum_j e^{theta_j} ||c_j||_1^2 / nu_j, an upper bound on ||Hess R||.
double foe_curvature_bound(const FoEParams& p);

enum class LowerMode { kDenoise, kDeblur };

// h(x) = 1/2 ||A x - y||^2 + R(x), A = identity (denoise) or a per-channel
// circular blur (deblur).
struct LowerProblemSpec {
  LowerMode mode = LowerMode::kDenoise;
  ImageTensor observation;
  ConvKernel blur;
  double mu = 1.0;
  double data_lipschitz = 1.0;

  static LowerProblemSpec denoise(ImageTensor y);
  // mu and the data Lipschitz constant come from the blur's circulant spectrum;
  // throws DefinitenessError when mu < 1e-8.
  static LowerProblemSpec deblur(ImageTensor y, ConvKernel blur);

  double lipschitz_estimate(const FoEParams& p) const;
  ImageTensor forward(const ImageTensor& x) const;
  ImageTensor adjoint(const ImageTensor& r) const;
};

struct ValueGrad {
  double value = 0.0;
  ImageTensor gradient;
};

ValueGrad lower_value_grad(const LowerProblemSpec& spec, const ImageTensor& x, const FoEParams& p);
ImageTensor lower_hess_vec(const LowerProblemSpec& spec, const ImageTensor& x, const FoEParams& p,
                           const ImageTensor& w);
Vector mixed_vjp(const LowerProblemSpec& spec, const ImageTensor& x, const FoEParams& p,
                 const ImageTensor& q);

// Imaging sample with upper loss g(x) = ||x - x*||^2.
class FoESample final : public BilevelSample {
 public:
  FoESample(FoEShape shape, LowerProblemSpec spec, ImageTensor target);

  const LowerProblemSpec& spec() const { return spec_; }
  const ImageTensor& target() const { return target_; }
  const FoEShape& shape() const { return shape_; }
  ImageTensor as_image(const Vector& x) const { return target_.with_data(x); }

  Eigen::Index state_dim() const override { return target_.size(); }
  Eigen::Index param_dim() const override { return shape_.param_dim(); }
  double lower_value(const Vector& x, const Vector& theta) const override;
  Vector lower_grad(const Vector& x, const Vector& theta) const override;
  Vector lower_hess_vec(const Vector& x, const Vector& theta, const Vector& w) const override;
  Vector mixed_vjp(const Vector& x, const Vector& theta, const Vector& q) const override;
  double upper_value(const Vector& x) const override;
  Vector upper_grad(const Vector& x) const override;
  double strong_convexity(const Vector&) const override { return spec_.mu; }
  double smoothness(const Vector& theta) const override;
  Vector initial_point() const override { return spec_.observation.data(); }

 private:
  FoEShape shape_;
  LowerProblemSpec spec_;
  ImageTensor target_;
};

}  // namespace bilevel
