#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace bilevel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// H x W x C image stored row-major with the channel index fastest:
// element (y, x, c) lives at data[(y * W + x) * C + c].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels);
  ImageTensor(int height, int width, int channels, Vector data);

  static ImageTensor constant(int height, int width, int channels, double value);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  Eigen::Index size() const { return data_.size(); }

  double& operator()(int y, int x, int c) { return data_[index(y, x, c)]; }
  double operator()(int y, int x, int c) const { return data_[index(y, x, c)]; }

  const Vector& data() const { return data_; }
  Vector& data() { return data_; }

  bool same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool all_finite() const { return data_.allFinite(); }

  // Same shape, new contents.
  ImageTensor with_data(Vector data) const;

 private:
  Eigen::Index index(int y, int x, int c) const {
    return (static_cast<Eigen::Index>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  Vector data_;
};

double dot(const ImageTensor& a, const ImageTensor& b);

// Odd-sized k x k x C filter; coefficient (a, b, c) at ((a * k + b) * C + c).
// The centre tap is (k/2, k/2).
class ConvKernel {
 public:
  ConvKernel() = default;
  ConvKernel(int size, int channels);
  ConvKernel(int size, int channels, Vector coefficients);

  // Centre tap 1 on every channel, zero elsewhere.
  static ConvKernel delta(int size, int channels = 1);

  int size() const { return size_; }
  int channels() const { return channels_; }
  int radius() const { return size_ / 2; }

  double& operator()(int a, int b, int c) { return coefficients_[(a * size_ + b) * channels_ + c]; }
  double operator()(int a, int b, int c) const {
    return coefficients_[(a * size_ + b) * channels_ + c];
  }

  const Vector& coefficients() const { return coefficients_; }
  Vector& coefficients() { return coefficients_; }

 private:
  int size_ = 0;
  int channels_ = 0;
  Vector coefficients_;
};

// Circular 2-D convolution summed over input channels:
//   out(y, x) = sum_{a,b,c} k(a,b,c) * x(y + r - a, x + r - b, c)   (indices mod H, W)
// Output is H x W x 1.
ImageTensor conv2d(const ImageTensor& x, const ConvKernel& k);

// Exact adjoint of conv2d: <conv2d(x,k), r> == <x, conv2d_adjoint(r,k)>.
ImageTensor conv2d_adjoint(const ImageTensor& r, const ConvKernel& k);

// Gradient of k -> <r, conv2d(x, k)>, returned as a kernel of the given size.
ConvKernel conv2d_kernel_grad(const ImageTensor& x, const ImageTensor& r, int size);

// Applies a single-channel kernel to every channel independently (blur operator).
ImageTensor conv2d_per_channel(const ImageTensor& x, const ConvKernel& k);
ImageTensor conv2d_per_channel_adjoint(const ImageTensor& r, const ConvKernel& k);

using LinearMap = std::function<Vector(const Vector&)>;

struct CgReport {
  Vector solution;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  // Entry i is the residual norm of the iterate that would be returned had the
  // solve stopped after i steps (entry 0 is the starting residual).
  std::vector<double> residual_history;
};

// Conjugate gradient for a symmetric positive definite operator. `tol` is an
// absolute bound on ||A x - b||. Throws DefinitenessError when p'Ap <= 0.
CgReport conjugate_gradient(const LinearMap& apply_a, const Vector& b, double tol, int max_iter,
                            const Vector& x0);

// |DFT|^2 of a single-channel kernel embedded in an h x w periodic grid, i.e. the
// eigenvalues of A'A for the circular convolution operator A.
std::vector<double> circulant_spectrum(const ConvKernel& k, int h, int w);
double circulant_spectrum_min(const ConvKernel& k, int h, int w);
double circulant_spectrum_max(const ConvKernel& k, int h, int w);

}  // namespace bilevel
