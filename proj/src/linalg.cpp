#include "bilevel/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <fmt/format.h>

#include "bilevel/errors.hpp"

namespace bilevel {

namespace {

void check_dims(int height, int width, int channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw DimensionError(fmt::format("image dimensions must be positive, got {}x{}x{}", height,
                                     width, channels));
  }
}

// Wrapped row/column lookup for shift `offset` on a periodic axis of length n.
std::vector<int> wrapped(int n, int offset) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) {
    idx[i] = ((i + offset) % n + n) % n;
  }
  return idx;
}

}  // namespace

ImageTensor::ImageTensor(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
  check_dims(height, width, channels);
  data_ = Vector::Zero(static_cast<Eigen::Index>(height) * width * channels);
}

ImageTensor::ImageTensor(int height, int width, int channels, Vector data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  check_dims(height, width, channels);
  if (data_.size() != static_cast<Eigen::Index>(height) * width * channels) {
    throw DimensionError(fmt::format("image data length {} does not match {}x{}x{}",
                                     data_.size(), height, width, channels));
  }
}

ImageTensor ImageTensor::constant(int height, int width, int channels, double value) {
  ImageTensor img(height, width, channels);
  img.data_.setConstant(value);
  return img;
}

ImageTensor ImageTensor::with_data(Vector data) const {
  return ImageTensor(height_, width_, channels_, std::move(data));
}

double dot(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("dot: shape mismatch");
  }
  return a.data().dot(b.data());
}

ConvKernel::ConvKernel(int size, int channels) : size_(size), channels_(channels) {
  if (size <= 0 || size % 2 == 0) {
    throw DimensionError(fmt::format("kernel size must be odd and positive, got {}", size));
  }
  if (channels <= 0) {
    throw DimensionError("kernel channels must be positive");
  }
  coefficients_ = Vector::Zero(static_cast<Eigen::Index>(size) * size * channels);
}

ConvKernel::ConvKernel(int size, int channels, Vector coefficients) : ConvKernel(size, channels) {
  if (coefficients.size() != coefficients_.size()) {
    throw DimensionError(fmt::format("kernel expects {} coefficients, got {}",
                                     coefficients_.size(), coefficients.size()));
  }
  if (!coefficients.allFinite()) {
    throw DomainError("kernel coefficients must be finite");
  }
  coefficients_ = std::move(coefficients);
}

ConvKernel ConvKernel::delta(int size, int channels) {
  ConvKernel k(size, channels);
  for (int c = 0; c < channels; ++c) {
    k(k.radius(), k.radius(), c) = 1.0;
  }
  return k;
}

ImageTensor conv2d(const ImageTensor& x, const ConvKernel& k) {
  if (x.channels() != k.channels()) {
    throw DimensionError(fmt::format("conv2d: image has {} channels, kernel has {}", x.channels(),
                                     k.channels()));
  }
  const int H = x.height(), W = x.width(), C = x.channels(), r = k.radius();
  ImageTensor out(H, W, 1);
  for (int a = 0; a < k.size(); ++a) {
    const auto rows = wrapped(H, r - a);
    for (int b = 0; b < k.size(); ++b) {
      const auto cols = wrapped(W, r - b);
      for (int c = 0; c < C; ++c) {
        const double w = k(a, b, c);
        if (w == 0.0) continue;
        for (int y = 0; y < H; ++y) {
          for (int xx = 0; xx < W; ++xx) {
            out(y, xx, 0) += w * x(rows[y], cols[xx], c);
          }
        }
      }
    }
  }
  return out;
}

ImageTensor conv2d_adjoint(const ImageTensor& r, const ConvKernel& k) {
  if (r.channels() != 1) {
    throw DimensionError("conv2d_adjoint: residual must have a single channel");
  }
  const int H = r.height(), W = r.width(), C = k.channels(), rad = k.radius();
  ImageTensor out(H, W, C);
  for (int a = 0; a < k.size(); ++a) {
    const auto rows = wrapped(H, a - rad);
    for (int b = 0; b < k.size(); ++b) {
      const auto cols = wrapped(W, b - rad);
      for (int c = 0; c < C; ++c) {
        const double w = k(a, b, c);
        if (w == 0.0) continue;
        for (int y = 0; y < H; ++y) {
          for (int xx = 0; xx < W; ++xx) {
            out(y, xx, c) += w * r(rows[y], cols[xx], 0);
          }
        }
      }
    }
  }
  return out;
}

ConvKernel conv2d_kernel_grad(const ImageTensor& x, const ImageTensor& r, int size) {
  if (r.channels() != 1 || r.height() != x.height() || r.width() != x.width()) {
    throw DimensionError("conv2d_kernel_grad: shape mismatch");
  }
  ConvKernel g(size, x.channels());
  const int H = x.height(), W = x.width(), C = x.channels(), rad = g.radius();
  for (int a = 0; a < size; ++a) {
    const auto rows = wrapped(H, rad - a);
    for (int b = 0; b < size; ++b) {
      const auto cols = wrapped(W, rad - b);
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int y = 0; y < H; ++y) {
          for (int xx = 0; xx < W; ++xx) {
            acc += r(y, xx, 0) * x(rows[y], cols[xx], c);
          }
        }
        g(a, b, c) = acc;
      }
    }
  }
  return g;
}

ImageTensor conv2d_per_channel(const ImageTensor& x, const ConvKernel& k) {
  if (k.channels() != 1) {
    throw DimensionError("conv2d_per_channel: kernel must have a single channel");
  }
  const int H = x.height(), W = x.width(), C = x.channels(), r = k.radius();
  ImageTensor out(H, W, C);
  for (int a = 0; a < k.size(); ++a) {
    const auto rows = wrapped(H, r - a);
    for (int b = 0; b < k.size(); ++b) {
      const auto cols = wrapped(W, r - b);
      const double w = k(a, b, 0);
      if (w == 0.0) continue;
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) {
          for (int c = 0; c < C; ++c) {
            out(y, xx, c) += w * x(rows[y], cols[xx], c);
          }
        }
      }
    }
  }
  return out;
}

ImageTensor conv2d_per_channel_adjoint(const ImageTensor& r, const ConvKernel& k) {
  if (k.channels() != 1) {
    throw DimensionError("conv2d_per_channel_adjoint: kernel must have a single channel");
  }
  const int H = r.height(), W = r.width(), C = r.channels(), rad = k.radius();
  ImageTensor out(H, W, C);
  for (int a = 0; a < k.size(); ++a) {
    const auto rows = wrapped(H, a - rad);
    for (int b = 0; b < k.size(); ++b) {
      const auto cols = wrapped(W, b - rad);
      const double w = k(a, b, 0);
      if (w == 0.0) continue;
      for (int y = 0; y < H; ++y) {
        for (int xx = 0; xx < W; ++xx) {
          for (int c = 0; c < C; ++c) {
            out(y, xx, c) += w * r(rows[y], cols[xx], c);
          }
        }
      }
    }
  }
  return out;
}

CgReport conjugate_gradient(const LinearMap& apply_a, const Vector& b, double tol, int max_iter,
                            const Vector& x0) {
  if (!(tol > 0.0)) throw DomainError("conjugate_gradient: tol must be positive");
  if (max_iter <= 0) throw DomainError("conjugate_gradient: max_iter must be positive");
  if (x0.size() != b.size()) throw DimensionError("conjugate_gradient: x0 and b differ in length");

  CgReport rep;
  Vector x = x0;
  Vector r = b - apply_a(x);
  if (r.size() != b.size()) throw DimensionError("conjugate_gradient: operator changed length");
  double rr = r.squaredNorm();

  Vector best = x;
  double best_norm = std::sqrt(rr);
  rep.residual_history.push_back(best_norm);
  if (best_norm <= tol) {
    rep.solution = std::move(x);
    rep.residual_norm = best_norm;
    rep.converged = true;
    return rep;
  }

  Vector p = r;
  int it = 0;
  while (it < max_iter) {
    const Vector ap = apply_a(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) {
      throw DefinitenessError(fmt::format(
          "conjugate_gradient: non-positive curvature p'Ap = {} at iteration {}", pap, it));
    }
    const double step = rr / pap;
    x += step * p;
    r -= step * ap;
    ++it;
    double rr_new = r.squaredNorm();
    double norm = std::sqrt(rr_new);
    if (norm <= tol) {
      // The recursive residual drifts; confirm against the true one before stopping.
      const Vector true_r = b - apply_a(x);
      const double true_norm = true_r.norm();
      if (true_norm <= tol) {
        rep.solution = std::move(x);
        rep.residual_norm = true_norm;
        rep.iterations = it;
        rep.converged = true;
        rep.residual_history.push_back(std::min(best_norm, true_norm));
        return rep;
      }
      r = true_r;
      rr_new = r.squaredNorm();
      norm = true_norm;
      p = r;
      rr = rr_new;
    } else {
      p = r + (rr_new / rr) * p;
      rr = rr_new;
    }
    if (norm < best_norm) {
      best_norm = norm;
      best = x;
    }
    rep.residual_history.push_back(best_norm);
  }

  // Report the true residual of the best iterate.
  rep.residual_norm = (b - apply_a(best)).norm();
  rep.solution = std::move(best);
  rep.iterations = it;
  rep.converged = rep.residual_norm <= tol;
  return rep;
}

std::vector<double> circulant_spectrum(const ConvKernel& k, int h, int w) {
  if (k.channels() != 1) {
    throw DimensionError("circulant_spectrum: kernel must have a single channel");
  }
  if (h <= 0 || w <= 0) throw DimensionError("circulant_spectrum: grid must be positive");
  const double two_pi = 2.0 * std::numbers::pi;
  const int r = k.radius();
  std::vector<double> spectrum;
  spectrum.reserve(static_cast<size_t>(h) * w);
  for (int p = 0; p < h; ++p) {
    for (int q = 0; q < w; ++q) {
      double re = 0.0, im = 0.0;
      for (int a = 0; a < k.size(); ++a) {
        for (int b = 0; b < k.size(); ++b) {
          const double phase =
              two_pi * (static_cast<double>((a - r) * p) / h + static_cast<double>((b - r) * q) / w);
          re += k(a, b, 0) * std::cos(phase);
          im -= k(a, b, 0) * std::sin(phase);
        }
      }
      spectrum.push_back(re * re + im * im);
    }
  }
  return spectrum;
}

double circulant_spectrum_min(const ConvKernel& k, int h, int w) {
  const auto s = circulant_spectrum(k, h, w);
  return *std::min_element(s.begin(), s.end());
}

double circulant_spectrum_max(const ConvKernel& k, int h, int w) {
  const auto s = circulant_spectrum(k, h, w);
  return *std::max_element(s.begin(), s.end());
}

}  // namespace bilevel
