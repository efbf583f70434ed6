#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "bilevel/foe.hpp"
#include "bilevel/linalg.hpp"

namespace bilevel {

// Normalised Gaussian filter, coefficients proportional to exp(-(dx^2+dy^2)/(2 sigma^2)).
ConvKernel gaussian_kernel(int size, double sigma);

struct DegradationConfig {
  LowerMode mode = LowerMode::kDenoise;
  double noise_sigma = 25.0 / 255.0;
  ConvKernel blur;  // deblur only
  std::uint64_t seed = 0;
};

// y = A x* + n with n ~ N(0, sigma^2) i.i.d.; the noise stream is keyed by
// (seed, index). No clipping.
ImageTensor synthesize_degraded(const ImageTensor& clean, const DegradationConfig& cfg, int index);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// 10 log10(peak^2 / MSE); +inf when the images are identical.
double psnr(const ImageTensor& x, const ImageTensor& ref, double peak = 1.0);

// Images in [0, 1] from every decodable file (.png, .pgm, .ppm) in `dir`,
// lexicographic order, centre-cropped to a square and resampled to size x size.
std::vector<ImageTensor> load_dataset(const std::filesystem::path& dir, int count, int size,
                                      int channels);

ImageTensor load_image(const std::filesystem::path& file);
// 8-bit PNG (1 or 3 channels); values are clamped to [0, 1].
void save_png(const ImageTensor& img, const std::filesystem::path& file);

// Piecewise-smooth test images (gradient background plus random rectangles and
// discs) with values in [0, 1]; used when no image folder is configured.
std::vector<ImageTensor> synthetic_images(int count, int size, int channels, std::uint64_t seed);

// Centre crop to a square, then bilinear resampling to size x size.
ImageTensor crop_and_resize(const ImageTensor& img, int size);
// Channel conversion: luminance for 3 -> 1, replication for 1 -> 3.
ImageTensor convert_channels(const ImageTensor& img, int channels);

}  // namespace bilevel
