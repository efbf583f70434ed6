#include "bilevel/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include <fmt/format.h>
#include <png.h>

#include "bilevel/errors.hpp"
#include "bilevel/sampling.hpp"

namespace bilevel {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;
constexpr std::uint64_t kShapeStream = 0x7368617065ULL;

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

bool supported(const fs::path& p) {
  const std::string e = lower_ext(p);
  return e == ".png" || e == ".pgm" || e == ".ppm" || e == ".pnm";
}

ImageTensor load_png(const fs::path& file) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, file.c_str())) {
    throw IoError(fmt::format("cannot decode '{}': {}", file.string(), img.message));
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int c = color ? 3 : 1;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError(fmt::format("cannot decode '{}': {}", file.string(), msg));
  }
  ImageTensor out(static_cast<int>(img.height), static_cast<int>(img.width), c);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = buf[static_cast<size_t>(i)] / 255.0;
  return out;
}

// Netpbm P2/P3/P5/P6.
ImageTensor load_pnm(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", file.string()));
  auto fail = [&](const char* why) {
    return IoError(fmt::format("cannot decode '{}': {}", file.string(), why));
  };
  auto token = [&]() {
    std::string t;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {}
        continue;
      }
      if (std::isspace(ch)) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(static_cast<char>(ch));
    }
    if (t.empty()) throw fail("truncated header");
    return t;
  };
  auto number = [&]() {
    const std::string t = token();
    try {
      return std::stoi(t);
    } catch (const std::exception&) {
      throw fail("bad header field");
    }
  };

  const std::string magic = token();
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") throw fail("unsupported format");
  const int w = number(), h = number(), maxval = number();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw fail("bad header");
  const int c = (magic == "P3" || magic == "P6") ? 3 : 1;
  ImageTensor out(h, w, c);
  const Eigen::Index n = out.size();
  if (magic == "P2" || magic == "P3") {
    for (Eigen::Index i = 0; i < n; ++i) out.data()[i] = static_cast<double>(number()) / maxval;
  } else {
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> buf(static_cast<size_t>(n) * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw fail("truncated pixel data");
    for (Eigen::Index i = 0; i < n; ++i) {
      const size_t j = static_cast<size_t>(i) * bytes;
      const int v = bytes == 1 ? buf[j] : (buf[j] << 8 | buf[j + 1]);
      out.data()[i] = static_cast<double>(v) / maxval;
    }
  }
  return out;
}

}  // namespace

ConvKernel gaussian_kernel(int size, double sigma) {
  if (size <= 0 || size % 2 == 0) throw DomainError("gaussian_kernel: size must be odd and positive");
  if (!(sigma > 0.0)) throw DomainError("gaussian_kernel: sigma must be positive");
  ConvKernel k(size, 1);
  const int r = size / 2;
  double sum = 0.0;
  for (int a = 0; a < size; ++a) {
    for (int b = 0; b < size; ++b) {
      const double dy = a - r, dx = b - r;
      k(a, b, 0) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      sum += k(a, b, 0);
    }
  }
  k.coefficients() /= sum;
  return k;
}

ImageTensor synthesize_degraded(const ImageTensor& clean, const DegradationConfig& cfg, int index) {
  if (cfg.noise_sigma < 0.0) throw DomainError("synthesize_degraded: noise sigma must be non-negative");
  ImageTensor y = cfg.mode == LowerMode::kDeblur ? conv2d_per_channel(clean, cfg.blur) : clean;
  if (cfg.noise_sigma > 0.0) {
    auto rng = keyed_rng(cfg.seed, kNoiseStream, static_cast<std::uint64_t>(index));
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] += noise(rng);
  }
  return y;
}

double psnr(const ImageTensor& x, const ImageTensor& ref, double peak) {
  if (!x.same_shape(ref)) throw DimensionError("psnr: image shapes differ");
  if (x.size() == 0) throw DimensionError("psnr: empty image");
  const double mse = (x.data() - ref.data()).squaredNorm() / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

ImageTensor load_image(const fs::path& file) {
  if (!fs::exists(file)) throw IoError(fmt::format("cannot open '{}': no such file", file.string()));
  return lower_ext(file) == ".png" ? load_png(file) : load_pnm(file);
}

void save_png(const ImageTensor& img, const fs::path& file) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw DimensionError("save_png: only 1- or 3-channel images are supported");
  }
  png_image out{};
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(img.width());
  out.height = static_cast<png_uint_32>(img.height());
  out.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(static_cast<size_t>(img.size()));
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    buf[static_cast<size_t>(i)] =
        static_cast<png_byte>(std::lround(std::clamp(img.data()[i], 0.0, 1.0) * 255.0));
  }
  if (!png_image_write_to_file(&out, file.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError(fmt::format("cannot write '{}': {}", file.string(), out.message));
  }
}

ImageTensor convert_channels(const ImageTensor& img, int channels) {
  if (img.channels() == channels) return img;
  ImageTensor out(img.height(), img.width(), channels);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (channels == 1 && img.channels() >= 3) {
        out(y, x, 0) = 0.299 * img(y, x, 0) + 0.587 * img(y, x, 1) + 0.114 * img(y, x, 2);
      } else if (img.channels() == 1) {
        for (int c = 0; c < channels; ++c) out(y, x, c) = img(y, x, 0);
      } else {
        throw DimensionError(
            fmt::format("cannot convert {} channels to {}", img.channels(), channels));
      }
    }
  }
  return out;
}

ImageTensor crop_and_resize(const ImageTensor& img, int size) {
  if (size <= 0) throw DomainError("crop_and_resize: size must be positive");
  const int side = std::min(img.height(), img.width());
  const int y0 = (img.height() - side) / 2, x0 = (img.width() - side) / 2;
  ImageTensor out(size, size, img.channels());
  const double scale = static_cast<double>(side) / size;
  for (int y = 0; y < size; ++y) {
    // pixel-centre mapping
    const double sy = std::clamp((y + 0.5) * scale - 0.5, 0.0, side - 1.0);
    const int iy = std::min(static_cast<int>(sy), side - 1);
    const int jy = std::min(iy + 1, side - 1);
    const double fy = sy - iy;
    for (int x = 0; x < size; ++x) {
      const double sx = std::clamp((x + 0.5) * scale - 0.5, 0.0, side - 1.0);
      const int ix = std::min(static_cast<int>(sx), side - 1);
      const int jx = std::min(ix + 1, side - 1);
      const double fx = sx - ix;
      for (int c = 0; c < img.channels(); ++c) {
        const double top = (1 - fx) * img(y0 + iy, x0 + ix, c) + fx * img(y0 + iy, x0 + jx, c);
        const double bot = (1 - fx) * img(y0 + jy, x0 + ix, c) + fx * img(y0 + jy, x0 + jx, c);
        out(y, x, c) = (1 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

std::vector<ImageTensor> load_dataset(const fs::path& dir, int count, int size, int channels) {
  if (count < 0 || size <= 0) throw ConfigError("load_dataset: bad count or size");
  if (channels != 1 && channels != 3) throw ConfigError("load_dataset: channels must be 1 or 3");
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw IoError(fmt::format("image directory '{}' does not exist", dir.string()));
  }
  if (count == 0) return {};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && supported(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  if (static_cast<int>(files.size()) < count) {
    throw ConfigError(fmt::format("image directory '{}' holds {} usable images, {} requested",
                                  dir.string(), files.size(), count));
  }
  std::vector<ImageTensor> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(crop_and_resize(convert_channels(load_image(files[i]), channels), size));
  }
  return out;
}

std::vector<ImageTensor> synthetic_images(int count, int size, int channels, std::uint64_t seed) {
  if (count <= 0 || size <= 0 || channels <= 0) throw ConfigError("synthetic_images: bad shape");
  std::vector<ImageTensor> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    auto rng = keyed_rng(seed, kShapeStream, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageTensor img(size, size, channels);
    std::vector<double> base(channels), gy(channels), gx(channels);
    for (int c = 0; c < channels; ++c) {
      base[c] = 0.2 + 0.4 * u(rng);
      gy[c] = 0.3 * (u(rng) - 0.5);
      gx[c] = 0.3 * (u(rng) - 0.5);
    }
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        for (int c = 0; c < channels; ++c)
          img(y, x, c) = base[c] + gy[c] * y / size + gx[c] * x / size;

    const int shapes = 3 + static_cast<int>(u(rng) * 4);
    for (int s = 0; s < shapes; ++s) {
      const bool disc = u(rng) < 0.5;
      const double cy = u(rng) * size, cx = u(rng) * size;
      const double ry = (0.1 + 0.25 * u(rng)) * size, rx = (0.1 + 0.25 * u(rng)) * size;
      std::vector<double> value(channels);
      for (int c = 0; c < channels; ++c) value[c] = u(rng);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double dy = (y - cy) / ry, dx = (x - cx) / rx;
          const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
          if (!inside) continue;
          for (int c = 0; c < channels; ++c) img(y, x, c) = value[c];
        }
      }
    }
    for (Eigen::Index j = 0; j < img.size(); ++j) img.data()[j] = std::clamp(img.data()[j], 0.0, 1.0);
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace bilevel
