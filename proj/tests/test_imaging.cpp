#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bilevel/errors.hpp"
#include "bilevel/imaging.hpp"
#include "test_util.hpp"

using namespace bilevel;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() /
            ("bilevel_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Image whose values are exact multiples of 1/255, so 8-bit storage is lossless.
ImageTensor quantised_image(int h, int w, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  ImageTensor img(h, w, c);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = u(rng) / 255.0;
  return img;
}

}  // namespace

TEST(GaussianKernel, SizeOneIsUnit) {
  const auto k = gaussian_kernel(1, 2.0);
  ASSERT_EQ(k.size(), 1);
  EXPECT_EQ(k(0, 0, 0), 1.0);
}

TEST(GaussianKernel, NormalisedAndRotationSymmetric) {
  for (int size : {3, 5, 7, 9}) {
    for (double sigma : {0.3, 0.8, 2.0, 5.0}) {
      const auto k = gaussian_kernel(size, sigma);
      EXPECT_NEAR(k.coefficients().sum(), 1.0, 1e-15);
      for (int a = 0; a < size; ++a)
        for (int b = 0; b < size; ++b) EXPECT_DOUBLE_EQ(k(a, b, 0), k(b, size - 1 - a, 0));
      // ratio against the centre follows the Gaussian profile
      const int r = size / 2;
      EXPECT_NEAR(k(0, 0, 0) / k(r, r, 0), std::exp(-(2.0 * r * r) / (2 * sigma * sigma)), 1e-12);
    }
  }
}

TEST(GaussianKernel, FlatLimitAndErrors) {
  const auto k = gaussian_kernel(3, 1000.0);
  for (Eigen::Index i = 0; i < 9; ++i) EXPECT_NEAR(k.coefficients()[i], 1.0 / 9.0, 1e-6);
  EXPECT_THROW(gaussian_kernel(4, 1.0), DomainError);
  EXPECT_THROW(gaussian_kernel(3, 0.0), DomainError);
}

TEST(Psnr, Examples) {
  const ImageTensor a = ImageTensor::constant(10, 10, 1, 0.5);
  EXPECT_EQ(psnr(a, a), kPsnrIdentical);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  const ImageTensor b = ImageTensor::constant(10, 10, 1, 0.6);  // MSE = 0.01
  EXPECT_NEAR(psnr(b, a), 20.0, 1e-12);
  EXPECT_NEAR(psnr(b, a, 255.0), 20.0 + 20.0 * std::log10(255.0), 1e-9);
  EXPECT_THROW(psnr(a, ImageTensor::constant(10, 9, 1, 0.5)), DimensionError);
}

TEST(Synthesize, ZeroNoiseDeltaBlurIsIdentity) {
  std::mt19937_64 rng(1);
  const ImageTensor clean = test::random_image(8, 8, 1, rng);
  DegradationConfig cfg;
  cfg.noise_sigma = 0.0;
  EXPECT_EQ(synthesize_degraded(clean, cfg, 0).data(), clean.data());
  cfg.mode = LowerMode::kDeblur;
  cfg.blur = ConvKernel::delta(3, 1);
  EXPECT_EQ(synthesize_degraded(clean, cfg, 0).data(), clean.data());
}

TEST(Synthesize, DeterministicPerIndex) {
  std::mt19937_64 rng(2);
  const ImageTensor clean = test::random_image(8, 8, 3, rng);
  DegradationConfig cfg;
  cfg.seed = 42;
  const auto y1 = synthesize_degraded(clean, cfg, 3), y2 = synthesize_degraded(clean, cfg, 3);
  EXPECT_EQ(y1.data(), y2.data());
  EXPECT_NE(synthesize_degraded(clean, cfg, 4).data(), y1.data());
  cfg.seed = 43;
  EXPECT_NE(synthesize_degraded(clean, cfg, 3).data(), y1.data());
}

TEST(Synthesize, NoiseLevelAndNoClipping) {
  const ImageTensor clean = ImageTensor::constant(96, 96, 3, 0.02);
  DegradationConfig cfg;
  cfg.seed = 7;
  const auto y = synthesize_degraded(clean, cfg, 0);
  const Vector n = y.data() - clean.data();
  const double mean = n.mean();
  const double sd = std::sqrt((n.array() - mean).square().sum() / (n.size() - 1));
  EXPECT_LT(std::abs(sd - 25.0 / 255.0) / (25.0 / 255.0), 0.03);
  EXPECT_LT(y.data().minCoeff(), 0.0);  // not clipped
}

TEST(Synthesize, BlurIsAppliedBeforeNoise) {
  std::mt19937_64 rng(3);
  const ImageTensor clean = test::random_image(10, 10, 1, rng);
  DegradationConfig cfg;
  cfg.mode = LowerMode::kDeblur;
  cfg.noise_sigma = 0.0;
  cfg.blur = gaussian_kernel(3, 0.7);
  EXPECT_LT(test::rel_err(synthesize_degraded(clean, cfg, 0).data(), conv2d(clean, cfg.blur).data()), 1e-15);
}

TEST(LoadDataset, EmptyDirectoryZeroCount) {
  TempDir dir("empty");
  EXPECT_TRUE(load_dataset(dir.path(), 0, 8, 1).empty());
  EXPECT_THROW(load_dataset(dir.path(), 1, 8, 1), ConfigError);
  EXPECT_THROW(load_dataset(dir.path() / "missing", 0, 8, 1), IoError);
}

TEST(LoadDataset, FolderOfImages) {
  TempDir dir("four");
  const auto imgs = synthetic_images(4, 20, 3, 5);
  for (int i = 0; i < 4; ++i) save_png(imgs[i], dir.path() / ("img" + std::to_string(i) + ".png"));
  std::ofstream(dir.path() / "notes.txt") << "ignored";
  const auto a = load_dataset(dir.path(), 4, 16, 1);
  ASSERT_EQ(a.size(), 4u);
  for (const auto& t : a) {
    EXPECT_EQ(t.height(), 16);
    EXPECT_EQ(t.width(), 16);
    EXPECT_EQ(t.channels(), 1);
    EXPECT_GE(t.data().minCoeff(), 0.0);
    EXPECT_LE(t.data().maxCoeff(), 1.0);
  }
  const auto b = load_dataset(dir.path(), 4, 16, 1);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(a[i].data(), b[i].data());
  // lexicographic order: the first two files only
  const auto two = load_dataset(dir.path(), 2, 16, 1);
  EXPECT_EQ(two[1].data(), a[1].data());
  EXPECT_THROW(load_dataset(dir.path(), 5, 16, 1), ConfigError);
}

TEST(LoadDataset, UnreadableFileIsNamed) {
  TempDir dir("broken");
  save_png(quantised_image(8, 8, 1, 1), dir.path() / "a.png");
  std::ofstream(dir.path() / "b.png") << "not a png";
  try {
    load_dataset(dir.path(), 2, 8, 1);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("b.png"), std::string::npos) << e.what();
  }
}

TEST(Images, PngRoundTripIsLossless) {
  TempDir dir("png");
  for (int c : {1, 3}) {
    const ImageTensor img = quantised_image(7, 9, c, 10 + c);
    save_png(img, dir.path() / "x.png");
    const ImageTensor back = load_image(dir.path() / "x.png");
    EXPECT_EQ(back.height(), 7);
    EXPECT_EQ(back.width(), 9);
    EXPECT_EQ(back.channels(), c);
    EXPECT_LT((back.data() - img.data()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Images, NetpbmFormats) {
  TempDir dir("pnm");
  std::ofstream(dir.path() / "a.pgm") << "P2\n# comment\n3 2\n255\n0 51 102\n153 204 255\n";
  const auto a = load_image(dir.path() / "a.pgm");
  ASSERT_EQ(a.width(), 3);
  ASSERT_EQ(a.height(), 2);
  EXPECT_DOUBLE_EQ(a(0, 1, 0), 0.2);
  EXPECT_DOUBLE_EQ(a(1, 2, 0), 1.0);
  {
    std::ofstream f(dir.path() / "b.ppm", std::ios::binary);
    f << "P6\n2 1\n255\n";
    const unsigned char px[6] = {255, 0, 0, 0, 0, 255};
    f.write(reinterpret_cast<const char*>(px), 6);
  }
  const auto b = load_image(dir.path() / "b.ppm");
  ASSERT_EQ(b.channels(), 3);
  EXPECT_EQ(b(0, 0, 0), 1.0);
  EXPECT_EQ(b(0, 1, 2), 1.0);
  EXPECT_EQ(b(0, 1, 0), 0.0);
  EXPECT_THROW(load_image(dir.path() / "nope.pgm"), IoError);
}

TEST(Images, CropResizeAndChannelConversion) {
  const ImageTensor flat = ImageTensor::constant(12, 20, 3, 0.25);
  const auto r = crop_and_resize(flat, 5);
  EXPECT_EQ(r.height(), 5);
  EXPECT_EQ(r.width(), 5);
  EXPECT_LT((r.data().array() - 0.25).abs().maxCoeff(), 1e-15);
  ImageTensor rgb(1, 1, 3);
  rgb(0, 0, 0) = 1.0;
  EXPECT_NEAR(convert_channels(rgb, 1)(0, 0, 0), 0.299, 1e-15);
  const auto grey = ImageTensor::constant(2, 2, 1, 0.4);
  const auto rep = convert_channels(grey, 3);
  EXPECT_EQ(rep.channels(), 3);
  EXPECT_EQ(rep(1, 1, 2), 0.4);
  // identity when the size already matches
  std::mt19937_64 rng(4);
  const ImageTensor sq = test::random_image(6, 6, 1, rng);
  EXPECT_LT((crop_and_resize(sq, 6).data() - sq.data()).norm(), 1e-14);
}

TEST(Images, SyntheticImagesAreSeededAndBounded) {
  const auto a = synthetic_images(3, 16, 1, 9), b = synthetic_images(3, 16, 1, 9);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].data(), b[i].data());
    EXPECT_GE(a[i].data().minCoeff(), 0.0);
    EXPECT_LE(a[i].data().maxCoeff(), 1.0);
  }
  EXPECT_NE(a[0].data(), a[1].data());
  EXPECT_NE(synthetic_images(1, 16, 1, 10)[0].data(), a[0].data());
}
