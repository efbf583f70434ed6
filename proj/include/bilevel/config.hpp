#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bilevel/isgd.hpp"
#include "bilevel/sampling.hpp"

namespace bilevel {

enum class Experiment { kDenoise, kDeblur, kQuadratic, kTheory };

struct RunConfig {
  Experiment experiment = Experiment::kDenoise;
  std::string data_dir;  // empty: synthetic images
  int image_size = 32;
  int m = 16;
  int batch_size = 4;
  int experts = 4;
  int kernel_size = 5;
  int channels = 1;
  double noise_sigma = 25.0 / 255.0;
  double blur_sigma = 0.5;  // sigma 2 is numerically singular on small grids; 0.8 certifies too slowly
  int blur_size = 7;
  double lambda_init = 0.1;

  SamplingStrategy sampling = SamplingStrategy::kWithoutReplacement;
  StepKind schedule = StepKind::kConstant;
  double alpha0 = 1e-3;
  AccuracyKind accuracy = AccuracyKind::kFixed;
  double epsilon0 = 1e-2;
  double rho = 1.0;
  double cg_tol = 0.0;  // 0: mu * eps * max(1, ||grad g||)
  std::int64_t iterations = 0;  // > 0 overrides epochs
  int epochs = 25;

  std::uint64_t seed_data = 1;
  std::uint64_t seed_init = 2;
  std::uint64_t seed_sampling = 3;

  std::string out = "run";
  bool warm_start = true;
  int lower_max_iter = 20000;
  int cg_max_iter = 2000;
  int threads = 0;  // 0: BILEVEL_THREADS or 1
  int checkpoint_every = 5;  // epochs; 0 writes only the final checkpoint
  std::string resume;
  std::string checkpoint;  // eval input

  // quadratic / theory
  int quad_n = 8;
  int quad_d = 3;
  int theta_samples = 100;
  double zeta = 1.0;
  double eta = 1.0;
  int runs = 5;

  void validate() const;
  // Total ISGD iterations implied by `iterations` / `epochs`.
  std::int64_t total_iterations() const;
  int resolved_threads() const;
};

struct ConfigKey {
  std::string key;
  std::string description;
};

// Every key accepted in config files, with its documentation.
const std::vector<ConfigKey>& config_keys();

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

// Applies `key = value` lines; blank lines and `#` comments are ignored.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<text>");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& file);
// All keys in key=value form, suitable for reloading.
std::string dump_config(const RunConfig& cfg);

// "--batch-size" for "batch_size".
std::string flag_name(const std::string& key);

}  // namespace bilevel
