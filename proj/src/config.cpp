#include "bilevel/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "bilevel/errors.hpp"

namespace bilevel {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  size_t pos = 0;
  T out{};
  try {
    if constexpr (std::is_same_v<T, double>) {
      out = std::stod(v, &pos);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      out = std::stoull(v, &pos);
    } else {
      const long long x = std::stoll(v, &pos);
      out = static_cast<T>(x);
      if (static_cast<long long>(out) != x) throw std::out_of_range("range");
    }
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: cannot parse '{}'", key, v));
  }
  if (pos != v.size()) throw ConfigError(fmt::format("{}: cannot parse '{}'", key, v));
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", key, v));
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

struct Field {
  std::string description;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define BL_INT_FIELD(name, doc)                                                              \
  {                                                                                          \
    #name, Field {                                                                           \
      doc, [](RunConfig& c, const std::string& v) { c.name = parse_number<decltype(c.name)>(#name, v); }, \
          [](const RunConfig& c) { return std::to_string(c.name); }                          \
    }                                                                                        \
  }
#define BL_REAL_FIELD(name, doc)                                                          \
  {                                                                                       \
    #name, Field {                                                                        \
      doc, [](RunConfig& c, const std::string& v) { c.name = parse_number<double>(#name, v); }, \
          [](const RunConfig& c) { return fmt_double(c.name); }                           \
    }                                                                                     \
  }
#define BL_STR_FIELD(name, doc)                                                                \
  {                                                                                            \
    #name, Field {                                                                             \
      doc, [](RunConfig& c, const std::string& v) { c.name = v; }, [](const RunConfig& c) { return c.name; } \
    }                                                                                          \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"experiment",
       Field{"denoise | deblur | quadratic | theory",
             [](RunConfig& c, const std::string& v) {
               if (v == "denoise") c.experiment = Experiment::kDenoise;
               else if (v == "deblur") c.experiment = Experiment::kDeblur;
               else if (v == "quadratic") c.experiment = Experiment::kQuadratic;
               else if (v == "theory") c.experiment = Experiment::kTheory;
               else throw ConfigError(fmt::format("experiment: unknown value '{}'", v));
             },
             [](const RunConfig& c) -> std::string {
               switch (c.experiment) {
                 case Experiment::kDenoise: return "denoise";
                 case Experiment::kDeblur: return "deblur";
                 case Experiment::kQuadratic: return "quadratic";
                 case Experiment::kTheory: return "theory";
               }
               return "denoise";
             }}},
      BL_STR_FIELD(data_dir, "image folder (PNG/PGM/PPM); empty uses synthetic images"),
      BL_INT_FIELD(image_size, "side length after centre crop and resize"),
      BL_INT_FIELD(m, "number of training samples"),
      BL_INT_FIELD(batch_size, "mini-batch size S"),
      BL_INT_FIELD(experts, "number of FoE experts J"),
      BL_INT_FIELD(kernel_size, "FoE kernel size k (odd)"),
      BL_INT_FIELD(channels, "image channels C (1 or 3)"),
      BL_REAL_FIELD(noise_sigma, "Gaussian noise standard deviation on [0,1] intensities"),
      BL_REAL_FIELD(blur_sigma, "Gaussian blur sigma (deblur)"),
      BL_INT_FIELD(blur_size, "Gaussian blur size (deblur, odd)"),
      BL_REAL_FIELD(lambda_init, "initial regularisation weight, theta_0 = log(lambda_init)"),
      {"sampling",
       Field{"without | with (replacement)",
             [](RunConfig& c, const std::string& v) {
               if (v == "without") c.sampling = SamplingStrategy::kWithoutReplacement;
               else if (v == "with") c.sampling = SamplingStrategy::kWithReplacement;
               else throw ConfigError(fmt::format("sampling: unknown value '{}'", v));
             },
             [](const RunConfig& c) -> std::string {
               return c.sampling == SamplingStrategy::kWithReplacement ? "with" : "without";
             }}},
      {"schedule",
       Field{"constant | decreasing (alpha0 / sqrt(k))",
             [](RunConfig& c, const std::string& v) {
               if (v == "constant") c.schedule = StepKind::kConstant;
               else if (v == "decreasing") c.schedule = StepKind::kDecreasing;
               else throw ConfigError(fmt::format("schedule: unknown value '{}'", v));
             },
             [](const RunConfig& c) -> std::string {
               return c.schedule == StepKind::kDecreasing ? "decreasing" : "constant";
             }}},
      BL_REAL_FIELD(alpha0, "initial step size"),
      {"accuracy",
       Field{"fixed | summable (eps0 / (k+1)^((1+rho)/2))",
             [](RunConfig& c, const std::string& v) {
               if (v == "fixed") c.accuracy = AccuracyKind::kFixed;
               else if (v == "summable") c.accuracy = AccuracyKind::kSummable;
               else throw ConfigError(fmt::format("accuracy: unknown value '{}'", v));
             },
             [](const RunConfig& c) -> std::string {
               return c.accuracy == AccuracyKind::kSummable ? "summable" : "fixed";
             }}},
      BL_REAL_FIELD(epsilon0, "lower-level accuracy eps (initial value for summable)"),
      BL_REAL_FIELD(rho, "decay exponent of the summable accuracy schedule"),
      BL_REAL_FIELD(cg_tol, "absolute CG tolerance; 0 ties it to mu * eps"),
      BL_INT_FIELD(iterations, "ISGD iterations; 0 uses epochs"),
      BL_INT_FIELD(epochs, "training epochs (ceil(m/S) iterations each)"),
      BL_INT_FIELD(seed_data, "seed for images and noise"),
      BL_INT_FIELD(seed_init, "seed for parameter initialisation"),
      BL_INT_FIELD(seed_sampling, "seed for mini-batch selection"),
      BL_STR_FIELD(out, "output directory"),
      {"warm_start",
       Field{"reuse previous lower solutions and adjoints",
             [](RunConfig& c, const std::string& v) { c.warm_start = parse_bool("warm_start", v); },
             [](const RunConfig& c) -> std::string { return c.warm_start ? "true" : "false"; }}},
      BL_INT_FIELD(lower_max_iter, "lower solver iteration budget"),
      BL_INT_FIELD(cg_max_iter, "CG iteration budget"),
      BL_INT_FIELD(threads, "hypergradient worker threads; 0 reads BILEVEL_THREADS"),
      BL_INT_FIELD(checkpoint_every, "checkpoint period in epochs; 0 keeps only the final one"),
      BL_STR_FIELD(resume, "checkpoint to resume training from"),
      BL_STR_FIELD(checkpoint, "checkpoint evaluated by the eval command"),
      BL_INT_FIELD(quad_n, "quadratic state dimension n"),
      BL_INT_FIELD(quad_d, "quadratic parameter dimension d"),
      BL_INT_FIELD(theta_samples, "theory: parameter points per check"),
      BL_REAL_FIELD(zeta, "theory: Young parameter zeta (> 1/2)"),
      BL_REAL_FIELD(eta, "theory: splitting parameter eta (> 0)"),
      BL_INT_FIELD(runs, "theory: independent ISGD runs averaged in the convergence check"),
  };
  return table;
}

#undef BL_INT_FIELD
#undef BL_REAL_FIELD
#undef BL_STR_FIELD

const Field& find_field(const std::string& key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return f;
  }
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

}  // namespace

void RunConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0)) throw ConfigError(fmt::format("{} must be positive", name));
  };
  positive("m", m);
  positive("batch_size", batch_size);
  if (batch_size > m) throw ConfigError(fmt::format("batch_size {} exceeds m = {}", batch_size, m));
  positive("alpha0", alpha0);
  positive("epsilon0", epsilon0);
  positive("lower_max_iter", lower_max_iter);
  positive("cg_max_iter", cg_max_iter);
  if (rho < 0) throw ConfigError("rho must be non-negative");
  if (cg_tol < 0) throw ConfigError("cg_tol must be non-negative");
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (iterations == 0) positive("epochs", epochs);
  if (threads < 0) throw ConfigError("threads must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");

  if (experiment == Experiment::kDenoise || experiment == Experiment::kDeblur) {
    positive("image_size", image_size);
    positive("experts", experts);
    if (kernel_size <= 0 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
    if (!(noise_sigma > 0.0 && noise_sigma < 1.0)) throw ConfigError("noise_sigma must lie in (0, 1)");
    positive("lambda_init", lambda_init);
    if (experiment == Experiment::kDeblur) {
      positive("blur_sigma", blur_sigma);
      if (blur_size <= 0 || blur_size % 2 == 0) throw ConfigError("blur_size must be odd");
    }
  } else {
    positive("quad_n", quad_n);
    positive("quad_d", quad_d);
    positive("theta_samples", theta_samples);
    positive("runs", runs);
    if (!(zeta > 0.5)) throw ConfigError("zeta must exceed 1/2");
    positive("eta", eta);
  }
}

std::int64_t RunConfig::total_iterations() const {
  if (iterations > 0) return iterations;
  const std::int64_t per_epoch = (m + batch_size - 1) / batch_size;
  return per_epoch * epochs;
}

int RunConfig::resolved_threads() const {
  if (threads > 0) return threads;
  if (const char* env = std::getenv("BILEVEL_THREADS"); env != nullptr && *env != '\0') {
    const int t = parse_number<int>("BILEVEL_THREADS", env);
    if (t <= 0) throw ConfigError("BILEVEL_THREADS must be positive");
    return t;
  }
  return 1;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& [k, f] : fields()) out.push_back({k, f.description});
    return out;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, trim(value));
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  return find_field(key).get(cfg);
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("{}:{}: expected key=value", origin, lineno));
    }
    const std::string key = trim(line.substr(0, eq));
    try {
      set_config_value(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", origin, lineno, e.what()));
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError(fmt::format("cannot open config file '{}'", file.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), file.string());
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += fmt::format("{}={}\n", k, f.get(cfg));
  return out;
}

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  for (auto& ch : f) {
    if (ch == '_') ch = '-';
  }
  return f;
}

}  // namespace bilevel
