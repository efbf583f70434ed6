#include "bilevel/experiment.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "bilevel/checkpoint.hpp"
#include "bilevel/errors.hpp"
#include "bilevel/lower_solver.hpp"
#include "bilevel/quadratic.hpp"

namespace bilevel {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kThetaStream = 0x7468657461ULL;

std::string g17(double v) { return fmt::format("{:.17g}", v); }

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", file.string()));
  out << text;
  if (!out) throw IoError(fmt::format("cannot write '{}'", file.string()));
}

void prepare_out(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory '{}': {}", cfg.out, ec.message()));
}

HypergradOptions hypergrad_options(const RunConfig& cfg) {
  HypergradOptions h;
  h.epsilon = cfg.epsilon0;
  if (cfg.cg_tol > 0.0) h.cg_tolerance = cfg.cg_tol;
  h.lower_max_iter = cfg.lower_max_iter;
  h.cg_max_iter = cfg.cg_max_iter;
  h.warm_start = cfg.warm_start;
  h.threads = cfg.resolved_threads();
  return h;
}

SamplingScheme scheme_of(const RunConfig& cfg) {
  return SamplingScheme{cfg.m, cfg.batch_size, cfg.sampling, cfg.seed_sampling};
}

// Rows of an existing trace with k < first, so a resumed run in the same
// directory reproduces the uninterrupted file.
std::string trace_prefix(const fs::path& file, std::int64_t first) {
  std::ifstream in(file);
  std::string out = std::string(kTraceHeader) + "\n";
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  if (line != kTraceHeader) return out;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) break;
    if (std::stoll(line.substr(0, comma)) >= first) break;
    out += line + "\n";
  }
  return out;
}

QuadraticInstance quadratic_of(const RunConfig& cfg) {
  return QuadraticInstance::random(cfg.quad_n, cfg.quad_d, cfg.m, cfg.seed_data);
}

Vector random_theta(int d, std::uint64_t seed, std::uint64_t counter, double scale) {
  auto rng = keyed_rng(seed, kThetaStream, counter);
  std::normal_distribution<double> n(0.0, scale);
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

}  // namespace

std::string trace_csv_row(const IterationRecord& rec) {
  return fmt::format("{},{},{},{},{},{},{},{},{}", rec.k, rec.epoch, g17(rec.batch_loss),
                     g17(rec.alpha), g17(rec.epsilon), g17(rec.grad_est_norm),
                     rec.ledger.lower_iterations, rec.ledger.linear_solver_iterations,
                     rec.epoch_metric ? g17(*rec.epoch_metric) : std::string());
}

FoEShape shape_of(const RunConfig& cfg) {
  FoEShape shape{cfg.experts, cfg.kernel_size, cfg.channels};
  shape.validate();
  return shape;
}

TrainingSet build_training_set(const RunConfig& cfg, const FoEShape& shape) {
  TrainingSet set;
  set.shape = shape;
  set.clean = cfg.data_dir.empty()
                  ? synthetic_images(cfg.m, cfg.image_size, cfg.channels, cfg.seed_data)
                  : load_dataset(cfg.data_dir, cfg.m, cfg.image_size, cfg.channels);
  DegradationConfig deg;
  deg.mode = cfg.experiment == Experiment::kDeblur ? LowerMode::kDeblur : LowerMode::kDenoise;
  deg.noise_sigma = cfg.noise_sigma;
  deg.seed = cfg.seed_data;
  if (deg.mode == LowerMode::kDeblur) deg.blur = gaussian_kernel(cfg.blur_size, cfg.blur_sigma);

  double psnr_sum = 0.0;
  for (int i = 0; i < cfg.m; ++i) {
    ImageTensor y = synthesize_degraded(set.clean[i], deg, i);
    psnr_sum += psnr(y, set.clean[i]);
    LowerProblemSpec spec = deg.mode == LowerMode::kDeblur ? LowerProblemSpec::deblur(y, deg.blur)
                                                           : LowerProblemSpec::denoise(y);
    set.problems.push_back(std::make_shared<FoESample>(shape, std::move(spec), set.clean[i]));
    set.observed.push_back(std::move(y));
  }
  set.noisy_psnr = psnr_sum / cfg.m;
  return set;
}

TrainSummary run_train(const RunConfig& cfg, std::ostream* log) {
  if (cfg.experiment != Experiment::kDenoise && cfg.experiment != Experiment::kDeblur) {
    throw ConfigError("train needs experiment=denoise or experiment=deblur");
  }
  cfg.validate();
  const FoEShape shape = shape_of(cfg);
  prepare_out(cfg);
  const fs::path out_dir(cfg.out);
  write_text(out_dir / "config.txt", dump_config(cfg));

  TrainingSet set = build_training_set(cfg, shape);
  const SamplingScheme scheme = scheme_of(cfg);

  Vector theta0;
  RunOptions opts;
  opts.hypergrad = hypergrad_options(cfg);
  WarmStartStore store;
  if (!cfg.resume.empty()) {
    Checkpoint ckpt = read_checkpoint(cfg.resume);
    if (ckpt.shape.experts != shape.experts || ckpt.shape.kernel_size != shape.kernel_size ||
        ckpt.shape.channels != shape.channels) {
      throw ConfigError(fmt::format("checkpoint '{}' was written for J={} k={} C={}", cfg.resume,
                                    ckpt.shape.experts, ckpt.shape.kernel_size, ckpt.shape.channels));
    }
    theta0 = std::move(ckpt.theta);
    opts.start_iteration = ckpt.iteration;
    opts.start_ledger = ckpt.ledger;
    store = std::move(ckpt.warm);
  } else {
    theta0 = foe_initial_params(shape, cfg.lambda_init, cfg.seed_init);
  }
  opts.warm_store = &store;

  const std::int64_t total = cfg.total_iterations();
  if (opts.start_iteration > total) {
    throw ConfigError(fmt::format("checkpoint iteration {} is past the configured {} iterations",
                                  opts.start_iteration, total));
  }

  const fs::path csv_path = out_dir / "trace.csv";
  const std::string prefix = opts.start_iteration > 0 ? trace_prefix(csv_path, opts.start_iteration)
                                                      : std::string(kTraceHeader) + "\n";
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError(fmt::format("cannot write '{}'", csv_path.string()));
  csv << prefix;

  TrainSummary summary;
  summary.noisy_psnr = set.noisy_psnr;
  const std::int64_t per_epoch = scheme.iterations_per_epoch();
  opts.sample_metric = [&set](int i, const Vector& x) {
    return psnr(set.clean[i].with_data(x), set.clean[i]);
  };
  opts.on_iteration = [&](const IterationRecord& rec, const Vector& theta) {
    csv << trace_csv_row(rec) << '\n';
    const std::int64_t next = rec.k + 1;
    const bool epoch_end = next % per_epoch == 0;
    if (epoch_end && rec.epoch_metric && log != nullptr) {
      fmt::print(*log, "epoch {:4d}  psnr {:.3f} dB  loss {:.6g}  cost {}\n", rec.epoch,
                 *rec.epoch_metric, rec.batch_loss, rec.ledger.total());
    }
    const bool periodic = cfg.checkpoint_every > 0 && epoch_end &&
                          (next / per_epoch) % cfg.checkpoint_every == 0;
    if (periodic || next == total) {
      const fs::path p = checkpoint_path(out_dir, next);
      write_checkpoint(Checkpoint{shape, theta, next, rec.ledger, store}, p);
      summary.checkpoints.push_back(p);
    }
  };

  summary.trace = isgd_run(set.problems, theta0, scheme,
                           StepSchedule{cfg.schedule, cfg.alpha0},
                           AccuracySchedule{cfg.accuracy, cfg.epsilon0, cfg.rho},
                           total - opts.start_iteration, opts);
  csv.flush();
  if (!csv) throw IoError(fmt::format("cannot write '{}'", csv_path.string()));

  const auto& its = summary.trace.iterations;
  summary.ledger = its.empty() ? opts.start_ledger : its.back().ledger;
  summary.final_loss = its.empty() ? 0.0 : its.back().batch_loss;
  summary.mean_train_psnr =
      summary.trace.epochs.empty() ? 0.0 : summary.trace.epochs.back().mean_metric;

  write_text(out_dir / "summary.txt",
             fmt::format("iterations={}\nfinal_loss={}\nmean_train_psnr={}\nnoisy_psnr={}\n"
                         "lower_iterations={}\ncg_iterations={}\ntotal_cost={}\n",
                         opts.start_iteration + static_cast<std::int64_t>(its.size()),
                         g17(summary.final_loss), g17(summary.mean_train_psnr),
                         g17(summary.noisy_psnr), summary.ledger.lower_iterations,
                         summary.ledger.linear_solver_iterations, summary.ledger.total()));
  return summary;
}

QuadraticSummary run_quadratic(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  prepare_out(cfg);
  const fs::path out_dir(cfg.out);
  write_text(out_dir / "config.txt", dump_config(cfg));

  const QuadraticInstance inst = quadratic_of(cfg);
  const Vector theta0 = random_theta(inst.d(), cfg.seed_init, 0, 1.0);
  RunOptions opts;
  opts.hypergrad = hypergrad_options(cfg);
  opts.record_params = true;

  QuadraticSummary summary;
  summary.trace = isgd_run(inst.samples(), theta0, scheme_of(cfg),
                           StepSchedule{cfg.schedule, cfg.alpha0},
                           AccuracySchedule{cfg.accuracy, cfg.epsilon0, cfg.rho},
                           cfg.total_iterations(), opts);
  const double f_inf = inst.infimum();
  std::string csv = std::string(kTraceHeader) + "\n";
  for (const auto& rec : summary.trace.iterations) csv += trace_csv_row(rec) + "\n";
  write_text(out_dir / "trace.csv", csv);

  std::string oracle = "t,f_gap,grad_sq\n";
  for (size_t t = 0; t < summary.trace.params.size(); ++t) {
    const Vector& th = summary.trace.params[t];
    summary.grad_sq.push_back(inst.exact_full_gradient(th).squaredNorm());
    summary.f_gap.push_back(inst.exact_upper_loss(th) - f_inf);
    oracle += fmt::format("{},{},{}\n", t, g17(summary.f_gap.back()), g17(summary.grad_sq.back()));
  }
  write_text(out_dir / "oracle.csv", oracle);
  summary.ledger = summary.trace.iterations.empty() ? CostLedger{}
                                                    : summary.trace.iterations.back().ledger;
  if (log != nullptr) {
    fmt::print(*log, "quadratic n={} d={} m={}: ||grad f||^2 {:.6g} -> {:.6g}, cost {}\n",
               inst.n(), inst.d(), inst.m(), summary.grad_sq.front(), summary.grad_sq.back(),
               summary.ledger.total());
  }
  return summary;
}

TheorySummary run_theory(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  prepare_out(cfg);
  const fs::path out_dir(cfg.out);
  write_text(out_dir / "config.txt", dump_config(cfg));

  const QuadraticInstance inst = quadratic_of(cfg);
  const SamplingScheme scheme = scheme_of(cfg);
  const Vector center = inst.minimizer();
  std::vector<Vector> fit, heldout;
  for (int s = 0; s < cfg.theta_samples; ++s) {
    Vector th = center + random_theta(inst.d(), cfg.seed_init, static_cast<std::uint64_t>(s), 2.0);
    (s % 2 == 0 ? fit : heldout).push_back(std::move(th));
  }

  TheorySummary summary;
  summary.abc = estimate_abc(inst, fit, scheme, heldout).with(cfg.zeta, cfg.eta);

  HypergradOptions h = hypergrad_options(cfg);
  std::vector<Vector> all = fit;
  all.insert(all.end(), heldout.begin(), heldout.end());
  summary.biased = check_biased_abc(inst, all, scheme, inexact_gradients(inst, h), summary.abc,
                                    BiasedAbcOptions{cfg.zeta, cfg.eta, 1e-9, std::nullopt});

  Theorem1Config t1;
  t1.theta0 = center + random_theta(inst.d(), cfg.seed_init, 1u << 20, 2.0);
  t1.scheme = scheme;
  t1.alpha = cfg.alpha0;
  t1.accuracy = AccuracySchedule{cfg.accuracy, cfg.epsilon0, cfg.rho};
  t1.iterations = cfg.total_iterations();
  t1.runs = cfg.runs;
  t1.hypergrad = h;
  summary.theorem1 = theorem1_check(inst, t1, summary.abc);

  const AbcEstimate& a = summary.abc;
  write_text(out_dir / "abc.txt",
             fmt::format("A={}\nB={}\nC={}\nzeta={}\neta={}\nfit_points={}\nheldout_points={}\n"
                         "heldout_violations={}\nlipschitz={}\n",
                         g17(a.a), g17(a.b), g17(a.c), g17(a.zeta), g17(a.eta), a.samples,
                         a.heldout, a.heldout_violations, g17(inst.gradient_lipschitz())));

  std::string rows = "i,grad_sq,error_sq,bias_margin,abc_margin,young_margin,moment_margin\n";
  for (size_t i = 0; i < summary.biased.rows.size(); ++i) {
    const auto& r = summary.biased.rows[i];
    rows += fmt::format("{},{},{},{},{},{},{}\n", i, g17(r.grad_sq), g17(r.error_sq),
                        g17(r.bias_margin), g17(r.abc_margin), g17(r.young_margin),
                        g17(r.moment_margin));
  }
  write_text(out_dir / "biased_abc.csv", rows);

  const Theorem1Report& r = summary.theorem1;
  std::string t1csv = "T,lhs,rhs,tau\n";
  for (size_t t = 0; t < r.lhs.size(); ++t) {
    t1csv += fmt::format("{},{},{},{}\n", t + 1, g17(r.lhs[t]), g17(r.rhs[t]), g17(r.tau[t]));
  }
  write_text(out_dir / "theorem1.csv", t1csv);

  if (log != nullptr) {
    fmt::print(*log, "ABC fit: A={:.4g} B={:.4g} C={:.4g} ({} held-out violations)\n", a.a, a.b,
               a.c, a.heldout_violations);
    fmt::print(*log, "biased ABC (zeta={}, eta={}): {} violations over {} points{}\n", a.zeta,
               a.eta, summary.biased.violations(), summary.biased.rows.size(),
               summary.biased.exhaustive ? "" : " (Monte Carlo expectations)");
    if (r.applicable) {
      fmt::print(*log, "convergence bound: {} violations, min margin {:.6g}\n", r.violations,
                 r.min_margin);
    } else {
      fmt::print(*log, "convergence bound not applicable: {}\n", r.reason);
    }
  }
  return summary;
}

EvalSummary run_eval(const RunConfig& cfg, std::ostream* log) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval needs checkpoint=<file>");
  cfg.validate();
  const Checkpoint ckpt = read_checkpoint(cfg.checkpoint);
  RunConfig c = cfg;
  c.experts = ckpt.shape.experts;
  c.kernel_size = ckpt.shape.kernel_size;
  c.channels = ckpt.shape.channels;
  const TrainingSet set = build_training_set(c, ckpt.shape);

  EvalSummary summary;
  summary.images = c.m;
  summary.noisy_psnr = set.noisy_psnr;
  double sum = 0.0;
  for (int i = 0; i < c.m; ++i) {
    const auto& sample = *set.problems[static_cast<size_t>(i)];
    const LowerSolveResult r =
        solve_lower(sample, ckpt.theta, c.epsilon0, sample.initial_point(), c.lower_max_iter);
    sum += psnr(set.clean[i].with_data(r.x_tilde), set.clean[i]);
  }
  summary.restored_psnr = sum / c.m;
  if (log != nullptr) {
    fmt::print(*log, "{} images: observed {:.3f} dB, restored {:.3f} dB\n", summary.images,
               summary.noisy_psnr, summary.restored_psnr);
  }
  return summary;
}

int run(const std::string& command, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  auto report = [&](const char* kind, const std::exception& e, int code) {
    fmt::print(err, "error[{}]: {}\n", kind, e.what());
    return code;
  };
  try {
    if (command == "train") {
      const TrainSummary s = run_train(cfg, &out);
      fmt::print(out, "final loss {:.6g}, train PSNR {:.3f} dB (observed {:.3f} dB), cost {}\n",
                 s.final_loss, s.mean_train_psnr, s.noisy_psnr, s.ledger.total());
    } else if (command == "quadratic") {
      RunConfig c = cfg;
      c.experiment = Experiment::kQuadratic;
      run_quadratic(c, &out);
    } else if (command == "theory") {
      RunConfig c = cfg;
      c.experiment = Experiment::kTheory;
      run_theory(c, &out);
    } else if (command == "eval") {
      const EvalSummary s = run_eval(cfg, &out);
      prepare_out(cfg);
      write_text(fs::path(cfg.out) / "eval.txt",
                 fmt::format("images={}\nnoisy_psnr={}\nrestored_psnr={}\n", s.images,
                             g17(s.noisy_psnr), g17(s.restored_psnr)));
    } else {
      fmt::print(err, "error[config]: unknown command '{}'\n", command);
      return 2;
    }
  } catch (const ConfigError& e) {
    return report("config", e, 2);
  } catch (const IoError& e) {
    return report("io", e, 3);
  } catch (const IsgdAborted& e) {
    return report("numerical", e, 4);
  } catch (const LowerSolveFailure& e) {
    return report("numerical", e, 4);
  } catch (const HypergradientFailure& e) {
    return report("numerical", e, 4);
  } catch (const DefinitenessError& e) {
    return report("numerical", e, 4);
  } catch (const DimensionError& e) {
    return report("dimension", e, 5);
  } catch (const DomainError& e) {
    return report("domain", e, 5);
  } catch (const std::exception& e) {
    return report("internal", e, 1);
  }
  return 0;
}

}  // namespace bilevel
