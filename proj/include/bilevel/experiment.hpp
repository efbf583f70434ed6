#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "bilevel/config.hpp"
#include "bilevel/foe.hpp"
#include "bilevel/hypergradient.hpp"
#include "bilevel/imaging.hpp"
#include "bilevel/isgd.hpp"
#include "bilevel/theory.hpp"

namespace bilevel {

inline constexpr const char* kTraceHeader =
    "k,epoch,batch_loss,alpha,epsilon,grad_est_norm,lower_iters_cum,cg_iters_cum,psnr_epoch";

// One CSV line (no newline); values use 17 significant digits.
std::string trace_csv_row(const IterationRecord& rec);

struct TrainingSet {
  FoEShape shape;
  std::vector<ImageTensor> clean;
  std::vector<ImageTensor> observed;
  ProblemSet problems;
  double noisy_psnr = 0.0;  // mean PSNR of the observations
};

// Images (folder or synthetic), degraded observations and FoE samples.
TrainingSet build_training_set(const RunConfig& cfg, const FoEShape& shape);
FoEShape shape_of(const RunConfig& cfg);

struct TrainSummary {
  RunTrace trace;
  double final_loss = 0.0;       // batch loss of the last iteration
  double mean_train_psnr = 0.0;  // epoch-mean PSNR of the last completed epoch
  double noisy_psnr = 0.0;
  CostLedger ledger;
  std::vector<std::filesystem::path> checkpoints;
};

// denoise / deblur training. Writes trace.csv, checkpoints, config.txt and
// summary.txt into cfg.out.
TrainSummary run_train(const RunConfig& cfg, std::ostream* log = nullptr);

struct QuadraticSummary {
  RunTrace trace;
  std::vector<double> grad_sq;  // ||grad f(theta^t)||^2, t = 0..T
  std::vector<double> f_gap;    // f(theta^t) - f_inf
  CostLedger ledger;
};

// ISGD on a seeded quadratic instance; writes trace.csv and oracle.csv.
QuadraticSummary run_quadratic(const RunConfig& cfg, std::ostream* log = nullptr);

struct TheorySummary {
  AbcEstimate abc;
  BiasedAbcReport biased;
  Theorem1Report theorem1;
};

// ABC fit, biased-ABC margins and the convergence-bound check on a quadratic
// instance; writes abc.txt, biased_abc.csv and theorem1.csv.
TheorySummary run_theory(const RunConfig& cfg, std::ostream* log = nullptr);

struct EvalSummary {
  int images = 0;
  double noisy_psnr = 0.0;
  double restored_psnr = 0.0;
};

// Restores the configured images with the parameters in cfg.checkpoint.
EvalSummary run_eval(const RunConfig& cfg, std::ostream* log = nullptr);

// Command dispatcher: "train", "quadratic", "theory" or "eval". Errors are
// reported on `err` as "error[<kind>]: <message>" with a nonzero status.
int run(const std::string& command, const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace bilevel
