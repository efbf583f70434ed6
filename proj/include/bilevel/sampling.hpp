#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace bilevel {

enum class SamplingStrategy {
  kWithReplacement,     // S i.i.d. uniform draws per iteration
  kWithoutReplacement,  // a fresh permutation per epoch, consumed S indices at a time
};

struct SamplingScheme {
  int m = 1;
  int batch_size = 1;
  SamplingStrategy strategy = SamplingStrategy::kWithoutReplacement;
  std::uint64_t seed = 0;

  void validate() const;
  // ceil(m / S)
  int iterations_per_epoch() const;
};

// One selected sample. `weight` is the sampling-vector entry v_i, so that
// E[v_i] = 1: m/S per draw under uniform selection (accumulated for repeats).
struct BatchEntry {
  int index = 0;
  double weight = 0.0;
};
using Batch = std::vector<BatchEntry>;

// Mini-batch drawn at iteration k. Deterministic in (scheme.seed, k); indices are
// unique within a batch (repeated draws are merged into one entry).
Batch sample_batch(const SamplingScheme& scheme, std::int64_t k);

struct WeightedBatch {
  Batch batch;
  double probability = 0.0;
};

// The exact per-iteration distribution of sample_batch: all S-subsets for the
// epoch scheme (its marginal at any fixed k), all m^S draw sequences for the
// i.i.d. scheme. Throws ConfigError when the support exceeds max_support.
std::vector<WeightedBatch> enumerate_batches(const SamplingScheme& scheme,
                                             std::size_t max_support = 2'000'000);

// Counter-based stream keyed by (seed, stream, counter); same key, same numbers.
std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

}  // namespace bilevel
