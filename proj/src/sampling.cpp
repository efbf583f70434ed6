#include "bilevel/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "bilevel/errors.hpp"

namespace bilevel {

namespace {

constexpr std::uint64_t kBatchStream = 0x5a4d504c45ULL;

void add_draw(Batch& batch, int index, double weight) {
  for (auto& e : batch) {
    if (e.index == index) {
      e.weight += weight;
      return;
    }
  }
  batch.push_back({index, weight});
}

}  // namespace

void SamplingScheme::validate() const {
  if (m <= 0) throw ConfigError(fmt::format("dataset size must be positive, got {}", m));
  if (batch_size <= 0) throw ConfigError(fmt::format("batch size must be positive, got {}", batch_size));
  if (batch_size > m) {
    throw ConfigError(fmt::format("batch size {} exceeds dataset size {}", batch_size, m));
  }
}

int SamplingScheme::iterations_per_epoch() const { return (m + batch_size - 1) / batch_size; }

std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32)};
  return std::mt19937_64(seq);
}

Batch sample_batch(const SamplingScheme& scheme, std::int64_t k) {
  scheme.validate();
  if (k < 0) throw DomainError("sample_batch: iteration index must be non-negative");
  const int m = scheme.m, S = scheme.batch_size;
  const double w = static_cast<double>(m) / S;
  Batch batch;
  batch.reserve(S);

  if (scheme.strategy == SamplingStrategy::kWithReplacement) {
    auto rng = keyed_rng(scheme.seed, kBatchStream, static_cast<std::uint64_t>(k));
    std::uniform_int_distribution<int> pick(0, m - 1);
    for (int j = 0; j < S; ++j) add_draw(batch, pick(rng), w);
    return batch;
  }

  const std::int64_t per_epoch = scheme.iterations_per_epoch();
  const std::int64_t epoch = k / per_epoch;
  const std::int64_t pos = k % per_epoch;
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  if (S < m) {
    auto rng = keyed_rng(scheme.seed, kBatchStream + 1, static_cast<std::uint64_t>(epoch));
    std::shuffle(perm.begin(), perm.end(), rng);
  }
  // The last batch of an epoch wraps to the front of the permutation, so every
  // batch is a uniformly random S-subset.
  for (int j = 0; j < S; ++j) {
    batch.push_back({perm[static_cast<size_t>((pos * S + j) % m)], w});
  }
  return batch;
}

std::vector<WeightedBatch> enumerate_batches(const SamplingScheme& scheme,
                                             std::size_t max_support) {
  scheme.validate();
  const int m = scheme.m, S = scheme.batch_size;
  const double w = static_cast<double>(m) / S;
  std::vector<WeightedBatch> out;

  if (scheme.strategy == SamplingStrategy::kWithReplacement) {
    const double support = std::pow(static_cast<double>(m), S);
    if (support > static_cast<double>(max_support)) {
      throw ConfigError(fmt::format("enumerate_batches: {}^{} batches is too many", m, S));
    }
    const double p = 1.0 / support;
    std::vector<int> digits(S, 0);
    while (true) {
      Batch b;
      for (int d : digits) add_draw(b, d, w);
      out.push_back({std::move(b), p});
      int pos = S - 1;
      while (pos >= 0 && ++digits[pos] == m) digits[pos--] = 0;
      if (pos < 0) break;
    }
    return out;
  }

  double count = 1.0;
  for (int j = 0; j < S; ++j) count = count * (m - j) / (j + 1);
  count = std::round(count);
  if (count > static_cast<double>(max_support)) {
    throw ConfigError(fmt::format("enumerate_batches: C({}, {}) batches is too many", m, S));
  }
  const double p = 1.0 / count;
  std::vector<int> comb(S);
  std::iota(comb.begin(), comb.end(), 0);
  while (true) {
    Batch b;
    for (int i : comb) b.push_back({i, w});
    out.push_back({std::move(b), p});
    int pos = S - 1;
    while (pos >= 0 && comb[pos] == m - S + pos) --pos;
    if (pos < 0) break;
    ++comb[pos];
    for (int j = pos + 1; j < S; ++j) comb[j] = comb[j - 1] + 1;
  }
  return out;
}

}  // namespace bilevel
