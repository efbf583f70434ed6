#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "bilevel/foe.hpp"
#include "bilevel/hypergradient.hpp"
#include "bilevel/linalg.hpp"

namespace bilevel {

// On disk: the ASCII line
//   BILEVEL-CKPT v1 d=<d> J=<J> k=<k> C=<C> iter=<iter>
// followed by little-endian float64 values: theta (d), the ledger (lower, cg),
// then the warm-start block: count W, state length n, and W records of
// (index, x[n], q[n]).
struct Checkpoint {
  FoEShape shape;
  Vector theta;
  std::int64_t iteration = 0;
  CostLedger ledger;
  WarmStartStore warm;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint read_checkpoint(const std::filesystem::path& file);

// "<dir>/ckpt_<iter zero-padded>.bin"
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t iteration);

}  // namespace bilevel
