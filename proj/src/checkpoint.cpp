#include "bilevel/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "bilevel/errors.hpp"

namespace bilevel {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "BILEVEL-CKPT";

void put(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

void put(std::ostream& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put(out, v[i]);
}

double get(std::istream& in, const fs::path& file) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (in.gcount() != 8) throw IoError(fmt::format("checkpoint '{}' is truncated", file.string()));
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

Vector get(std::istream& in, Eigen::Index n, const fs::path& file) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = get(in, file);
  return v;
}

// Integer stored as a float64; rejects anything that is not a non-negative integer.
std::int64_t get_count(std::istream& in, const fs::path& file) {
  const double v = get(in, file);
  if (!(v >= 0.0) || v > 9.0e15 || v != static_cast<double>(static_cast<std::int64_t>(v))) {
    throw IoError(fmt::format("checkpoint '{}' has a malformed count", file.string()));
  }
  return static_cast<std::int64_t>(v);
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const fs::path& file) {
  ckpt.shape.validate();
  if (ckpt.theta.size() != ckpt.shape.param_dim()) {
    throw DimensionError("write_checkpoint: theta does not match the FoE shape");
  }
  Eigen::Index n = 0;
  for (const auto& [i, w] : ckpt.warm) {
    if (n == 0) n = w.x.size();
    if (w.x.size() != n || w.q.size() != n) {
      throw DimensionError("write_checkpoint: warm-start states differ in length");
    }
  }

  const fs::path tmp = fs::path(file).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write checkpoint '{}'", file.string()));
    out << fmt::format("{} v1 d={} J={} k={} C={} iter={}\n", kMagic, ckpt.theta.size(),
                       ckpt.shape.experts, ckpt.shape.kernel_size, ckpt.shape.channels,
                       ckpt.iteration);
    put(out, ckpt.theta);
    put(out, static_cast<double>(ckpt.ledger.lower_iterations));
    put(out, static_cast<double>(ckpt.ledger.linear_solver_iterations));
    put(out, static_cast<double>(ckpt.warm.size()));
    put(out, static_cast<double>(n));
    for (const auto& [i, w] : ckpt.warm) {
      put(out, static_cast<double>(i));
      put(out, w.x);
      put(out, w.q);
    }
    out.flush();
    if (!out) throw IoError(fmt::format("cannot write checkpoint '{}'", file.string()));
  }
  fs::rename(tmp, file);
}

Checkpoint read_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open checkpoint '{}'", file.string()));
  std::string header;
  if (!std::getline(in, header)) {
    throw IoError(fmt::format("checkpoint '{}' has no header", file.string()));
  }
  std::istringstream hs(header);
  std::string magic, version;
  long long d = -1, j = -1, k = -1, c = -1, iter = -1;
  hs >> magic >> version;
  const int matched = std::sscanf(header.c_str(), "BILEVEL-CKPT v1 d=%lld J=%lld k=%lld C=%lld iter=%lld",
                                  &d, &j, &k, &c, &iter);
  if (magic != kMagic || version != "v1" || matched != 5) {
    throw IoError(fmt::format("'{}' is not a v1 checkpoint", file.string()));
  }
  Checkpoint ckpt;
  ckpt.shape = FoEShape{static_cast<int>(j), static_cast<int>(k), static_cast<int>(c)};
  try {
    ckpt.shape.validate();
  } catch (const std::exception& e) {
    throw IoError(fmt::format("checkpoint '{}': {}", file.string(), e.what()));
  }
  if (iter < 0 || d != ckpt.shape.param_dim()) {
    throw IoError(fmt::format("checkpoint '{}': header is inconsistent (d={} for J={} k={} C={})",
                              file.string(), d, j, k, c));
  }
  ckpt.iteration = iter;
  ckpt.theta = get(in, d, file);
  ckpt.ledger.lower_iterations = get_count(in, file);
  ckpt.ledger.linear_solver_iterations = get_count(in, file);
  const std::int64_t count = get_count(in, file);
  const std::int64_t n = get_count(in, file);
  for (std::int64_t r = 0; r < count; ++r) {
    const auto index = static_cast<int>(get_count(in, file));
    WarmStart w;
    w.x = get(in, n, file);
    w.q = get(in, n, file);
    ckpt.warm.emplace(index, std::move(w));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError(fmt::format("checkpoint '{}' has trailing data", file.string()));
  }
  return ckpt;
}

fs::path checkpoint_path(const fs::path& dir, std::int64_t iteration) {
  return dir / fmt::format("ckpt_{:08d}.bin", iteration);
}

}  // namespace bilevel
