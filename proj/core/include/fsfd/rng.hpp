#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace fsfd {

// Deterministic counter-based generator (splitmix64). The state advances by
// the golden-ratio increment and each output is a finalizing mix of the
// counter, so streams are reproducible bit-for-bit across platforms; the
// standard library's distributions carry no such guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform on the open interval (0, 1); never returns 0 or 1, so logs are safe.
  double uniform();

  // Standard normal via Box-Muller; draws are cached in pairs.
  double normal();

  Eigen::VectorXd normal_vector(Eigen::Index dim);

  // Uniform on the closed interval [lo, hi].
  double uniform_in(double lo, double hi);

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Stable derivation of an independent stream seed, for per-trial generators.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace fsfd
