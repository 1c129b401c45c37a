// Microbenchmarks for the hot paths: window stacking, representation
// assembly, the data-matrix split, the ball fit, and end-to-end training.
// Run with --benchmark_filter=<regex> to narrow the set.

#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <cstdint>
#include <optional>

#include "fsfd/detect.hpp"
#include "fsfd/errors.hpp"
#include "fsfd/linalg.hpp"
#include "fsfd/ltisim.hpp"
#include "fsfd/repr.hpp"
#include "fsfd/rng.hpp"
#include "fsfd/signals.hpp"
#include "fsfd/subspace.hpp"

using namespace fsfd;

namespace {

StateSpaceModel bench_model(std::uint64_t seed, int n, int p, int m) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, 0xbe9c4ULL + attempt));
    Eigen::MatrixXd A(n, n), B(n, p), C(m, n), D(m, p);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) B(i, j) = rng.normal();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) C(i, j) = rng.normal();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p; ++j) D(i, j) = rng.normal();
    const double rho = spectral_radius(A);
    if (rho > 1e-12) A *= 0.85 / rho;
    try {
      return StateSpaceModel(A, B, C, D);
    } catch (const ModelError&) {
      continue;
    }
  }
}

Trajectory bench_run(const StateSpaceModel& model, std::uint64_t seed, Eigen::Index len,
                     double sd) {
  Rng rng(derive_seed(seed, 1));
  Eigen::MatrixXd u(model.p(), len);
  for (Eigen::Index k = 0; k < len; ++k)
    for (Eigen::Index i = 0; i < model.p(); ++i) u(i, k) = rng.normal();
  std::optional<NoiseModel> noise;
  if (sd > 0.0)
    noise.emplace(sd * sd * Eigen::MatrixXd::Identity(model.n(), model.n()),
                  Eigen::MatrixXd::Zero(model.n(), model.m()),
                  sd * sd * Eigen::MatrixXd::Identity(model.m(), model.m()));
  return simulate(model, noise, std::nullopt, SignalSequence(u, 0),
                  Eigen::VectorXd::Zero(model.n()), derive_seed(seed, 2));
}

void bm_build_hankel(benchmark::State& state) {
  const Eigen::Index len = state.range(0);
  const int depth = static_cast<int>(state.range(1));
  Rng rng(11);
  Eigen::MatrixXd samples(2, len);
  for (Eigen::Index k = 0; k < len; ++k) samples.col(k) = rng.normal_vector(2);
  const SignalSequence seq(samples, 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_hankel(seq, depth));
  }
  state.SetComplexityN(len);
}

void bm_image_rep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  const auto model = bench_model(21, n, 2, 2);
  const Eigen::MatrixXd F = deadbeat_gain(model);
  for (auto _ : state) {
    benchmark::DoNotOptimize(image_rep(model, F, s));
  }
}

void bm_svd_split(benchmark::State& state) {
  const Eigen::Index len = state.range(0);
  const int s = 4;
  const auto model = bench_model(31, 3, 2, 2);
  const auto traj = bench_run(model, 32, len, 0.02);
  const auto data = build_data_matrix(traj, s, true);
  const Eigen::Index gamma = s * model.p() + model.n();
  for (auto _ : state) {
    benchmark::DoNotOptimize(svd_split(data, gamma));
  }
  state.SetComplexityN(len);
}

void bm_svdd_fit(benchmark::State& state) {
  const Eigen::Index count = state.range(0);
  Rng rng(41);
  Eigen::MatrixXd pts(4, count);
  for (Eigen::Index j = 0; j < count; ++j) pts.col(j) = rng.normal_vector(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(svdd_fit(pts, 0.05));
  }
  state.SetComplexityN(count);
}

void bm_train_detector(benchmark::State& state) {
  const Eigen::Index len = state.range(0);
  const int s = 4;
  const auto model = bench_model(51, 3, 2, 2);
  const auto traj = bench_run(model, 52, len, 0.02);
  const Eigen::Index gamma = s * model.p() + model.n();
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_detector(traj, s, gamma, DetectorMode::chi2, 0.05));
  }
  state.SetComplexityN(len);
}

BENCHMARK(bm_build_hankel)->Args({400, 8})->Args({2000, 8})->Args({2000, 20})->Complexity();
BENCHMARK(bm_image_rep)->Args({2, 4})->Args({4, 8})->Args({6, 12});
BENCHMARK(bm_svd_split)->Arg(400)->Arg(1000)->Arg(4000)->Complexity();
BENCHMARK(bm_svdd_fit)->Arg(50)->Arg(200)->Arg(800)->Complexity();
BENCHMARK(bm_train_detector)->Arg(400)->Arg(1000)->Arg(4000)->Complexity();

}  // namespace

BENCHMARK_MAIN();
