#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "fsfd/linalg.hpp"
#include "fsfd/ltisim.hpp"
#include "fsfd/rng.hpp"
#include "fsfd/signals.hpp"

namespace fsfd::test {

// Random minimal model with spectral radius scaled to `radius`. Entries are
// standard normal; minimality holds almost surely, with a retry loop for the
// measure-zero failures.
inline StateSpaceModel random_model(std::uint64_t seed, int n, int p, int m,
                                    double radius = 0.85, bool with_feedthrough = true) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, 0xd0de1ULL + attempt));
    Eigen::MatrixXd A(n, n), B(n, p), C(m, n), D(m, p);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) B(i, j) = rng.normal();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) C(i, j) = rng.normal();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p; ++j) D(i, j) = with_feedthrough ? rng.normal() : 0.0;
    const double rho = spectral_radius(A);
    if (rho > 1e-12) A *= radius / rho;
    try {
      return StateSpaceModel(A, B, C, D);
    } catch (const ModelError&) {
      continue;
    }
  }
}

inline SignalSequence random_input(std::uint64_t seed, int p, Eigen::Index length,
                                   long start_index = 0, double scale = 1.0) {
  Rng rng(seed);
  Eigen::MatrixXd u(p, length);
  for (Eigen::Index j = 0; j < length; ++j)
    for (int i = 0; i < p; ++i) u(i, j) = scale * rng.normal();
  return SignalSequence(u, start_index);
}

inline double rel_resid(const Eigen::MatrixXd& actual, const Eigen::MatrixXd& expected) {
  return (actual - expected).norm() / residual_scale(expected);
}

// One observer-based closed-loop run u = F xhat + v_exc with plant noise,
// recording both latents alongside the input/output trajectory.
struct ClosedLoopRun {
  Trajectory traj;
  SignalSequence v;  // excitation latent, u - F xhat
  SignalSequence r;  // innovation latent, y - C xhat - D u
};

inline ClosedLoopRun closed_loop_experiment(const StateSpaceModel& model,
                                            const std::optional<NoiseModel>& noise,
                                            const Eigen::MatrixXd& F, const Eigen::MatrixXd& L,
                                            const SignalSequence& v_exc,
                                            const Eigen::VectorXd& x0,
                                            const Eigen::VectorXd& xhat0, std::uint64_t seed) {
  const Eigen::Index n = model.n(), p = model.p(), m = model.m();
  const Eigen::Index len = v_exc.length();
  Eigen::MatrixXd u(p, len), y(m, len), r(m, len);
  Eigen::MatrixXd chol;
  if (noise) chol = symmetric_sqrt(noise->joint());
  Rng rng(seed);
  Eigen::VectorXd x = x0, xhat = xhat0;
  for (Eigen::Index k = 0; k < len; ++k) {
    u.col(k) = F * xhat + v_exc.at(v_exc.start_index() + 1 + k);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n), v_meas = Eigen::VectorXd::Zero(m);
    if (noise) {
      const Eigen::VectorXd joint = chol * rng.normal_vector(n + m);
      w = joint.head(n);
      v_meas = joint.tail(m);
    }
    y.col(k) = model.C() * x + model.D() * u.col(k) + v_meas;
    r.col(k) = y.col(k) - model.C() * xhat - model.D() * u.col(k);
    x = model.A() * x + model.B() * u.col(k) + w;
    xhat = model.A() * xhat + model.B() * u.col(k) + L * r.col(k);
  }
  const long anchor = v_exc.start_index();
  // v = u - F xhat is exactly the excitation that was injected.
  return ClosedLoopRun{Trajectory{SignalSequence(u, anchor), SignalSequence(y, anchor),
                                  std::nullopt,
                                  std::vector<std::uint8_t>(static_cast<std::size_t>(len), 0)},
                       SignalSequence(v_exc.samples(), anchor), SignalSequence(r, anchor)};
}

}  // namespace fsfd::test
