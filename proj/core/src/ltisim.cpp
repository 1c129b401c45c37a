#include "fsfd/ltisim.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>

#include "fsfd/errors.hpp"
#include "fsfd/linalg.hpp"
#include "fsfd/rng.hpp"

namespace fsfd {

namespace {

Eigen::MatrixXd obs_matrix(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C, int s) {
  const Eigen::Index n = A.rows();
  const Eigen::Index m = C.rows();
  Eigen::MatrixXd o(static_cast<Eigen::Index>(s) * m, n);
  Eigen::MatrixXd row = C;
  for (int i = 0; i < s; ++i) {
    o.middleRows(static_cast<Eigen::Index>(i) * m, m) = row;
    if (i + 1 < s) row = row * A;
  }
  return o;
}

Eigen::MatrixXd ctrb_matrix(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int s) {
  const Eigen::Index n = A.rows();
  const Eigen::Index p = B.cols();
  Eigen::MatrixXd c(n, static_cast<Eigen::Index>(s) * p);
  Eigen::MatrixXd col = B;
  for (int i = 0; i < s; ++i) {
    c.middleCols(static_cast<Eigen::Index>(i) * p, p) = col;
    if (i + 1 < s) col = A * col;
  }
  return c;
}

// Single-input gain assigning the characteristic polynomial prod (z - roots[i])
// to A + b f, by the classical substitution formula.
Eigen::RowVectorXd ackermann(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                             const Eigen::VectorXd& roots) {
  const Eigen::Index n = A.rows();
  Eigen::MatrixXd ctrb(n, n);
  Eigen::VectorXd col = b;
  for (Eigen::Index i = 0; i < n; ++i) {
    ctrb.col(i) = col;
    col = A * col;
  }
  Eigen::MatrixXd pA = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    pA = pA * (A - roots(i) * Eigen::MatrixXd::Identity(n, n));
  }
  Eigen::VectorXd en = Eigen::VectorXd::Zero(n);
  en(n - 1) = 1.0;
  // f = -e_n' ctrb^{-1} p(A) so that A + b f has characteristic polynomial p.
  const Eigen::VectorXd row = ctrb.transpose().fullPivLu().solve(en);
  return -(pA.transpose() * row).transpose();
}

// Gain F placing the spectrum of A + BF at the given roots, via a random
// single-input reduction. A repeated root at zero is certified through the
// nilpotency norm test (exact algebra); distinct nonzero roots through the
// spectral radius. Returns an empty matrix when no admissible direction works.
Eigen::MatrixXd place_spectrum(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                               const Eigen::VectorXd& roots, std::uint64_t seed,
                               int max_tries) {
  const Eigen::Index n = A.rows();
  const Eigen::Index p = B.cols();
  const double max_root = roots.cwiseAbs().maxCoeff();
  Rng rng(derive_seed(seed, 0xacce55));
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    Eigen::VectorXd w;
    if (p == 1) {
      w = Eigen::VectorXd::Ones(1);
    } else {
      w = rng.normal_vector(p);
      const double norm = w.norm();
      if (norm < 1e-12) continue;
      w /= norm;
    }
    const Eigen::VectorXd b = B * w;
    if (numerical_rank(ctrb_matrix(A, b, static_cast<int>(n))) != n) {
      if (p == 1) break;
      continue;
    }
    Eigen::RowVectorXd f = ackermann(A, b, roots);
    Eigen::MatrixXd F = w * f;
    const Eigen::MatrixXd closed = A + B * F;
    if (max_root == 0.0) {
      Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
      for (Eigen::Index i = 0; i < n; ++i) power = power * closed;
      const double budget = 1e-8 * std::pow(1.0 + spectral_norm(A), static_cast<double>(n));
      if (spectral_norm(power) <= budget) return F;
    } else {
      if (spectral_radius(closed) <= max_root * (1.0 + 1e-6) + 1e-8) return F;
    }
    if (p == 1) break;
  }
  return Eigen::MatrixXd();
}

}  // namespace

StateSpaceModel::StateSpaceModel(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C,
                                 Eigen::MatrixXd D, Minimality check)
    : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)), D_(std::move(D)) {
  const Eigen::Index n = A_.rows();
  if (n < 1 || B_.cols() < 1 || C_.rows() < 1) {
    throw SizeError("StateSpaceModel: n, p, m must all be at least 1");
  }
  if (A_.cols() != n) throw ShapeError("StateSpaceModel: A must be square");
  if (B_.rows() != n) throw ShapeError("StateSpaceModel: B must have n rows");
  if (C_.cols() != n) throw ShapeError("StateSpaceModel: C must have n columns");
  if (D_.rows() != C_.rows() || D_.cols() != B_.cols()) {
    throw ShapeError("StateSpaceModel: D must be m by p");
  }
  if (check == Minimality::require) {
    const int ni = static_cast<int>(n);
    if (numerical_rank(ctrb_matrix(A_, B_, ni)) != n) {
      throw ModelError("StateSpaceModel: (A,B) is not controllable");
    }
    if (numerical_rank(obs_matrix(A_, C_, ni)) != n) {
      throw ModelError("StateSpaceModel: (A,C) is not observable");
    }
  }
}

Eigen::MatrixXd StateSpaceModel::markov_parameter(long k) const {
  if (k < 0) return Eigen::MatrixXd::Zero(m(), p());
  if (k == 0) return D_;
  Eigen::MatrixXd g = C_;
  for (long i = 1; i < k; ++i) g = g * A_;
  return g * B_;
}

NoiseModel::NoiseModel(Eigen::MatrixXd Sigma_w, Eigen::MatrixXd S_wv, Eigen::MatrixXd Sigma_v)
    : Sigma_w_(std::move(Sigma_w)), S_wv_(std::move(S_wv)), Sigma_v_(std::move(Sigma_v)) {
  const Eigen::Index n = Sigma_w_.rows();
  const Eigen::Index m = Sigma_v_.rows();
  if (Sigma_w_.cols() != n) throw ShapeError("NoiseModel: Sigma_w must be square");
  if (Sigma_v_.cols() != m) throw ShapeError("NoiseModel: Sigma_v must be square");
  if (S_wv_.rows() != n || S_wv_.cols() != m) {
    throw ShapeError("NoiseModel: S_wv must be n by m");
  }
  const Eigen::MatrixXd sigma = joint();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
  const double floor = -1e-12 * std::max(sigma.trace(), 1e-300);
  if (eig.eigenvalues().minCoeff() < floor) {
    throw ParameterError("NoiseModel: joint covariance is not positive semidefinite");
  }
}

Eigen::MatrixXd NoiseModel::joint() const {
  const Eigen::Index n = Sigma_w_.rows();
  const Eigen::Index m = Sigma_v_.rows();
  Eigen::MatrixXd sigma(n + m, n + m);
  sigma.topLeftCorner(n, n) = Sigma_w_;
  sigma.topRightCorner(n, m) = S_wv_;
  sigma.bottomLeftCorner(m, n) = S_wv_.transpose();
  sigma.bottomRightCorner(m, m) = Sigma_v_;
  return 0.5 * (sigma + sigma.transpose());
}

FaultProfile FaultProfile::step_sensor(long onset, Eigen::VectorXd amplitude) {
  FaultProfile f;
  f.onset = onset;
  f.sensor_fault = [amp = std::move(amplitude)](long) { return amp; };
  return f;
}

FaultProfile FaultProfile::step_actuator(long onset, Eigen::VectorXd amplitude) {
  FaultProfile f;
  f.onset = onset;
  f.actuator_fault = [amp = std::move(amplitude)](long) { return amp; };
  return f;
}

FaultProfile FaultProfile::gain_sensor(long onset, Eigen::VectorXd factors) {
  FaultProfile f;
  f.onset = onset;
  f.sensor_gain = [g = std::move(factors)](long) { return g; };
  return f;
}

GainPair::GainPair(const StateSpaceModel& model, Eigen::MatrixXd F, Eigen::MatrixXd L)
    : F_(std::move(F)), L_(std::move(L)) {
  if (F_.rows() != model.p() || F_.cols() != model.n()) {
    throw ShapeError("GainPair: F must be p by n");
  }
  if (L_.rows() != model.n() || L_.cols() != model.m()) {
    throw ShapeError("GainPair: L must be n by m");
  }
  if (spectral_radius(model.A() + model.B() * F_) >= 1.0) {
    throw ParameterError("GainPair: A + BF is not Schur");
  }
  if (spectral_radius(model.A() - L_ * model.C()) >= 1.0) {
    throw ParameterError("GainPair: A - LC is not Schur");
  }
}

Eigen::MatrixXd observability_matrix(const StateSpaceModel& model, int s) {
  if (s < 1) throw ParameterError("observability_matrix: s must be at least 1");
  return obs_matrix(model.A(), model.C(), s);
}

Eigen::MatrixXd controllability_matrix(const StateSpaceModel& model, int s) {
  if (s < 1) throw ParameterError("controllability_matrix: s must be at least 1");
  return ctrb_matrix(model.A(), model.B(), s);
}

int observability_index(const StateSpaceModel& model) {
  const Eigen::Index n = model.n();
  for (int s = 1; s <= static_cast<int>(n); ++s) {
    if (numerical_rank(observability_matrix(model, s)) == n) return s;
  }
  throw ModelError("observability_index: model is not observable");
}

Eigen::MatrixXd deadbeat_gain(const StateSpaceModel& model, std::uint64_t seed) {
  const Eigen::Index n = model.n();
  if (numerical_rank(controllability_matrix(model, static_cast<int>(n))) != n) {
    throw ModelError("deadbeat_gain: (A,B) is not controllable");
  }
  const double budget = 1e-8 * std::pow(1.0 + spectral_norm(model.A()), static_cast<double>(n));
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) power = power * model.A();
  if (spectral_norm(power) <= budget) {
    return Eigen::MatrixXd::Zero(model.p(), n);
  }
  Eigen::MatrixXd F =
      place_spectrum(model.A(), model.B(), Eigen::VectorXd::Zero(n), seed, 16);
  if (F.size() == 0) {
    throw SynthesisError("deadbeat_gain: nilpotency certificate failed for all attempts");
  }
  return F;
}

Eigen::MatrixXd observer_gain_deadbeat(const StateSpaceModel& model, std::uint64_t seed) {
  const Eigen::Index n = model.n();
  if (numerical_rank(observability_matrix(model, static_cast<int>(n))) != n) {
    throw ModelError("observer_gain_deadbeat: (A,C) is not observable");
  }
  const Eigen::MatrixXd At = model.A().transpose();
  const Eigen::MatrixXd Ct = model.C().transpose();
  const double budget = 1e-8 * std::pow(1.0 + spectral_norm(model.A()), static_cast<double>(n));
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) power = power * model.A();
  if (spectral_norm(power) <= budget) {
    return Eigen::MatrixXd::Zero(n, model.m());
  }
  Eigen::MatrixXd Fd = place_spectrum(At, Ct, Eigen::VectorXd::Zero(n), seed, 16);
  if (Fd.size() == 0) {
    throw SynthesisError("observer_gain_deadbeat: nilpotency certificate failed for all attempts");
  }
  return -Fd.transpose();
}

Eigen::MatrixXd observer_gain_place(const StateSpaceModel& model, double radius,
                                    std::uint64_t seed) {
  if (radius < 0.0 || radius >= 1.0) {
    throw ParameterError("observer_gain_place: radius must lie in [0, 1)");
  }
  const Eigen::Index n = model.n();
  if (numerical_rank(observability_matrix(model, static_cast<int>(n))) != n) {
    throw ModelError("observer_gain_place: (A,C) is not observable");
  }
  // Distinct roots inside the target disk: a repeated nonzero root is
  // ill-conditioned (eigenvalues move like the n-th root of the coefficient
  // error), so spread them over [radius/n, radius].
  Eigen::VectorXd roots(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    roots(i) = radius * static_cast<double>(n - i) / static_cast<double>(n);
  }
  Eigen::MatrixXd Fd =
      place_spectrum(model.A().transpose(), model.C().transpose(), roots, seed, 16);
  if (Fd.size() == 0) {
    throw SynthesisError("observer_gain_place: pole placement failed for all attempts");
  }
  return -Fd.transpose();
}

KalmanGain kalman_gain(const StateSpaceModel& model, const NoiseModel& noise, int max_iter) {
  const Eigen::Index n = model.n();
  const Eigen::Index m = model.m();
  if (noise.state_dim() != n || noise.output_dim() != m) {
    throw ShapeError("kalman_gain: noise dimensions do not match the model");
  }
  const Eigen::MatrixXd& A = model.A();
  const Eigen::MatrixXd& C = model.C();
  const Eigen::MatrixXd& Sw = noise.Sigma_w();
  const Eigen::MatrixXd& S = noise.S_wv();
  const Eigen::MatrixXd& Sv = noise.Sigma_v();

  Eigen::MatrixXd P = Sw;
  bool converged = false;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd apc = A * P * C.transpose() + S;
    Eigen::MatrixXd Sr = C * P * C.transpose() + Sv;
    Sr = 0.5 * (Sr + Sr.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Sr);
    if (eig.eigenvalues().minCoeff() <= 0.0) {
      throw ConditioningError("kalman_gain: innovation covariance is singular");
    }
    Eigen::MatrixXd next =
        A * P * A.transpose() + Sw - apc * Sr.ldlt().solve(apc.transpose());
    next = 0.5 * (next + next.transpose());
    const double delta = (next - P).norm();
    P = next;
    if (delta < 1e-12 * (1.0 + P.norm())) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw ConvergenceError("kalman_gain: Riccati iteration did not converge");
  }
  KalmanGain out;
  out.P = P;
  Eigen::MatrixXd Sr = C * P * C.transpose() + Sv;
  out.Sigma_r = 0.5 * (Sr + Sr.transpose());
  out.L = (A * P * C.transpose() + S) * out.Sigma_r.ldlt().solve(
              Eigen::MatrixXd::Identity(m, m));
  if (spectral_radius(A - out.L * C) >= 1.0) {
    throw SynthesisError("kalman_gain: closed loop A - LC is not Schur");
  }
  return out;
}

Trajectory simulate(const StateSpaceModel& model, const std::optional<NoiseModel>& noise,
                    const std::optional<FaultProfile>& faults, const SignalSequence& u,
                    const Eigen::VectorXd& x0, std::uint64_t seed) {
  const Eigen::Index n = model.n();
  const Eigen::Index p = model.p();
  const Eigen::Index m = model.m();
  if (u.dim() != p) throw ShapeError("simulate: input dimension does not match B");
  if (x0.size() != n) throw ShapeError("simulate: x0 dimension does not match A");
  if (noise && (noise->state_dim() != n || noise->output_dim() != m)) {
    throw ShapeError("simulate: noise dimensions do not match the model");
  }

  const Eigen::Index N = u.length();
  const long k0 = u.start_index();
  Eigen::MatrixXd ys(m, N), xs(n, N);
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(N), 0);

  Eigen::MatrixXd noise_sqrt;
  if (noise) noise_sqrt = symmetric_sqrt(noise->joint());
  Rng rng(seed);

  const bool fault_present =
      faults && (faults->sensor_fault || faults->actuator_fault || faults->sensor_gain);

  Eigen::VectorXd x = x0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const long k = k0 + 1 + static_cast<long>(i);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
    if (noise) {
      const Eigen::VectorXd z = noise_sqrt * rng.normal_vector(n + m);
      w = z.head(n);
      v = z.tail(m);
    }
    Eigen::VectorXd u_plant = u.at(k);
    Eigen::VectorXd f_sens = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd gain = Eigen::VectorXd::Ones(m);
    const bool active = fault_present && k >= faults->onset;
    if (active) {
      if (faults->actuator_fault) {
        Eigen::VectorXd fa = faults->actuator_fault(k);
        if (fa.size() != p) throw ShapeError("simulate: actuator fault has wrong dimension");
        u_plant += fa;
      }
      if (faults->sensor_fault) {
        f_sens = faults->sensor_fault(k);
        if (f_sens.size() != m) throw ShapeError("simulate: sensor fault has wrong dimension");
      }
      if (faults->sensor_gain) {
        gain = faults->sensor_gain(k);
        if (gain.size() != m) throw ShapeError("simulate: sensor gain has wrong dimension");
      }
      labels[static_cast<std::size_t>(i)] = 1;
    }
    xs.col(i) = x;
    ys.col(i) = gain.asDiagonal() * (model.C() * x + model.D() * u_plant + v) + f_sens;
    x = model.A() * x + model.B() * u_plant + w;
  }

  return Trajectory{SignalSequence(u.samples(), k0), SignalSequence(std::move(ys), k0),
                    SignalSequence(std::move(xs), k0), std::move(labels)};
}

SignalSequence observer_residual(const StateSpaceModel& model, const Eigen::MatrixXd& L,
                                 const Trajectory& traj, const Eigen::VectorXd& xhat0) {
  const Eigen::Index n = model.n();
  const Eigen::Index m = model.m();
  if (L.rows() != n || L.cols() != m) throw ShapeError("observer_residual: L must be n by m");
  if (xhat0.size() != n) throw ShapeError("observer_residual: xhat0 must be an n-vector");
  if (traj.u.dim() != model.p() || traj.y.dim() != m) {
    throw ShapeError("observer_residual: trajectory dimensions do not match the model");
  }

  const Eigen::Index N = traj.length();
  const long k0 = traj.start_index();
  Eigen::MatrixXd rs(m, N);
  Eigen::VectorXd xh = xhat0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const long k = k0 + 1 + static_cast<long>(i);
    const Eigen::VectorXd uk = traj.u.at(k);
    const Eigen::VectorXd rk = traj.y.at(k) - model.C() * xh - model.D() * uk;
    rs.col(i) = rk;
    xh = model.A() * xh + model.B() * uk + L * rk;
  }
  return SignalSequence(std::move(rs), k0);
}

std::pair<SignalSequence, SignalSequence> latent_signals(const StateSpaceModel& model,
                                                         const Eigen::MatrixXd& F,
                                                         const Eigen::MatrixXd& L,
                                                         const Trajectory& traj,
                                                         const Eigen::VectorXd& xhat0) {
  const Eigen::Index n = model.n();
  if (F.rows() != model.p() || F.cols() != n) {
    throw ShapeError("latent_signals: F must be p by n");
  }
  if (L.rows() != n || L.cols() != model.m()) {
    throw ShapeError("latent_signals: L must be n by m");
  }
  if (xhat0.size() != n) throw ShapeError("latent_signals: xhat0 must be an n-vector");
  if (traj.u.dim() != model.p() || traj.y.dim() != model.m()) {
    throw ShapeError("latent_signals: trajectory dimensions do not match the model");
  }

  const Eigen::Index N = traj.length();
  const long k0 = traj.start_index();
  Eigen::MatrixXd vs(model.p(), N), rs(model.m(), N);
  Eigen::VectorXd xh = xhat0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const long k = k0 + 1 + static_cast<long>(i);
    const Eigen::VectorXd uk = traj.u.at(k);
    const Eigen::VectorXd rk = traj.y.at(k) - model.C() * xh - model.D() * uk;
    vs.col(i) = uk - F * xh;
    rs.col(i) = rk;
    xh = model.A() * xh + model.B() * uk + L * rk;
  }
  return {SignalSequence(std::move(vs), k0), SignalSequence(std::move(rs), k0)};
}

}  // namespace fsfd
