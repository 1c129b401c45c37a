#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "fsfd/signals.hpp"

namespace fsfd {

enum class Minimality { require, skip };

// Discrete-time LTI plant x(k+1) = Ax + Bu, y = Cx + Du. Construction checks
// dimensional consistency always and minimality by default; analysis-only
// helpers may opt out for deliberately degenerate instances.
class StateSpaceModel {
 public:
  StateSpaceModel(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C,
                  Eigen::MatrixXd D, Minimality check = Minimality::require);

  Eigen::Index n() const { return A_.rows(); }
  Eigen::Index p() const { return B_.cols(); }
  Eigen::Index m() const { return C_.rows(); }

  const Eigen::MatrixXd& A() const { return A_; }
  const Eigen::MatrixXd& B() const { return B_; }
  const Eigen::MatrixXd& C() const { return C_; }
  const Eigen::MatrixXd& D() const { return D_; }

  // Markov parameter of the impulse response: D for k = 0, CA^{k-1}B for
  // k >= 1, zero block for k < 0.
  Eigen::MatrixXd markov_parameter(long k) const;

 private:
  Eigen::MatrixXd A_, B_, C_, D_;
};

// Joint second-order description of process noise w and measurement noise v,
// possibly correlated through S_wv.
class NoiseModel {
 public:
  NoiseModel(Eigen::MatrixXd Sigma_w, Eigen::MatrixXd S_wv, Eigen::MatrixXd Sigma_v);

  const Eigen::MatrixXd& Sigma_w() const { return Sigma_w_; }
  const Eigen::MatrixXd& S_wv() const { return S_wv_; }
  const Eigen::MatrixXd& Sigma_v() const { return Sigma_v_; }

  Eigen::Index state_dim() const { return Sigma_w_.rows(); }
  Eigen::Index output_dim() const { return Sigma_v_.rows(); }

  // Joint covariance [[Sigma_w, S_wv], [S_wv', Sigma_v]].
  Eigen::MatrixXd joint() const;

 private:
  Eigen::MatrixXd Sigma_w_, S_wv_, Sigma_v_;
};

// Additive fault schedules, zero before onset. Actuator faults perturb the
// plant input without showing up in the recorded input; sensor faults add to
// the recorded output. The optional per-channel sensor gain (identity when
// absent) models multiplicative sensor degradation.
struct FaultProfile {
  long onset = 0;
  std::function<Eigen::VectorXd(long)> sensor_fault;    // m-vector at time k
  std::function<Eigen::VectorXd(long)> actuator_fault;  // p-vector at time k
  std::function<Eigen::VectorXd(long)> sensor_gain;     // m-vector of factors

  static FaultProfile step_sensor(long onset, Eigen::VectorXd amplitude);
  static FaultProfile step_actuator(long onset, Eigen::VectorXd amplitude);
  static FaultProfile gain_sensor(long onset, Eigen::VectorXd factors);
};

// Recorded input/output run with per-sample fault labels; the state sequence
// is kept for diagnostics only.
struct Trajectory {
  SignalSequence u;
  SignalSequence y;
  std::optional<SignalSequence> x;
  std::vector<std::uint8_t> labels;

  Eigen::Index length() const { return u.length(); }
  long start_index() const { return u.start_index(); }
};

// Stabilizing pair: state feedback F (A+BF Schur) and observer gain L
// (A-LC Schur), both checked strictly at construction.
class GainPair {
 public:
  GainPair(const StateSpaceModel& model, Eigen::MatrixXd F, Eigen::MatrixXd L);

  const Eigen::MatrixXd& F() const { return F_; }
  const Eigen::MatrixXd& L() const { return L_; }

 private:
  Eigen::MatrixXd F_, L_;
};

struct KalmanGain {
  Eigen::MatrixXd L;        // n x m predictor gain
  Eigen::MatrixXd Sigma_r;  // m x m innovation covariance
  Eigen::MatrixXd P;        // n x n stationary prediction error covariance
};

// O_s = [C; CA; ...; CA^{s-1}], sm by n.
Eigen::MatrixXd observability_matrix(const StateSpaceModel& model, int s);

// C_s = [B, AB, ..., A^{s-1}B], n by sp.
Eigen::MatrixXd controllability_matrix(const StateSpaceModel& model, int s);

// Smallest s with rank(O_s) = n; throws ModelError when unobservable.
int observability_index(const StateSpaceModel& model);

// State feedback F_d making A + B F_d nilpotent. Multi-input models are
// reduced to a random single-input pair; the nilpotency certificate
// ||(A+BF_d)^n|| <= 1e-8 (1+||A||)^n is checked before returning.
Eigen::MatrixXd deadbeat_gain(const StateSpaceModel& model, std::uint64_t seed = 0x5eedULL);

// Observer gain with A - LC nilpotent, obtained by duality from deadbeat_gain.
Eigen::MatrixXd observer_gain_deadbeat(const StateSpaceModel& model,
                                       std::uint64_t seed = 0x5eedULL);

// Observer gain placing every eigenvalue of A - LC at `radius` (0 <= radius < 1).
Eigen::MatrixXd observer_gain_place(const StateSpaceModel& model, double radius,
                                    std::uint64_t seed = 0x5eedULL);

// Stationary predictor gain: solves the discrete Riccati equation by fixed
// point iteration and returns L = (APC' + S) Sigma_r^{-1}, Sigma_r = CPC' + Sigma_v.
KalmanGain kalman_gain(const StateSpaceModel& model, const NoiseModel& noise,
                       int max_iter = 200000);

// Simulate x(k+1) = Ax + B(u + f_act) + w, y = gain .* (Cx + D(u + f_act) + v) + f_sens.
// The recorded input is u itself; labels mark samples at or after fault onset.
Trajectory simulate(const StateSpaceModel& model, const std::optional<NoiseModel>& noise,
                    const std::optional<FaultProfile>& faults, const SignalSequence& u,
                    const Eigen::VectorXd& x0, std::uint64_t seed);

// Residual r = y - C xhat - D u of the observer xhat(k+1) = A xhat + B u + L r.
SignalSequence observer_residual(const StateSpaceModel& model, const Eigen::MatrixXd& L,
                                 const Trajectory& traj, const Eigen::VectorXd& xhat0);

// Latent pair of the observer-based controller view: v = u - F xhat together
// with the observer residual, both over the trajectory horizon.
std::pair<SignalSequence, SignalSequence> latent_signals(const StateSpaceModel& model,
                                                         const Eigen::MatrixXd& F,
                                                         const Eigen::MatrixXd& L,
                                                         const Trajectory& traj,
                                                         const Eigen::VectorXd& xhat0);

}  // namespace fsfd
