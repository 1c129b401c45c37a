#pragma once

#include <Eigen/Core>
#include <optional>
#include <utility>
#include <vector>

#include "fsfd/ltisim.hpp"
#include "fsfd/signals.hpp"

namespace fsfd {

enum class DetectorMode { chi2, svdd };

// Projection-based detector: residual basis from the data-matrix split, an
// offset estimate, a symmetric whitening factor (its square is the inverse of
// the regularized residual covariance), and a decision threshold for the
// squared Mahalanobis statistic.
struct Detector {
  Eigen::MatrixXd U2;              // theta' by s(p+m), orthonormal rows
  Eigen::VectorXd delta_hat;       // theta'
  Eigen::MatrixXd cov_inv_factor;  // theta' by theta', symmetric PD
  double threshold = 0.0;
  DetectorMode mode = DetectorMode::chi2;
  int s = 0;
  Eigen::Index gamma = 0;
  Eigen::Index p = 0;
  Eigen::Index m = 0;
  double alpha_or_c = 0.0;
  double ridge = 0.0;

  Eigen::Index residual_dim() const { return U2.rows(); }
};

struct EvaluationResult {
  long k = 0;  // window anchor
  double J = 0.0;
  bool alarm = false;
};

// Minimum enclosing ball fit in whitened coordinates.
struct SvddModel {
  Eigen::VectorXd center;
  double radius_sq = 0.0;
  Eigen::VectorXd alphas;  // duals: sum to 1, boxed in [0, C]
  Eigen::VectorXd xi;      // slack of each point at the solution
};

struct DetectionReport {
  double far = 0.0;  // alarms among fault-free windows
  double mdr = 0.0;  // misses among faulty windows
  std::vector<EvaluationResult> windows;
  Eigen::Index fault_free_windows = 0;
  Eigen::Index faulty_windows = 0;
  std::optional<long> first_alarm;   // anchor of the first alarming window
  std::optional<long> first_faulty;  // anchor of the first faulty-labeled window
};

// Model-based parity residual generator r(k) = P (y_s - T u_s).
struct ParityBaseline {
  Eigen::MatrixXd parity;    // rows spanning the left null space of O_s
  Eigen::MatrixXd toeplitz;  // impulse-response block Toeplitz
  int s = 0;

  Eigen::VectorXd residual(const Eigen::VectorXd& u_window,
                           const Eigen::VectorXd& y_window) const;
};

// Data-driven least-squares output estimator: predicts the next s output
// samples from rho past input/output samples and the current s inputs.
struct LsOutputBaseline {
  Eigen::MatrixXd Phi;  // sm by rho(p+m) + sp
  int s = 0;
  int rho = 0;
  Eigen::Index p = 0;
  Eigen::Index m = 0;

  // [u_rho(k-rho); y_rho(k-rho); u_s(k)] for anchor k.
  Eigen::VectorXd regressor(const Trajectory& traj, long anchor) const;
  // y_s(k) minus its prediction.
  Eigen::VectorXd residual(const Trajectory& traj, long anchor) const;
};

// Algorithm: stack the training windows, split the span at gamma (given, or
// found by spectral-gap scan with an optional order fallback), form residuals
// against the minor subspace, estimate their offset and covariance, then set
// the decision threshold for the chosen mode (chi-squared quantile at level
// `alpha_or_c`, or the SVDD squared radius with box parameter `alpha_or_c`).
Detector train_detector(const Trajectory& traj, int s, std::optional<Eigen::Index> gamma,
                        DetectorMode mode, double alpha_or_c, double ridge = 1e-8,
                        std::optional<Eigen::Index> fallback_order = std::nullopt,
                        double gap_factor = 10.0);

// r = U2 w for a stacked window w = [u_s; y_s].
Eigen::VectorXd residual_r_u2(const Detector& det, const Eigen::VectorXd& window);

// Squared Mahalanobis statistic of a window under either mode; alarm when it
// exceeds the stored threshold.
EvaluationResult evaluate_window(const Detector& det, const Eigen::VectorXd& window,
                                 long anchor = 0);

// Same as evaluate_window but insists the detector is in chi2 mode.
EvaluationResult chi2_statistic(const Detector& det, const Eigen::VectorXd& window,
                                long anchor = 0);

// Upper-tail quantile: P(chi2_dof > q) = alpha, accurate to 1e-8.
double chi2_quantile(double alpha, int dof);

// Solve the minimum-enclosing-ball dual (linear kernel) over the columns of
// `points` with box parameter C by pairwise coordinate ascent.
SvddModel svdd_fit(const Eigen::MatrixXd& points, double c_box);

// Whiten the residual columns, fit the ball, and return the unwhitened
// center together with the squared-radius threshold.
std::pair<Eigen::VectorXd, double> svdd_threshold(const Eigen::MatrixXd& cov_inv_factor,
                                                  const Eigen::MatrixXd& residual_cols,
                                                  double c_box);

// Slide the detector over a trajectory with stride 1. A window counts as
// faulty when any sample it covers is labeled post-onset.
DetectionReport run_detection(const Detector& det, const Trajectory& traj);

// Parity rows default to an orthonormal left-null basis of O_s; user-supplied
// rows are validated against the same annihilation property.
ParityBaseline baseline_parity(const StateSpaceModel& model, int s,
                               std::optional<Eigen::MatrixXd> parity_rows = std::nullopt);

// Fit Phi by least squares on all admissible training anchors.
LsOutputBaseline baseline_ls_output(const Trajectory& train, int s, int rho);

}  // namespace fsfd
