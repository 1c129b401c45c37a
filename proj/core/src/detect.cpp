#include "fsfd/detect.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fsfd/errors.hpp"
#include "fsfd/linalg.hpp"
#include "fsfd/repr.hpp"
#include "fsfd/subspace.hpp"

namespace fsfd {

namespace {

// Regularized lower incomplete gamma P(a, x), series branch (x < a + 1).
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double term = sum;
  for (int it = 0; it < 1000; ++it) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) {
      return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
  }
  throw ConvergenceError("incomplete gamma series did not converge for a=" + std::to_string(a) +
                         ", x=" + std::to_string(x));
}

// Regularized upper incomplete gamma Q(a, x), continued fraction (x >= a + 1).
double gamma_q_cf(double a, double x) {
  const double tiny = std::numeric_limits<double>::min() / 1e-30;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 1000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) {
      return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
  }
  throw ConvergenceError("incomplete gamma continued fraction did not converge for a=" +
                         std::to_string(a) + ", x=" + std::to_string(x));
}

// Upper tail Q(a, x) = 1 - P(a, x), picking the branch that converges fast.
double gamma_q(double a, double x) {
  if (x <= 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_cf(a, x);
}

void check_window(const Detector& det, const Eigen::VectorXd& window) {
  if (det.U2.rows() == 0 || det.U2.cols() == 0) {
    throw ShapeError("detector has an empty residual basis");
  }
  if (window.size() != det.U2.cols()) {
    throw ShapeError("window length " + std::to_string(window.size()) +
                     " does not match the detector's stacked dimension " +
                     std::to_string(det.U2.cols()));
  }
}

Eigen::MatrixXd impulse_toeplitz(const StateSpaceModel& model, int s) {
  BlockToeplitzSpec spec;
  const Eigen::Index m = model.m();
  const Eigen::Index p = model.p();
  spec.block_fn = [&model, m, p](long k) {
    if (k < 0) return Eigen::MatrixXd(Eigen::MatrixXd::Zero(m, p));
    return model.markov_parameter(k);
  };
  spec.rows_blocks = s;
  spec.cols_blocks = s;
  spec.offset_base = 0;
  spec.block_rows = m;
  spec.block_cols = p;
  return realize_toeplitz(spec);
}

}  // namespace

double chi2_quantile(double alpha, int dof) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ParameterError("tail probability must lie strictly inside (0, 1), got " +
                         std::to_string(alpha));
  }
  if (dof < 1) {
    throw ParameterError("degrees of freedom must be at least 1, got " + std::to_string(dof));
  }
  const double a = 0.5 * dof;
  // Q(a, q/2) is strictly decreasing in q; bracket the root and bisect.
  double lo = 0.0;
  double hi = std::max(2.0 * dof, 20.0);
  int guard = 0;
  while (gamma_q(a, 0.5 * hi) > alpha) {
    hi *= 2.0;
    if (++guard > 200) {
      throw ConvergenceError("failed to bracket the chi-squared quantile");
    }
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (gamma_q(a, 0.5 * mid) > alpha) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

SvddModel svdd_fit(const Eigen::MatrixXd& points, double c_box) {
  const Eigen::Index count = points.cols();
  if (count < 1) throw SizeError("need at least one point to fit an enclosing ball");
  if (points.rows() < 1) throw ShapeError("points must have at least one coordinate");
  if (!(c_box >= 1.0 / static_cast<double>(count))) {
    throw ParameterError("box parameter " + std::to_string(c_box) +
                         " is infeasible: must be at least 1/" + std::to_string(count));
  }

  SvddModel model;
  if (count == 1) {
    model.center = points.col(0);
    model.radius_sq = 0.0;
    model.alphas = Eigen::VectorXd::Ones(1);
    model.xi = Eigen::VectorXd::Zero(1);
    return model;
  }

  const Eigen::MatrixXd gram = points.transpose() * points;
  const Eigen::VectorXd diag = gram.diagonal();
  const double scale = std::max(1.0, diag.maxCoeff());
  const double tol = 1e-6 * scale;
  // Alphas sum to one, so anything below this slack is effectively at a bound.
  const double bound_tol = 1e-9;

  Eigen::VectorXd alpha = Eigen::VectorXd::Constant(count, 1.0 / static_cast<double>(count));
  Eigen::VectorXd ka = gram * alpha;

  const long max_sweeps = 100000;
  bool converged = false;
  for (long sweep = 0; sweep < max_sweeps; ++sweep) {
    if (sweep > 0 && sweep % 1000 == 0) {
      // Wash out accumulated update roundoff.
      alpha /= alpha.sum();
      ka = gram * alpha;
    }
    // Most violating pair: the gradient of the dual is g_i = K_ii - 2(K alpha)_i,
    // and moving mass from j to i raises the objective while g_i > g_j.
    Eigen::Index up = -1;
    Eigen::Index down = -1;
    double g_up = -std::numeric_limits<double>::infinity();
    double g_down = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < count; ++i) {
      const double g = diag(i) - 2.0 * ka(i);
      if (alpha(i) < c_box - bound_tol && g > g_up) {
        g_up = g;
        up = i;
      }
      if (alpha(i) > bound_tol && g < g_down) {
        g_down = g;
        down = i;
      }
    }
    if (up < 0 || down < 0 || g_up - g_down <= tol) {
      converged = true;
      break;
    }
    const double room = std::min(c_box - alpha(up), alpha(down));
    const double curvature =
        2.0 * (diag(up) - 2.0 * gram(up, down) + diag(down));  // 2 ||x_up - x_down||^2
    double step = room;
    if (curvature > 0.0) step = std::min(room, (g_up - g_down) / curvature);
    alpha(up) += step;
    alpha(down) -= step;
    ka += step * (gram.col(up) - gram.col(down));
  }
  if (!converged) {
    throw ConvergenceError("enclosing-ball dual ascent did not meet its optimality tolerance");
  }

  alpha /= alpha.sum();
  model.alphas = alpha;
  model.center = points * alpha;

  Eigen::VectorXd dist_sq(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    dist_sq(i) = (points.col(i) - model.center).squaredNorm();
  }
  double radius_sq = 0.0;
  double free_sum = 0.0;
  Eigen::Index free_count = 0;
  double upper_min = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < count; ++i) {
    if (alpha(i) > bound_tol && alpha(i) < c_box - bound_tol) {
      free_sum += dist_sq(i);
      ++free_count;
    } else if (alpha(i) >= c_box - bound_tol) {
      upper_min = std::min(upper_min, dist_sq(i));
    }
  }
  if (free_count > 0) {
    radius_sq = free_sum / static_cast<double>(free_count);
  } else if (std::isfinite(upper_min)) {
    radius_sq = upper_min;
  }
  model.radius_sq = std::max(0.0, radius_sq);
  model.xi = (dist_sq.array() - model.radius_sq).cwiseMax(0.0).matrix();
  return model;
}

std::pair<Eigen::VectorXd, double> svdd_threshold(const Eigen::MatrixXd& cov_inv_factor,
                                                  const Eigen::MatrixXd& residual_cols,
                                                  double c_box) {
  if (cov_inv_factor.rows() != cov_inv_factor.cols()) {
    throw ShapeError("whitening factor must be square");
  }
  if (cov_inv_factor.rows() != residual_cols.rows()) {
    throw ShapeError("whitening factor and residuals disagree on the residual dimension");
  }
  if (residual_cols.cols() < 1) throw SizeError("need at least one residual");

  const SvddModel ball = svdd_fit(cov_inv_factor * residual_cols, c_box);
  Eigen::LLT<Eigen::MatrixXd> llt(cov_inv_factor);
  if (llt.info() != Eigen::Success) {
    throw ConditioningError("whitening factor is not positive definite");
  }
  // The statistic compares W(r - delta), so the stored offset is the center
  // mapped back through the whitening.
  return {llt.solve(ball.center), ball.radius_sq};
}

Detector train_detector(const Trajectory& traj, int s, std::optional<Eigen::Index> gamma,
                        DetectorMode mode, double alpha_or_c, double ridge,
                        std::optional<Eigen::Index> fallback_order, double gap_factor) {
  for (const auto label : traj.labels) {
    if (label != 0) {
      throw DataError("training trajectory must be labeled fault-free throughout");
    }
  }
  if (!(ridge >= 0.0)) throw ParameterError("ridge must be nonnegative");

  const HankelDataMatrix raw = build_data_matrix(traj, s, /*normalize=*/false);
  const Eigen::Index rows = raw.T.rows();
  if (!raw.width_sufficient) {
    throw DataError("training run too short: " + std::to_string(raw.N) + " samples give " +
                    std::to_string(raw.T.cols()) + " windows but the stacked dimension is " +
                    std::to_string(rows));
  }
  const HankelDataMatrix scaled = build_data_matrix(traj, s, /*normalize=*/true);

  Eigen::Index split = 0;
  if (gamma) {
    split = *gamma;
  } else {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled.T);
    const auto& sv = svd.singularValues();
    const std::vector<double> sigma(sv.data(), sv.data() + sv.size());
    const auto found = select_gamma(sigma, s, raw.p, raw.m, gap_factor);
    if (found) {
      split = *found;
    } else if (fallback_order) {
      split = static_cast<Eigen::Index>(s) * raw.p + *fallback_order;
    } else {
      throw DegenerateError(
          "singular spectrum shows no usable gap and no order fallback was given");
    }
  }

  const SubspaceDecomposition dec = svd_split(scaled, split);
  Detector det;
  det.U2 = dec.U2.transpose();
  det.s = s;
  det.gamma = split;
  det.p = raw.p;
  det.m = raw.m;
  det.mode = mode;
  det.alpha_or_c = alpha_or_c;
  det.ridge = ridge;

  const Eigen::Index theta = det.U2.rows();
  const Eigen::MatrixXd residuals = det.U2 * raw.T;
  const Eigen::VectorXd mean = residuals.rowwise().mean();
  const Eigen::MatrixXd centered = residuals.colwise() - mean;
  Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(raw.N - s);
  const double level = cov.trace() / static_cast<double>(theta);
  cov += ridge * level * Eigen::MatrixXd::Identity(theta, theta);
  det.cov_inv_factor = symmetric_inverse_sqrt(cov);

  if (mode == DetectorMode::chi2) {
    det.delta_hat = mean;
    det.threshold = chi2_quantile(alpha_or_c, static_cast<int>(theta));
  } else {
    auto fitted = svdd_threshold(det.cov_inv_factor, residuals, alpha_or_c);
    det.delta_hat = std::move(fitted.first);
    det.threshold = fitted.second;
  }
  return det;
}

Eigen::VectorXd residual_r_u2(const Detector& det, const Eigen::VectorXd& window) {
  check_window(det, window);
  return det.U2 * window;
}

EvaluationResult evaluate_window(const Detector& det, const Eigen::VectorXd& window,
                                 long anchor) {
  const Eigen::VectorXd r = residual_r_u2(det, window);
  const Eigen::VectorXd z = det.cov_inv_factor * (r - det.delta_hat);
  EvaluationResult out;
  out.k = anchor;
  out.J = z.squaredNorm();
  out.alarm = out.J > det.threshold;
  return out;
}

EvaluationResult chi2_statistic(const Detector& det, const Eigen::VectorXd& window,
                                long anchor) {
  if (det.mode != DetectorMode::chi2) {
    throw ModeError("detector was trained in enclosing-ball mode; its threshold is not a "
                    "chi-squared quantile");
  }
  return evaluate_window(det, window, anchor);
}

DetectionReport run_detection(const Detector& det, const Trajectory& traj) {
  const Eigen::Index stacked = static_cast<Eigen::Index>(det.s) * (traj.u.dim() + traj.y.dim());
  if (det.U2.cols() != stacked) {
    throw ShapeError("detector stacked dimension " + std::to_string(det.U2.cols()) +
                     " does not match the trajectory's " + std::to_string(stacked));
  }
  const Eigen::Index n_samples = traj.length();
  if (n_samples < det.s) {
    throw SizeError("trajectory shorter than one window");
  }
  if (!traj.labels.empty() && static_cast<Eigen::Index>(traj.labels.size()) != n_samples) {
    throw DataError("label vector length does not match the trajectory");
  }

  DetectionReport report;
  const long k0 = traj.start_index();
  const Eigen::Index window_count = n_samples - det.s + 1;
  report.windows.reserve(static_cast<std::size_t>(window_count));
  Eigen::Index false_alarms = 0;
  Eigen::Index misses = 0;
  for (Eigen::Index j = 0; j < window_count; ++j) {
    const long anchor = k0 + static_cast<long>(j);
    const StackedWindow uw = stack_window(traj.u, det.s, anchor);
    const StackedWindow yw = stack_window(traj.y, det.s, anchor);
    Eigen::VectorXd w(stacked);
    w << uw.value, yw.value;
    const EvaluationResult ev = evaluate_window(det, w, anchor);

    bool faulty = false;
    if (!traj.labels.empty()) {
      for (int t = 0; t < det.s; ++t) {
        if (traj.labels[static_cast<std::size_t>(j + t)] != 0) {
          faulty = true;
          break;
        }
      }
    }
    if (faulty) {
      ++report.faulty_windows;
      if (!report.first_faulty) report.first_faulty = anchor;
      if (!ev.alarm) ++misses;
    } else {
      ++report.fault_free_windows;
      if (ev.alarm) ++false_alarms;
    }
    if (ev.alarm && !report.first_alarm) report.first_alarm = anchor;
    report.windows.push_back(ev);
  }
  report.far = report.fault_free_windows > 0
                   ? static_cast<double>(false_alarms) / static_cast<double>(report.fault_free_windows)
                   : 0.0;
  report.mdr = report.faulty_windows > 0
                   ? static_cast<double>(misses) / static_cast<double>(report.faulty_windows)
                   : 0.0;
  return report;
}

Eigen::VectorXd ParityBaseline::residual(const Eigen::VectorXd& u_window,
                                         const Eigen::VectorXd& y_window) const {
  if (u_window.size() != toeplitz.cols() || y_window.size() != toeplitz.rows()) {
    throw ShapeError("window lengths do not match the parity depth");
  }
  return parity * (y_window - toeplitz * u_window);
}

ParityBaseline baseline_parity(const StateSpaceModel& model, int s,
                               std::optional<Eigen::MatrixXd> parity_rows) {
  // The kernel construction carries the depth preconditions and the
  // annihilation certificate; its orthonormal row block is the default basis.
  const KernelRep kernel = kernel_rep(model, s);
  ParityBaseline base;
  base.s = s;
  base.toeplitz = impulse_toeplitz(model, s);
  if (parity_rows) {
    const Eigen::MatrixXd& rows = *parity_rows;
    if (rows.cols() != static_cast<Eigen::Index>(s) * model.m()) {
      throw ShapeError("parity rows must have s*m columns");
    }
    if (rows.rows() < 1) throw SizeError("parity basis is empty");
    const Eigen::MatrixXd obs = observability_matrix(model, s);
    const double row_scale = std::max(1.0, spectral_norm(rows));
    if (spectral_norm(rows * obs) > 1e-8 * row_scale * std::max(1.0, spectral_norm(obs))) {
      throw BasisError("supplied rows do not annihilate the observability stack");
    }
    if (numerical_rank(rows) != rows.rows()) {
      throw BasisError("supplied parity rows are linearly dependent");
    }
    base.parity = rows;
  } else {
    base.parity = kernel.K2;
  }
  return base;
}

Eigen::VectorXd LsOutputBaseline::regressor(const Trajectory& traj, long anchor) const {
  const long k0 = traj.start_index();
  if (anchor - rho < k0 || anchor + s > k0 + traj.length()) {
    throw RangeError("anchor " + std::to_string(anchor) +
                     " leaves no room for the past or future window");
  }
  const StackedWindow u_past = stack_window(traj.u, rho, anchor - rho);
  const StackedWindow y_past = stack_window(traj.y, rho, anchor - rho);
  const StackedWindow u_now = stack_window(traj.u, s, anchor);
  Eigen::VectorXd z(u_past.value.size() + y_past.value.size() + u_now.value.size());
  z << u_past.value, y_past.value, u_now.value;
  return z;
}

Eigen::VectorXd LsOutputBaseline::residual(const Trajectory& traj, long anchor) const {
  const StackedWindow y_now = stack_window(traj.y, s, anchor);
  return y_now.value - Phi * regressor(traj, anchor);
}

LsOutputBaseline baseline_ls_output(const Trajectory& train, int s, int rho) {
  if (s < 1) throw ParameterError("window depth must be at least 1");
  if (rho < 1) throw ParameterError("past horizon must be at least 1");
  LsOutputBaseline base;
  base.s = s;
  base.rho = rho;
  base.p = train.u.dim();
  base.m = train.y.dim();

  const long k0 = train.start_index();
  const Eigen::Index n_samples = train.length();
  const Eigen::Index anchors = n_samples - s - rho + 1;
  if (anchors < 1) {
    throw SizeError("trajectory too short for past horizon " + std::to_string(rho) +
                    " plus window depth " + std::to_string(s));
  }
  const Eigen::Index z_rows = static_cast<Eigen::Index>(rho) * (base.p + base.m) +
                              static_cast<Eigen::Index>(s) * base.p;
  if (anchors < z_rows) {
    throw DataError("too few training anchors: " + std::to_string(anchors) + " available, " +
                    std::to_string(z_rows) + " regressor rows");
  }

  Eigen::MatrixXd z(z_rows, anchors);
  Eigen::MatrixXd targets(static_cast<Eigen::Index>(s) * base.m, anchors);
  for (Eigen::Index j = 0; j < anchors; ++j) {
    const long anchor = k0 + rho + static_cast<long>(j);
    z.col(j) = base.regressor(train, anchor);
    targets.col(j) = stack_window(train.y, s, anchor).value;
  }
  // Pivoted QR returns a least-squares minimizer even when the regressor is
  // rank deficient, which noise-free runs always are.
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z.transpose());
  base.Phi = qr.solve(targets.transpose()).transpose();
  return base;
}

}  // namespace fsfd
