#include "fsfd_cli/commands.hpp"

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fsfd/detect.hpp"
#include "fsfd/errors.hpp"
#include "fsfd/linalg.hpp"
#include "fsfd/ltisim.hpp"
#include "fsfd/repr.hpp"
#include "fsfd/rng.hpp"
#include "fsfd/signals.hpp"
#include "fsfd/subspace.hpp"
#include "fsfd_cli/io.hpp"

namespace fsfd::cli {

int thread_budget() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  long budget = std::min<long>(static_cast<long>(hw), 4);
  if (const char* env = std::getenv("FSFD_THREADS")) {
    char* end = nullptr;
    const long parsed = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && parsed >= 1)
      budget = std::min<long>(parsed, static_cast<long>(hw));
  }
  return static_cast<int>(std::max<long>(1, budget));
}

namespace {

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string strf(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return std::string(buf);
}

void say(const CommandOptions& opts, const std::string& line) {
  if (!opts.quiet) std::cout << line << "\n";
}

// Run fn(0..count-1) on up to thread_budget() workers. Each index writes into
// its own preallocated slot on the caller's side, so the schedule can never
// change the result; the first exception wins and is rethrown after the join.
template <typename Fn>
void parallel_for(int count, Fn&& fn) {
  const int workers = std::min(thread_budget(), count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::mutex gate;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < count; i += workers) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(gate);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Open-loop experiment for the configured plant: Gaussian input scaled by
// input_scale, the configured noise and (scaled) fault, and a drawn initial
// state unless the config pins one. Separate derived streams keep the input,
// the initial state, and the noise independent of each other.
Trajectory simulate_run(const ExperimentConfig& cfg, const StateSpaceModel& model,
                        std::uint64_t seed, double amplitude_scale) {
  Rng input_rng(derive_seed(seed, 11));
  Eigen::MatrixXd u(model.p(), cfg.horizon);
  for (Eigen::Index k = 0; k < cfg.horizon; ++k)
    for (Eigen::Index i = 0; i < model.p(); ++i) u(i, k) = cfg.input_scale * input_rng.normal();
  Eigen::VectorXd x0;
  if (cfg.x0)
    x0 = *cfg.x0;
  else
    x0 = Rng(derive_seed(seed, 12)).normal_vector(model.n());
  return simulate(model, cfg.noise(), cfg.fault_profile(amplitude_scale), SignalSequence(u, 0),
                  x0, derive_seed(seed, 13));
}

// Random minimal plant with the requested dimensions; entries are standard
// normal with the spectral radius rescaled, retrying the measure-zero draws
// that fail the minimality check.
StateSpaceModel random_minimal_model(std::uint64_t seed, Eigen::Index n, Eigen::Index p,
                                     Eigen::Index m, double radius = 0.85) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, 0xd0de1ULL + attempt));
    Eigen::MatrixXd A(n, n), B(n, p), C(m, n), D(m, p);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) A(i, j) = rng.normal();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < p; ++j) B(i, j) = rng.normal();
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < n; ++j) C(i, j) = rng.normal();
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < p; ++j) D(i, j) = rng.normal();
    const double rho = spectral_radius(A);
    if (rho > 1e-12) A *= radius / rho;
    try {
      return StateSpaceModel(A, B, C, D);
    } catch (const ModelError&) {
      continue;
    }
  }
}

SignalSequence random_excitation(std::uint64_t seed, Eigen::Index p, Eigen::Index length,
                                 long start_index, double scale) {
  Rng rng(seed);
  Eigen::MatrixXd u(p, length);
  for (Eigen::Index j = 0; j < length; ++j)
    for (Eigen::Index i = 0; i < p; ++i) u(i, j) = scale * rng.normal();
  return SignalSequence(u, start_index);
}

// Observer-based closed loop u = F xhat + v_exc, recording both latents next
// to the input/output run. The observer starts at the true state so the
// residual Hankel carries noise only, which keeps the perturbation bound
// informative.
struct ClosedLoopRun {
  Trajectory traj;
  SignalSequence v;
  SignalSequence r;
};

ClosedLoopRun closed_loop_run(const StateSpaceModel& model, const NoiseModel& noise,
                              const Eigen::MatrixXd& F, const Eigen::MatrixXd& L,
                              const SignalSequence& v_exc, const Eigen::VectorXd& x0,
                              std::uint64_t seed) {
  const Eigen::Index n = model.n(), p = model.p(), m = model.m();
  const Eigen::Index len = v_exc.length();
  Eigen::MatrixXd u(p, len), y(m, len), r(m, len);
  const Eigen::MatrixXd chol = symmetric_sqrt(noise.joint());
  Rng rng(seed);
  Eigen::VectorXd x = x0, xhat = x0;
  for (Eigen::Index k = 0; k < len; ++k) {
    u.col(k) = F * xhat + v_exc.at(v_exc.start_index() + 1 + k);
    const Eigen::VectorXd joint = chol * rng.normal_vector(n + m);
    y.col(k) = model.C() * x + model.D() * u.col(k) + joint.tail(m);
    r.col(k) = y.col(k) - model.C() * xhat - model.D() * u.col(k);
    x = model.A() * x + model.B() * u.col(k) + joint.head(n);
    xhat = model.A() * xhat + model.B() * u.col(k) + L * r.col(k);
  }
  const long anchor = v_exc.start_index();
  return ClosedLoopRun{Trajectory{SignalSequence(u, anchor), SignalSequence(y, anchor),
                                  std::nullopt,
                                  std::vector<std::uint8_t>(static_cast<std::size_t>(len), 0)},
                       SignalSequence(v_exc.samples(), anchor), SignalSequence(r, anchor)};
}

// ---------------------------------------------------------------------------
// verify

struct CheckRow {
  std::string model_label;
  std::string check;
  std::string status;  // PASS | FAIL | N/A
  double residual = std::numeric_limits<double>::quiet_NaN();
  std::string note;
};

constexpr double kIdentityTol = 1e-8;

// All identity, rank, and bound checks on one plant at window depth s.
void verify_model(const StateSpaceModel& model, const std::string& label, int s,
                  std::uint64_t seed, std::vector<CheckRow>& rows) {
  const Eigen::Index n = model.n(), p = model.p(), m = model.m();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto add = [&](const std::string& check, const std::string& status, double residual,
                 const std::string& note) {
    rows.push_back(CheckRow{label, check, status, residual, note});
  };
  auto judge = [&](const std::string& check, double residual, const std::string& note = "") {
    add(check, residual < kIdentityTol ? "PASS" : "FAIL", residual, note);
  };

  Eigen::MatrixXd fd, ld;
  try {
    fd = deadbeat_gain(model, derive_seed(seed, 1));
    ld = observer_gain_deadbeat(model, derive_seed(seed, 2));
  } catch (const Error& e) {
    add("gain-synthesis", "FAIL", nan, e.what());
    return;  // every check below depends on the synthesized gains
  }

  // Stacked image of the window behavior has rank sp + rank(O_s); once the
  // window clears the observability index that is the full sp + n.
  try {
    const auto img = image_rep(model, fd, s);
    const Eigen::Index measured = numerical_rank(img.stacked());
    const Eigen::Index beta = numerical_rank(observability_matrix(model, s));
    const Eigen::Index expected = static_cast<Eigen::Index>(s) * p + beta;
    add("image-rank-law", measured == expected ? "PASS" : "FAIL",
        std::abs(static_cast<double>(measured - expected)),
        strf("rank %ld, expected %ld", static_cast<long>(measured), static_cast<long>(expected)));
  } catch (const Error& e) {
    add("image-rank-law", "FAIL", nan, e.what());
  }

  // Changing the feedback gain only re-parameterizes the latent: the image
  // under one gain equals the image under another times a unit-diagonal V.
  try {
    Rng grng(derive_seed(seed, 3));
    Eigen::MatrixXd f2(p, n);
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = 0; j < n; ++j) f2(i, j) = 0.3 * grng.normal();
    const auto rep_d = image_rep(model, fd, s);
    const auto rep_2 = image_rep(model, f2, s);
    const Eigen::MatrixXd v = param_V(model, fd, f2, s);
    const double resid =
        (rep_2.stacked() * v - rep_d.stacked()).norm() / residual_scale(rep_d.stacked());
    judge("gain-change-identity", resid);
  } catch (const Error& e) {
    add("gain-change-identity", "FAIL", nan, e.what());
  }

  // The joint latent stack factors into the plant image next to the
  // controller image, and keeps full row rank s(p+m).
  try {
    const auto psi = psi_stack(model, fd, ld, s);
    const auto img = image_rep(model, fd, s);
    const auto ctrl = controller_image_rep(model, fd, ld, s);
    Eigen::MatrixXd joint(psi.Psi_s.rows(), psi.Psi_s.cols());
    joint.leftCols(img.stacked().cols()) = img.stacked();
    joint.rightCols(ctrl.stacked().cols()) = ctrl.stacked();
    const double resid = (psi.Psi_s - joint).norm() / residual_scale(joint);
    const Eigen::Index rank = numerical_rank(psi.Psi_s);
    const bool full = rank == static_cast<Eigen::Index>(s) * (p + m);
    add("controller-factorization", resid < kIdentityTol && full ? "PASS" : "FAIL", resid,
        strf("rank %ld of %ld", static_cast<long>(rank), static_cast<long>(s) * (p + m)));
  } catch (const Error& e) {
    add("controller-factorization", "FAIL", nan, e.what());
  }

  // Kernel checks require the window to see past the observability index.
  const int mu = observability_index(model);
  if (s <= mu) {
    const std::string why = strf("window depth %d at or below the observability index %d", s, mu);
    add("kernel-annihilation", "N/A", nan, why);
    add("kernel-image-orthogonality", "N/A", nan, why);
  } else {
    try {
      const auto ker = kernel_rep(model, s);
      const Eigen::MatrixXd obs = observability_matrix(model, s);
      judge("kernel-annihilation",
            spectral_norm(ker.K2 * obs) / std::max(1.0, spectral_norm(obs)));
      const Eigen::MatrixXd img = image_rep(model, fd, s).stacked();
      judge("kernel-image-orthogonality",
            spectral_norm(ker.K_Gs * img) / std::max(1.0, spectral_norm(img)));
    } catch (const Error& e) {
      add("kernel-annihilation", "FAIL", nan, e.what());
      add("kernel-image-orthogonality", "FAIL", nan, e.what());
    }
  }

  // Recorded windows equal the joint stack applied to the latent windows,
  // regardless of where the observer started, once the window anchor clears
  // the first n samples.
  try {
    const Eigen::Index len = 120 + n;
    const auto u = random_excitation(derive_seed(seed, 4), p, len, 0, 1.0);
    const NoiseModel noise(1e-6 * Eigen::MatrixXd::Identity(n, n), Eigen::MatrixXd::Zero(n, m),
                           1e-6 * Eigen::MatrixXd::Identity(m, m));
    Rng rng(derive_seed(seed, 5));
    const Eigen::VectorXd x0 = rng.normal_vector(n);
    const auto traj = simulate(model, noise, std::nullopt, u, x0, derive_seed(seed, 6));
    const auto [v, r] = latent_signals(model, fd, ld, traj, Eigen::VectorXd::Zero(n));
    const auto psi = psi_stack(model, fd, ld, s);
    double worst = 0.0;
    for (long anchor = n; anchor + s <= len; anchor += 7) {
      Eigen::VectorXd w(s * (p + m));
      w.head(s * p) = stack_window(traj.u, s, anchor).value;
      w.tail(s * m) = stack_window(traj.y, s, anchor).value;
      Eigen::VectorXd latent((s + n) * (p + m));
      latent.head((s + n) * p) = stack_window(v, s + static_cast<int>(n), anchor - n).value;
      latent.tail((s + n) * m) = stack_window(r, s + static_cast<int>(n), anchor - n).value;
      worst = std::max(worst, (w - psi.Psi_s * latent).norm() / residual_scale(w));
    }
    judge("window-reconstruction", worst);
  } catch (const Error& e) {
    add("window-reconstruction", "FAIL", nan, e.what());
  }

  // Noise-free, persistently exciting data spans exactly the model image.
  try {
    const Eigen::Index len = 2 * (static_cast<Eigen::Index>(s) * (p + m) + s);
    const auto u = random_excitation(derive_seed(seed, 7), p, len, 0, 1.0);
    Rng rng(derive_seed(seed, 8));
    const Eigen::VectorXd x0 = rng.normal_vector(n);
    const auto traj = simulate(model, std::nullopt, std::nullopt, u, x0, derive_seed(seed, 9));
    const auto data = build_data_matrix(traj, s, true);
    const auto flc = fundamental_lemma_check(data, model, fd);
    double resid = flc.gap;
    for (const double member : flc.member_residuals) resid = std::max(resid, member);
    add("data-span-equality", flc.dimensions_match && resid < kIdentityTol ? "PASS" : "FAIL",
        resid,
        strf("data rank %ld, image rank %ld", static_cast<long>(flc.data_rank),
             static_cast<long>(flc.image_rank)));
  } catch (const Error& e) {
    add("data-span-equality", "FAIL", nan, e.what());
  }

  // Spectral split of a lightly noisy closed-loop Gram matrix: the projector
  // gap must stay below the ratio bound whenever that bound is informative.
  // Needs sm >= n, otherwise no residual direction exists to split off.
  if (static_cast<Eigen::Index>(s) * m < n) {
    add("split-perturbation-bound", "N/A", nan,
        strf("window depth %d leaves no residual direction (sm < n)", s));
  } else try {
    const Eigen::Index len = 600;
    const auto v_exc = random_excitation(derive_seed(seed, 10), p, len, -static_cast<long>(n), 1.0);
    const NoiseModel noise(1e-8 * Eigen::MatrixXd::Identity(n, n), Eigen::MatrixXd::Zero(n, m),
                           1e-8 * Eigen::MatrixXd::Identity(m, m));
    Rng rng(derive_seed(seed, 11));
    const Eigen::VectorXd x0 = rng.normal_vector(n);
    const auto run = closed_loop_run(model, noise, fd, ld, v_exc, x0, derive_seed(seed, 12));
    const auto hv = build_hankel(run.v, s + static_cast<int>(n));
    const auto hr = build_hankel(run.r, s + static_cast<int>(n));
    const auto res = davis_kahan_oracle_bound(model, fd, ld, hv, hr);
    if (res.bound >= 1.0) {
      add("split-perturbation-bound", "PASS", res.gap_measured,
          strf("bound %.3e vacuous", res.bound));
    } else {
      add("split-perturbation-bound", res.gap_measured <= res.bound + 1e-10 ? "PASS" : "FAIL",
          res.gap_measured, strf("bound %.3e", res.bound));
    }
  } catch (const DegenerateError& e) {
    add("split-perturbation-bound", "N/A", nan, e.what());
  } catch (const Error& e) {
    add("split-perturbation-bound", "FAIL", nan, e.what());
  }

  // Measured split dimensions agree with the rank profile they must follow.
  try {
    const auto prof = rank_profile(model, s);
    bool ok = prof.gamma == static_cast<Eigen::Index>(s) * p + prof.beta &&
              prof.theta == static_cast<Eigen::Index>(s) * m - prof.beta &&
              prof.dim_residual == prof.theta &&
              prof.residual_subspace_nonempty == (prof.theta > 0);
    if (s >= mu) ok = ok && prof.beta == n;
    add("rank-profile", ok ? "PASS" : "FAIL", 0.0,
        strf("beta %ld, gamma %ld, theta %ld", static_cast<long>(prof.beta),
             static_cast<long>(prof.gamma), static_cast<long>(prof.theta)));
  } catch (const Error& e) {
    add("rank-profile", "FAIL", nan, e.what());
  }
}

const char* const kIdentityChecks[] = {
    "gain-change-identity", "controller-factorization", "kernel-annihilation",
    "kernel-image-orthogonality", "window-reconstruction", "data-span-equality"};

bool is_identity_check(const std::string& check) {
  for (const char* name : kIdentityChecks)
    if (check == name) return true;
  return false;
}

// ---------------------------------------------------------------------------
// bench

// Gaussian scorer shared by every method: mean and symmetric inverse-sqrt
// covariance of the training residuals, thresholded at the chi-squared
// quantile of the residual dimension.
struct FittedScorer {
  Eigen::VectorXd mean;
  Eigen::MatrixXd w;
  double threshold = 0.0;

  double score(const Eigen::VectorXd& residual) const {
    return (w * (residual - mean)).squaredNorm();
  }
};

FittedScorer fit_gaussian_scorer(const Eigen::MatrixXd& cols, double alpha, double ridge) {
  const Eigen::Index d = cols.rows();
  const Eigen::Index count = cols.cols();
  if (count < 2) throw DataError("too few training windows for a covariance estimate");
  FittedScorer scorer;
  scorer.mean = cols.rowwise().mean();
  const Eigen::MatrixXd centered = cols.colwise() - scorer.mean;
  Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(count - 1);
  cov += ridge * (cov.trace() / static_cast<double>(d)) *
         Eigen::MatrixXd::Identity(d, d);
  scorer.w = symmetric_inverse_sqrt(cov);
  scorer.threshold = chi2_quantile(alpha, static_cast<int>(d));
  return scorer;
}

struct MethodEval {
  double far = 0.0;
  std::optional<double> mdr;
  std::optional<double> delay;
};

// Slide a fitted scorer over a test run. `lead` shifts the first admissible
// anchor (the least-squares method needs its past horizon before the first
// window); a window is faulty when any covered sample is labeled.
template <typename ResidualFn>
MethodEval evaluate_scorer(const FittedScorer& scorer, ResidualFn&& residual_at,
                           const Trajectory& test, int s, long lead) {
  const Eigen::Index len = test.length();
  Eigen::Index fault_free = 0, faulty = 0, false_alarms = 0, misses = 0;
  std::optional<long> first_faulty;
  std::optional<double> delay;
  for (long k = lead; k + s <= len; ++k) {
    bool is_faulty = false;
    for (long j = k; j < k + s; ++j)
      if (test.labels[static_cast<std::size_t>(j)] != 0) is_faulty = true;
    const bool alarm = scorer.score(residual_at(k)) > scorer.threshold;
    if (is_faulty) {
      ++faulty;
      if (!first_faulty) first_faulty = k;
      if (!alarm) ++misses;
      if (alarm && !delay) delay = static_cast<double>(k - *first_faulty);
    } else {
      ++fault_free;
      if (alarm) ++false_alarms;
    }
  }
  MethodEval eval;
  eval.far = fault_free > 0 ? static_cast<double>(false_alarms) / static_cast<double>(fault_free)
                            : 0.0;
  if (faulty > 0) eval.mdr = static_cast<double>(misses) / static_cast<double>(faulty);
  eval.delay = delay;
  return eval;
}

std::string cell(const std::optional<double>& value) {
  return value ? format_double(*value) : std::string("NA");
}

// ---------------------------------------------------------------------------

}  // namespace

int cmd_simulate(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const std::uint64_t seed = opts.seed.value_or(cfg.seed);
  const auto model = cfg.model();
  const auto traj = simulate_run(cfg, model, seed, 1.0);

  const std::string text = signals_to_text(traj);
  atomic_write(join_path(opts.out_dir, "signals.csv"), text);
  const auto manifest =
      make_manifest("simulate", seed, cfg.echo, {{"signals.csv", fnv1a64_hex(text)}});
  write_manifest(join_path(opts.out_dir, "simulate_manifest.json"), manifest);

  say(opts, strf("simulate: %ld samples (%ld inputs, %ld outputs), seed %llu -> %s",
                 static_cast<long>(traj.length()), static_cast<long>(traj.u.dim()),
                 static_cast<long>(traj.y.dim()),
                 static_cast<unsigned long long>(seed),
                 join_path(opts.out_dir, "signals.csv").c_str()));
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& signals_path,
              const CommandOptions& opts) {
  const std::uint64_t seed = opts.seed.value_or(cfg.seed);
  const auto traj = load_signals(signals_path);
  if (traj.u.dim() != cfg.B.cols() || traj.y.dim() != cfg.C.rows()) {
    throw DataError(strf("signals file carries %ld input and %ld output channels, but the "
                         "config declares %ld and %ld",
                         static_cast<long>(traj.u.dim()), static_cast<long>(traj.y.dim()),
                         static_cast<long>(cfg.B.cols()), static_cast<long>(cfg.C.rows())));
  }

  long labeled = 0;
  for (const auto label : traj.labels)
    if (label != 0) ++labeled;
  if (labeled > 0) {
    throw DataError(strf("signals file contains %ld fault-labeled samples; train on a "
                         "fault-free run (simulate with the \"fault\" block removed)",
                         labeled));
  }

  const int s = cfg.window;
  std::optional<Eigen::Index> gamma;
  if (cfg.order) gamma = static_cast<Eigen::Index>(s) * traj.u.dim() + *cfg.order;
  const DetectorMode mode = cfg.mode == "svdd" ? DetectorMode::svdd : DetectorMode::chi2;
  const double level = mode == DetectorMode::chi2 ? cfg.alpha : cfg.c_box;

  Detector det;
  try {
    det = train_detector(traj, s, gamma, mode, level, cfg.ridge);
  } catch (const DataError& e) {
    throw DataError(std::string(e.what()) +
                    " (hint: lengthen the run until it holds at least s(p+m) windows)");
  } catch (const DegenerateError& e) {
    throw DegenerateError(std::string(e.what()) +
                          " (hint: set \"order\" explicitly, or raise the excitation so a "
                          "spectral gap appears)");
  } catch (const ConditioningError& e) {
    throw ConditioningError(std::string(e.what()) +
                            " (hint: increase \"ridge\", or train on a run with measurement "
                            "noise instead of identical windows)");
  }

  const std::string detector_text = detector_to_json(det).dump(2) + "\n";
  atomic_write(join_path(opts.out_dir, "detector.json"), detector_text);
  const auto manifest =
      make_manifest("train", seed, cfg.echo, {{"detector.json", fnv1a64_hex(detector_text)}});
  write_manifest(join_path(opts.out_dir, "train_manifest.json"), manifest);

  const Eigen::Index order_estimate = det.gamma - static_cast<Eigen::Index>(det.s) * det.p;
  say(opts, strf("train: %ld windows, mode %s, split %ld (order estimate %ld), threshold %.6g",
                 static_cast<long>(traj.length() - s + 1),
                 det.mode == DetectorMode::chi2 ? "chi2" : "svdd",
                 static_cast<long>(det.gamma), static_cast<long>(order_estimate),
                 det.threshold));
  return 0;
}

int cmd_detect(const std::string& detector_path, const std::string& signals_path,
               const CommandOptions& opts) {
  const Detector det = load_detector(detector_path);
  const Trajectory traj = load_signals(signals_path);
  const auto report = run_detection(det, traj);

  const std::string csv = report_to_csv(report);
  atomic_write(join_path(opts.out_dir, "report.csv"), csv);
  const std::string summary = report_summary(report, det).dump(2) + "\n";
  atomic_write(join_path(opts.out_dir, "report.json"), summary);

  const nlohmann::json inputs{{"detector_file", detector_path}, {"signals_file", signals_path}};
  const auto manifest = make_manifest("detect", opts.seed.value_or(0), inputs,
                                      {{"report.csv", fnv1a64_hex(csv)},
                                       {"report.json", fnv1a64_hex(summary)}});
  write_manifest(join_path(opts.out_dir, "detect_manifest.json"), manifest);

  std::string first = report.first_alarm ? std::to_string(*report.first_alarm) : "none";
  say(opts, strf("detect: %zu windows, far %.6g, mdr %.6g, first alarm %s",
                 report.windows.size(), report.far, report.mdr, first.c_str()));
  return 0;
}

int cmd_verify(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const std::uint64_t seed = opts.seed.value_or(cfg.seed);
  const auto base = cfg.model();
  const int s = cfg.window;
  const int count = cfg.verify_rounds + 1;

  std::vector<std::vector<CheckRow>> per_model(static_cast<std::size_t>(count));
  parallel_for(count, [&](int i) {
    if (i == 0) {
      verify_model(base, "config", s, derive_seed(seed, 500), per_model[0]);
    } else {
      const auto model =
          random_minimal_model(derive_seed(seed, 7000 + static_cast<std::uint64_t>(i)), base.n(),
                               base.p(), base.m());
      verify_model(model, "random-" + std::to_string(i), s,
                   derive_seed(seed, 500 + static_cast<std::uint64_t>(i)),
                   per_model[static_cast<std::size_t>(i)]);
    }
  });

  std::vector<CheckRow> rows;
  for (const auto& chunk : per_model) rows.insert(rows.end(), chunk.begin(), chunk.end());

  int passed = 0, failed = 0, skipped = 0;
  double max_identity = 0.0;
  for (const auto& row : rows) {
    if (row.status == "PASS") ++passed;
    else if (row.status == "FAIL") ++failed;
    else ++skipped;
    if (is_identity_check(row.check) && std::isfinite(row.residual))
      max_identity = std::max(max_identity, row.residual);
  }

  if (!opts.quiet) {
    std::cout << strf("%-10s  %-28s  %-6s  %-12s  %s\n", "model", "check", "status", "residual",
                      "note");
    for (const auto& row : rows) {
      const std::string resid =
          std::isfinite(row.residual) ? strf("%.3e", row.residual) : std::string("-");
      std::cout << strf("%-10s  %-28s  %-6s  %-12s  %s\n", row.model_label.c_str(),
                        row.check.c_str(), row.status.c_str(), resid.c_str(), row.note.c_str());
    }
  }

  nlohmann::json report;
  report["kind"] = "fsfd-verify";
  report["all_pass"] = failed == 0;
  report["passed"] = passed;
  report["failed"] = failed;
  report["not_applicable"] = skipped;
  report["max_identity_residual"] = max_identity;
  report["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json entry{{"model", row.model_label},
                         {"check", row.check},
                         {"status", row.status},
                         {"note", row.note}};
    if (std::isfinite(row.residual)) entry["residual"] = row.residual;
    else entry["residual"] = nullptr;
    report["rows"].push_back(entry);
  }
  const std::string report_text = report.dump(2) + "\n";
  atomic_write(join_path(opts.out_dir, "verify_report.json"), report_text);
  const auto manifest = make_manifest("verify", seed, cfg.echo,
                                      {{"verify_report.json", fnv1a64_hex(report_text)}});
  write_manifest(join_path(opts.out_dir, "verify_manifest.json"), manifest);

  say(opts, strf("verify: %zu checks, %d passed, %d failed, %d n/a; max identity residual %.3e",
                 rows.size(), passed, failed, skipped, max_identity));
  return failed == 0 ? 0 : 4;
}

int cmd_bench(const ExperimentConfig& cfg, const CommandOptions& opts) {
  if (!cfg.fault)
    throw ParameterError("bench needs a \"fault\" block in the config to scale over amplitudes");
  if (cfg.amplitudes.empty()) throw ParameterError("bench needs at least one amplitude");

  const std::uint64_t seed = opts.seed.value_or(cfg.seed);
  const auto model = cfg.model();
  const int s = cfg.window;
  const int trials = cfg.trials;
  const int num_amp = static_cast<int>(cfg.amplitudes.size());
  const Eigen::Index order = cfg.order ? *cfg.order : model.n();
  const int rho = cfg.ls_past ? *cfg.ls_past
                              : static_cast<int>(cfg.order ? *cfg.order + 1
                                                           : static_cast<Eigen::Index>(s));

  // The parity residual generator is model-based and trial-independent; when
  // the window depth cannot clear the observability index it is reported as
  // unavailable instead of failing the whole benchmark.
  std::optional<ParityBaseline> parity;
  std::string parity_note;
  try {
    parity = baseline_parity(model, s);
  } catch (const Error& e) {
    parity_note = e.what();
  }

  const std::vector<std::string> methods = {"projection", "parity", "ls-output"};
  struct TrialGrid {
    // indexed [method][amplitude]
    std::vector<std::vector<MethodEval>> cells;
  };
  std::vector<TrialGrid> grids(static_cast<std::size_t>(trials));

  parallel_for(trials, [&](int t) {
    const std::uint64_t tseed = derive_seed(seed, 1000 + static_cast<std::uint64_t>(t));
    const auto train = simulate_run(cfg, model, tseed, 0.0);

    // Projection detector; the split rank comes from the declared or model order.
    const auto det = train_detector(train, s,
                                    static_cast<Eigen::Index>(s) * model.p() + order,
                                    DetectorMode::chi2, cfg.alpha, cfg.ridge);
    FittedScorer proj_scorer;
    proj_scorer.mean = det.delta_hat;
    proj_scorer.w = det.cov_inv_factor;
    proj_scorer.threshold = det.threshold;

    // Parity residual covariance over the training windows.
    FittedScorer parity_scorer;
    if (parity) {
      Eigen::MatrixXd cols(parity->parity.rows(), train.length() - s + 1);
      for (long k = 0; k + s <= train.length(); ++k)
        cols.col(k) = parity->residual(stack_window(train.u, s, k).value,
                                       stack_window(train.y, s, k).value);
      parity_scorer = fit_gaussian_scorer(cols, cfg.alpha, cfg.ridge);
    }

    // Least-squares output predictor and its residual covariance.
    const auto ls = baseline_ls_output(train, s, rho);
    Eigen::MatrixXd ls_cols(static_cast<Eigen::Index>(s) * model.m(),
                            train.length() - s - rho + 1);
    for (long k = rho; k + s <= train.length(); ++k)
      ls_cols.col(k - rho) = ls.residual(train, k);
    const FittedScorer ls_scorer = fit_gaussian_scorer(ls_cols, cfg.alpha, cfg.ridge);

    TrialGrid grid;
    grid.cells.assign(methods.size(), std::vector<MethodEval>(static_cast<std::size_t>(num_amp)));
    for (int a = 0; a < num_amp; ++a) {
      const auto test = simulate_run(cfg, model, derive_seed(tseed, 2000 + static_cast<std::uint64_t>(a)),
                                     cfg.amplitudes[static_cast<std::size_t>(a)]);
      grid.cells[0][static_cast<std::size_t>(a)] = evaluate_scorer(
          proj_scorer,
          [&](long k) {
            Eigen::VectorXd w(s * (model.p() + model.m()));
            w.head(s * model.p()) = stack_window(test.u, s, k).value;
            w.tail(s * model.m()) = stack_window(test.y, s, k).value;
            return residual_r_u2(det, w);
          },
          test, s, 0);
      if (parity) {
        grid.cells[1][static_cast<std::size_t>(a)] = evaluate_scorer(
            parity_scorer,
            [&](long k) {
              return parity->residual(stack_window(test.u, s, k).value,
                                      stack_window(test.y, s, k).value);
            },
            test, s, 0);
      }
      grid.cells[2][static_cast<std::size_t>(a)] = evaluate_scorer(
          ls_scorer, [&](long k) { return ls.residual(test, k); }, test, s, rho);
    }
    grids[static_cast<std::size_t>(t)] = std::move(grid);
  });

  // Aggregate by (method, amplitude) over trials.
  struct BenchRow {
    std::string method;
    double amplitude = 0.0;
    double far = 0.0;
    std::optional<double> mdr;
    std::optional<double> delay;
    int detected_trials = 0;
  };
  std::vector<BenchRow> table;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    if (mi == 1 && !parity) continue;
    for (int a = 0; a < num_amp; ++a) {
      BenchRow row;
      row.method = methods[mi];
      row.amplitude = cfg.amplitudes[static_cast<std::size_t>(a)];
      double far_sum = 0.0, mdr_sum = 0.0, delay_sum = 0.0;
      int mdr_count = 0, delay_count = 0;
      for (int t = 0; t < trials; ++t) {
        const auto& cell_eval = grids[static_cast<std::size_t>(t)].cells[mi][static_cast<std::size_t>(a)];
        far_sum += cell_eval.far;
        if (cell_eval.mdr) {
          mdr_sum += *cell_eval.mdr;
          ++mdr_count;
        }
        if (cell_eval.delay) {
          delay_sum += *cell_eval.delay;
          ++delay_count;
        }
      }
      row.far = far_sum / trials;
      if (mdr_count > 0) row.mdr = mdr_sum / mdr_count;
      if (delay_count > 0) row.delay = delay_sum / delay_count;
      row.detected_trials = delay_count;
      table.push_back(row);
    }
  }

  std::string csv = "method,amplitude,far,mdr,delay\n";
  for (const auto& row : table) {
    csv += row.method + "," + format_double(row.amplitude) + "," + format_double(row.far) + "," +
           cell(row.mdr) + "," + cell(row.delay) + "\n";
  }
  atomic_write(join_path(opts.out_dir, "bench.csv"), csv);

  // Projection versus the least-squares baseline at the largest amplitude,
  // reported with a plain two-standard-error band and never used as a gate.
  nlohmann::json comparison = nullptr;
  {
    const int a = num_amp - 1;
    std::vector<double> proj_mdr, ls_mdr;
    for (int t = 0; t < trials; ++t) {
      const auto& pe = grids[static_cast<std::size_t>(t)].cells[0][static_cast<std::size_t>(a)];
      const auto& le = grids[static_cast<std::size_t>(t)].cells[2][static_cast<std::size_t>(a)];
      if (pe.mdr && le.mdr) {
        proj_mdr.push_back(*pe.mdr);
        ls_mdr.push_back(*le.mdr);
      }
    }
    if (!proj_mdr.empty()) {
      const auto mean_of = [](const std::vector<double>& xs) {
        double sum = 0.0;
        for (const double x : xs) sum += x;
        return sum / static_cast<double>(xs.size());
      };
      const auto se_of = [&](const std::vector<double>& xs, double mean) {
        if (xs.size() < 2) return 0.0;
        double ss = 0.0;
        for (const double x : xs) ss += (x - mean) * (x - mean);
        return std::sqrt(ss / static_cast<double>(xs.size() - 1) /
                         static_cast<double>(xs.size()));
      };
      const double mp = mean_of(proj_mdr), ml = mean_of(ls_mdr);
      const double sed = std::sqrt(se_of(proj_mdr, mp) * se_of(proj_mdr, mp) +
                                   se_of(ls_mdr, ml) * se_of(ls_mdr, ml));
      const double diff = ml - mp;
      comparison = nlohmann::json{
          {"amplitude", cfg.amplitudes.back()},
          {"projection_mdr", mp},
          {"ls_output_mdr", ml},
          {"difference", diff},
          {"two_se_band", 2.0 * sed},
          {"significant", proj_mdr.size() >= 2 && std::abs(diff) > 2.0 * sed},
          {"favors", diff > 0 ? "projection" : (diff < 0 ? "ls-output" : "tie")}};
    }
  }

  nlohmann::json report;
  report["kind"] = "fsfd-bench";
  report["alpha"] = cfg.alpha;
  report["trials"] = trials;
  report["amplitudes"] = cfg.amplitudes;
  report["parity_available"] = static_cast<bool>(parity);
  if (!parity) report["parity_note"] = parity_note;
  report["comparison"] = comparison;
  report["rows"] = nlohmann::json::array();
  for (const auto& row : table) {
    nlohmann::json entry{{"method", row.method},
                         {"amplitude", row.amplitude},
                         {"far", row.far},
                         {"detected_trials", row.detected_trials}};
    entry["mdr"] = row.mdr ? nlohmann::json(*row.mdr) : nlohmann::json(nullptr);
    entry["delay"] = row.delay ? nlohmann::json(*row.delay) : nlohmann::json(nullptr);
    report["rows"].push_back(entry);
  }
  const std::string report_text = report.dump(2) + "\n";
  atomic_write(join_path(opts.out_dir, "bench_report.json"), report_text);

  const auto manifest = make_manifest("bench", seed, cfg.echo,
                                      {{"bench.csv", fnv1a64_hex(csv)},
                                       {"bench_report.json", fnv1a64_hex(report_text)}});
  write_manifest(join_path(opts.out_dir, "bench_manifest.json"), manifest);

  if (!opts.quiet) {
    std::cout << strf("%-12s  %-9s  %-8s  %-8s  %-8s\n", "method", "amplitude", "far", "mdr",
                      "delay");
    for (const auto& row : table) {
      const std::string mdr = row.mdr ? strf("%.4f", *row.mdr) : std::string("NA");
      const std::string delay = row.delay ? strf("%.2f", *row.delay) : std::string("NA");
      std::cout << strf("%-12s  %-9.3g  %-8.4f  %-8s  %-8s\n", row.method.c_str(), row.amplitude,
                        row.far, mdr.c_str(), delay.c_str());
    }
    if (!parity) std::cout << "parity baseline unavailable: " << parity_note << "\n";
  }
  return 0;
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const CertificateError*>(&error)) return 4;
  if (dynamic_cast<const ValidationError*>(&error)) return 2;
  if (dynamic_cast<const NumericalError*>(&error)) return 3;
  if (dynamic_cast<const Error*>(&error)) return 3;
  return 1;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"window-subspace representations and projection-based fault detection"};
  app.name("fsfd");
  app.require_subcommand(1);

  std::string config_path, signals_path, detector_path;
  std::string out_dir = ".";
  bool quiet = false;
  unsigned long long seed_cli = 0;

  auto* sim = app.add_subcommand("simulate", "simulate a run and write the signals table");
  auto* trn = app.add_subcommand("train", "train a detector from a signals file");
  auto* dtc = app.add_subcommand("detect", "slide a saved detector over a signals file");
  auto* ver = app.add_subcommand("verify", "check the representation identities and rank laws");
  auto* ben = app.add_subcommand("bench", "compare detection methods across fault amplitudes");

  for (CLI::App* sub : {sim, trn, dtc, ver, ben}) {
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->add_flag("--quiet", quiet, "suppress progress output");
    sub->add_option("--seed", seed_cli, "override the config seed");
  }
  for (CLI::App* sub : {sim, trn, ver, ben})
    sub->add_option("--config", config_path, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
  dtc->add_option("--config", config_path, "experiment config (JSON, unused)")
      ->check(CLI::ExistingFile);
  trn->add_option("--signals", signals_path, "training signals file")
      ->required()
      ->check(CLI::ExistingFile);
  dtc->add_option("--signals", signals_path, "signals file to scan")
      ->required()
      ->check(CLI::ExistingFile);
  dtc->add_option("--detector", detector_path, "trained detector document")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* active = app.get_subcommands().front();
  CommandOptions opts;
  opts.out_dir = out_dir;
  opts.quiet = quiet;
  if (active->count("--seed") > 0) opts.seed = static_cast<std::uint64_t>(seed_cli);

  try {
    if (active == sim) return cmd_simulate(load_config(config_path), opts);
    if (active == trn) return cmd_train(load_config(config_path), signals_path, opts);
    if (active == dtc) return cmd_detect(detector_path, signals_path, opts);
    if (active == ver) return cmd_verify(load_config(config_path), opts);
    if (active == ben) return cmd_bench(load_config(config_path), opts);
  } catch (const std::exception& e) {
    std::cerr << "fsfd: error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 2;
}

}  // namespace fsfd::cli
