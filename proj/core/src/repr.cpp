#include "fsfd/repr.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fsfd/errors.hpp"

namespace fsfd {
namespace {

void check_depth(int s) {
  if (s < 1) throw RangeError("window depth must be at least 1");
}

void check_feedback_shape(const StateSpaceModel& model, const Eigen::MatrixXd& F,
                          const std::string& what) {
  if (F.rows() != model.p() || F.cols() != model.n())
    throw ShapeError(what + ": feedback gain must be p by n");
}

void check_observer_shape(const StateSpaceModel& model, const Eigen::MatrixXd& L,
                          const std::string& what) {
  if (L.rows() != model.n() || L.cols() != model.m())
    throw ShapeError(what + ": observer gain must be n by m");
}

// powers[k] = base^k for k = 0..count-1. Tails below 1e-300 are snapped to
// zero so nilpotent chains do not decay into denormal noise.
std::vector<Eigen::MatrixXd> matrix_powers(const Eigen::MatrixXd& base, int count) {
  std::vector<Eigen::MatrixXd> powers;
  powers.reserve(static_cast<std::size_t>(count));
  powers.emplace_back(Eigen::MatrixXd::Identity(base.rows(), base.cols()));
  for (int k = 1; k < count; ++k) {
    Eigen::MatrixXd next = powers.back() * base;
    if (next.norm() < 1e-300) next.setZero();
    powers.push_back(std::move(next));
  }
  return powers;
}

// [gain; gain base; ...; gain base^{s-1}] stacked by block rows.
Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& gain,
                           const std::vector<Eigen::MatrixXd>& powers, int s) {
  Eigen::MatrixXd out(gain.rows() * s, gain.cols());
  for (int i = 0; i < s; ++i)
    out.middleRows(gain.rows() * i, gain.rows()) = gain * powers[static_cast<std::size_t>(i)];
  return out;
}

// [base^{n-1} X, base^{n-2} X, ..., X]: maps the n seed samples of a latent
// window (oldest first) onto the state at the window anchor.
Eigen::MatrixXd seed_columns(const std::vector<Eigen::MatrixXd>& powers,
                             const Eigen::MatrixXd& x, Eigen::Index n) {
  Eigen::MatrixXd out(x.rows(), x.cols() * n);
  for (Eigen::Index j = 0; j < n; ++j)
    out.middleCols(x.cols() * j, x.cols()) = powers[static_cast<std::size_t>(n - 1 - j)] * x;
  return out;
}

// Causal block Toeplitz with `diag` on the block diagonal and off(k) at block
// offset k >= 1 below it.
Eigen::MatrixXd causal_toeplitz(int blocks, const Eigen::MatrixXd& diag,
                                const std::function<Eigen::MatrixXd(int)>& off) {
  BlockToeplitzSpec spec;
  spec.block_fn = [&diag, &off](long k) -> Eigen::MatrixXd {
    if (k < 0) return Eigen::MatrixXd::Zero(diag.rows(), diag.cols());
    if (k == 0) return diag;
    return off(static_cast<int>(k));
  };
  spec.rows_blocks = blocks;
  spec.cols_blocks = blocks;
  spec.offset_base = 0;
  spec.block_rows = diag.rows();
  spec.block_cols = diag.cols();
  return realize_toeplitz(spec);
}

// Impulse-response block Toeplitz T_{s,s}(G) of the plant itself.
Eigen::MatrixXd plant_toeplitz(const StateSpaceModel& model, int s) {
  const auto powers = matrix_powers(model.A(), s);
  return causal_toeplitz(s, model.D(), [&](int k) {
    return model.C() * powers[static_cast<std::size_t>(k - 1)] * model.B();
  });
}

bool certified_nilpotent(const Eigen::MatrixXd& closed) {
  const Eigen::Index n = closed.rows();
  Eigen::MatrixXd pw = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index k = 0; k < n; ++k) pw *= closed;
  return pw.norm() <= 1e-8 * std::pow(1.0 + closed.norm(), static_cast<double>(n));
}

// Lemma blocks of the plant-side image for an arbitrary gain F, without the
// rank certificate (shared by image_rep and rank_profile).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> image_blocks(const StateSpaceModel& model,
                                                         const Eigen::MatrixXd& F, int s) {
  const Eigen::Index n = model.n();
  const Eigen::MatrixXd a_f = model.A() + model.B() * F;
  const Eigen::MatrixXd c_f = model.C() + model.D() * F;
  const auto powers = matrix_powers(a_f, static_cast<int>(std::max<Eigen::Index>(s, n)) + 1);
  const Eigen::MatrixXd seed = seed_columns(powers, model.B(), n);

  Eigen::MatrixXd m_s(model.p() * s, (s + n) * model.p());
  m_s.leftCols(n * model.p()) = stack_rows(F, powers, s) * seed;
  m_s.rightCols(s * model.p()) =
      causal_toeplitz(s, Eigen::MatrixXd::Identity(model.p(), model.p()), [&](int k) {
        return F * powers[static_cast<std::size_t>(k - 1)] * model.B();
      });

  Eigen::MatrixXd n_s(model.m() * s, (s + n) * model.p());
  n_s.leftCols(n * model.p()) = stack_rows(c_f, powers, s) * seed;
  n_s.rightCols(s * model.p()) = causal_toeplitz(s, model.D(), [&](int k) {
    return c_f * powers[static_cast<std::size_t>(k - 1)] * model.B();
  });
  return {std::move(m_s), std::move(n_s)};
}

}  // namespace

Eigen::MatrixXd ImageRep::stacked() const {
  Eigen::MatrixXd out(M_s.rows() + N_s.rows(), M_s.cols());
  out << M_s, N_s;
  return out;
}

Eigen::MatrixXd ControllerImageRep::stacked() const {
  Eigen::MatrixXd out(Y_hat_s.rows() + X_hat_s.rows(), Y_hat_s.cols());
  out << Y_hat_s, X_hat_s;
  return out;
}

ImageRep image_rep(const StateSpaceModel& model, const Eigen::MatrixXd& F, int s) {
  check_depth(s);
  check_feedback_shape(model, F, "image_rep");
  auto [m_s, n_s] = image_blocks(model, F, s);
  ImageRep rep{std::move(m_s), std::move(n_s), s, F};
  if (s >= model.n()) {
    const Eigen::Index want = s * model.p() + model.n();
    const Eigen::Index got = numerical_rank(rep.stacked());
    if (got != want)
      throw CertificateError("image_rep: stacked image has rank " + std::to_string(got) +
                             ", expected " + std::to_string(want) +
                             " (is the model minimal?)");
  }
  return rep;
}

ControllerImageRep controller_image_rep(const StateSpaceModel& model,
                                        const Eigen::MatrixXd& F, const Eigen::MatrixXd& L,
                                        int s) {
  check_depth(s);
  check_feedback_shape(model, F, "controller_image_rep");
  check_observer_shape(model, L, "controller_image_rep");
  const Eigen::Index n = model.n();
  const Eigen::MatrixXd a_f = model.A() + model.B() * F;

  ControllerImageRep rep;
  rep.s = s;
  rep.F = F;
  rep.L = L;

  if (certified_nilpotent(a_f)) {
    const Eigen::MatrixXd c_f = model.C() + model.D() * F;
    const auto powers = matrix_powers(a_f, static_cast<int>(std::max<Eigen::Index>(s, n)) + 1);
    const Eigen::MatrixXd seed = seed_columns(powers, L, n);

    rep.Y_hat_s.resize(model.p() * s, (s + n) * model.m());
    rep.Y_hat_s.leftCols(n * model.m()) = stack_rows(F, powers, s) * seed;
    rep.Y_hat_s.rightCols(s * model.m()) =
        causal_toeplitz(s, Eigen::MatrixXd::Zero(model.p(), model.m()), [&](int k) {
          return F * powers[static_cast<std::size_t>(k - 1)] * L;
        });

    rep.X_hat_s.resize(model.m() * s, (s + n) * model.m());
    rep.X_hat_s.leftCols(n * model.m()) = stack_rows(c_f, powers, s) * seed;
    rep.X_hat_s.rightCols(s * model.m()) =
        causal_toeplitz(s, Eigen::MatrixXd::Identity(model.m(), model.m()), [&](int k) {
          return c_f * powers[static_cast<std::size_t>(k - 1)] * L;
        });
    return rep;
  }

  // General gains: exact triangular change of latent from the zero-gain base.
  auto [m_s0, n_s0] =
      image_blocks(model, Eigen::MatrixXd::Zero(model.p(), model.n()), s);
  auto [r, rbar] = param_R_Rbar(model, F, L, Eigen::MatrixXd::Zero(model.p(), model.n()),
                                Eigen::MatrixXd::Zero(model.n(), model.m()), s);
  rep.Y_hat_s = m_s0 * rbar;
  rep.X_hat_s = n_s0 * rbar + r.bottomRows(s * model.m());
  return rep;
}

Eigen::MatrixXd param_V(const StateSpaceModel& model, const Eigen::MatrixXd& F1,
                        const Eigen::MatrixXd& F2, int s) {
  check_depth(s);
  check_feedback_shape(model, F1, "param_V");
  check_feedback_shape(model, F2, "param_V");
  const int total = s + static_cast<int>(model.n());
  const auto powers = matrix_powers(model.A() + model.B() * F1, total);
  const Eigen::MatrixXd df = F1 - F2;
  return causal_toeplitz(total, Eigen::MatrixXd::Identity(model.p(), model.p()), [&](int k) {
    return df * powers[static_cast<std::size_t>(k - 1)] * model.B();
  });
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> param_R_Rbar(const StateSpaceModel& model,
                                                         const Eigen::MatrixXd& F1,
                                                         const Eigen::MatrixXd& L1,
                                                         const Eigen::MatrixXd& F2,
                                                         const Eigen::MatrixXd& L2, int s) {
  check_depth(s);
  check_feedback_shape(model, F1, "param_R_Rbar");
  check_feedback_shape(model, F2, "param_R_Rbar");
  check_observer_shape(model, L1, "param_R_Rbar");
  check_observer_shape(model, L2, "param_R_Rbar");
  const int total = s + static_cast<int>(model.n());
  const auto pow_f1 = matrix_powers(model.A() + model.B() * F1, total);
  const auto pow_l2 = matrix_powers(model.A() - L2 * model.C(), total);
  const Eigen::MatrixXd dl = L1 - L2;
  const Eigen::MatrixXd df = F1 - F2;

  Eigen::MatrixXd r =
      causal_toeplitz(total, Eigen::MatrixXd::Identity(model.m(), model.m()), [&](int k) {
        return model.C() * pow_l2[static_cast<std::size_t>(k - 1)] * dl;
      });
  Eigen::MatrixXd rbar =
      causal_toeplitz(total, Eigen::MatrixXd::Zero(model.p(), model.m()), [&](int k) {
        return df * pow_f1[static_cast<std::size_t>(k - 1)] * L1 +
               F2 * pow_l2[static_cast<std::size_t>(k - 1)] * dl;
      });
  return {std::move(r), std::move(rbar)};
}

ParamMatrices param_matrices(const StateSpaceModel& model, const Eigen::MatrixXd& F1,
                             const Eigen::MatrixXd& L1, const Eigen::MatrixXd& F2,
                             const Eigen::MatrixXd& L2, int s) {
  ParamMatrices out;
  out.V_spn = param_V(model, F1, F2, s);
  auto [r, rbar] = param_R_Rbar(model, F1, L1, F2, L2, s);
  out.R_spn = std::move(r);
  out.Rbar_spn = std::move(rbar);
  return out;
}

PsiStack psi_stack(const StateSpaceModel& model, const Eigen::MatrixXd& F,
                   const Eigen::MatrixXd& L, int s) {
  check_depth(s);
  check_feedback_shape(model, F, "psi_stack");
  check_observer_shape(model, L, "psi_stack");
  const Eigen::Index n = model.n();
  const Eigen::Index p = model.p();
  const Eigen::Index m = model.m();
  const Eigen::Index lat_p = (s + n) * p;
  const Eigen::Index lat_m = (s + n) * m;

  auto [m_s0, n_s0] = image_blocks(model, Eigen::MatrixXd::Zero(p, n), s);

  PsiStack out;
  out.s = s;
  out.Psi_s0 = Eigen::MatrixXd::Zero(s * (p + m), lat_p + lat_m);
  out.Psi_s0.topLeftCorner(s * p, lat_p) = m_s0;
  out.Psi_s0.bottomLeftCorner(s * m, lat_p) = n_s0;
  out.Psi_s0.bottomRightCorner(s * m, s * m) =
      Eigen::MatrixXd::Identity(s * m, s * m);

  const ParamMatrices par = param_matrices(model, F, L, Eigen::MatrixXd::Zero(p, n),
                                           Eigen::MatrixXd::Zero(n, m), s);
  Eigen::MatrixXd change = Eigen::MatrixXd::Zero(lat_p + lat_m, lat_p + lat_m);
  change.topLeftCorner(lat_p, lat_p) = par.V_spn;
  change.topRightCorner(lat_p, lat_m) = par.Rbar_spn;
  change.bottomRightCorner(lat_m, lat_m) = par.R_spn;
  out.Psi_s = out.Psi_s0 * change;

  out.Psi_bar_s0 = Eigen::MatrixXd::Zero(s * (p + m), lat_p + s * m);
  out.Psi_bar_s0.topLeftCorner(s * p, lat_p) = m_s0;
  out.Psi_bar_s0.bottomLeftCorner(s * m, lat_p) = n_s0;
  out.Psi_bar_s0.bottomRightCorner(s * m, s * m) =
      Eigen::MatrixXd::Identity(s * m, s * m);

  const Eigen::Index want = s * (p + m);
  const auto certify = [&](const Eigen::MatrixXd& mat, const char* name) {
    const Eigen::Index got = numerical_rank(mat);
    if (got != want)
      throw CertificateError(std::string("psi_stack: ") + name + " has rank " +
                             std::to_string(got) + ", expected full row rank " +
                             std::to_string(want));
  };
  certify(out.Psi_s, "latent stack");
  certify(out.Psi_s0, "zero-gain stack");
  certify(out.Psi_bar_s0, "wide zero-gain stack");
  return out;
}

KernelRep kernel_rep(const StateSpaceModel& model, int s) {
  check_depth(s);
  const int mu = observability_index(model);
  const Eigen::Index n = model.n();
  const Eigen::Index m = model.m();
  if (s <= mu) {
    const Eigen::Index beta = numerical_rank(observability_matrix(model, s));
    if (s * m <= beta)
      throw ModelError("kernel_rep: window output map has no left annihilator at depth " +
                       std::to_string(s));
    throw ParameterError("kernel_rep: window depth must exceed the observability index " +
                         std::to_string(mu));
  }

  const Eigen::MatrixXd o_s = observability_matrix(model, s);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(o_s, Eigen::ComputeFullU);
  const Eigen::Index theta = s * m - n;
  const Eigen::MatrixXd k2 = svd.matrixU().rightCols(theta).transpose();

  KernelRep rep;
  rep.s = s;
  rep.K2 = k2;
  const Eigen::MatrixXd toep = plant_toeplitz(model, s);
  rep.K_Gs.resize(theta, s * (model.p() + m));
  rep.K_Gs.leftCols(s * model.p()) = -k2 * toep;
  rep.K_Gs.rightCols(s * m) = k2;

  const double annihilation = (k2 * o_s).norm();
  if (annihilation > 1e-10 * std::max(1.0, o_s.norm()))
    throw CertificateError("kernel_rep: annihilator residual " + std::to_string(annihilation));
  if (numerical_rank(rep.K2) != theta || numerical_rank(rep.K_Gs) != theta)
    throw CertificateError("kernel_rep: annihilator rows are rank deficient");

  // The kernel must stay full rank after restriction to the controller image;
  // prefer a deadbeat pair, falling back to the zero-gain image when deadbeat
  // synthesis is unavailable for this model.
  Eigen::MatrixXd controller_image;
  try {
    const Eigen::MatrixXd fd = deadbeat_gain(model);
    const Eigen::MatrixXd ld = observer_gain_deadbeat(model);
    controller_image = controller_image_rep(model, fd, ld, s).stacked();
  } catch (const Error&) {
    controller_image = controller_image_rep(model, Eigen::MatrixXd::Zero(model.p(), n),
                                            Eigen::MatrixXd::Zero(n, m), s)
                           .stacked();
  }
  if (numerical_rank(rep.K_Gs * controller_image) != theta)
    throw CertificateError("kernel_rep: kernel loses rank on the controller image");
  return rep;
}

RankProfile rank_profile(const StateSpaceModel& model, int s) {
  check_depth(s);
  const Eigen::Index p = model.p();
  const Eigen::Index m = model.m();
  auto [m_s, n_s] = image_blocks(model, Eigen::MatrixXd::Zero(p, model.n()), s);
  Eigen::MatrixXd stacked(m_s.rows() + n_s.rows(), m_s.cols());
  stacked << m_s, n_s;

  RankProfile out;
  out.beta = numerical_rank(observability_matrix(model, s));
  out.rank_igs = numerical_rank(stacked);
  if (out.rank_igs != s * p + out.beta)
    throw CertificateError("rank_profile: measured image rank " +
                           std::to_string(out.rank_igs) + " differs from sp + rank(O_s) = " +
                           std::to_string(s * p + out.beta));
  out.gamma = s * p + out.beta;
  out.theta = s * m - out.beta;
  out.dim_residual = out.theta;
  out.residual_subspace_nonempty = out.theta > 0;
  return out;
}

}  // namespace fsfd
