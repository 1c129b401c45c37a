#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "fsfd/errors.hpp"
#include "fsfd/ltisim.hpp"
#include "fsfd/repr.hpp"
#include "fsfd/rng.hpp"
#include "test_support.hpp"

using namespace fsfd;
using test::random_model;

namespace {

Eigen::MatrixXd random_gain(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols,
                            double scale = 0.4) {
  Rng rng(seed);
  Eigen::MatrixXd g(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) g(i, j) = scale * rng.normal();
  return g;
}

// Rectangular causal Toeplitz oracle: s block rows, s+n block columns, block
// (i, j) equals coef(n + i - j) with coef(k) = 0 for k < 0. Both image-side
// and controller-side window maps have this shape, so the oracle rebuilds
// them from raw matrix powers without touching the library assembly code.
Eigen::MatrixXd toeplitz_oracle(int s, Eigen::Index n,
                                const std::function<Eigen::MatrixXd(long)>& coef) {
  const Eigen::MatrixXd probe = coef(0);
  Eigen::MatrixXd out(probe.rows() * s, probe.cols() * (s + n));
  for (int i = 1; i <= s; ++i)
    for (Eigen::Index j = 1; j <= s + n; ++j) {
      const long k = n + i - j;
      out.block(probe.rows() * (i - 1), probe.cols() * (j - 1), probe.rows(), probe.cols()) =
          k < 0 ? Eigen::MatrixXd::Zero(probe.rows(), probe.cols()) : coef(k);
    }
  return out;
}

Eigen::MatrixXd matrix_power(const Eigen::MatrixXd& a, long k) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  for (long i = 0; i < k; ++i) out *= a;
  return out;
}

// Closed-form controller image blocks for an arbitrary pair (F, L): the
// independent oracle for the factorization route used by the library.
Eigen::MatrixXd controller_oracle(const StateSpaceModel& model, const Eigen::MatrixXd& F,
                                  const Eigen::MatrixXd& L, int s) {
  const Eigen::MatrixXd a_f = model.A() + model.B() * F;
  const Eigen::MatrixXd c_f = model.C() + model.D() * F;
  Eigen::MatrixXd y_hat = toeplitz_oracle(s, model.n(), [&](long k) -> Eigen::MatrixXd {
    if (k == 0) return Eigen::MatrixXd::Zero(model.p(), model.m());
    return F * matrix_power(a_f, k - 1) * L;
  });
  Eigen::MatrixXd x_hat = toeplitz_oracle(s, model.n(), [&](long k) -> Eigen::MatrixXd {
    if (k == 0) return Eigen::MatrixXd::Identity(model.m(), model.m());
    return c_f * matrix_power(a_f, k - 1) * L;
  });
  Eigen::MatrixXd out(y_hat.rows() + x_hat.rows(), y_hat.cols());
  out << y_hat, x_hat;
  return out;
}

// Simulate u = Fx + v noise-free and return the recorded (u, y) columns.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> closed_loop_feedback(
    const StateSpaceModel& model, const Eigen::MatrixXd& F, const Eigen::MatrixXd& v,
    const Eigen::VectorXd& x0) {
  Eigen::MatrixXd u(model.p(), v.cols()), y(model.m(), v.cols());
  Eigen::VectorXd x = x0;
  for (Eigen::Index k = 0; k < v.cols(); ++k) {
    u.col(k) = F * x + v.col(k);
    y.col(k) = model.C() * x + model.D() * u.col(k);
    x = model.A() * x + model.B() * u.col(k);
  }
  return {std::move(u), std::move(y)};
}

// Observer-based controller fed by an injected residual sequence r:
// xhat(k+1) = A xhat + B u + L r with u = F xhat and y = C xhat + D u + r.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> closed_loop_residual(
    const StateSpaceModel& model, const Eigen::MatrixXd& F, const Eigen::MatrixXd& L,
    const Eigen::MatrixXd& r, const Eigen::VectorXd& xhat0) {
  Eigen::MatrixXd u(model.p(), r.cols()), y(model.m(), r.cols());
  Eigen::VectorXd xhat = xhat0;
  for (Eigen::Index k = 0; k < r.cols(); ++k) {
    u.col(k) = F * xhat;
    y.col(k) = model.C() * xhat + model.D() * u.col(k) + r.col(k);
    xhat = model.A() * xhat + model.B() * u.col(k) + L * r.col(k);
  }
  return {std::move(u), std::move(y)};
}

Eigen::VectorXd window(const Eigen::MatrixXd& cols, Eigen::Index anchor, int depth) {
  const Eigen::Index q = cols.rows();
  Eigen::VectorXd w(q * depth);
  for (int i = 0; i < depth; ++i) w.segment(q * i, q) = cols.col(anchor + i);
  return w;
}

Eigen::VectorXd io_window(const Eigen::MatrixXd& u, const Eigen::MatrixXd& y,
                          Eigen::Index anchor, int depth) {
  Eigen::VectorXd w(u.rows() * depth + y.rows() * depth);
  w.head(u.rows() * depth) = window(u, anchor, depth);
  w.tail(y.rows() * depth) = window(y, anchor, depth);
  return w;
}

double subspace_gap(const Eigen::MatrixXd& basis_a, const Eigen::MatrixXd& basis_b) {
  const Eigen::MatrixXd qa = orthonormal_range(basis_a);
  const Eigen::MatrixXd qb = orthonormal_range(basis_b);
  const double ab = spectral_norm(qb - qa * (qa.transpose() * qb));
  const double ba = spectral_norm(qa - qb * (qb.transpose() * qa));
  return std::max(ab, ba);
}

}  // namespace

TEST_CASE("image_rep zero gain reduces to observability and impulse blocks") {
  const auto model = random_model(101, 3, 2, 2);
  const int s = 4;
  const Eigen::MatrixXd F0 = Eigen::MatrixXd::Zero(model.p(), model.n());
  const auto rep = image_rep(model, F0, s);

  REQUIRE(rep.M_s.rows() == s * model.p());
  REQUIRE(rep.M_s.cols() == (s + model.n()) * model.p());
  REQUIRE(rep.N_s.rows() == s * model.m());

  CHECK(rep.M_s.leftCols(model.n() * model.p()).norm() == doctest::Approx(0.0));
  CHECK(test::rel_resid(rep.M_s.rightCols(s * model.p()),
                        Eigen::MatrixXd::Identity(s * model.p(), s * model.p())) < 1e-14);

  // State part: O_s times the controllability columns in reversed order.
  const Eigen::MatrixXd o_s = observability_matrix(model, s);
  const Eigen::MatrixXd ctrb = controllability_matrix(model, model.n());
  Eigen::MatrixXd reversed(model.n(), model.n() * model.p());
  for (Eigen::Index j = 0; j < model.n(); ++j)
    reversed.middleCols(model.p() * j, model.p()) =
        ctrb.middleCols(model.p() * (model.n() - 1 - j), model.p());
  CHECK(test::rel_resid(rep.N_s.leftCols(model.n() * model.p()), o_s * reversed) < 1e-12);

  // Direct part: the impulse-response Toeplitz from markov_parameter.
  Eigen::MatrixXd toep(s * model.m(), s * model.p());
  for (int i = 1; i <= s; ++i)
    for (int j = 1; j <= s; ++j)
      toep.block(model.m() * (i - 1), model.p() * (j - 1), model.m(), model.p()) =
          model.markov_parameter(i - j);
  CHECK(test::rel_resid(rep.N_s.rightCols(s * model.p()), toep) < 1e-12);
}

TEST_CASE("image_rep matches the general-gain window oracle blockwise") {
  for (std::uint64_t seed : {7ULL, 8ULL, 9ULL}) {
    const auto model = random_model(seed, 3, 1, 2);
    const int s = 5;
    const Eigen::MatrixXd F = random_gain(seed + 50, model.p(), model.n());
    const auto rep = image_rep(model, F, s);
    const Eigen::MatrixXd a_f = model.A() + model.B() * F;
    const Eigen::MatrixXd c_f = model.C() + model.D() * F;

    const Eigen::MatrixXd m_oracle = toeplitz_oracle(s, model.n(), [&](long k) -> Eigen::MatrixXd {
      if (k == 0) return Eigen::MatrixXd::Identity(model.p(), model.p());
      return F * matrix_power(a_f, k - 1) * model.B();
    });
    const Eigen::MatrixXd n_oracle = toeplitz_oracle(s, model.n(), [&](long k) -> Eigen::MatrixXd {
      if (k == 0) return Eigen::MatrixXd(model.D());
      return c_f * matrix_power(a_f, k - 1) * model.B();
    });
    CHECK(test::rel_resid(rep.M_s, m_oracle) < 1e-12);
    CHECK(test::rel_resid(rep.N_s, n_oracle) < 1e-12);
  }
}

TEST_CASE("image_rep certifies rank sp+n and the deadbeat window identity holds") {
  for (std::uint64_t seed : {21ULL, 22ULL, 23ULL, 24ULL}) {
    const int n = 3, p = 2, m = 2, s = 5;
    const auto model = random_model(seed, n, p, m);
    const Eigen::MatrixXd fd = deadbeat_gain(model, seed);
    const auto rep = image_rep(model, fd, s);
    CHECK(numerical_rank(rep.stacked()) == s * p + n);

    // Closed-loop simulation: windows of (u, y) equal the image applied to
    // the latent window anchored n steps earlier.
    Rng rng(derive_seed(seed, 3));
    const Eigen::Index len = 40;
    Eigen::MatrixXd v(p, len);
    for (Eigen::Index j = 0; j < len; ++j)
      for (int i = 0; i < p; ++i) v(i, j) = rng.normal();
    Eigen::VectorXd x0(n);
    for (int i = 0; i < n; ++i) x0(i) = rng.normal();
    const auto [u, y] = closed_loop_feedback(model, fd, v, x0);

    for (Eigen::Index anchor : {static_cast<Eigen::Index>(n), Eigen::Index(12), Eigen::Index(30)}) {
      const Eigen::VectorXd w = io_window(u, y, anchor, s);
      const Eigen::VectorXd latent = window(v, anchor - n, s + n);
      CHECK((w - rep.stacked() * latent).norm() <= 1e-8 * residual_scale(w));
    }
  }
}

TEST_CASE("image_rep validates shapes and depth") {
  const auto model = random_model(31, 2, 1, 1);
  CHECK_THROWS_AS(image_rep(model, Eigen::MatrixXd::Zero(2, 2), 3), ShapeError);
  CHECK_THROWS_AS(image_rep(model, Eigen::MatrixXd::Zero(1, 2), 0), RangeError);
}

TEST_CASE("param_V is identity for equal gains and geometric for scalars") {
  const auto model = random_model(41, 2, 2, 1);
  const Eigen::MatrixXd F = random_gain(42, 2, 2);
  const Eigen::MatrixXd v_eq = param_V(model, F, F, 3);
  CHECK(test::rel_resid(v_eq, Eigen::MatrixXd::Identity(v_eq.rows(), v_eq.cols())) < 1e-14);

  // Scalar model: off-diagonal blocks are (f1-f2) (a+b f1)^{k-1} b.
  Eigen::MatrixXd A(1, 1), B(1, 1), C(1, 1), D(1, 1);
  A << 0.7;
  B << 2.0;
  C << 1.0;
  D << 0.0;
  const StateSpaceModel scalar(A, B, C, D);
  Eigen::MatrixXd f1(1, 1), f2(1, 1);
  f1 << 0.1;
  f2 << -0.2;
  const int s = 3;
  const Eigen::MatrixXd v = param_V(scalar, f1, f2, s);
  const double a_f1 = 0.7 + 2.0 * 0.1;
  for (int i = 0; i < s + 1; ++i)
    for (int j = 0; j < s + 1; ++j) {
      const int k = i - j;
      const double want = k < 0 ? 0.0 : (k == 0 ? 1.0 : 0.3 * std::pow(a_f1, k - 1) * 2.0);
      CHECK(v(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("param_V links image representations of two arbitrary gains") {
  for (std::uint64_t seed : {61ULL, 62ULL, 63ULL, 64ULL, 65ULL}) {
    const auto model = random_model(seed, 3, 2, 2);
    const int s = 4;
    const Eigen::MatrixXd f1 = random_gain(seed + 1, model.p(), model.n());
    const Eigen::MatrixXd f2 = random_gain(seed + 2, model.p(), model.n());
    const auto rep1 = image_rep(model, f1, s);
    const auto rep2 = image_rep(model, f2, s);
    const Eigen::MatrixXd v = param_V(model, f1, f2, s);
    CHECK(test::rel_resid(rep2.stacked() * v, rep1.stacked()) < 1e-10);
  }
}

TEST_CASE("param_R_Rbar degenerates correctly and is triangular with unit diagonal") {
  const auto model = random_model(71, 3, 1, 2);
  const Eigen::MatrixXd F = random_gain(72, model.p(), model.n());
  const Eigen::MatrixXd L = random_gain(73, model.n(), model.m());
  const int s = 3;

  const auto [r_eq, rbar_eq] = param_R_Rbar(model, F, L, F, L, s);
  CHECK(test::rel_resid(r_eq, Eigen::MatrixXd::Identity(r_eq.rows(), r_eq.cols())) < 1e-14);
  CHECK(rbar_eq.norm() == doctest::Approx(0.0));

  const auto par = param_matrices(model, F, L, Eigen::MatrixXd::Zero(model.p(), model.n()),
                                  Eigen::MatrixXd::Zero(model.n(), model.m()), s);
  // Unit diagonal, strictly lower structure, hence invertible.
  const Eigen::Index total_m = (s + model.n()) * model.m();
  for (Eigen::Index i = 0; i < total_m; ++i) {
    CHECK(par.R_spn(i, i) == doctest::Approx(1.0));
    for (Eigen::Index j = i + 1; j < total_m; ++j) CHECK(par.R_spn(i, j) == 0.0);
  }
  const Eigen::Index total_p = (s + model.n()) * model.p();
  for (Eigen::Index i = 0; i < total_p; ++i)
    for (Eigen::Index j = 0; j < total_m; ++j)
      if (i / model.p() <= j / model.m()) CHECK(par.Rbar_spn(i, j) == 0.0);
  CHECK(numerical_rank(par.R_spn) == total_m);
  CHECK(numerical_rank(par.V_spn) == total_p);

  // Against a zero base the mixing term drops; only (F1-F2) A_{F1}^{k-1} L1
  // survives in Rbar.
  const Eigen::MatrixXd a_f = model.A() + model.B() * F;
  for (int k = 1; k < s + 3; ++k) {
    const Eigen::MatrixXd want = F * matrix_power(a_f, k - 1) * L;
    const Eigen::MatrixXd got =
        par.Rbar_spn.block(model.p() * k, 0, model.p(), model.m());
    CHECK(test::rel_resid(got, want) < 1e-12);
  }
}

TEST_CASE("controller_image_rep zero pair and deadbeat-with-zero-observer structure") {
  const auto model = random_model(81, 3, 2, 2);
  const int s = 4;
  const Eigen::Index sm = s * model.m();
  const Eigen::Index nm = model.n() * model.m();

  const auto rep0 = controller_image_rep(model, Eigen::MatrixXd::Zero(model.p(), model.n()),
                                         Eigen::MatrixXd::Zero(model.n(), model.m()), s);
  CHECK(rep0.Y_hat_s.norm() == doctest::Approx(0.0));
  CHECK(rep0.X_hat_s.leftCols(nm).norm() == doctest::Approx(0.0));
  CHECK(test::rel_resid(rep0.X_hat_s.rightCols(sm), Eigen::MatrixXd::Identity(sm, sm)) < 1e-14);

  // A deadbeat F with L = 0: every block carries an L factor except the
  // identity diagonal, so the same degenerate structure appears.
  const Eigen::MatrixXd fd = deadbeat_gain(model, 81);
  const auto repL0 = controller_image_rep(model, fd, Eigen::MatrixXd::Zero(model.n(), model.m()), s);
  CHECK(repL0.Y_hat_s.norm() == doctest::Approx(0.0));
  CHECK(repL0.X_hat_s.leftCols(nm).norm() == doctest::Approx(0.0));
  CHECK(test::rel_resid(repL0.X_hat_s.rightCols(sm), Eigen::MatrixXd::Identity(sm, sm)) < 1e-14);
}

TEST_CASE("controller_image_rep factorization route matches the closed-form oracle") {
  for (std::uint64_t seed : {91ULL, 92ULL, 93ULL, 94ULL, 95ULL}) {
    const auto model = random_model(seed, 3, 2, 2);
    const int s = 4;
    // Arbitrary (generally non-deadbeat) gains force the triangular route.
    const Eigen::MatrixXd F = random_gain(seed + 10, model.p(), model.n());
    const Eigen::MatrixXd L = random_gain(seed + 11, model.n(), model.m());
    const auto rep = controller_image_rep(model, F, L, s);
    CHECK(test::rel_resid(rep.stacked(), controller_oracle(model, F, L, s)) < 1e-10);
  }
}

TEST_CASE("controller_image_rep deadbeat route agrees with the factorization assembly") {
  for (std::uint64_t seed : {111ULL, 112ULL, 113ULL}) {
    const auto model = random_model(seed, 3, 1, 2);
    const int s = 4;
    const Eigen::MatrixXd fd = deadbeat_gain(model, seed);
    const Eigen::MatrixXd L = random_gain(seed + 20, model.n(), model.m());
    const auto rep = controller_image_rep(model, fd, L, s);

    // Manual triangular assembly from the zero-gain base.
    const auto base = image_rep(model, Eigen::MatrixXd::Zero(model.p(), model.n()), s);
    const auto [r, rbar] =
        param_R_Rbar(model, fd, L, Eigen::MatrixXd::Zero(model.p(), model.n()),
                     Eigen::MatrixXd::Zero(model.n(), model.m()), s);
    const Eigen::MatrixXd y_hat = base.M_s * rbar;
    const Eigen::MatrixXd x_hat = base.N_s * rbar + r.bottomRows(s * model.m());
    CHECK(test::rel_resid(rep.Y_hat_s, y_hat) < 1e-9);
    CHECK(test::rel_resid(rep.X_hat_s, x_hat) < 1e-9);
  }
}

TEST_CASE("controller_image_rep reproduces injected-residual closed-loop windows") {
  for (std::uint64_t seed : {121ULL, 122ULL}) {
    const int n = 3, p = 2, m = 2, s = 4;
    const auto model = random_model(seed, n, p, m);
    const Eigen::MatrixXd fd = deadbeat_gain(model, seed);
    const Eigen::MatrixXd L = random_gain(seed + 30, n, m, 0.3);
    const auto rep = controller_image_rep(model, fd, L, s);

    Rng rng(derive_seed(seed, 9));
    const Eigen::Index len = 30;
    Eigen::MatrixXd r(m, len);
    for (Eigen::Index j = 0; j < len; ++j)
      for (int i = 0; i < m; ++i) r(i, j) = rng.normal();
    Eigen::VectorXd xhat0(n);
    for (int i = 0; i < n; ++i) xhat0(i) = rng.normal();
    const auto [u, y] = closed_loop_residual(model, fd, L, r, xhat0);

    for (Eigen::Index anchor : {static_cast<Eigen::Index>(n), Eigen::Index(10), Eigen::Index(20)}) {
      const Eigen::VectorXd w = io_window(u, y, anchor, s);
      const Eigen::VectorXd latent = window(r, anchor - n, s + n);
      CHECK((w - rep.stacked() * latent).norm() <= 1e-8 * residual_scale(w));
    }
  }
}

TEST_CASE("psi_stack zero gains collapse to the base and shapes line up") {
  const auto model = random_model(131, 2, 1, 2);
  const int s = 3;
  const Eigen::Index n = model.n(), p = model.p(), m = model.m();
  const auto stack = psi_stack(model, Eigen::MatrixXd::Zero(p, n),
                               Eigen::MatrixXd::Zero(n, m), s);
  REQUIRE(stack.Psi_s.rows() == s * (p + m));
  REQUIRE(stack.Psi_s.cols() == (s + n) * (p + m));
  REQUIRE(stack.Psi_bar_s0.cols() == (s + n) * p + s * m);
  CHECK(test::rel_resid(stack.Psi_s, stack.Psi_s0) < 1e-14);

  // Wide form holds the base image blocks next to an identity residual block.
  const auto base = image_rep(model, Eigen::MatrixXd::Zero(p, n), s);
  CHECK(test::rel_resid(stack.Psi_bar_s0.topLeftCorner(s * p, (s + n) * p), base.M_s) < 1e-14);
  CHECK(test::rel_resid(stack.Psi_bar_s0.bottomLeftCorner(s * m, (s + n) * p), base.N_s) < 1e-14);
  CHECK(stack.Psi_bar_s0.topRightCorner(s * p, s * m).norm() == doctest::Approx(0.0));
  CHECK(test::rel_resid(stack.Psi_bar_s0.bottomRightCorner(s * m, s * m),
                        Eigen::MatrixXd::Identity(s * m, s * m)) < 1e-14);
}

TEST_CASE("psi_stack equals the side-by-side image and controller blocks") {
  for (std::uint64_t seed : {141ULL, 142ULL, 143ULL, 144ULL}) {
    const auto model = random_model(seed, 3, 2, 1);
    const int s = 4;
    const Eigen::MatrixXd F = random_gain(seed + 3, model.p(), model.n());
    const Eigen::MatrixXd L = random_gain(seed + 4, model.n(), model.m());
    const auto stack = psi_stack(model, F, L, s);

    const auto ig = image_rep(model, F, s);
    Eigen::MatrixXd direct(stack.Psi_s.rows(), stack.Psi_s.cols());
    const Eigen::Index lat_p = (s + model.n()) * model.p();
    direct.leftCols(lat_p).topRows(s * model.p()) = ig.M_s;
    direct.leftCols(lat_p).bottomRows(s * model.m()) = ig.N_s;
    direct.rightCols((s + model.n()) * model.m()) = controller_oracle(model, F, L, s);
    CHECK(test::rel_resid(stack.Psi_s, direct) < 1e-10);
    CHECK(numerical_rank(stack.Psi_s) == s * (model.p() + model.m()));
  }
}

TEST_CASE("psi_stack reconstructs noisy closed-loop windows from latents") {
  for (std::uint64_t seed : {151ULL, 152ULL}) {
    const int n = 3, p = 2, m = 2, s = 4;
    const auto model = random_model(seed, n, p, m);
    const Eigen::MatrixXd fd = deadbeat_gain(model, seed);
    const Eigen::MatrixXd L = observer_gain_place(model, 0.5, seed);
    const auto stack = psi_stack(model, fd, L, s);

    const NoiseModel noise(0.05 * Eigen::MatrixXd::Identity(n, n),
                           Eigen::MatrixXd::Zero(n, m),
                           0.02 * Eigen::MatrixXd::Identity(m, m));
    const Eigen::Index len = 120;
    const auto u = test::random_input(derive_seed(seed, 77), p, len);
    Rng rng(derive_seed(seed, 78));
    Eigen::VectorXd x0(n), xhat0(n);
    for (int i = 0; i < n; ++i) x0(i) = rng.normal();
    for (int i = 0; i < n; ++i) xhat0(i) = rng.normal();
    const auto traj = simulate(model, noise, std::nullopt, u, x0, derive_seed(seed, 79));
    const auto [v, r] = latent_signals(model, fd, L, traj, xhat0);

    for (long anchor : {static_cast<long>(n), 40L, 90L}) {
      Eigen::VectorXd w(s * (p + m));
      w.head(s * p) = stack_window(traj.u, s, anchor).value;
      w.tail(s * m) = stack_window(traj.y, s, anchor).value;
      Eigen::VectorXd latent((s + n) * (p + m));
      latent.head((s + n) * p) = stack_window(v, s + n, anchor - n).value;
      latent.tail((s + n) * m) = stack_window(r, s + n, anchor - n).value;
      CHECK((w - stack.Psi_s * latent).norm() <= 1e-8 * residual_scale(w));
    }
  }
}

TEST_CASE("kernel_rep certificates, annihilation, and equivalence with a parity basis") {
  for (std::uint64_t seed : {161ULL, 162ULL, 163ULL}) {
    const int n = 3, p = 1, m = 2, s = 4;  // sm - n = 5
    const auto model = random_model(seed, n, p, m);
    const auto ker = kernel_rep(model, s);
    const Eigen::Index theta = s * m - n;
    REQUIRE(ker.K2.rows() == theta);
    REQUIRE(ker.K_Gs.cols() == s * (p + m));

    // Orthonormal rows.
    CHECK(test::rel_resid(ker.K2 * ker.K2.transpose(),
                          Eigen::MatrixXd::Identity(theta, theta)) < 1e-12);
    CHECK((ker.K2 * observability_matrix(model, s)).norm() < 1e-10);

    // Annihilates the plant image for any gain.
    const Eigen::MatrixXd F = random_gain(seed + 40, p, n);
    const auto ig = image_rep(model, F, s);
    CHECK((ker.K_Gs * ig.stacked()).norm() <= 1e-8 * residual_scale(ig.stacked()));

    // An independently computed (non-orthonormal) parity basis spans the same
    // row space: take the LU kernel of O_s' as parity rows.
    const Eigen::MatrixXd o_s = observability_matrix(model, s);
    const Eigen::MatrixXd parity_cols = Eigen::FullPivLU<Eigen::MatrixXd>(o_s.transpose()).kernel();
    REQUIRE(parity_cols.cols() == theta);
    Eigen::MatrixXd toep(s * m, s * p);
    for (int i = 1; i <= s; ++i)
      for (int j = 1; j <= s; ++j)
        toep.block(m * (i - 1), p * (j - 1), m, p) = model.markov_parameter(i - j);
    Eigen::MatrixXd parity_ker(theta, s * (p + m));
    parity_ker.leftCols(s * p) = -parity_cols.transpose() * toep;
    parity_ker.rightCols(s * m) = parity_cols.transpose();
    CHECK(subspace_gap(ker.K_Gs.transpose(), parity_ker.transpose()) < 1e-8);
  }
}

TEST_CASE("kernel_rep residual equals the projected open-loop observer residual") {
  const int n = 3, p = 2, m = 2, s = 4;
  const auto model = random_model(171, n, p, m);
  const auto ker = kernel_rep(model, s);

  const NoiseModel noise(0.1 * Eigen::MatrixXd::Identity(n, n), Eigen::MatrixXd::Zero(n, m),
                         0.05 * Eigen::MatrixXd::Identity(m, m));
  const Eigen::Index len = 80;
  const auto u = test::random_input(1711, p, len);
  Rng rng(1712);
  Eigen::VectorXd x0(n), xhat0(n);
  for (int i = 0; i < n; ++i) x0(i) = rng.normal();
  for (int i = 0; i < n; ++i) xhat0(i) = rng.normal();
  const auto traj = simulate(model, noise, std::nullopt, u, x0, 1713);

  // Open-loop observer (L = 0) residual; the annihilator kills every state
  // term, so the identity holds from the very first window and any xhat0.
  const auto rbar = observer_residual(model, Eigen::MatrixXd::Zero(n, m), traj, xhat0);
  for (long anchor : {0L, 5L, 37L, 70L}) {
    Eigen::VectorXd w(s * (p + m));
    w.head(s * p) = stack_window(traj.u, s, anchor).value;
    w.tail(s * m) = stack_window(traj.y, s, anchor).value;
    const Eigen::VectorXd direct = ker.K_Gs * w;
    const Eigen::VectorXd via_residual = ker.K2 * stack_window(rbar, s, anchor).value;
    CHECK((direct - via_residual).norm() <= 1e-8 * residual_scale(via_residual));
  }

  // Noise-free runs live in the image, so the kernel residual vanishes.
  const auto clean = simulate(model, std::nullopt, std::nullopt, u, x0, 1714);
  // Discard the transient of the unknown initial state by starting at n.
  Eigen::VectorXd w(s * (p + m));
  w.head(s * p) = stack_window(clean.u, s, 10).value;
  w.tail(s * m) = stack_window(clean.y, s, 10).value;
  // The state itself is reachable from past inputs only after a transient
  // when x0 = 0; rerun with zero initial state for the exact statement.
  const auto clean0 = simulate(model, std::nullopt, std::nullopt, u,
                               Eigen::VectorXd::Zero(n), 1715);
  w.head(s * p) = stack_window(clean0.u, s, 10).value;
  w.tail(s * m) = stack_window(clean0.y, s, 10).value;
  CHECK((ker.K_Gs * w).norm() <= 1e-8 * residual_scale(w));
}

TEST_CASE("kernel_rep rejects shallow windows with the right error types") {
  // Chain with C = I: observability index 1, kernel already empty at s = 1.
  const int n = 2;
  Eigen::MatrixXd A(n, n), B(n, 1), C = Eigen::MatrixXd::Identity(n, n),
                           D = Eigen::MatrixXd::Zero(n, 1);
  A << 0.4, 1.0, 0.0, 0.3;
  B << 0.0, 1.0;
  const StateSpaceModel full_obs(A, B, C, D);
  CHECK_THROWS_AS(kernel_rep(full_obs, 1), ModelError);

  // Single-output chain: at s = 2 the output map is square and invertible,
  // so again the annihilator is empty; depth 3 finally yields one.
  Eigen::MatrixXd C2(1, n);
  C2 << 1.0, 0.0;
  const StateSpaceModel single(A, B, C2, Eigen::MatrixXd::Zero(1, 1));
  CHECK_THROWS_AS(kernel_rep(single, 2), ModelError);
  CHECK_NOTHROW(kernel_rep(single, 3));

  // Two outputs over three states: the observability index is 2, and at
  // s = 2 the annihilator would exist (sm = 4 > 3) but the depth rule still
  // rejects it; one step deeper works.
  const auto two_out = random_model(177, 3, 1, 2);
  REQUIRE(observability_index(two_out) == 2);
  CHECK_THROWS_AS(kernel_rep(two_out, 2), ParameterError);
  CHECK_NOTHROW(kernel_rep(two_out, 3));
}

TEST_CASE("image and controller images intersect, kernel restriction keeps rank") {
  for (std::uint64_t seed : {181ULL, 182ULL}) {
    const int n = 2, p = 1, m = 2, s = 3;  // theta = 4
    const auto model = random_model(seed, n, p, m);
    const Eigen::MatrixXd fd = deadbeat_gain(model, seed);
    const Eigen::MatrixXd ld = observer_gain_deadbeat(model, seed);
    const auto ig = image_rep(model, fd, s);
    const auto ic = controller_image_rep(model, fd, ld, s);
    const auto ker = kernel_rep(model, s);

    const Eigen::Index rank_g = numerical_rank(ig.stacked());
    const Eigen::Index rank_c = numerical_rank(ic.stacked());
    Eigen::MatrixXd joint(ig.stacked().rows(), ig.stacked().cols() + ic.stacked().cols());
    joint << ig.stacked(), ic.stacked();
    const Eigen::Index rank_joint = numerical_rank(joint);
    CHECK(rank_joint == s * (p + m));       // together they span every window
    CHECK(rank_joint < rank_g + rank_c);    // but they overlap

    const Eigen::Index theta = s * m - n;
    CHECK(numerical_rank(ker.K_Gs * ic.stacked()) == theta);

    // Any full-row-rank recombination keeps its own row count.
    for (Eigen::Index phi : {theta, theta - 1, Eigen::Index(1)}) {
      const Eigen::MatrixXd recomb = random_gain(seed + 90 + phi, phi, theta, 1.0);
      REQUIRE(numerical_rank(recomb) == phi);
      CHECK(numerical_rank(recomb * ker.K_Gs * ic.stacked()) == phi);
    }
  }
}

TEST_CASE("rank_profile reports the image/kernel split and flags the degenerate case") {
  const auto model = random_model(191, 3, 2, 2);
  const int s = 4;  // above the observability index
  const auto prof = rank_profile(model, s);
  CHECK(prof.beta == 3);
  CHECK(prof.rank_igs == s * 2 + 3);
  CHECK(prof.gamma == s * 2 + 3);
  CHECK(prof.theta == s * 2 - 3);
  CHECK(prof.dim_residual == prof.theta);
  CHECK(prof.residual_subspace_nonempty);

  // Shallow single-output window: beta = sm = 1 leaves no residual
  // directions at all, the textbook failure case of the rank split.
  Eigen::MatrixXd A(2, 2), B(2, 1), C(1, 2), D(1, 1);
  A << 0.5, 1.0, 0.0, 0.3;
  B << 0.0, 1.0;
  C << 1.0, 0.0;
  D << 0.0;
  const StateSpaceModel chain(A, B, C, D);
  const auto shallow = rank_profile(chain, 1);
  CHECK(shallow.beta == 1);
  CHECK(shallow.rank_igs == 2);
  CHECK(shallow.theta == 0);
  CHECK_FALSE(shallow.residual_subspace_nonempty);
}
