#include "fsfd/subspace.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "fsfd/errors.hpp"
#include "fsfd/linalg.hpp"
#include "fsfd/repr.hpp"
#include "fsfd/rng.hpp"

namespace fsfd {

HankelDataMatrix build_data_matrix(const Trajectory& traj, int s, bool normalize) {
  if (s < 1) throw RangeError("build_data_matrix: window depth must be at least 1");
  const Eigen::Index n_samples = traj.length();
  if (n_samples < s)
    throw SizeError("build_data_matrix: trajectory has " + std::to_string(n_samples) +
                    " samples, need at least " + std::to_string(s));

  const HankelMatrix hu = build_hankel(traj.u, s);
  const HankelMatrix hy = build_hankel(traj.y, s);

  HankelDataMatrix out;
  out.s = s;
  out.N = n_samples;
  out.p = traj.u.dim();
  out.m = traj.y.dim();
  out.normalized = normalize;
  out.first_anchor = hu.first_anchor;
  out.T.resize(hu.matrix.rows() + hy.matrix.rows(), hu.matrix.cols());
  out.T << hu.matrix, hy.matrix;
  if (normalize) out.T /= std::sqrt(static_cast<double>(n_samples));
  out.width_sufficient = out.T.cols() >= out.T.rows();
  return out;
}

SubspaceDecomposition svd_split(const HankelDataMatrix& data, Eigen::Index gamma) {
  const Eigen::Index rows = data.T.rows();
  if (gamma < 1 || gamma >= rows)
    throw ParameterError("svd_split: split rank must lie strictly between 0 and " +
                         std::to_string(rows));

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(data.T, Eigen::ComputeFullU);

  SubspaceDecomposition out;
  out.gamma = gamma;
  out.U1 = svd.matrixU().leftCols(gamma);
  out.U2 = svd.matrixU().rightCols(rows - gamma);
  out.sigma.assign(svd.singularValues().data(),
                   svd.singularValues().data() + svd.singularValues().size());

  const Eigen::MatrixXd completeness =
      out.U1 * out.U1.transpose() + out.U2 * out.U2.transpose() -
      Eigen::MatrixXd::Identity(rows, rows);
  if (completeness.norm() > 1e-10)
    throw CertificateError("svd_split: projector completeness residual " +
                           std::to_string(completeness.norm()));
  return out;
}

Projector projector_from_basis(const Eigen::MatrixXd& basis) {
  if (basis.rows() == 0 || basis.cols() == 0)
    throw SizeError("projector_from_basis: empty basis");
  const Eigen::MatrixXd gram_err =
      basis.transpose() * basis -
      Eigen::MatrixXd::Identity(basis.cols(), basis.cols());
  if (gram_err.norm() > 1e-10 * std::max(1.0, std::sqrt(static_cast<double>(basis.cols()))))
    throw BasisError("projector_from_basis: columns are not orthonormal");
  return Projector{basis * basis.transpose()};
}

GapResult gap_metric(const Eigen::MatrixXd& u_basis, const Eigen::MatrixXd& v_basis) {
  if (u_basis.rows() != v_basis.rows())
    throw ShapeError("gap_metric: bases live in different ambient dimensions");
  GapResult out;
  out.dimensions_match = u_basis.cols() == v_basis.cols();
  const Eigen::MatrixXd rejected =
      v_basis - u_basis * (u_basis.transpose() * v_basis);
  out.gap = spectral_norm(rejected);
  return out;
}

FundamentalLemmaCheck fundamental_lemma_check(const HankelDataMatrix& data,
                                              const StateSpaceModel& model,
                                              const Eigen::MatrixXd& F, double rel_tol) {
  const Eigen::MatrixXd image = image_rep(model, F, data.s).stacked();
  const Eigen::MatrixXd q_image = orthonormal_range(image, rel_tol);
  const Eigen::MatrixXd q_data = orthonormal_range(data.T, rel_tol);

  FundamentalLemmaCheck out;
  out.image_rank = q_image.cols();
  out.data_rank = q_data.cols();
  out.dimensions_match = out.image_rank == out.data_rank;
  const GapResult forward = gap_metric(q_data, q_image);
  const GapResult backward = gap_metric(q_image, q_data);
  out.gap = std::max(forward.gap, backward.gap);

  // Fresh windows from independent simulations must be (least-squares)
  // members of the data span when the data are rich enough.
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> solver(data.T);
  constexpr int kBatch = 50;
  Rng rng(0xf7e51ULL);
  const int s = data.s;
  out.member_residuals.reserve(kBatch);
  for (int trial = 0; trial < kBatch; ++trial) {
    Eigen::MatrixXd u(model.p(), s);
    for (Eigen::Index j = 0; j < s; ++j)
      for (Eigen::Index i = 0; i < model.p(); ++i) u(i, j) = rng.normal();
    Eigen::VectorXd x0(model.n());
    for (Eigen::Index i = 0; i < model.n(); ++i) x0(i) = rng.normal();
    const Trajectory fresh =
        simulate(model, std::nullopt, std::nullopt, SignalSequence(u, 0), x0, 0);
    Eigen::VectorXd w(s * (model.p() + model.m()));
    w.head(s * model.p()) = stack_window(fresh.u, s, 0).value;
    w.tail(s * model.m()) = stack_window(fresh.y, s, 0).value;
    const Eigen::VectorXd g = solver.solve(w);
    out.member_residuals.push_back((data.T * g - w).norm() / residual_scale(w));
  }
  return out;
}

PerturbationBound davis_kahan_oracle_bound(const StateSpaceModel& model,
                                           const Eigen::MatrixXd& F, const Eigen::MatrixXd& L,
                                           const HankelMatrix& latent_v,
                                           const HankelMatrix& latent_r) {
  const Eigen::Index n = model.n();
  if (latent_v.depth != latent_r.depth)
    throw ShapeError("davis_kahan_oracle_bound: latent Hankels have different depths");
  if (latent_v.depth <= n)
    throw RangeError("davis_kahan_oracle_bound: latent depth must exceed the state order");
  if (latent_v.signal_dim != model.p() || latent_r.signal_dim != model.m())
    throw ShapeError("davis_kahan_oracle_bound: latent channel counts do not match the model");
  if (latent_v.num_windows() != latent_r.num_windows() || latent_v.num_windows() < 1)
    throw SizeError("davis_kahan_oracle_bound: latent Hankels must share a nonempty window range");

  const int s = latent_v.depth - static_cast<int>(n);
  const Eigen::Index gamma = s * model.p() + n;
  const double big_n = static_cast<double>(latent_v.num_windows() + s - 1);

  const Eigen::MatrixXd i_g = image_rep(model, F, s).stacked();
  const Eigen::MatrixXd i_c = controller_image_rep(model, F, L, s).stacked();

  const Eigen::MatrixXd& hv = latent_v.matrix;
  const Eigen::MatrixXd& hr = latent_r.matrix;
  const Eigen::MatrixXd sigma_v = hv * hv.transpose() / big_n;
  const Eigen::MatrixXd sigma_r = hr * hr.transpose() / big_n;
  const Eigen::MatrixXd sigma_vr = hv * hr.transpose() / big_n;

  const Eigen::MatrixXd s1 = i_g * sigma_v * i_g.transpose();
  const Eigen::MatrixXd cross = i_g * sigma_vr * i_c.transpose();
  const Eigen::MatrixXd s2 = cross + cross.transpose() + i_c * sigma_r * i_c.transpose();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_s1(s1);
  const Eigen::Index dim = s1.rows();
  const double lambda_gamma = eig_s1.eigenvalues()(dim - gamma);
  if (lambda_gamma <= 1e-14 * std::max(1.0, eig_s1.eigenvalues()(dim - 1)))
    throw DegenerateError("davis_kahan_oracle_bound: excitation eigenvalue " +
                          std::to_string(lambda_gamma) + " is numerically zero");

  PerturbationBound out;
  out.lambda_gamma = lambda_gamma;
  out.s2_norm = spectral_norm(s2);
  out.bound = out.s2_norm / lambda_gamma;

  // Realized split of the perturbed Gram matrix.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_s(s1 + s2);
  const Eigen::MatrixXd u1 = eig_s.eigenvectors().rightCols(gamma);
  const Eigen::MatrixXd p_image = orthonormal_range(i_g);
  out.gap_measured =
      spectral_norm(p_image * p_image.transpose() - u1 * u1.transpose());

  if (out.bound < 1.0 && out.gap_measured > out.bound + 1e-10)
    throw CertificateError("davis_kahan_oracle_bound: measured gap " +
                           std::to_string(out.gap_measured) + " exceeds the bound " +
                           std::to_string(out.bound));
  return out;
}

double empirical_bound(const std::vector<double>& sigma, Eigen::Index gamma) {
  if (gamma < 1 || gamma + 1 > static_cast<Eigen::Index>(sigma.size()))
    throw RangeError("empirical_bound: need singular values through index gamma+1");
  const double denom = sigma[static_cast<std::size_t>(gamma - 1)];
  if (denom == 0.0)
    throw DegenerateError("empirical_bound: sigma_gamma is zero");
  const double num = sigma[static_cast<std::size_t>(gamma)];
  return (num * num) / (denom * denom);
}

std::optional<Eigen::Index> select_gamma(const std::vector<double>& sigma, int s,
                                         Eigen::Index p, Eigen::Index m, double factor) {
  if (factor <= 1.0) throw ParameterError("select_gamma: gap factor must exceed 1");
  const Eigen::Index len = static_cast<Eigen::Index>(sigma.size());
  const Eigen::Index lo = s * p;
  const Eigen::Index hi = s * p + s * m - 1;
  std::optional<Eigen::Index> found;
  for (Eigen::Index i = std::max<Eigen::Index>(lo, 1); i <= hi && i + 1 <= len; ++i) {
    const double next = sigma[static_cast<std::size_t>(i)];
    const double cur = sigma[static_cast<std::size_t>(i - 1)];
    if (next == 0.0 ? cur > 0.0 : cur / next > factor) found = i;
  }
  return found;
}

}  // namespace fsfd
