#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "fsfd/ltisim.hpp"
#include "fsfd/signals.hpp"

namespace fsfd {

// Stacked input/output Hankel data matrix [H_s(u); H_s(y)], optionally scaled
// by 1/sqrt(N) so its Gram matrix estimates second moments.
struct HankelDataMatrix {
  Eigen::MatrixXd T;  // s(p+m) by N-s+1
  int s = 0;
  Eigen::Index N = 0;
  Eigen::Index p = 0;
  Eigen::Index m = 0;
  bool normalized = false;
  bool width_sufficient = false;  // N-s+1 >= s(p+m)
  long first_anchor = 0;
};

// Full SVD of the data matrix split at rank gamma.
struct SubspaceDecomposition {
  Eigen::MatrixXd U1;  // s(p+m) by gamma
  Eigen::MatrixXd U2;  // s(p+m) by s(p+m)-gamma
  std::vector<double> sigma;
  Eigen::Index gamma = 0;
};

// Symmetric idempotent projection matrix.
struct Projector {
  Eigen::MatrixXd P;
};

struct FundamentalLemmaCheck {
  double gap = 0.0;
  std::vector<double> member_residuals;
  bool dimensions_match = false;
  Eigen::Index data_rank = 0;
  Eigen::Index image_rank = 0;
};

struct PerturbationBound {
  double bound = 0.0;         // ||S2||_2 / lambda_gamma(S1)
  double gap_measured = 0.0;  // || P_image - U1 U1' ||_2
  double s2_norm = 0.0;
  double lambda_gamma = 0.0;
};

// Directed gap between the spans of two orthonormal bases.
struct GapResult {
  double gap = 1.0;
  bool dimensions_match = false;
};

// Stack the depth-s input and output Hankels of a trajectory; scaling by
// 1/sqrt(N) is applied when normalize is set. Data shorter than s rows is
// rejected; a data matrix narrower than its row count is allowed but flagged.
HankelDataMatrix build_data_matrix(const Trajectory& traj, int s, bool normalize);

// Full SVD of T split after the gamma leading directions. The completeness
// identity U1 U1' + U2 U2' = I is certified on every call.
SubspaceDecomposition svd_split(const HankelDataMatrix& data, Eigen::Index gamma);

// P = U U' for an orthonormal U (checked).
Projector projector_from_basis(const Eigen::MatrixXd& basis);

// delta = ||(I - U U') V||_2. For equal dimensions this is the symmetric
// subspace gap in [0, 1]; otherwise the directed value is returned with the
// mismatch flagged.
GapResult gap_metric(const Eigen::MatrixXd& u_basis, const Eigen::MatrixXd& v_basis);

// Compare the span of the data matrix against the model image: subspace gap
// between orthonormalized bases plus least-squares membership residuals of
// freshly simulated windows. Reports, never throws on poor data.
FundamentalLemmaCheck fundamental_lemma_check(const HankelDataMatrix& data,
                                              const StateSpaceModel& model,
                                              const Eigen::MatrixXd& F, double rel_tol = 1e-10);

// Model-based perturbation analysis of the SVD split: builds the signal and
// perturbation parts of the data Gram matrix from latent Hankels of depth
// s+n, returns the spectral bound, and measures the realized projector gap.
PerturbationBound davis_kahan_oracle_bound(const StateSpaceModel& model,
                                           const Eigen::MatrixXd& F, const Eigen::MatrixXd& L,
                                           const HankelMatrix& latent_v,
                                           const HankelMatrix& latent_r);

// sigma_{gamma+1}^2 / sigma_gamma^2: data-only surrogate for the projector
// perturbation level.
double empirical_bound(const std::vector<double>& sigma, Eigen::Index gamma);

// Spectral-gap scan for the split rank: the largest one-based index i in
// [sp, sp+sm-1] with sigma_i / sigma_{i+1} above `factor`; empty when the
// spectrum shows no such gap.
std::optional<Eigen::Index> select_gamma(const std::vector<double>& sigma, int s,
                                         Eigen::Index p, Eigen::Index m, double factor = 10.0);

}  // namespace fsfd
