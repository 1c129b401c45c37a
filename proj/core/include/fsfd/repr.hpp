#pragma once

#include <Eigen/Core>

#include "fsfd/ltisim.hpp"

namespace fsfd {

// Finite-sample image representation: every depth-s input/output window of
// the plant equals [M_s; N_s] times a latent window of length s+n.
struct ImageRep {
  Eigen::MatrixXd M_s;  // sp by (s+n)p
  Eigen::MatrixXd N_s;  // sm by (s+n)p
  int s = 0;
  Eigen::MatrixXd F;

  Eigen::MatrixXd stacked() const;
};

// Controller-side image: windows expressed through the residual latent alone.
struct ControllerImageRep {
  Eigen::MatrixXd Y_hat_s;  // sp by (s+n)m
  Eigen::MatrixXd X_hat_s;  // sm by (s+n)m
  int s = 0;
  Eigen::MatrixXd F, L;

  Eigen::MatrixXd stacked() const;
};

// Joint stack over both latents and its zero-gain base, with the wide form
// that keeps the residual block unreduced.
struct PsiStack {
  Eigen::MatrixXd Psi_s;      // s(p+m) by (s+n)(p+m)
  Eigen::MatrixXd Psi_s0;     // same shape, gains (0,0)
  Eigen::MatrixXd Psi_bar_s0; // s(p+m) by (s+n)p + sm
  int s = 0;
};

// Triangular change-of-latent matrices between two gain pairs.
struct ParamMatrices {
  Eigen::MatrixXd V_spn;     // (s+n)p square, unit diagonal
  Eigen::MatrixXd R_spn;     // (s+n)m square, unit diagonal
  Eigen::MatrixXd Rbar_spn;  // (s+n)p by (s+n)m, strictly lower
};

// Left annihilator of the window behavior: K_Gs w = 0 for nominal windows.
struct KernelRep {
  Eigen::MatrixXd K_Gs;  // (sm-n) by s(p+m)
  Eigen::MatrixXd K2;    // (sm-n) by sm, orthonormal rows
  int s = 0;
};

struct RankProfile {
  Eigen::Index rank_igs = 0;       // measured rank of the stacked image
  Eigen::Index beta = 0;           // rank of O_s
  Eigen::Index gamma = 0;          // image dimension sp + beta
  Eigen::Index theta = 0;          // kernel dimension sm - beta
  Eigen::Index dim_residual = 0;   // equals theta
  bool residual_subspace_nonempty = false;
};

// Block assembly per the finite-window expansion with gain F (any F; the
// terms carry A_F = A + BF and C_F = C + DF). Certifies rank sp + n when
// s >= n.
ImageRep image_rep(const StateSpaceModel& model, const Eigen::MatrixXd& F, int s);

// Controller image for the pair (F, L). Deadbeat F uses the closed-form
// blocks; any other gain goes through the exact triangular factorization from
// the zero-gain base.
ControllerImageRep controller_image_rep(const StateSpaceModel& model,
                                        const Eigen::MatrixXd& F, const Eigen::MatrixXd& L,
                                        int s);

// Change-of-latent matrix between feedback gains F1 and F2: block Toeplitz
// with I on the diagonal and (F1-F2) A_{F1}^{k-1} B at offset k.
Eigen::MatrixXd param_V(const StateSpaceModel& model, const Eigen::MatrixXd& F1,
                        const Eigen::MatrixXd& F2, int s);

// Residual-side change matrices between (F1,L1) and (F2,L2):
// R with C A_{L2}^{k-1} (L1-L2) at offset k and unit diagonal, and
// Rbar = Rbar1 + Rbar2 with (F1-F2) A_{F1}^{k-1} L1 and F2 A_{L2}^{k-1} (L1-L2).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> param_R_Rbar(const StateSpaceModel& model,
                                                         const Eigen::MatrixXd& F1,
                                                         const Eigen::MatrixXd& L1,
                                                         const Eigen::MatrixXd& F2,
                                                         const Eigen::MatrixXd& L2, int s);

// All three parameterizers between (F1,L1) and (F2,L2).
ParamMatrices param_matrices(const StateSpaceModel& model, const Eigen::MatrixXd& F1,
                             const Eigen::MatrixXd& L1, const Eigen::MatrixXd& F2,
                             const Eigen::MatrixXd& L2, int s);

// Joint latent stack for (F, L) with its zero-gain base and wide form; all
// three full-row-rank certificates are checked and failure raises
// CertificateError (a construction bug, not a data condition).
PsiStack psi_stack(const StateSpaceModel& model, const Eigen::MatrixXd& F,
                   const Eigen::MatrixXd& L, int s);

// Orthonormal-row annihilator of O_s extended over input/output windows.
// Requires s strictly above the observability index so the kernel has
// dimension sm - n.
KernelRep kernel_rep(const StateSpaceModel& model, int s);

// Measured and certified dimensions of the window image/kernel split.
RankProfile rank_profile(const StateSpaceModel& model, int s);

}  // namespace fsfd
