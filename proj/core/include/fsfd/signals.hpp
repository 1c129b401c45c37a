#pragma once

#include <Eigen/Core>
#include <functional>

namespace fsfd {

// Finite multichannel signal phi(k0+1), ..., phi(k0+N), stored densely with an
// explicit anchor so window arithmetic can mirror the usual one-based
// time-shift conventions without copying.
class SignalSequence {
 public:
  // samples: one column per time step (dim q by length N).
  SignalSequence(Eigen::MatrixXd samples, long start_index);

  Eigen::Index dim() const { return samples_.rows(); }
  Eigen::Index length() const { return samples_.cols(); }
  long start_index() const { return start_index_; }

  // Sample phi(k); valid for start_index()+1 <= k <= start_index()+length().
  Eigen::VectorXd at(long k) const;

  const Eigen::MatrixXd& samples() const { return samples_; }

 private:
  Eigen::MatrixXd samples_;
  long start_index_;
};

// Column stack phi_s(k) = [phi(k+1); ...; phi(k+s)].
struct StackedWindow {
  long anchor = 0;
  int depth = 0;
  Eigen::VectorXd value;
};

// Depth-s block Hankel matrix of a signal; column j (zero-based) is the
// window anchored at first_anchor + j.
struct HankelMatrix {
  Eigen::MatrixXd matrix;
  int depth = 0;
  Eigen::Index signal_dim = 0;
  long first_anchor = 0;

  Eigen::Index num_windows() const { return matrix.cols(); }
};

// Lazy description of a block Toeplitz matrix: block (i, j) of the realized
// matrix (one-based block indices) is block_fn(offset_base + i - j).
struct BlockToeplitzSpec {
  std::function<Eigen::MatrixXd(long)> block_fn;
  int rows_blocks = 0;
  int cols_blocks = 0;
  long offset_base = 0;
  Eigen::Index block_rows = 0;
  Eigen::Index block_cols = 0;
};

// Window stack phi_s(k). Requires 1 <= s <= N and
// start_index <= k <= start_index + N - s.
StackedWindow stack_window(const SignalSequence& seq, int depth, long anchor);

// All depth-s windows side by side: sq by (N - s + 1), first anchor k0.
HankelMatrix build_hankel(const SignalSequence& seq, int depth);

// Dense realization of a block Toeplitz description.
Eigen::MatrixXd realize_toeplitz(const BlockToeplitzSpec& spec);

// Count of singular values above rel_tol * sigma_max * max(rows, cols).
// Zero matrices have rank 0; empty matrices are rejected.
Eigen::Index numerical_rank(const Eigen::MatrixXd& a, double rel_tol = 1e-10);

// True when the depth-`order` Hankel matrix of u has full row rank order*q,
// the standard excitation-richness test for inputs.
bool persistence_order(const SignalSequence& u, int order, double rel_tol = 1e-10);

}  // namespace fsfd
