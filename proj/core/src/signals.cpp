#include "fsfd/signals.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <string>

#include "fsfd/errors.hpp"

namespace fsfd {

SignalSequence::SignalSequence(Eigen::MatrixXd samples, long start_index)
    : samples_(std::move(samples)), start_index_(start_index) {
  if (samples_.rows() == 0) throw SizeError("SignalSequence: channel dimension is zero");
  if (samples_.cols() == 0) throw SizeError("SignalSequence: sequence is empty");
}

Eigen::VectorXd SignalSequence::at(long k) const {
  const long lo = start_index_ + 1;
  const long hi = start_index_ + static_cast<long>(length());
  if (k < lo || k > hi) {
    throw RangeError("SignalSequence::at: index " + std::to_string(k) + " outside [" +
                     std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return samples_.col(k - lo);
}

StackedWindow stack_window(const SignalSequence& seq, int depth, long anchor) {
  if (depth < 1) throw ParameterError("stack_window: depth must be at least 1");
  const long n = static_cast<long>(seq.length());
  if (depth > n) throw SizeError("stack_window: depth exceeds sequence length");
  const long k0 = seq.start_index();
  if (anchor < k0 || anchor > k0 + n - depth) {
    throw RangeError("stack_window: anchor " + std::to_string(anchor) + " outside [" +
                     std::to_string(k0) + ", " + std::to_string(k0 + n - depth) + "]");
  }
  const Eigen::Index q = seq.dim();
  StackedWindow w;
  w.anchor = anchor;
  w.depth = depth;
  w.value.resize(static_cast<Eigen::Index>(depth) * q);
  const Eigen::Index col0 = anchor - k0;
  for (int i = 0; i < depth; ++i) {
    w.value.segment(static_cast<Eigen::Index>(i) * q, q) = seq.samples().col(col0 + i);
  }
  return w;
}

HankelMatrix build_hankel(const SignalSequence& seq, int depth) {
  if (depth < 1) throw ParameterError("build_hankel: depth must be at least 1");
  const Eigen::Index n = seq.length();
  if (static_cast<Eigen::Index>(depth) > n) {
    throw SizeError("build_hankel: depth " + std::to_string(depth) +
                    " exceeds sequence length " + std::to_string(n));
  }
  const Eigen::Index q = seq.dim();
  const Eigen::Index cols = n - depth + 1;
  HankelMatrix h;
  h.depth = depth;
  h.signal_dim = q;
  h.first_anchor = seq.start_index();
  h.matrix.resize(static_cast<Eigen::Index>(depth) * q, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (int i = 0; i < depth; ++i) {
      h.matrix.block(static_cast<Eigen::Index>(i) * q, j, q, 1) = seq.samples().col(j + i);
    }
  }
  return h;
}

Eigen::MatrixXd realize_toeplitz(const BlockToeplitzSpec& spec) {
  if (!spec.block_fn) throw ParameterError("realize_toeplitz: block_fn is empty");
  if (spec.rows_blocks < 1 || spec.cols_blocks < 1) {
    throw SizeError("realize_toeplitz: block grid must be at least 1 by 1");
  }
  if (spec.block_rows < 1 || spec.block_cols < 1) {
    throw SizeError("realize_toeplitz: block shape must be at least 1 by 1");
  }
  Eigen::MatrixXd t(spec.block_rows * spec.rows_blocks, spec.block_cols * spec.cols_blocks);
  for (int i = 1; i <= spec.rows_blocks; ++i) {
    for (int j = 1; j <= spec.cols_blocks; ++j) {
      Eigen::MatrixXd blk = spec.block_fn(spec.offset_base + i - j);
      if (blk.rows() != spec.block_rows || blk.cols() != spec.block_cols) {
        throw ShapeError("realize_toeplitz: block at offset " +
                         std::to_string(spec.offset_base + i - j) +
                         " has inconsistent shape");
      }
      t.block(static_cast<Eigen::Index>(i - 1) * spec.block_rows,
              static_cast<Eigen::Index>(j - 1) * spec.block_cols, spec.block_rows,
              spec.block_cols) = blk;
    }
  }
  return t;
}

Eigen::Index numerical_rank(const Eigen::MatrixXd& a, double rel_tol) {
  if (a.rows() == 0 || a.cols() == 0) throw SizeError("numerical_rank: empty matrix");
  if (rel_tol <= 0.0) throw ParameterError("numerical_rank: rel_tol must be positive");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  if (sv(0) == 0.0) return 0;
  const double thresh = rel_tol * sv(0) * static_cast<double>(std::max(a.rows(), a.cols()));
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > thresh) ++rank;
  }
  return rank;
}

bool persistence_order(const SignalSequence& u, int order, double rel_tol) {
  if (order < 1) throw ParameterError("persistence_order: order must be at least 1");
  if (static_cast<Eigen::Index>(order) > u.length()) {
    throw SizeError("persistence_order: order exceeds sequence length");
  }
  const HankelMatrix h = build_hankel(u, order);
  return numerical_rank(h.matrix, rel_tol) ==
         static_cast<Eigen::Index>(order) * u.dim();
}

}  // namespace fsfd
