#pragma once

// Sequence kernels shared by the denoiser and its gradient code: depthwise
// causal convolution, instance normalization and the selective state-space
// scan. Sequences are L x d matrices, one token per row.

#include "umsd/common.hpp"

#include <cmath>
#include <vector>

namespace umsd {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

inline constexpr double kInstanceNormEps = 1e-5;

enum class ScanDirection { kForward, kBackward };

/// y[k, c] = sum_j kernel[j, c] * x[k - j, c], zero for k - j < 0. Row j of
/// the kernel is the tap at lag j, so a w-tap kernel sees x[k-w+1 .. k].
template <typename Scalar>
MatrixX<Scalar> causal_conv(const MatrixX<Scalar>& x, const MatrixX<Scalar>& kernel) {
  if (kernel.rows() < 1) throw DimensionError("causal_conv needs at least one tap");
  if (kernel.cols() != x.cols()) throw DimensionError("causal_conv channel mismatch");
  MatrixX<Scalar> y = MatrixX<Scalar>::Zero(x.rows(), x.cols());
  for (Index j = 0; j < kernel.rows(); ++j) {
    const Index n = x.rows() - j;
    if (n <= 0) break;
    y.bottomRows(n).array() +=
        x.topRows(n).array().rowwise() * kernel.row(j).array();
  }
  return y;
}

/// Per-channel normalization over time; population variance, the epsilon
/// enters as sqrt(var + eps^2) so well-spread channels are exactly unit std
/// and constant channels map to zero.
template <typename Scalar>
MatrixX<Scalar> instance_norm(const MatrixX<Scalar>& x,
                              Scalar eps = Scalar(kInstanceNormEps)) {
  if (x.rows() < 2)
    throw DegenerateError("instance_norm needs at least two tokens");
  const RowVectorX<Scalar> mean = x.colwise().mean();
  MatrixX<Scalar> centered = x.rowwise() - mean;
  const RowVectorX<Scalar> var =
      centered.array().square().colwise().sum() / Scalar(x.rows());
  const RowVectorX<Scalar> inv = (var.array() + eps * eps).rsqrt();
  return centered.array().rowwise() * inv.array();
}

/// Affine instance norm: IN(x) * scale + shift, scale and shift 1 x d.
template <typename Scalar>
MatrixX<Scalar> instance_norm(const MatrixX<Scalar>& x, const RowVectorX<Scalar>& scale,
                              const RowVectorX<Scalar>& shift) {
  MatrixX<Scalar> y = instance_norm<Scalar>(x);
  y.array().rowwise() *= scale.array();
  y.rowwise() += shift;
  return y;
}

/// Per-token quantities of the selective recurrence.
///   h_k = exp(delta_k * A) . h_{k-1} + delta_k * B_k * u_k   (per channel)
///   y_k = C_k . h_k + D * u_k
template <typename Scalar>
struct SelectiveInputs {
  MatrixX<Scalar> delta;  // L x d, positive
  MatrixX<Scalar> B;      // L x S
  MatrixX<Scalar> C;      // L x S
  MatrixX<Scalar> A;      // d x S, negative
  RowVectorX<Scalar> D;   // 1 x d
};

template <typename Scalar>
using StateArray = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Hidden states h_1..h_L (each d x S) of the forward recurrence, computed
/// with a blocked associative scan: each block is scanned from a zero state
/// while tracking the running decay product, then block carries are chained
/// and folded back in. The composition (a1, b1) * (a2, b2) = (a1 a2,
/// a2 b1 + b2) is associative, so blocks could be scanned independently.
template <typename Scalar>
std::vector<StateArray<Scalar>> selective_states(const MatrixX<Scalar>& u,
                                                 const SelectiveInputs<Scalar>& in,
                                                 Index block = 8) {
  const Index L = u.rows(), d = u.cols(), S = in.A.cols();
  if (L < 1) throw DimensionError("ssm scan needs a non-empty sequence");
  if (in.delta.rows() != L || in.delta.cols() != d || in.B.rows() != L ||
      in.C.rows() != L || in.B.cols() != S || in.C.cols() != S ||
      in.A.rows() != d || in.D.cols() != d)
    throw DimensionError("ssm scan input shapes disagree");

  std::vector<StateArray<Scalar>> h(L), decay(L);
  for (Index k = 0; k < L; ++k) {
    decay[k] = (in.A.array().colwise() * in.delta.row(k).transpose().array()).exp();
    const auto drive = (in.delta.row(k).array() * u.row(k).array()).transpose();
    h[k] = drive.matrix() * in.B.row(k);  // d x S outer product
  }
  // Pass 1: local scan within each block, decay[k] becomes the block prefix.
  for (Index start = 0; start < L; start += block) {
    const Index stop = std::min(L, start + block);
    for (Index k = start + 1; k < stop; ++k) {
      h[k] += decay[k] * h[k - 1];
      decay[k] *= decay[k - 1];
    }
  }
  // Pass 2 + 3: chain carries across blocks and fold them in.
  StateArray<Scalar> carry = StateArray<Scalar>::Zero(d, S);
  for (Index start = 0; start < L; start += block) {
    const Index stop = std::min(L, start + block);
    if (start > 0)
      for (Index k = start; k < stop; ++k) h[k] += decay[k] * carry;
    carry = h[stop - 1];
  }
  return h;
}

template <typename Scalar>
MatrixX<Scalar> selective_readout(const MatrixX<Scalar>& u,
                                  const SelectiveInputs<Scalar>& in,
                                  const std::vector<StateArray<Scalar>>& h) {
  MatrixX<Scalar> y(u.rows(), u.cols());
  for (Index k = 0; k < u.rows(); ++k)
    y.row(k) = (h[k].matrix() * in.C.row(k).transpose()).transpose() +
               in.D.cwiseProduct(u.row(k));
  return y;
}

template <typename Scalar>
MatrixX<Scalar> reverse_rows(const MatrixX<Scalar>& x) {
  return x.colwise().reverse();
}

/// Selective scan in either direction. Backward runs the forward recurrence
/// on the time-reversed inputs and reverses the result.
template <typename Scalar>
MatrixX<Scalar> selective_scan(const MatrixX<Scalar>& u, const SelectiveInputs<Scalar>& in,
                               ScanDirection dir = ScanDirection::kForward) {
  if (dir == ScanDirection::kForward)
    return selective_readout(u, in, selective_states(u, in));
  SelectiveInputs<Scalar> rev{reverse_rows(in.delta), reverse_rows(in.B),
                              reverse_rows(in.C), in.A, in.D};
  const MatrixX<Scalar> ur = reverse_rows(u);
  return reverse_rows<Scalar>(selective_readout(ur, rev, selective_states(ur, rev)));
}

template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::exp;
  using std::log1p;
  return x > Scalar(20) ? x : log1p(exp(x));
}

}  // namespace umsd
