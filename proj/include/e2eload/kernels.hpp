#pragma once

// Dense row-wise kernels shared by the autograd ops and the streaming engines.
//
// Every kernel computes each output row from the corresponding input row(s)
// with a fixed accumulation order that does not depend on how many rows are
// processed together. This is what makes computing one chunk's tokens in
// isolation bit-identical to computing them inside a larger window.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

#include "e2eload/errors.hpp"

namespace e2eload {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = RowMatrix<double>;
using Vector = RowVector<double>;

/// Row-major admissibility pattern: nonzero entries may be attended.
using AdmissibilityMatrix = RowMatrix<std::uint8_t>;

/// Extents of a (time, height, width) token grid; rows are t-major, then h, then w.
struct GridExtents {
  Index t = 1;
  Index h = 1;
  Index w = 1;

  Index count() const { return t * h * w; }
  friend bool operator==(const GridExtents&, const GridExtents&) = default;
};

struct Strides {
  Index t = 1;
  Index h = 1;
  Index w = 1;

  Index volume() const { return t * h * w; }
  bool is_identity() const { return t == 1 && h == 1 && w == 1; }
  friend bool operator==(const Strides&, const Strides&) = default;
};

namespace kernels {

/// C = A * B, accumulating over the inner dimension in ascending order per row.
template <typename DerivedA, typename DerivedB>
RowMatrix<typename DerivedA::Scalar> product(const Eigen::MatrixBase<DerivedA>& a,
                                             const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const RowMatrix<Scalar> bm = b;
  RowMatrix<Scalar> c = RowMatrix<Scalar>::Zero(a.rows(), bm.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index k = 0; k < a.cols(); ++k) {
      c.row(i).noalias() += a(i, k) * bm.row(k);
    }
  }
  return c;
}

/// C = A * B^T with the same per-row ordering guarantee as product().
template <typename DerivedA, typename DerivedB>
RowMatrix<typename DerivedA::Scalar> product_nt(const Eigen::MatrixBase<DerivedA>& a,
                                                const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const RowMatrix<Scalar> bt = b.transpose();
  return product(a, bt);
}

/// Row softmax restricted to admissible entries; inadmissible entries are exactly 0.
/// Throws ContractError when a row has no admissible entry.
template <typename Derived>
RowMatrix<typename Derived::Scalar> masked_softmax_rows(const Eigen::MatrixBase<Derived>& x,
                                                        const AdmissibilityMatrix* mask) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> y = RowMatrix<Scalar>::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    Scalar row_max = -std::numeric_limits<Scalar>::infinity();
    bool any = false;
    for (Index j = 0; j < x.cols(); ++j) {
      if (mask && !(*mask)(i, j)) continue;
      any = true;
      if (x(i, j) > row_max) row_max = x(i, j);
    }
    if (!any) {
      throw ContractError("masked softmax: row " + std::to_string(i) +
                          " has no admissible key");
    }
    Scalar total = 0;
    for (Index j = 0; j < x.cols(); ++j) {
      if (mask && !(*mask)(i, j)) continue;
      const Scalar e = std::exp(x(i, j) - row_max);
      y(i, j) = e;
      total += e;
    }
    for (Index j = 0; j < x.cols(); ++j) {
      if (mask && !(*mask)(i, j)) continue;
      y(i, j) /= total;
    }
  }
  return y;
}

template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  return masked_softmax_rows(x, nullptr);
}

/// P * V skipping inadmissible columns, so masked keys never touch the sum.
template <typename DerivedP, typename DerivedV>
RowMatrix<typename DerivedP::Scalar> weighted_sum(const Eigen::MatrixBase<DerivedP>& p,
                                                  const Eigen::MatrixBase<DerivedV>& v,
                                                  const AdmissibilityMatrix* mask) {
  using Scalar = typename DerivedP::Scalar;
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(p.rows(), v.cols());
  for (Index i = 0; i < p.rows(); ++i) {
    for (Index j = 0; j < p.cols(); ++j) {
      if (mask && !(*mask)(i, j)) continue;
      out.row(i).noalias() += p(i, j) * v.row(j);
    }
  }
  return out;
}

/// Per-row statistics kept by layer_norm for the backward pass.
template <typename Scalar>
struct LayerNormState {
  RowMatrix<Scalar> normalized;  // (x - mean) * inv_std
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std;
};

template <typename Derived, typename DerivedG, typename DerivedB>
RowMatrix<typename Derived::Scalar> layer_norm(const Eigen::MatrixBase<Derived>& x,
                                               const Eigen::MatrixBase<DerivedG>& gain,
                                               const Eigen::MatrixBase<DerivedB>& bias,
                                               typename Derived::Scalar eps,
                                               LayerNormState<typename Derived::Scalar>* state) {
  using Scalar = typename Derived::Scalar;
  const Index n = x.rows();
  const Index d = x.cols();
  RowMatrix<Scalar> normalized(n, d);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(n);
  for (Index i = 0; i < n; ++i) {
    Scalar mean = 0;
    for (Index j = 0; j < d; ++j) mean += x(i, j);
    mean /= static_cast<Scalar>(d);
    Scalar var = 0;
    for (Index j = 0; j < d; ++j) {
      const Scalar c = x(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<Scalar>(d);
    inv_std(i) = Scalar(1) / std::sqrt(var + eps);
    for (Index j = 0; j < d; ++j) normalized(i, j) = (x(i, j) - mean) * inv_std(i);
  }
  RowMatrix<Scalar> y(n, d);
  for (Index i = 0; i < n; ++i) {
    y.row(i) = normalized.row(i).cwiseProduct(gain) + bias;
  }
  if (state) {
    state->normalized = std::move(normalized);
    state->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
  return cdf + x * pdf;
}

inline void check_strides(const GridExtents& grid, const Strides& s, const char* what) {
  if (s.t < 1 || s.h < 1 || s.w < 1) {
    throw ShapeError(std::string(what) + ": strides must be >= 1");
  }
  if (grid.t % s.t != 0 || grid.h % s.h != 0 || grid.w % s.w != 0) {
    throw ShapeError(std::string(what) + ": stride (" + std::to_string(s.t) + "," +
                     std::to_string(s.h) + "," + std::to_string(s.w) +
                     ") does not divide grid (" + std::to_string(grid.t) + "," +
                     std::to_string(grid.h) + "," + std::to_string(grid.w) + ")");
  }
}

inline GridExtents downsampled(const GridExtents& grid, const Strides& s) {
  return {grid.t / s.t, grid.h / s.h, grid.w / s.w};
}

/// Visits every (output row, input row, offset within the stride block) triple.
/// Offsets enumerate the block in (t, h, w) order.
template <typename Fn>
void for_each_block_tap(const GridExtents& grid, const Strides& s, Fn&& fn) {
  const GridExtents out = downsampled(grid, s);
  for (Index ot = 0; ot < out.t; ++ot)
    for (Index oh = 0; oh < out.h; ++oh)
      for (Index ow = 0; ow < out.w; ++ow) {
        const Index out_row = (ot * out.h + oh) * out.w + ow;
        Index tap = 0;
        for (Index a = 0; a < s.t; ++a)
          for (Index b = 0; b < s.h; ++b)
            for (Index c = 0; c < s.w; ++c, ++tap) {
              const Index in_row =
                  ((ot * s.t + a) * grid.h + (oh * s.h + b)) * grid.w + (ow * s.w + c);
              fn(out_row, in_row, tap);
            }
      }
}

/// Average of each stride-aligned block.
template <typename Derived>
RowMatrix<typename Derived::Scalar> block_pool(const Eigen::MatrixBase<Derived>& x,
                                               const GridExtents& grid, const Strides& s) {
  using Scalar = typename Derived::Scalar;
  check_strides(grid, s, "pool");
  if (x.rows() != grid.count()) throw ShapeError("pool: row count does not match grid");
  const GridExtents out = downsampled(grid, s);
  RowMatrix<Scalar> y = RowMatrix<Scalar>::Zero(out.count(), x.cols());
  for_each_block_tap(grid, s, [&](Index o, Index i, Index) { y.row(o) += x.row(i); });
  y /= static_cast<Scalar>(s.volume());
  return y;
}

/// Depthwise strided convolution: kernel is (stride volume x channels), bias is 1 x channels.
template <typename Derived, typename DerivedK, typename DerivedB>
RowMatrix<typename Derived::Scalar> block_conv(const Eigen::MatrixBase<Derived>& x,
                                               const GridExtents& grid, const Strides& s,
                                               const Eigen::MatrixBase<DerivedK>& kernel,
                                               const Eigen::MatrixBase<DerivedB>& bias) {
  using Scalar = typename Derived::Scalar;
  check_strides(grid, s, "conv");
  if (x.rows() != grid.count()) throw ShapeError("conv: row count does not match grid");
  if (kernel.rows() != s.volume() || kernel.cols() != x.cols() || bias.cols() != x.cols()) {
    throw ShapeError("conv: kernel shape does not match strides/channels");
  }
  const GridExtents out = downsampled(grid, s);
  RowMatrix<Scalar> y(out.count(), x.cols());
  for (Index r = 0; r < y.rows(); ++r) y.row(r) = bias;
  for_each_block_tap(grid, s, [&](Index o, Index i, Index tap) {
    y.row(o) += x.row(i).cwiseProduct(kernel.row(tap));
  });
  return y;
}

}  // namespace kernels
}  // namespace e2eload
