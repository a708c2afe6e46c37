// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "qoeflow/errors.hpp"

namespace qoeflow {

/// Real tridiagonal matrix. Off-diagonal products super[i]*sub[i] must be
/// nonnegative: mixed-sign pairs break the diagonal-similarity symmetrization
/// and are rejected here (weighted drift matrices go through
/// decompose_weighted instead, which keeps its rate factor sign-clean).
struct TridiagonalMatrix {
  Eigen::VectorXd diag;   // length N
  Eigen::VectorXd super;  // length N-1
  Eigen::VectorXd sub;    // length N-1

  TridiagonalMatrix(Eigen::VectorXd d, Eigen::VectorXd y, Eigen::VectorXd z)
      : diag(std::move(d)), super(std::move(y)), sub(std::move(z)) {
    const int n = size();
    if (super.size() != n - 1 || sub.size() != n - 1)
      throw ConfigError("tridiagonal: off-diagonal length must be N-1");
    for (int i = 0; i + 1 < n; ++i) {
      if (super[i] * sub[i] < 0.0)
        throw NumericError(
            "tridiagonal: mixed-sign off-diagonal pair at index " +
            std::to_string(i));
    }
  }

  int size() const { return static_cast<int>(diag.size()); }

  Eigen::MatrixXd dense() const {
    const int n = size();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      m(i, i) = diag[i];
      if (i + 1 < n) {
        m(i, i + 1) = super[i];
        m(i + 1, i) = sub[i];
      }
    }
    return m;
  }
};

/// Eigendecomposition M = D diag(eigenvalues) D^-1 with a real spectrum,
/// eigenvalues sorted in decreasing order. Keeps the original matrix so
/// exponential actions can fall back to scaling-and-squaring when the
/// eigenvector basis is ill-conditioned.
struct SpectralDecomp {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd basis;          // D
  Eigen::MatrixXd inverse_basis;  // D^-1
  Eigen::MatrixXd matrix;         // M
  double condition = 0.0;         // ||D||_1 * ||D^-1||_1
  double residual = 0.0;          // ||D L D^-1 - M||_max

  int size() const { return static_cast<int>(eigenvalues.size()); }
};

struct SignCounts {
  int positive = 0;
  int zero = 0;
  int negative = 0;
};

namespace detail {

/// QL iteration with implicit shifts for a symmetric tridiagonal matrix.
/// On entry d holds the diagonal and e the sub-diagonal (e[0] unused output
/// convention: e has length n, couplings in e[0..n-2]). On successful exit
/// d holds eigenvalues and the columns of z the orthonormal eigenvectors.
inline void tql2(Eigen::VectorXd& d, Eigen::VectorXd& e, Eigen::MatrixXd& z) {
  const int n = static_cast<int>(d.size());
  if (n == 1) return;
  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
        if (std::abs(e[m]) <= std::numeric_limits<double>::epsilon() * dd)
          break;
      }
      if (m != l) {
        if (iter++ == 50)
          throw NumericError("tridiagonal QL iteration did not converge");
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        bool underflow = false;
        for (int i = m - 1; i >= l; --i) {
          double f = s * e[i];
          const double b = c * e[i];
          r = std::hypot(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            underflow = true;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
          for (int k = 0; k < n; ++k) {
            f = z(k, i + 1);
            z(k, i + 1) = s * z(k, i) + c * f;
            z(k, i) = c * z(k, i) - s * f;
          }
        }
        if (underflow) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }
}

struct BlockDecomp {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd basis;
  Eigen::MatrixXd inverse_basis;
};

/// Diagonal similarity scaling that makes a sign-consistent tridiagonal
/// block symmetric: s[i+1]/s[i] = sqrt(super[i]/sub[i]).
inline Eigen::VectorXd symmetrizing_scale(const TridiagonalMatrix& t, int lo,
                                          int len) {
  Eigen::VectorXd s(len);
  s[0] = 1.0;
  for (int i = 0; i + 1 < len; ++i) {
    s[i + 1] = s[i] * std::sqrt(t.super[lo + i] / t.sub[lo + i]);
    if (!std::isfinite(s[i + 1]) || s[i + 1] == 0.0)
      throw NumericError("tridiagonal symmetrization scale overflow");
  }
  return s;
}

inline BlockDecomp decompose_symmetrizable(const TridiagonalMatrix& t, int lo,
                                           int len) {
  Eigen::VectorXd s = symmetrizing_scale(t, lo, len);
  Eigen::VectorXd d = t.diag.segment(lo, len);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(len);
  for (int i = 0; i + 1 < len; ++i)
    e[i] = std::copysign(std::sqrt(t.super[lo + i] * t.sub[lo + i]),
                         t.super[lo + i]);
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(len, len);
  tql2(d, e, w);
  BlockDecomp out;
  out.eigenvalues = d;
  out.basis = s.cwiseInverse().asDiagonal() * w;
  out.inverse_basis = w.transpose() * s.asDiagonal();
  return out;
}

inline BlockDecomp decompose_dense(const Eigen::MatrixXd& m) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success)
    throw NumericError("dense eigensolver failed to converge");
  const Eigen::VectorXcd lambda = es.eigenvalues();
  const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
  const double imag = lambda.imag().cwiseAbs().maxCoeff();
  if (imag > 1e-8 * scale) {
    std::ostringstream msg;
    msg << "complex eigenvalues beyond tolerance (max |imag| = " << imag
        << "); real spectrum assumption violated";
    throw NumericError(msg.str());
  }
  BlockDecomp out;
  out.eigenvalues = lambda.real();
  out.basis = es.eigenvectors().real();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(out.basis);
  if (!lu.isInvertible())
    throw NumericError("eigenvector matrix is singular (defective spectrum)");
  out.inverse_basis = lu.inverse();
  return out;
}

inline void sort_descending(BlockDecomp& b) {
  const int n = static_cast<int>(b.eigenvalues.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int c) { return b.eigenvalues[a] > b.eigenvalues[c]; });
  Eigen::VectorXd lam(n);
  Eigen::MatrixXd basis(n, n), inv(n, n);
  for (int j = 0; j < n; ++j) {
    lam[j] = b.eigenvalues[order[j]];
    basis.col(j) = b.basis.col(order[j]);
    inv.row(j) = b.inverse_basis.row(order[j]);
  }
  b.eigenvalues = std::move(lam);
  b.basis = std::move(basis);
  b.inverse_basis = std::move(inv);
}

inline SpectralDecomp finish(BlockDecomp b, Eigen::MatrixXd m) {
  sort_descending(b);
  SpectralDecomp out;
  out.eigenvalues = std::move(b.eigenvalues);
  out.basis = std::move(b.basis);
  out.inverse_basis = std::move(b.inverse_basis);
  out.matrix = std::move(m);
  const Eigen::MatrixXd recon =
      out.basis * out.eigenvalues.asDiagonal() * out.inverse_basis;
  out.residual = (recon - out.matrix).cwiseAbs().maxCoeff();
  const double norm = out.matrix.cwiseAbs().maxCoeff();
  if (out.residual > 1e-8 * norm + 1e-300) {
    std::ostringstream msg;
    msg << "spectral reconstruction residual " << out.residual
        << " exceeds 1e-8 * " << norm;
    throw NumericError(msg.str());
  }
  out.condition = out.basis.cwiseAbs().colwise().sum().maxCoeff() *
                  out.inverse_basis.cwiseAbs().colwise().sum().maxCoeff();
  return out;
}

}  // namespace detail

/// Eigendecomposition of a tridiagonal matrix. Blocks with strictly
/// sign-consistent couplings are reduced to a symmetric tridiagonal by a
/// diagonal similarity and solved with QL iteration; blocks left reducible
/// by one-sided structural zeros go through a dense solver with the real
/// spectrum asserted.
inline SpectralDecomp decompose(const TridiagonalMatrix& t) {
  const int n = t.size();
  detail::BlockDecomp full;
  full.eigenvalues.resize(n);
  full.basis = Eigen::MatrixXd::Zero(n, n);
  full.inverse_basis = Eigen::MatrixXd::Zero(n, n);
  int lo = 0;
  while (lo < n) {
    int hi = lo;  // block covers [lo, hi]
    while (hi + 1 < n && !(t.super[hi] == 0.0 && t.sub[hi] == 0.0)) ++hi;
    const int len = hi - lo + 1;
    bool clean = true;
    for (int i = lo; i < hi; ++i)
      if (t.super[i] == 0.0 || t.sub[i] == 0.0) clean = false;
    detail::BlockDecomp b;
    if (len == 1) {
      b.eigenvalues = t.diag.segment(lo, 1);
      b.basis = Eigen::MatrixXd::Ones(1, 1);
      b.inverse_basis = b.basis;
    } else if (clean) {
      b = detail::decompose_symmetrizable(t, lo, len);
    } else {
      b = detail::decompose_dense(t.dense().block(lo, lo, len, len));
    }
    full.eigenvalues.segment(lo, len) = b.eigenvalues;
    full.basis.block(lo, lo, len, len) = b.basis;
    full.inverse_basis.block(lo, lo, len, len) = b.inverse_basis;
    lo = hi + 1;
  }
  return detail::finish(std::move(full), t.dense());
}

/// Eigendecomposition of M = diag(1/weights) * rates, where `rates` is a
/// sign-consistent tridiagonal whose symmetrized form is positive definite
/// and `weights` has no zero entry. Reduction to a symmetric eigenproblem
/// through the Cholesky factor keeps the spectrum real and, by Sylvester
/// inertia, gives M exactly as many positive eigenvalues as `weights` has
/// positive entries.
inline SpectralDecomp decompose_weighted(const TridiagonalMatrix& rates,
                                         const Eigen::VectorXd& weights) {
  const int n = rates.size();
  if (weights.size() != n)
    throw ConfigError("decompose_weighted: weight length mismatch");
  for (int i = 0; i < n; ++i)
    if (weights[i] == 0.0)
      throw ConfigError("decompose_weighted: zero weight at index " +
                        std::to_string(i));
  const Eigen::MatrixXd m =
      weights.cwiseInverse().asDiagonal() * rates.dense();
  bool clean = true;
  for (int i = 0; i + 1 < n; ++i)
    if (rates.super[i] == 0.0 || rates.sub[i] == 0.0) clean = false;
  if (!clean || n == 1)
    return detail::finish(detail::decompose_dense(m), m);

  Eigen::VectorXd s = detail::symmetrizing_scale(rates, 0, n);
  Eigen::VectorXd d = rates.diag;
  Eigen::VectorXd e(n - 1);
  for (int i = 0; i + 1 < n; ++i)
    e[i] = std::copysign(std::sqrt(rates.super[i] * rates.sub[i]),
                         rates.super[i]);
  // Bidiagonal Cholesky of the symmetrized rate matrix.
  Eigen::VectorXd ell(n), off(n - 1);
  double pivot = d[0];
  for (int i = 0; i < n; ++i) {
    if (!(pivot > 0.0))
      return detail::finish(detail::decompose_dense(m), m);
    ell[i] = std::sqrt(pivot);
    if (i + 1 < n) {
      off[i] = e[i] / ell[i];
      pivot = d[i + 1] - off[i] * off[i];
    }
  }
  Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    chol(i, i) = ell[i];
    if (i + 1 < n) chol(i + 1, i) = off[i];
  }
  const auto lower = chol.triangularView<Eigen::Lower>();
  // G = L^-1 diag(weights) L^-T is congruent to diag(weights).
  Eigen::MatrixXd g = lower.solve(Eigen::MatrixXd(weights.asDiagonal()));
  g = lower.solve(g.transpose()).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> saes(g);
  if (saes.info() != Eigen::Success)
    throw NumericError("symmetric eigensolver failed on weighted pencil");
  detail::BlockDecomp b;
  b.eigenvalues = saes.eigenvalues().cwiseInverse();
  for (int j = 0; j < n; ++j)
    if (std::abs(saes.eigenvalues()[j]) < 1e-300)
      throw NumericError("weighted pencil produced an infinite eigenvalue");
  const Eigen::MatrixXd x =
      chol.transpose().triangularView<Eigen::Upper>().solve(
          saes.eigenvectors());
  b.basis = s.cwiseInverse().asDiagonal() * x;
  b.inverse_basis =
      saes.eigenvectors().transpose() * chol.transpose() * s.asDiagonal();
  return detail::finish(std::move(b), m);
}

/// General real-matrix decomposition (dense solver, realness asserted).
inline SpectralDecomp decompose_general(const Eigen::MatrixXd& m) {
  return detail::finish(detail::decompose_dense(m), m);
}

/// Matrix exponential by scaling and squaring with a Taylor core.
inline Eigen::MatrixXd exp_dense(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  Eigen::MatrixXd b = m;
  if (norm > 0.5) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    b /= std::pow(2.0, squarings);
  }
  Eigen::MatrixXd result = Eigen::MatrixXd::Identity(n, n) + b;
  Eigen::MatrixXd term = b;
  for (int k = 2; k <= 40; ++k) {
    term = (term * b) / static_cast<double>(k);
    result += term;
    if (term.cwiseAbs().maxCoeff() <
        std::numeric_limits<double>::epsilon() *
            result.cwiseAbs().maxCoeff())
      break;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

/// Applies D exp(scale * Lambda) D^-1 to v. Routes through dense scaling and
/// squaring when the eigenvector basis is ill-conditioned; the spectral form
/// and exp(M * scale) v agree wherever both are defined.
inline Eigen::VectorXd exp_action(const SpectralDecomp& decomp, double scale,
                                  const Eigen::VectorXd& v) {
  if (!std::isfinite(scale)) throw NumericError("exp_action: scale not finite");
  if (scale == 0.0) return v;
  if (decomp.condition > 1e8)
    return exp_dense(decomp.matrix * scale) * v;
  for (int i = 0; i < decomp.size(); ++i) {
    const double x = decomp.eigenvalues[i] * scale;
    if (x > 709.0) {
      std::ostringstream msg;
      msg << "exp_action overflow: eigenvalue * scale = " << x;
      throw NumericError(msg.str());
    }
  }
  Eigen::VectorXd w = decomp.inverse_basis * v;
  for (int i = 0; i < decomp.size(); ++i)
    w[i] *= std::exp(decomp.eigenvalues[i] * scale);
  return decomp.basis * w;
}

/// Same action on every column of a matrix.
inline Eigen::MatrixXd exp_action(const SpectralDecomp& decomp, double scale,
                                  const Eigen::MatrixXd& v) {
  Eigen::MatrixXd out(v.rows(), v.cols());
  for (int j = 0; j < v.cols(); ++j)
    out.col(j) = exp_action(decomp, scale, Eigen::VectorXd(v.col(j)));
  return out;
}

/// Partitions the spectrum by sign; |lambda| <= zero_tol counts as zero.
/// A negative zero_tol selects the default 1e-9 * max|lambda|.
inline SignCounts sign_counts(const SpectralDecomp& decomp,
                              double zero_tol = -1.0) {
  if (zero_tol < 0) {
    const double scale =
        decomp.size() ? decomp.eigenvalues.cwiseAbs().maxCoeff() : 0.0;
    zero_tol = 1e-9 * scale;
  }
  SignCounts counts;
  for (int i = 0; i < decomp.size(); ++i) {
    const double lam = decomp.eigenvalues[i];
    if (std::abs(lam) <= zero_tol)
      ++counts.zero;
    else if (lam > 0)
      ++counts.positive;
    else
      ++counts.negative;
  }
  return counts;
}

}  // namespace qoeflow
