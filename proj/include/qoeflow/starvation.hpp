// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "qoeflow/errors.hpp"
#include "qoeflow/spectral.hpp"
#include "qoeflow/tagged_chain.hpp"

namespace qoeflow {

/// Rate matrix of the absorbing playback chain: row i is
/// [-nu_i, lambda_i + nu_i + phi_i, -lambda_i]. Strictly diagonally dominant
/// (the absorption rate is the slack), so its symmetrized form is positive
/// definite.
inline TridiagonalMatrix absorbing_rate_matrix(const TaggedChain& chain) {
  const int n = chain.state_count;
  Eigen::VectorXd diag = chain.arrival + chain.departure + chain.absorption;
  Eigen::VectorXd super = -chain.arrival.head(std::max(0, n - 1));
  Eigen::VectorXd sub = -chain.departure.tail(std::max(0, n - 1));
  return TridiagonalMatrix(std::move(diag), std::move(super), std::move(sub));
}

/// Drift-scaled playback matrix M_W = diag(1/c) * absorbing rates, the
/// generator of the starvation ODE system in buffered-video time.
inline SpectralDecomp drift_decomposition(const TaggedChain& chain) {
  return decompose_weighted(absorbing_rate_matrix(chain), chain.drain);
}

struct StarvationVector {
  Eigen::VectorXd w;      // starvation probability per playback-start state
  double q = 0.0;         // buffered seconds at playback start
  double max_clamp = 0.0; // largest [0,1] clamp applied during assembly
};

struct StarvationMatrix {
  Eigen::MatrixXd x;  // (start state, first-starvation state)
  double q = 0.0;
  double max_clamp = 0.0;
};

namespace detail {

inline double spectrum_zero_tol(const SpectralDecomp& d) {
  return 1e-9 * (d.size() ? d.eigenvalues.cwiseAbs().maxCoeff() : 0.0);
}

/// Indices of eigenvalues above the zero tolerance. Eigenvalues at zero are
/// a degenerate spectrum for the playback system and are rejected.
inline std::vector<int> positive_modes(const SpectralDecomp& d) {
  const double tol = spectrum_zero_tol(d);
  std::vector<int> modes;
  for (int m = 0; m < d.size(); ++m) {
    if (std::abs(d.eigenvalues[m]) <= tol)
      throw NumericError("degenerate spectrum: eigenvalue at zero in the "
                         "drift-scaled playback matrix");
    if (d.eigenvalues[m] > 0) modes.push_back(m);
  }
  return modes;
}

/// Completes a boundary vector whose entries are known on deficit states
/// (c_i < 0) and unknown on surplus states (c_i > 0): the unknowns are fixed
/// by zeroing every positive eigenmode, which is what decay at infinity
/// demands. The number of positive eigenvalues must match the number of
/// surplus states (sign structure of the drift).
inline Eigen::VectorXd complete_boundary(const SpectralDecomp& drift,
                                         const Eigen::VectorXd& drain,
                                         const Eigen::VectorXd& known) {
  const int n = drift.size();
  const std::vector<int> pos = positive_modes(drift);
  std::vector<int> surplus;
  for (int i = 0; i < n; ++i)
    if (drain[i] > 0) surplus.push_back(i);
  if (pos.size() != surplus.size()) {
    std::ostringstream msg;
    msg << "drift sign structure violated: " << pos.size()
        << " positive eigenvalues vs " << surplus.size() << " surplus states";
    throw NumericError(msg.str());
  }
  Eigen::VectorXd boundary = known;
  if (pos.empty()) return boundary;
  const int k = static_cast<int>(pos.size());
  Eigen::MatrixXd system(k, k);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c)
      system(r, c) = drift.inverse_basis(pos[r], surplus[c]);
    for (int i = 0; i < n; ++i)
      if (drain[i] < 0) rhs[r] -= drift.inverse_basis(pos[r], i) * known[i];
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  if (!lu.isInvertible())
    throw NumericError("singular boundary system in starvation solve");
  const Eigen::VectorXd unknowns = lu.solve(rhs);
  for (int c = 0; c < k; ++c) boundary[surplus[c]] = unknowns[c];
  return boundary;
}

/// Propagates a completed boundary vector to buffer level q on the
/// nonpositive eigenmodes only. Positive-mode coefficients are zero by
/// construction; zeroing them explicitly keeps exp(lambda q) from
/// overflowing at large q.
inline Eigen::VectorXd propagate(const SpectralDecomp& drift,
                                 const Eigen::VectorXd& boundary, double q) {
  Eigen::VectorXd coeff = drift.inverse_basis * boundary;
  for (int m = 0; m < drift.size(); ++m) {
    if (drift.eigenvalues[m] > 0)
      coeff[m] = 0.0;
    else
      coeff[m] *= std::exp(drift.eigenvalues[m] * q);
  }
  return drift.basis * coeff;
}

inline double clamp_unit(Eigen::Ref<Eigen::VectorXd> v) {
  double worst = 0.0;
  for (int i = 0; i < v.size(); ++i) {
    const double clamped = std::min(1.0, std::max(0.0, v[i]));
    worst = std::max(worst, std::abs(clamped - v[i]));
    v[i] = clamped;
  }
  if (worst > 1e-6) {
    std::ostringstream msg;
    msg << "probability clamp of magnitude " << worst
        << " exceeds validation threshold";
    throw NumericError(msg.str());
  }
  return worst;
}

}  // namespace detail

/// W(q): probability of starving before download completion, per playback
/// start state, with q seconds buffered. Deficit states start at W_i(0) = 1;
/// surplus-state boundary values come from positive-mode annihilation.
inline StarvationVector starvation_vector(const SpectralDecomp& drift,
                                          const Eigen::VectorXd& drain,
                                          double q) {
  if (q < 0) throw ConfigError("buffer level must be >= 0");
  Eigen::VectorXd known = Eigen::VectorXd::Zero(drain.size());
  for (int i = 0; i < drain.size(); ++i)
    if (drain[i] < 0) known[i] = 1.0;
  const Eigen::VectorXd boundary =
      detail::complete_boundary(drift, drain, known);
  StarvationVector out;
  out.q = q;
  out.w = detail::propagate(drift, boundary, q);
  out.max_clamp = detail::clamp_unit(out.w);
  return out;
}

inline StarvationVector starvation_vector(const TaggedChain& chain, double q) {
  return starvation_vector(drift_decomposition(chain), chain.drain, q);
}

/// X(q): entry (i, j) is the probability playback starts at state i with q
/// seconds buffered and the first starvation occurs at state j. Columns for
/// surplus states are identically zero (the buffer cannot empty while
/// filling); row sums reproduce W(q).
inline StarvationMatrix starvation_state_matrix(const SpectralDecomp& drift,
                                                const Eigen::VectorXd& drain,
                                                double q) {
  if (q < 0) throw ConfigError("buffer level must be >= 0");
  const int n = static_cast<int>(drain.size());
  StarvationMatrix out;
  out.q = q;
  out.x = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    if (drain[j] > 0) continue;
    Eigen::VectorXd known = Eigen::VectorXd::Zero(n);
    known[j] = 1.0;  // starvation at empty buffer happens exactly in place
    const Eigen::VectorXd boundary =
        detail::complete_boundary(drift, drain, known);
    Eigen::VectorXd column = detail::propagate(drift, boundary, q);
    out.max_clamp = std::max(out.max_clamp, detail::clamp_unit(column));
    out.x.col(j) = column;
  }
  return out;
}

inline StarvationMatrix starvation_state_matrix(const TaggedChain& chain,
                                                double q) {
  return starvation_state_matrix(drift_decomposition(chain), chain.drain, q);
}

}  // namespace qoeflow
