// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "qoeflow/errors.hpp"
#include "qoeflow/spectral.hpp"
#include "qoeflow/tagged_chain.hpp"

namespace qoeflow {

/// Negated generator of the environment chain without absorption: row i is
/// [-nu_i, lambda_i + nu_i, -lambda_i]. Zero row sums, real nonnegative
/// spectrum.
inline TridiagonalMatrix environment_rate_matrix(const TaggedChain& chain) {
  const int n = chain.state_count;
  Eigen::VectorXd diag = chain.arrival + chain.departure;
  Eigen::VectorXd super = -chain.arrival.head(n - 1 > 0 ? n - 1 : 0);
  Eigen::VectorXd sub = -chain.departure.tail(n - 1 > 0 ? n - 1 : 0);
  return TridiagonalMatrix(std::move(diag), std::move(super), std::move(sub));
}

/// Fluid-time version: rows of the environment matrix divided by the fill
/// rates. Drives prefetching in buffered-video time.
inline TridiagonalMatrix fluid_rate_matrix(const TaggedChain& chain) {
  const int n = chain.state_count;
  Eigen::VectorXd diag =
      (chain.arrival + chain.departure).cwiseQuotient(chain.fill);
  Eigen::VectorXd super(n - 1), sub(n - 1);
  for (int i = 0; i + 1 < n; ++i) {
    super[i] = -chain.arrival[i] / chain.fill[i];
    sub[i] = -chain.departure[i + 1] / chain.fill[i + 1];
  }
  return TridiagonalMatrix(std::move(diag), std::move(super), std::move(sub));
}

/// Start-up delay distribution per entry state on a shared time grid.
struct StartupCdf {
  Eigen::VectorXd times;        // t_0 < ... < t_M
  Eigen::MatrixXd cdf;          // K x (M+1), row i = entry state i
  double startup_threshold = 0; // q_a
  double dq = 0, dt = 0;
  std::string method;           // "pde_upwind" or "erfc_closed_form"

  /// Mean delay per entry state: integral of the complementary CDF over the
  /// grid (trapezoid).
  double mean_delay(int state) const {
    double mean = 0.0;
    for (int m = 0; m + 1 < times.size(); ++m) {
      const double h = times[m + 1] - times[m];
      mean += 0.5 * h * ((1.0 - cdf(state, m)) + (1.0 - cdf(state, m + 1)));
    }
    return mean;
  }
};

/// Start-up delay CDF from the depletion-dual transport system, solved by
/// first-order upwinding in q and explicit Euler in t. The q domain is
/// truncated at the threshold itself: the transport moves strictly toward
/// larger q, so values at q_a never depend on the far field. Stability
/// requires dt <= dq / max_i b_i.
inline StartupCdf startup_cdf_numeric(const TaggedChain& chain, double q_a,
                                      double t_max = -1.0, double dq = -1.0,
                                      double dt = -1.0) {
  const int K = chain.state_count;
  const double b_max = chain.fill.maxCoeff();
  const double b_min = chain.fill.minCoeff();
  if (q_a < 0) throw ConfigError("startup threshold must be >= 0");
  if (t_max <= 0) t_max = 4.0 * q_a / b_min;
  if (dq <= 0) dq = q_a / 400.0;
  if (dt <= 0) dt = 0.9 * dq / b_max;
  StartupCdf out;
  out.startup_threshold = q_a;
  out.method = "pde_upwind";
  if (q_a == 0.0) {
    // Threshold already met: unit CDF for every t > 0.
    out.times.resize(2);
    out.times << 0.0, std::max(t_max, 1.0);
    out.cdf = Eigen::MatrixXd::Ones(K, 2);
    out.dq = dq;
    out.dt = dt;
    return out;
  }
  if (dt > dq / b_max * (1.0 + 1e-12)) {
    std::ostringstream msg;
    msg << "unstable step sizes: dt = " << dt << " exceeds dq / max(b) = "
        << dq / b_max;
    throw ConfigError(msg.str());
  }
  const int cells = std::max(1, static_cast<int>(std::lround(q_a / dq)));
  dq = q_a / cells;
  const int steps = std::max(1, static_cast<int>(std::ceil(t_max / dt)));
  out.dq = dq;
  out.dt = dt;
  out.times.resize(steps + 1);
  out.cdf.resize(K, steps + 1);

  // u(i, j): starvation-by-t probability at state i with j*dq prefetched.
  // Depleted boundary u(:, 0) = 1; initial datum 0 elsewhere.
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(K, cells + 1);
  u.col(0).setOnes();
  Eigen::MatrixXd next = u;
  out.times[0] = 0.0;
  out.cdf.col(0) = u.col(cells);
  const Eigen::VectorXd courant = chain.fill * (dt / dq);
  const Eigen::VectorXd hold =
      Eigen::VectorXd::Ones(K) - courant -
      dt * (chain.arrival + chain.departure);
  for (int n = 1; n <= steps; ++n) {
    for (int j = 1; j <= cells; ++j) {
      for (int i = 0; i < K; ++i) {
        double v = hold[i] * u(i, j) + courant[i] * u(i, j - 1);
        if (i + 1 < K) v += dt * chain.arrival[i] * u(i + 1, j);
        if (i > 0) v += dt * chain.departure[i] * u(i - 1, j);
        next(i, j) = v;
      }
    }
    u.rightCols(cells).swap(next.rightCols(cells));
    out.times[n] = n * dt;
    out.cdf.col(n) = u.col(cells);
  }
  return out;
}

namespace detail {

inline double standard_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

}  // namespace detail

/// Closed-form start-up delay CDF at a single time: the environment
/// exponential applied to per-state Brownian crossing probabilities with
/// artificial variance alpha. A rough estimate by construction; clamped to
/// [0, 1].
inline Eigen::VectorXd startup_cdf_closed_form(const SpectralDecomp& env,
                                               const TaggedChain& chain,
                                               double q_a, double t,
                                               double alpha = 0.1) {
  if (!(alpha > 0)) throw ConfigError("alpha: must be > 0");
  const int K = chain.state_count;
  if (t <= 0.0)
    return q_a == 0.0 ? Eigen::VectorXd::Ones(K) : Eigen::VectorXd::Zero(K);
  Eigen::VectorXd crossing(K);
  for (int i = 0; i < K; ++i)
    crossing[i] = 1.0 - detail::standard_normal_cdf(
                            (q_a - chain.fill[i] * t) / std::sqrt(alpha * t));
  Eigen::VectorXd value;
  try {
    value = exp_action(env, -t, crossing);
  } catch (const NumericError&) {
    value = exp_dense(env.matrix * -t) * crossing;
  }
  return value.cwiseMax(0.0).cwiseMin(1.0);
}

/// Closed-form CDF sampled on a time grid.
inline StartupCdf startup_cdf_closed_form_grid(const SpectralDecomp& env,
                                               const TaggedChain& chain,
                                               double q_a,
                                               const Eigen::VectorXd& times,
                                               double alpha = 0.1) {
  StartupCdf out;
  out.startup_threshold = q_a;
  out.method = "erfc_closed_form";
  out.times = times;
  out.cdf.resize(chain.state_count, times.size());
  for (int m = 0; m < times.size(); ++m)
    out.cdf.col(m) = startup_cdf_closed_form(env, chain, q_a, times[m], alpha);
  return out;
}

/// Prefetch end-state matrix V(0; q_a): entry (i, j) is the probability the
/// environment sits at j when the buffer first reaches q_a, starting empty
/// at state i. Row-stochastic; V(0; 0) is the identity.
inline Eigen::MatrixXd end_state_matrix(const SpectralDecomp& fluid,
                                        double q_a) {
  if (q_a < 0) throw ConfigError("startup threshold must be >= 0");
  const int K = fluid.size();
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(K, K);
  Eigen::MatrixXd v = exp_action(fluid, -q_a, identity);
  // Entries are probabilities up to round-off; tolerate -1e-10 underflow.
  return v.cwiseMax(0.0);
}

}  // namespace qoeflow
