// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent numerical oracles for the test suites.
// Everything here stays off the library's own solution paths on purpose:
// eigenvalues come from Sturm bisection, matrix exponentials from a plain
// Taylor series, and exponential integrals from series/continued fractions.

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "qoeflow/cell_config.hpp"

namespace testutil {

// ---------------------------------------------------------------------------
// Scenario fixtures.

/// 2.5 Mbps cell, lambda 0.12/s, 60 s mean videos. The workhorse CBR cell.
inline qoeflow::CellConfig cell_2500k(double bitrate_bps = 360e3) {
  qoeflow::CellConfig c;
  c.name = "cbr-2500k";
  c.admission_cap = 10;
  c.capacity_bps = 2.5e6;
  c.arrival_rate = 0.12;
  c.duration_rate = 1.0 / 60.0;
  c.bitrate_bps = bitrate_bps;
  c.startup_threshold_s = 10.0;
  c.rebuffer_threshold_s = 10.0;
  return c;
}

/// 2.0 Mbps cell, lambda 0.08/s, 360 Kbps, 60 s mean videos (load 0.864).
inline qoeflow::CellConfig cell_2000k() {
  qoeflow::CellConfig c;
  c.name = "cbr-2000k";
  c.admission_cap = 10;
  c.capacity_bps = 2.0e6;
  c.arrival_rate = 0.08;
  c.duration_rate = 1.0 / 60.0;
  c.bitrate_bps = 360e3;
  c.startup_threshold_s = 10.0;
  c.rebuffer_threshold_s = 10.0;
  return c;
}

/// 1 MHz Rayleigh cell at mean SNR 10^0.5, 2 ms slots, 480 Kbps, 90 s videos.
inline qoeflow::CellConfig cell_fading(double arrival_rate = 0.07) {
  qoeflow::CellConfig c;
  c.name = "fading-1mhz";
  c.admission_cap = 10;
  c.capacity_bps = 1.0;  // unused under fading; must simply be positive
  c.arrival_rate = arrival_rate;
  c.duration_rate = 1.0 / 90.0;
  c.bitrate_bps = 480e3;
  c.startup_threshold_s = 10.0;
  c.rebuffer_threshold_s = 10.0;
  qoeflow::FadingConfig f;
  f.spectrum_hz = 1e6;
  f.slot_s = 0.002;
  f.mean_snr = std::pow(10.0, 0.5);
  c.fading = f;
  return c;
}

/// Adds the VBR block (25 fps, exponential-like frame spread) to cell_2000k.
inline qoeflow::CellConfig cell_vbr(double frame_stddev_bits = 14400.0) {
  qoeflow::CellConfig c = cell_2000k();
  c.name = "vbr-2000k";
  qoeflow::VbrConfig v;
  v.frame_rate = 25.0;
  v.frame_stddev_bits = frame_stddev_bits;
  c.vbr = v;
  return c;
}

/// Random valid CBR scenario; regenerates until no drain rate sits within
/// 1e-4 of zero so the drift-scaled systems are well formed.
inline qoeflow::CellConfig random_config(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cap(2, 12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (;;) {
    qoeflow::CellConfig c;
    c.name = "random";
    c.admission_cap = cap(rng);
    c.capacity_bps = 1e6 * (0.5 + 4.0 * unit(rng));
    c.bitrate_bps = c.capacity_bps / (1.0 + (c.admission_cap - 0.5) * unit(rng));
    c.duration_rate = 1.0 / (20.0 + 100.0 * unit(rng));
    c.arrival_rate = 0.02 + 0.2 * unit(rng);
    c.startup_threshold_s = 10.0 * unit(rng);
    c.rebuffer_threshold_s = 10.0 * unit(rng);
    bool ok = true;
    for (int i = 0; i < c.admission_cap; ++i) {
      const double fill = c.capacity_bps / (c.bitrate_bps * (i + 1));
      if (std::abs(fill - 1.0) < 1e-4) ok = false;
    }
    if (ok) return c;
  }
}

// ---------------------------------------------------------------------------
// Eigenvalue oracle: Sturm-sequence bisection for symmetric tridiagonals.

/// Number of eigenvalues of the symmetric tridiagonal (diag, off) strictly
/// below x, by the Sturm sign count of the shifted LDL^T pivots.
inline int sturm_count_below(const std::vector<double>& diag,
                             const std::vector<double>& off, double x) {
  const std::size_t n = diag.size();
  int count = 0;
  double q = diag[0] - x;
  if (q < 0) ++count;
  for (std::size_t i = 1; i < n; ++i) {
    if (q == 0.0) q = 1e-300;
    q = diag[i] - x - off[i - 1] * off[i - 1] / q;
    if (q < 0) ++count;
  }
  return count;
}

/// All eigenvalues of a symmetric tridiagonal by bisection, ascending.
inline std::vector<double> sturm_eigenvalues(const std::vector<double>& diag,
                                             const std::vector<double>& off,
                                             double tol = 1e-13) {
  const std::size_t n = diag.size();
  double lo = diag[0], hi = diag[0];
  for (std::size_t i = 0; i < n; ++i) {
    double radius = 0.0;
    if (i > 0) radius += std::abs(off[i - 1]);
    if (i + 1 < n) radius += std::abs(off[i]);
    lo = std::min(lo, diag[i] - radius);
    hi = std::max(hi, diag[i] + radius);
  }
  const double span = hi - lo + 1.0;
  std::vector<double> lambda(n);
  for (std::size_t j = 0; j < n; ++j) {
    double a = lo - 1e-8 * span, b = hi + 1e-8 * span;
    while (b - a > tol * span) {
      const double mid = 0.5 * (a + b);
      if (sturm_count_below(diag, off, mid) <= static_cast<int>(j))
        a = mid;
      else
        b = mid;
    }
    lambda[j] = 0.5 * (a + b);
  }
  return lambda;
}

// ---------------------------------------------------------------------------
// Matrix exponential oracle: 40-term Taylor with scaling and squaring.

inline Eigen::MatrixXd taylor_expm(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  int squarings = 0;
  Eigen::MatrixXd b = m;
  double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
  while (norm > 0.25) {
    b /= 2.0;
    norm /= 2.0;
    ++squarings;
  }
  Eigen::MatrixXd result = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
  for (int k = 1; k <= 40; ++k) {
    term = term * b / static_cast<double>(k);
    result += term;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

// ---------------------------------------------------------------------------
// Exponential integral E1 for the Rayleigh-rate closed forms.

inline double expint_e1(double x) {
  if (!(x > 0)) return std::numeric_limits<double>::infinity();
  if (x <= 1.0) {
    const double euler_gamma = 0.5772156649015328606;
    double sum = -euler_gamma - std::log(x);
    double term = 1.0;
    for (int k = 1; k <= 60; ++k) {
      term *= -x / k;
      sum -= term / k;
      if (std::abs(term / k) < 1e-18) break;
    }
    return sum;
  }
  // Modified Lentz continued fraction: e^-x / (x + 1/(1 + 1/(x + 2/(1 + ...
  double b = x + 1.0, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i <= 200; ++i) {
    const double a = -static_cast<double>(i) * i;
    b += 2.0;
    d = 1.0 / (a * d + b);
    c = b + a / c;
    const double delta = c * d;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x);
}

}  // namespace testutil
