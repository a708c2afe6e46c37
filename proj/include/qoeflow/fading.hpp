// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qoeflow/cell_config.hpp"
#include "qoeflow/errors.hpp"

namespace qoeflow {

namespace detail {

// 15-point Kronrod extension of 7-point Gauss, positive half of [-1, 1].
// Even indices are the embedded Gauss nodes.
inline constexpr double kKronrodNodes[8] = {
    0.000000000000000, 0.207784955007898, 0.405845151377397,
    0.586087235467691, 0.741531185599394, 0.864864423359769,
    0.949107912342759, 0.991455371120813};
inline constexpr double kKronrodWeights[8] = {
    0.209482141084728, 0.204432940075298, 0.190350578064785,
    0.169004726639267, 0.140653259715525, 0.104790010322250,
    0.063092092629979, 0.022935322010529};
inline constexpr double kGaussWeights[4] = {
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870};

struct GkResult {
  double integral;
  double error;
};

template <class F>
GkResult gk15(const F& f, double a, double b) {
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double f0 = f(mid);
  double kron = kKronrodWeights[0] * f0;
  double gauss = kGaussWeights[0] * f0;
  for (int j = 1; j < 8; ++j) {
    const double dx = half * kKronrodNodes[j];
    const double fsum = f(mid - dx) + f(mid + dx);
    kron += kKronrodWeights[j] * fsum;
    if (j % 2 == 0) gauss += kGaussWeights[j / 2] * fsum;
  }
  kron *= half;
  gauss *= half;
  return {kron, std::abs(kron - gauss)};
}

/// Adaptive bisection quadrature with a Gauss-Kronrod error estimate.
/// Throws NumericError with the achieved tolerance if the interval budget
/// runs out before convergence.
template <class F>
double integrate(const F& f, double a, double b, double rel_tol = 1e-10,
                 double abs_tol = 1e-14, int max_intervals = 2000) {
  struct Piece {
    double a, b, integral, error;
  };
  std::vector<Piece> pieces;
  GkResult whole = gk15(f, a, b);
  pieces.push_back({a, b, whole.integral, whole.error});
  for (int iter = 0; iter < max_intervals; ++iter) {
    double total = 0.0, err = 0.0;
    std::size_t worst = 0;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      total += pieces[i].integral;
      err += pieces[i].error;
      if (pieces[i].error > pieces[worst].error) worst = i;
    }
    if (err <= std::max(abs_tol, rel_tol * std::abs(total))) return total;
    Piece p = pieces[worst];
    const double mid = 0.5 * (p.a + p.b);
    GkResult left = gk15(f, p.a, mid);
    GkResult right = gk15(f, mid, p.b);
    pieces[worst] = {p.a, mid, left.integral, left.error};
    pieces.push_back({mid, p.b, right.integral, right.error});
  }
  double total = 0.0, err = 0.0;
  for (const auto& p : pieces) {
    total += p.integral;
    err += p.error;
  }
  std::ostringstream msg;
  msg << "quadrature did not converge: achieved tolerance "
      << err / std::max(1e-300, std::abs(total));
  throw NumericError(msg.str());
}

}  // namespace detail

/// Density of the scheduled (best normalized) SNR with `flows` active users
/// sharing a cell at mean SNR `mean_snr`, all Rayleigh.
inline double scheduled_snr_density(int flows, double mean_snr, double snr) {
  const double u = std::exp(-snr / mean_snr);
  return flows / mean_snr * u * std::pow(1.0 - u, flows - 1);
}

/// Per-slot spectral rate of the scheduled user: mean and variance of
/// f(snr) under the scheduled-SNR density, f(snr) = log2(1 + snr) or the
/// configured modulation table. Relative tolerance 1e-8.
inline std::pair<double, double> scheduled_rate_moments(
    int flows, double mean_snr,
    const std::vector<std::pair<double, double>>& modulation = {}) {
  if (flows < 1) throw ConfigError("flows: must be >= 1");
  if (!(mean_snr > 0)) throw ConfigError("fading.mean_snr: must be > 0");
  if (!modulation.empty()) {
    // Step-function rates integrate in closed form against the scheduled-SNR
    // distribution function (1 - exp(-snr/mean))^flows.
    auto cdf = [&](double snr) {
      return std::pow(1.0 - std::exp(-snr / mean_snr), flows);
    };
    double mean = 0.0, second = 0.0;
    for (std::size_t k = 0; k < modulation.size(); ++k) {
      const double rate = modulation[k].second;
      const double lo = cdf(modulation[k].first);
      const double hi =
          k + 1 < modulation.size() ? cdf(modulation[k + 1].first) : 1.0;
      mean += rate * (hi - lo);
      second += rate * rate * (hi - lo);
    }
    return {mean, second - mean * mean};
  }
  const double upper = mean_snr * (40.0 + std::log(static_cast<double>(flows)));
  auto weighted = [&](auto g) {
    return detail::integrate(
        [&](double snr) {
          return g(snr) * scheduled_snr_density(flows, mean_snr, snr);
        },
        0.0, upper, 1e-8 * 1e-2, 1e-300);
  };
  const double mean = weighted([](double snr) { return std::log2(1.0 + snr); });
  const double second = weighted([](double snr) {
    const double r = std::log2(1.0 + snr);
    return r * r;
  });
  return {mean, second - mean * mean};
}

/// Throughput moment table, indexed by flow count 1..K.
struct ThroughputMoments {
  Eigen::VectorXd scheduled_mean;  // E[r_i*], bits/s/Hz while scheduled
  Eigen::VectorXd scheduled_var;   // Var[r_i*]
  Eigen::VectorXd mean;            // E[R_i], seconds of video per second
  Eigen::VectorXd var;             // Var[R_i]

  int flows_max() const { return static_cast<int>(mean.size()); }
};

/// Per-flow one-second throughput moments in video-duration units with
/// `flows` active users: scheduling picks one user per slot, so a given
/// flow is served with probability 1/flows.
inline std::pair<double, double> per_flow_throughput_moments(
    const CellConfig& config, int flows) {
  config.validate();
  if (!config.fading) throw ConfigError("fading: block required");
  const auto& f = *config.fading;
  auto [mean_star, var_star] =
      scheduled_rate_moments(flows, f.mean_snr, f.modulation);
  const double i = static_cast<double>(flows);
  const double mean = f.spectrum_hz * mean_star / (i * config.bitrate_bps);
  const double var = (var_star / i + mean_star * mean_star * (1.0 / i - 1.0 / (i * i))) *
                     f.spectrum_hz * f.spectrum_hz * f.slot_s /
                     (config.bitrate_bps * config.bitrate_bps);
  return {mean, var};
}

inline ThroughputMoments throughput_moments(const CellConfig& config) {
  config.validate();
  if (!config.fading) throw ConfigError("fading: block required");
  const int K = config.admission_cap;
  ThroughputMoments t;
  t.scheduled_mean.resize(K);
  t.scheduled_var.resize(K);
  t.mean.resize(K);
  t.var.resize(K);
  for (int i = 1; i <= K; ++i) {
    auto [ms, vs] = scheduled_rate_moments(i, config.fading->mean_snr,
                                           config.fading->modulation);
    t.scheduled_mean[i - 1] = ms;
    t.scheduled_var[i - 1] = vs;
    auto [m, v] = per_flow_throughput_moments(config, i);
    t.mean[i - 1] = m;
    t.var[i - 1] = v;
    if (!(m > 0))
      throw ConfigError("fading: zero mean throughput at flow count " +
                        std::to_string(i));
  }
  return t;
}

}  // namespace qoeflow
