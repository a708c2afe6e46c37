// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "qoeflow/cell_config.hpp"
#include "qoeflow/errors.hpp"
#include "qoeflow/fading.hpp"

namespace qoeflow {

/// Distribution of the number of other flows a newly admitted flow observes.
struct EntryDistribution {
  Eigen::VectorXd pi;  // length K, sums to 1
};

/// The Markov environment seen by one tagged flow: state i = number of
/// other active flows, i in 0..K-1. Fill rates are in seconds of video per
/// second; drain rates are fill - 1 (net rate during playback).
struct TaggedChain {
  int state_count = 0;          // K
  Eigen::VectorXd arrival;      // lambda_i: lambda for i < K-1, 0 at K-1
  Eigen::VectorXd departure;    // nu_i: rate another flow leaves
  Eigen::VectorXd absorption;   // phi_i: rate the tagged flow completes
  Eigen::VectorXd fill;         // b_i
  Eigen::VectorXd drain;        // c_i = b_i - 1
  double service_rate = 0.0;    // mu of the pre-entry chain (static channel)
  double duration_rate = 0.0;   // theta
  bool fading = false;
  Eigen::VectorXd throughput_var;  // Var[R_{i+1}] metadata (fading chains)
};

/// Entry distribution for the static channel: geometric in the load, the
/// K-state birth-death stationary law conditioned on admission. The load-1
/// case is the uniform continuity limit.
inline EntryDistribution entry_distribution(const CellConfig& config) {
  config.validate();
  const int K = config.admission_cap;
  EntryDistribution d;
  d.pi.resize(K);
  if (K == 1) {
    d.pi[0] = 1.0;
    return d;
  }
  if (config.arrival_rate == 0.0)
    throw ConfigError("cell.arrival_rate: entry distribution needs lambda > 0 "
                      "(or admission_cap == 1)");
  const double rho = load_factor(config);
  if (std::abs(rho - 1.0) < 1e-12) {
    d.pi.setConstant(1.0 / K);
    return d;
  }
  for (int i = 0; i < K; ++i)
    d.pi[i] = std::pow(rho, i) * (1.0 - rho) / (1.0 - std::pow(rho, K));
  return d;
}

/// Entry distribution under fading: birth-death with state-dependent death
/// rates mu_l = l * theta * E[R_l], truncated at K and renormalized to
/// exclude the blocking state.
inline EntryDistribution entry_distribution_fading(const CellConfig& config,
                                                   const ThroughputMoments& t) {
  config.validate();
  if (!config.fading) throw ConfigError("fading: block required");
  const int K = config.admission_cap;
  Eigen::VectorXd z(K + 1);
  z[0] = 1.0;
  for (int i = 1; i <= K; ++i) {
    const double mu_i = i * config.duration_rate * t.mean[i - 1];
    if (!(mu_i > 0))
      throw ConfigError("fading: zero throughput at flow count " +
                        std::to_string(i));
    z[i] = z[i - 1] * config.arrival_rate / mu_i;
  }
  EntryDistribution d;
  d.pi = z.head(K) / z.head(K).sum();
  return d;
}

inline EntryDistribution entry_distribution_fading(const CellConfig& config) {
  return entry_distribution_fading(config, throughput_moments(config));
}

namespace detail {

inline void check_drain_rates(const Eigen::VectorXd& drain) {
  for (int i = 0; i < drain.size(); ++i) {
    if (drain[i] == 0.0)
      throw ConfigError(
          "cell.bitrate_bps: fill rate equals playback rate exactly at state " +
          std::to_string(i) +
          " (c_i = 0); perturb the bitrate by a small epsilon");
  }
}

}  // namespace detail

/// Chain with processor-sharing rates on a static channel.
inline TaggedChain build_static_chain(const CellConfig& config) {
  config.validate();
  const int K = config.admission_cap;
  const double mu = config.service_rate();
  TaggedChain c;
  c.state_count = K;
  c.service_rate = mu;
  c.duration_rate = config.duration_rate;
  c.arrival.setConstant(K, config.arrival_rate);
  c.arrival[K - 1] = 0.0;
  c.departure.resize(K);
  c.absorption.resize(K);
  c.fill.resize(K);
  for (int i = 0; i < K; ++i) {
    c.departure[i] = i * mu / (i + 1);
    c.absorption[i] = mu / (i + 1);
    c.fill[i] = config.capacity_bps / (config.bitrate_bps * (i + 1));
  }
  c.drain = c.fill.array() - 1.0;
  detail::check_drain_rates(c.drain);
  return c;
}

/// Chain with NSNR mean-throughput rates: at state i the tagged flow shares
/// the cell with i others, so all rates are driven by E[R_{i+1}].
inline TaggedChain build_fading_chain(const CellConfig& config,
                                      const ThroughputMoments& t) {
  config.validate();
  if (!config.fading) throw ConfigError("fading: block required");
  const int K = config.admission_cap;
  const double theta = config.duration_rate;
  TaggedChain c;
  c.state_count = K;
  c.duration_rate = theta;
  c.fading = true;
  c.arrival.setConstant(K, config.arrival_rate);
  c.arrival[K - 1] = 0.0;
  c.departure.resize(K);
  c.absorption.resize(K);
  c.fill.resize(K);
  c.throughput_var.resize(K);
  for (int i = 0; i < K; ++i) {
    c.departure[i] = i * theta * t.mean[i];
    c.absorption[i] = theta * t.mean[i];
    c.fill[i] = t.mean[i];
    c.throughput_var[i] = t.var[i];
  }
  c.drain = c.fill.array() - 1.0;
  c.service_rate = K * theta * t.mean[K - 1];  // mu_K of the pre-entry chain
  detail::check_drain_rates(c.drain);
  return c;
}

inline TaggedChain build_fading_chain(const CellConfig& config) {
  return build_fading_chain(config, throughput_moments(config));
}

/// Builds the environment chain for a scenario, using fading rates when the
/// fading block is present and static processor-sharing rates otherwise.
inline TaggedChain build_tagged_chain(const CellConfig& config) {
  return config.fading ? build_fading_chain(config)
                       : build_static_chain(config);
}

}  // namespace qoeflow
