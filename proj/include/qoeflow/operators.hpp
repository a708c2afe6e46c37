// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "qoeflow/cell_config.hpp"
#include "qoeflow/errors.hpp"
#include "qoeflow/prefetch.hpp"
#include "qoeflow/spectral.hpp"
#include "qoeflow/starvation.hpp"
#include "qoeflow/tagged_chain.hpp"
#include "qoeflow/vbr.hpp"

namespace qoeflow {

/// Immutable per-scenario bundle: the tagged chain, entry distribution, and
/// the three spectral decompositions every closed-form quantity reuses.
/// Build once, share freely across threads.
struct ChainOperators {
  CellConfig config;
  TaggedChain chain;
  EntryDistribution entry;
  SpectralDecomp environment;  // negated environment generator (prefetch CDF)
  SpectralDecomp fluid;        // fluid-time generator (end-state matrix)
  SpectralDecomp drift;        // drift-scaled playback matrix (starvation)
};

inline ChainOperators make_operators(const CellConfig& config) {
  ChainOperators ops;
  ops.config = config;
  ops.chain = build_tagged_chain(config);
  ops.entry = config.fading ? entry_distribution_fading(config)
                            : entry_distribution(config);
  ops.environment = decompose(environment_rate_matrix(ops.chain));
  ops.fluid = decompose(fluid_rate_matrix(ops.chain));
  ops.drift = drift_decomposition(ops.chain);
  return ops;
}

/// Overall starvation probability with start-up threshold q_a: the tagged
/// session must outlast the prefetched duration (survival factor), then the
/// entry mix is pushed through the prefetch end states into W(q_a).
inline double overall_starvation_probability(const ChainOperators& ops,
                                             double q_a) {
  const double survive = std::exp(-ops.chain.duration_rate * q_a);
  if (survive == 0.0) return 0.0;
  const Eigen::MatrixXd v = end_state_matrix(ops.fluid, q_a);
  const StarvationVector w =
      starvation_vector(ops.drift, ops.chain.drain, q_a);
  double p = survive * ops.entry.pi.dot(v * w.w);
  if (p < -1e-6 || p > 1.0 + 1e-6)
    throw NumericError("overall starvation probability left [0,1]");
  return std::min(1.0, std::max(0.0, p));
}

inline double overall_starvation_probability(const CellConfig& config,
                                             double q_a) {
  return overall_starvation_probability(make_operators(config), q_a);
}

/// Distribution of the number of starvations in a session.
struct StarvationPmf {
  std::vector<double> p;       // p[L], L = 0..L_max
  double tail_bound = 0.0;     // geometric bound on the mass beyond L_max
  bool tail_unbounded = false; // set when the per-cycle operator norm is >= 1

  double expected_count() const {
    double sum = 0.0;
    for (std::size_t l = 1; l < p.size(); ++l) sum += l * p[l];
    return sum;
  }
};

/// PMF of starvation counts with rebuffering threshold q_b: a session with
/// L starvations walks L prefetch/playback cycles, each contributing the
/// substochastic operator exp(-theta q_b) V(0;q_b) X(q_b).
inline StarvationPmf starvation_count_pmf(const ChainOperators& ops,
                                          double q_a, double q_b,
                                          int max_count = 64) {
  if (max_count < 1) throw ConfigError("max_count: must be >= 1");
  const double theta = ops.chain.duration_rate;
  const Eigen::MatrixXd v_a = end_state_matrix(ops.fluid, q_a);
  const StarvationMatrix x_a =
      starvation_state_matrix(ops.drift, ops.chain.drain, q_a);
  const Eigen::MatrixXd v_b = end_state_matrix(ops.fluid, q_b);
  const StarvationMatrix x_b =
      starvation_state_matrix(ops.drift, ops.chain.drain, q_b);
  const StarvationVector w_b =
      starvation_vector(ops.drift, ops.chain.drain, q_b);
  const double survive_b = std::exp(-theta * q_b);

  // Row vector over states at the first starvation.
  Eigen::RowVectorXd at_starvation = std::exp(-theta * q_a) *
                                     ops.entry.pi.transpose() * v_a * x_a.x;
  StarvationPmf pmf;
  pmf.p.assign(max_count + 1, 0.0);
  pmf.p[0] = 1.0 - at_starvation.sum();
  const double prefix_mass = at_starvation.sum();
  const Eigen::VectorXd no_more = Eigen::VectorXd::Ones(w_b.w.size()) - w_b.w;
  for (int count = 1; count <= max_count; ++count) {
    const Eigen::RowVectorXd rebuffered = survive_b * at_starvation * v_b;
    pmf.p[count] = at_starvation.sum() * (1.0 - survive_b) +
                   rebuffered.dot(no_more);
    pmf.p[count] = std::min(1.0, std::max(0.0, pmf.p[count]));
    at_starvation = rebuffered * x_b.x;
  }
  // Row sums of the per-cycle operator are exp(-theta q_b) (V W)(q_b).
  const double cycle_norm =
      survive_b * (v_b * w_b.w).maxCoeff();
  if (cycle_norm >= 1.0) {
    pmf.tail_unbounded = true;
  } else {
    pmf.tail_bound = prefix_mass * std::pow(cycle_norm, max_count) /
                     (1.0 - cycle_norm);
  }
  return pmf;
}

inline StarvationPmf starvation_count_pmf(const CellConfig& config, double q_a,
                                          double q_b, int max_count = 64) {
  return starvation_count_pmf(make_operators(config), q_a, q_b, max_count);
}

/// Overall starvation probability under the VBR diffusion model: prefetch
/// end states keep the fluid machinery; only W comes from the second-order
/// system.
inline double vbr_overall_starvation_probability(const ChainOperators& ops,
                                                 const DiffusionParams& params,
                                                 double q_a) {
  const double survive = std::exp(-ops.chain.duration_rate * q_a);
  if (survive == 0.0) return 0.0;
  const Eigen::MatrixXd v = end_state_matrix(ops.fluid, q_a);
  const StarvationVector w = vbr_starvation_vector(ops.chain, params, q_a);
  const double p = survive * ops.entry.pi.dot(v * w.w);
  return std::min(1.0, std::max(0.0, p));
}

}  // namespace qoeflow
