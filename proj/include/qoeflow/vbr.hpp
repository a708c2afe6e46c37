// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "qoeflow/errors.hpp"
#include "qoeflow/spectral.hpp"
#include "qoeflow/starvation.hpp"
#include "qoeflow/tagged_chain.hpp"

namespace qoeflow {

/// Brownian model of playback-rate jitter: sigma_bar is the standard
/// deviation of served video duration accumulated over one second, and
/// a = sigma_bar^2 / 2 the diffusion coefficient.
struct DiffusionParams {
  double sigma_bar = 0.0;
  double a = 0.0;
};

/// Maps frame-level statistics to the per-second diffusion scale:
/// frame_rate frames of standard deviation sigma add frame_rate * sigma^2
/// variance per second, rescaled to video-duration units by the bitrate.
inline DiffusionParams playback_diffusion(double bitrate_bps,
                                          double frame_rate,
                                          double frame_stddev_bits) {
  if (!(bitrate_bps > 0)) throw ConfigError("cell.bitrate_bps: must be > 0");
  if (!(frame_rate > 0)) throw ConfigError("vbr.frame_rate: must be > 0");
  if (!(frame_stddev_bits >= 0))
    throw ConfigError("vbr.frame_size_stddev_bits: must be >= 0");
  DiffusionParams p;
  p.sigma_bar = std::sqrt(frame_rate) * frame_stddev_bits / bitrate_bps;
  p.a = 0.5 * p.sigma_bar * p.sigma_bar;
  return p;
}

inline DiffusionParams playback_diffusion(const CellConfig& config) {
  if (!config.vbr) throw ConfigError("vbr: block required");
  return playback_diffusion(config.bitrate_bps, config.vbr->frame_rate,
                            config.vbr->frame_stddev_bits);
}

/// First-order form of the second-order starvation system under diffusion:
/// the state is (W, W') and the companion matrix couples them through the
/// absorbing rate matrix over a. Built from the rate matrix directly, not
/// through M_W, so the drain rates never cancel numerically.
inline Eigen::MatrixXd augmented_drift_matrix(const TaggedChain& chain,
                                              double a) {
  if (!(a > 0)) throw ConfigError("vbr: diffusion coefficient must be > 0");
  const int n = chain.state_count;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  m.topRightCorner(n, n).setIdentity();
  m.bottomLeftCorner(n, n) = absorbing_rate_matrix(chain).dense() / a;
  m.bottomRightCorner(n, n) = (-chain.drain / a).asDiagonal();
  return m;
}

/// Starvation probabilities under VBR playback: solves the diffusion
/// boundary-value problem with W(0) = 1 on every state and decay at
/// infinity, which annihilates all eigenmodes with nonnegative real part.
inline StarvationVector vbr_starvation_vector(const TaggedChain& chain,
                                              const DiffusionParams& params,
                                              double q) {
  if (q < 0) throw ConfigError("buffer level must be >= 0");
  const int n = chain.state_count;
  SpectralDecomp aug;
  try {
    aug = decompose_general(augmented_drift_matrix(chain, params.a));
  } catch (const NumericError& e) {
    throw NumericError(std::string("vbr augmented drift matrix: ") + e.what());
  }
  const double tol = detail::spectrum_zero_tol(aug);
  std::vector<int> nonneg;
  for (int m = 0; m < aug.size(); ++m)
    if (aug.eigenvalues[m] >= -tol) nonneg.push_back(m);
  if (static_cast<int>(nonneg.size()) != n) {
    std::ostringstream msg;
    msg << "vbr boundary closure unsolvable: " << nonneg.size()
        << " nonnegative eigenmodes for " << n << " states; spectrum = [";
    for (int m = 0; m < aug.size(); ++m)
      msg << (m ? ", " : "") << aug.eigenvalues[m];
    msg << "]";
    throw NumericError(msg.str());
  }
  // Y(0) = (1, d): the K derivative components d solve the annihilation
  // conditions (D^-1 Y(0))_m = 0 over the nonnegative modes.
  Eigen::MatrixXd deriv_block(n, n);
  Eigen::VectorXd rhs(n);
  for (int r = 0; r < n; ++r) {
    deriv_block.row(r) = aug.inverse_basis.row(nonneg[r]).tail(n);
    rhs[r] = -aug.inverse_basis.row(nonneg[r]).head(n).sum();
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(deriv_block);
  if (!lu.isInvertible())
    throw NumericError("singular boundary system in vbr starvation solve");
  Eigen::VectorXd y0(2 * n);
  y0.head(n).setOnes();
  y0.tail(n) = lu.solve(rhs);
  Eigen::VectorXd coeff = aug.inverse_basis * y0;
  for (int m = 0; m < aug.size(); ++m) {
    if (aug.eigenvalues[m] >= -tol)
      coeff[m] = 0.0;
    else
      coeff[m] *= std::exp(aug.eigenvalues[m] * q);
  }
  // Zeroed nonnegative modes drop Y(0) to the decaying subspace; at q = 0
  // the head still reproduces W(0) = 1 because the dropped coefficients
  // vanish by the solve.
  StarvationVector out;
  out.q = q;
  out.w = (aug.basis * coeff).head(n);
  out.max_clamp = detail::clamp_unit(out.w);
  return out;
}

}  // namespace qoeflow
