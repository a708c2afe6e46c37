// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace qoeflow {

/// Invalid or inconsistent scenario configuration. The message names the
/// offending field (dotted path for JSON inputs).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Failure of a numerical procedure: decomposition residual exceeded,
/// quadrature non-convergence, exp overflow, singular boundary system.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qoeflow
