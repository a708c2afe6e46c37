// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "qoeflow/prefetch.hpp"
#include "qoeflow/spectral.hpp"
#include "qoeflow/starvation.hpp"
#include "qoeflow/tagged_chain.hpp"

using namespace qoeflow;

namespace {

TridiagonalMatrix random_sign_valid(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> unit(0.1, 2.0);
  std::uniform_real_distribution<double> diag(-3.0, 3.0);
  std::bernoulli_distribution flip(0.5);
  Eigen::VectorXd d(n), y(n - 1), z(n - 1);
  for (int i = 0; i < n; ++i) d[i] = diag(rng);
  for (int i = 0; i + 1 < n; ++i) {
    const double sign = flip(rng) ? 1.0 : -1.0;
    y[i] = sign * unit(rng);
    z[i] = sign * unit(rng);
  }
  return TridiagonalMatrix(d, y, z);
}

}  // namespace

TEST_CASE("two-state chain matrix has eigenvalues {0, rate sum}") {
  Eigen::VectorXd d(2), y(1), z(1);
  d << 0.3, 0.7;
  y << -0.3;
  z << -0.7;
  const auto decomp = decompose(TridiagonalMatrix(d, y, z));
  CHECK(decomp.eigenvalues[0] == Catch::Approx(1.0).margin(1e-12));
  CHECK(decomp.eigenvalues[1] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("diagonal input decomposes trivially") {
  Eigen::VectorXd d(4), zero(3);
  d << 2.0, -1.0, 0.5, 3.0;
  zero.setZero();
  const auto decomp = decompose(TridiagonalMatrix(d, zero, zero));
  Eigen::VectorXd sorted = d;
  std::sort(sorted.data(), sorted.data() + 4, std::greater<>());
  for (int i = 0; i < 4; ++i)
    CHECK(decomp.eigenvalues[i] == Catch::Approx(sorted[i]).margin(1e-14));
  CHECK((decomp.basis * decomp.inverse_basis -
         Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mixed-sign off-diagonal pairs are rejected at construction") {
  Eigen::VectorXd d(3), y(2), z(2);
  d << 1.0, 1.0, 1.0;
  y << 0.5, -0.5;
  z << 0.5, 0.5;
  CHECK_THROWS_AS(TridiagonalMatrix(d, y, z), NumericError);
}

TEST_CASE("eigenvalues agree with the Sturm bisection oracle") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_sign_valid(rng, 8);
    const auto decomp = decompose(t);
    // Oracle: symmetrize by hand and bisect on the Sturm sequence.
    std::vector<double> d(8), e(7);
    for (int i = 0; i < 8; ++i) d[i] = t.diag[i];
    for (int i = 0; i < 7; ++i)
      e[i] = std::copysign(std::sqrt(t.super[i] * t.sub[i]), t.super[i]);
    const auto expected = testutil::sturm_eigenvalues(d, e);
    for (int i = 0; i < 8; ++i)
      CHECK(decomp.eigenvalues[i] ==
            Catch::Approx(expected[7 - i]).margin(1e-9));
  }
}

TEST_CASE("reconstruction residual stays within the contract") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_sign_valid(rng, 10);
    const auto decomp = decompose(t);
    const double norm = decomp.matrix.cwiseAbs().maxCoeff();
    CHECK(decomp.residual <= 1e-8 * norm);
  }
}

TEST_CASE("exponential action: identity at scale zero and diagonal scaling") {
  Eigen::VectorXd d(3), zero(2);
  d << -1.0, 0.5, 2.0;
  zero.setZero();
  const auto decomp = decompose(TridiagonalMatrix(d, zero, zero));
  Eigen::VectorXd v(3);
  v << 1.0, 2.0, 3.0;
  CHECK((exp_action(decomp, 0.0, v) - v).cwiseAbs().maxCoeff() <= 1e-13);
  const Eigen::VectorXd scaled = exp_action(decomp, 0.7, v);
  for (int i = 0; i < 3; ++i)
    CHECK(scaled[i] == Catch::Approx(v[i] * std::exp(d[i] * 0.7)).epsilon(1e-12));
}

TEST_CASE("exponential action matches the Taylor-series oracle") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const auto t = random_sign_valid(rng, 6);
    const auto decomp = decompose(t);
    Eigen::VectorXd v(6);
    for (int i = 0; i < 6; ++i) v[i] = std::uniform_real_distribution<>(-1, 1)(rng);
    const Eigen::VectorXd expected = testutil::taylor_expm(t.dense() * 0.8) * v;
    CHECK((exp_action(decomp, 0.8, v) - expected).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("exponential action satisfies the semigroup property") {
  const auto chain = build_tagged_chain(testutil::cell_2000k());
  const auto fluid = decompose(fluid_rate_matrix(chain));
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(10, 0.1, 1.0);
  const Eigen::VectorXd once = exp_action(fluid, -3.5, v);
  const Eigen::VectorXd composed =
      exp_action(fluid, -1.25, exp_action(fluid, -2.25, v));
  CHECK((once - composed).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("environment exponential conserves probability") {
  const auto chain = build_tagged_chain(testutil::cell_2500k(360e3));
  const auto env = decompose(environment_rate_matrix(chain));
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(10);
  for (double t : {0.5, 3.0, 25.0}) {
    const Eigen::VectorXd u = exp_action(env, -t, ones);
    CHECK((u - ones).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("environment matrix has exactly one vanishing eigenvalue") {
  const auto chain = build_tagged_chain(testutil::cell_2000k());
  const auto env = decompose(environment_rate_matrix(chain));
  const auto counts = sign_counts(env);
  CHECK(counts.zero == 1);
  CHECK(counts.negative == 0);
  // Rank oracle: the dense LU rank must match N minus the zero count.
  Eigen::FullPivLU<Eigen::MatrixXd> lu(env.matrix);
  lu.setThreshold(1e-10);
  CHECK(lu.rank() == 9);
}

TEST_CASE("fluid matrix satisfies the nonnegative-spectrum guarantee") {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 25; ++trial) {
    const auto chain = build_tagged_chain(testutil::random_config(rng));
    const auto fluid = decompose(fluid_rate_matrix(chain));
    CHECK(fluid.eigenvalues.minCoeff() >= -1e-9);
  }
}

TEST_CASE("drift sign counts follow the drain-rate signs") {
  const auto chain = build_tagged_chain(testutil::cell_2500k(360e3));
  const auto counts = sign_counts(drift_decomposition(chain));
  CHECK(counts.positive == 6);
  CHECK(counts.zero == 0);
  CHECK(counts.negative == 4);
}

TEST_CASE("all-positive diagonal counts as all-positive spectrum") {
  Eigen::VectorXd d(5), zero(4);
  d << 1.0, 2.0, 3.0, 4.0, 5.0;
  zero.setZero();
  const auto counts = sign_counts(decompose(TridiagonalMatrix(d, zero, zero)));
  CHECK(counts.positive == 5);
  CHECK(counts.zero == 0);
  CHECK(counts.negative == 0);
}

TEST_CASE("drift sign structure holds across randomized scenarios") {
  std::mt19937_64 rng(20260101);
  for (int trial = 0; trial < 100; ++trial) {
    const auto chain = build_tagged_chain(testutil::random_config(rng));
    const auto decomp = drift_decomposition(chain);
    int surplus = 0;
    for (int i = 0; i < chain.state_count; ++i)
      if (chain.drain[i] > 0) ++surplus;
    const auto counts = sign_counts(decomp);
    CHECK(counts.positive == surplus);
    CHECK(counts.zero == 0);
    CHECK(counts.negative == chain.state_count - surplus);
  }
}

TEST_CASE("weighted decomposition agrees with a dense eigensolver") {
  const auto chain = build_tagged_chain(testutil::cell_2000k());
  const auto decomp = drift_decomposition(chain);
  Eigen::EigenSolver<Eigen::MatrixXd> es(decomp.matrix);
  Eigen::VectorXd reference = es.eigenvalues().real();
  std::sort(reference.data(), reference.data() + reference.size(),
            std::greater<>());
  for (int i = 0; i < reference.size(); ++i)
    CHECK(decomp.eigenvalues[i] ==
          Catch::Approx(reference[i]).margin(1e-9 * reference.cwiseAbs().maxCoeff()));
}

TEST_CASE("overflowing exponential action reports the offending product") {
  Eigen::VectorXd d(2), zero(1);
  d << 500.0, 1.0;
  zero.setZero();
  const auto decomp = decompose(TridiagonalMatrix(d, zero, zero));
  Eigen::VectorXd v = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(exp_action(decomp, 2.0, v), NumericError);
}
