// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "qoeflow/fading.hpp"
#include "qoeflow/tagged_chain.hpp"

using namespace qoeflow;

TEST_CASE("load factor matches hand-computed cell loads") {
  CHECK(load_factor(testutil::cell_2000k()) == Catch::Approx(0.864).epsilon(1e-12));
  CHECK(load_factor(testutil::cell_2500k(480e3)) ==
        Catch::Approx(1.3824).epsilon(1e-12));
  CHECK(testutil::cell_2500k(480e3).service_rate() ==
        Catch::Approx(0.0868).epsilon(1e-3));

  auto idle = testutil::cell_2000k();
  idle.arrival_rate = 0.0;
  CHECK(load_factor(idle) == 0.0);
}

TEST_CASE("load factor names the offending field") {
  auto c = testutil::cell_2000k();
  c.capacity_bps = 0.0;
  CHECK_THROWS_WITH(load_factor(c), Catch::Matchers::ContainsSubstring("capacity"));
  c = testutil::cell_2000k();
  c.duration_rate = -1.0;
  CHECK_THROWS_WITH(load_factor(c), Catch::Matchers::ContainsSubstring("duration_rate"));
}

TEST_CASE("entry distribution: single state and balanced load") {
  auto one = testutil::cell_2000k();
  one.admission_cap = 1;
  CHECK(entry_distribution(one).pi[0] == 1.0);

  // lambda chosen to sit exactly at load 1.
  auto balanced = testutil::cell_2000k();
  balanced.arrival_rate = balanced.service_rate();
  const auto pi = entry_distribution(balanced).pi;
  for (int i = 0; i < 10; ++i) CHECK(pi[i] == Catch::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("entry distribution is the normalized geometric law") {
  const auto config = testutil::cell_2000k();
  const double rho = load_factor(config);
  const auto pi = entry_distribution(config).pi;
  // Independent route: normalize rho^i over the admissible states.
  double norm = 0.0;
  for (int i = 0; i < 10; ++i) norm += std::pow(rho, i);
  for (int i = 0; i < 10; ++i)
    CHECK(pi[i] == Catch::Approx(std::pow(rho, i) / norm).epsilon(1e-12));
  CHECK(pi[0] == Catch::Approx(0.17704).epsilon(1e-4));
  CHECK(pi.sum() == Catch::Approx(1.0).margin(1e-12));
  for (int i = 0; i + 1 < 9; ++i)
    CHECK(pi[i + 1] / pi[i] == Catch::Approx(rho).epsilon(1e-12));
}

TEST_CASE("tagged chain rates for the 2.5 Mbps cell") {
  const auto chain = build_tagged_chain(testutil::cell_2500k(360e3));
  CHECK(chain.fill[0] == Catch::Approx(6.9444).epsilon(1e-4));
  CHECK(chain.fill[9] == Catch::Approx(0.69444).epsilon(1e-4));
  CHECK(chain.departure[0] == 0.0);
  CHECK(chain.arrival[9] == 0.0);
  for (int i = 0; i < 10; ++i) {
    CHECK(chain.drain[i] == chain.fill[i] - 1.0);
    // Total departure rate with the tagged flow present equals mu.
    CHECK(chain.absorption[i] + chain.departure[i] ==
          Catch::Approx(chain.service_rate).margin(1e-12));
    // Processor sharing: fill rate times flow count is the cell capacity.
    CHECK(chain.fill[i] * (i + 1) ==
          Catch::Approx(2.5e6 / 360e3).margin(1e-12));
  }
  for (int i = 0; i + 1 < 10; ++i) CHECK(chain.fill[i + 1] < chain.fill[i]);
}

TEST_CASE("unit fill rate is rejected as degenerate") {
  auto c = testutil::cell_2000k();
  c.bitrate_bps = 5e5;  // b_3 == 1 exactly
  CHECK_THROWS_AS(build_tagged_chain(c), ConfigError);
  CHECK_THROWS_WITH(build_tagged_chain(c),
                    Catch::Matchers::ContainsSubstring("bitrate"));
}

TEST_CASE("fading chain reproduces the NSNR throughput table") {
  const auto config = testutil::cell_fading();
  const auto t = throughput_moments(config);
  const double mean_expected[10] = {3.5749, 2.3702, 1.7844, 1.4369, 1.2061,
                                    1.0412, 0.9174, 0.8207, 0.7432, 0.6794};
  const double var_expected[10] = {0.0083, 0.0144, 0.0144, 0.0134, 0.0124,
                                   0.0114, 0.0105, 0.0098, 0.0091, 0.0086};
  for (int i = 0; i < 10; ++i) {
    CHECK(t.mean[i] == Catch::Approx(mean_expected[i]).epsilon(0.02));
    CHECK(t.var[i] == Catch::Approx(var_expected[i]).epsilon(0.05));
  }

  const auto chain = build_tagged_chain(config);
  CHECK(chain.fading);
  const double theta = config.duration_rate;
  for (int i = 0; i < 10; ++i) {
    CHECK(chain.fill[i] == Catch::Approx(t.mean[i]).margin(1e-15));
    CHECK(chain.absorption[i] + chain.departure[i] ==
          Catch::Approx((i + 1) * theta * t.mean[i]).margin(1e-12));
    // Throughput falls below the playback rate at states 6..9.
    CHECK((chain.drain[i] < 0) == (i >= 6));
  }
}

TEST_CASE("fading entry distribution reduces to the geometric law when "
          "departure rates are flat") {
  const auto config = testutil::cell_fading();
  const double mu = 0.09;
  ThroughputMoments flat;
  flat.mean.resize(10);
  flat.var = Eigen::VectorXd::Zero(10);
  flat.scheduled_mean = Eigen::VectorXd::Zero(10);
  flat.scheduled_var = Eigen::VectorXd::Zero(10);
  for (int l = 1; l <= 10; ++l)
    flat.mean[l - 1] = mu / (l * config.duration_rate);
  const auto pi = entry_distribution_fading(config, flat).pi;
  const double rho = config.arrival_rate / mu;
  double norm = 0.0;
  for (int i = 0; i < 10; ++i) norm += std::pow(rho, i);
  for (int i = 0; i < 10; ++i)
    CHECK(pi[i] == Catch::Approx(std::pow(rho, i) / norm).epsilon(1e-10));

  auto single = config;
  single.admission_cap = 1;
  CHECK(entry_distribution_fading(single).pi[0] == Catch::Approx(1.0));
}

TEST_CASE("entry distributions are probability vectors on random scenarios") {
  std::mt19937_64 rng(20260809);
  for (int trial = 0; trial < 25; ++trial) {
    const auto config = testutil::random_config(rng);
    const auto pi = entry_distribution(config).pi;
    CHECK(pi.sum() == Catch::Approx(1.0).margin(1e-12));
    CHECK(pi.minCoeff() >= 0.0);
    CHECK(pi.maxCoeff() <= 1.0);
  }
}
