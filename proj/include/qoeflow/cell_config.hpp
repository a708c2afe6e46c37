// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qoeflow/errors.hpp"

namespace qoeflow {

/// Rayleigh fading / NSNR scheduling parameters. `mean_snr` is a linear
/// ratio, not dB. An optional modulation table replaces the Shannon rate
/// log2(1+snr) by a right-continuous step function: entries are
/// (snr_threshold, rate bits/s/Hz) with strictly increasing thresholds;
/// the rate below the first threshold is 0. Experimental.
struct FadingConfig {
  double spectrum_hz = 0.0;  // B
  double slot_s = 0.0;       // D_s
  double mean_snr = 0.0;     // linear mean SNR
  std::vector<std::pair<double, double>> modulation;
};

/// Variable-bit-rate playback statistics. Frame sizes are characterized by
/// their standard deviation; the mean frame size is bitrate / frame_rate.
struct VbrConfig {
  double frame_rate = 25.0;        // frames/s
  double frame_stddev_bits = 0.0;  // sigma
};

/// One streaming scenario. Units are fixed: bits, seconds, Hz.
struct CellConfig {
  std::string name = "scenario";
  int admission_cap = 1;           // K, max simultaneous flows
  double capacity_bps = 0.0;       // C, shared channel capacity
  double arrival_rate = 0.0;       // lambda, flows/s
  double duration_rate = 0.0;      // theta, 1/s (mean video duration 1/theta)
  double bitrate_bps = 0.0;        // mean playback rate
  double startup_threshold_s = 0;  // q_a, seconds of video
  double rebuffer_threshold_s = 0; // q_b, seconds of video
  std::optional<FadingConfig> fading;
  std::optional<VbrConfig> vbr;

  /// File-size rate theta_F = theta / bitrate: mean file size is
  /// bitrate / theta bits.
  double file_size_rate() const { return duration_rate / bitrate_bps; }

  /// Full-capacity service rate mu = C * theta_F.
  double service_rate() const { return capacity_bps * file_size_rate(); }

  void validate() const {
    auto field_error = [](const char* field, const char* why) {
      throw ConfigError(std::string(field) + ": " + why);
    };
    if (admission_cap < 1) field_error("cell.admission_cap", "must be >= 1");
    if (!(capacity_bps > 0)) field_error("cell.capacity_bps", "must be > 0");
    if (!(arrival_rate >= 0)) field_error("cell.arrival_rate", "must be >= 0");
    if (!(duration_rate > 0)) field_error("cell.duration_rate", "must be > 0");
    if (!(bitrate_bps > 0)) field_error("cell.bitrate_bps", "must be > 0");
    if (!(startup_threshold_s >= 0))
      field_error("thresholds.startup_s", "must be >= 0");
    if (!(rebuffer_threshold_s >= 0))
      field_error("thresholds.rebuffer_s", "must be >= 0");
    if (!std::isfinite(file_size_rate()) || !(file_size_rate() > 0))
      field_error("cell", "derived file size rate must be finite and positive");
    if (fading) {
      if (!(fading->spectrum_hz > 0))
        field_error("fading.spectrum_hz", "must be > 0");
      if (!(fading->slot_s > 0)) field_error("fading.slot_s", "must be > 0");
      if (!(fading->mean_snr > 0)) field_error("fading.mean_snr", "must be > 0");
      double prev = -1.0;
      for (const auto& [snr, rate] : fading->modulation) {
        if (snr < 0 || rate < 0 || snr <= prev)
          field_error("fading.modulation",
                      "thresholds must be nonnegative and strictly increasing");
        prev = snr;
      }
    }
    if (vbr) {
      if (!(vbr->frame_rate > 0)) field_error("vbr.frame_rate", "must be > 0");
      if (!(vbr->frame_stddev_bits >= 0))
        field_error("vbr.frame_size_stddev_bits", "must be >= 0");
    }
  }
};

/// Offered load rho = lambda / (C * theta_F).
inline double load_factor(const CellConfig& config) {
  config.validate();
  if (config.arrival_rate == 0.0) return 0.0;
  return config.arrival_rate / config.service_rate();
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj,
                                           const std::string& path,
                                           const char* key) {
  if (!obj.is_object() || !obj.contains(key))
    throw ConfigError(path.empty() ? std::string(key) : path + "." + key +
                      ": missing required field");
  return obj.at(key);
}

inline double require_number(const nlohmann::json& obj, const std::string& path,
                             const char* key) {
  const auto& v = require_field(obj, path, key);
  if (!v.is_number())
    throw ConfigError(path + "." + key + ": expected a number");
  return v.get<double>();
}

}  // namespace detail

inline CellConfig config_from_json(const nlohmann::json& j) {
  using detail::require_field;
  using detail::require_number;
  CellConfig c;
  if (j.contains("name")) c.name = j.at("name").get<std::string>();
  const auto& cell = require_field(j, "", "cell");
  c.admission_cap =
      static_cast<int>(require_number(cell, "cell", "admission_cap"));
  c.capacity_bps = require_number(cell, "cell", "capacity_bps");
  c.arrival_rate = require_number(cell, "cell", "arrival_rate");
  c.duration_rate = require_number(cell, "cell", "duration_rate");
  c.bitrate_bps = require_number(cell, "cell", "bitrate_bps");
  const auto& th = require_field(j, "", "thresholds");
  c.startup_threshold_s = require_number(th, "thresholds", "startup_s");
  c.rebuffer_threshold_s = require_number(th, "thresholds", "rebuffer_s");
  if (j.contains("fading") && !j.at("fading").is_null()) {
    const auto& f = j.at("fading");
    FadingConfig fc;
    fc.spectrum_hz = require_number(f, "fading", "spectrum_hz");
    fc.slot_s = require_number(f, "fading", "slot_s");
    fc.mean_snr = require_number(f, "fading", "mean_snr");
    if (f.contains("modulation")) {
      for (const auto& row : f.at("modulation")) {
        if (!row.is_array() || row.size() != 2)
          throw ConfigError("fading.modulation: expected [snr, rate] pairs");
        fc.modulation.emplace_back(row[0].get<double>(), row[1].get<double>());
      }
    }
    c.fading = std::move(fc);
  }
  if (j.contains("vbr") && !j.at("vbr").is_null()) {
    const auto& v = j.at("vbr");
    VbrConfig vc;
    vc.frame_rate = require_number(v, "vbr", "frame_rate");
    vc.frame_stddev_bits = require_number(v, "vbr", "frame_size_stddev_bits");
    c.vbr = vc;
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const CellConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  j["cell"] = {{"admission_cap", c.admission_cap},
               {"capacity_bps", c.capacity_bps},
               {"arrival_rate", c.arrival_rate},
               {"duration_rate", c.duration_rate},
               {"bitrate_bps", c.bitrate_bps}};
  j["thresholds"] = {{"startup_s", c.startup_threshold_s},
                     {"rebuffer_s", c.rebuffer_threshold_s}};
  if (c.fading) {
    j["fading"] = {{"spectrum_hz", c.fading->spectrum_hz},
                   {"slot_s", c.fading->slot_s},
                   {"mean_snr", c.fading->mean_snr}};
    if (!c.fading->modulation.empty())
      j["fading"]["modulation"] = c.fading->modulation;
  }
  if (c.vbr) {
    j["vbr"] = {{"frame_rate", c.vbr->frame_rate},
                {"frame_size_stddev_bits", c.vbr->frame_stddev_bits}};
  }
  return j;
}

inline CellConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a hash of the canonical serialized config, for provenance blocks.
inline std::string config_hash(const CellConfig& c) {
  const std::string s = config_to_json(c).dump();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

}  // namespace qoeflow
