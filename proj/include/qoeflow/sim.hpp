// Copyright (c) 2026 the qoeflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "qoeflow/cell_config.hpp"
#include "qoeflow/errors.hpp"

namespace qoeflow {

/// Deterministic random stream: one master seed fans out into independent
/// per-purpose streams so player-side parameters never perturb the flow
/// process. Sampling is explicit inverse-CDF on a 53-bit uniform, so results
/// are reproducible bit for bit.
class RandomStream {
 public:
  RandomStream(std::uint64_t master, std::uint64_t purpose,
               std::uint64_t replication) {
    std::seed_seq seq{master, purpose, replication};
    gen_.seed(seq);
  }

  double uniform() {  // strictly inside (0, 1)
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  /// Erlang(shape) with the given mean; switches to Marsaglia-Tsang gamma
  /// sampling once summing stages gets expensive.
  double erlang(int shape, double mean) {
    if (shape <= 16) {
      double sum = 0.0;
      for (int i = 0; i < shape; ++i) sum += exponential(shape / mean);
      return sum;
    }
    return gamma(static_cast<double>(shape)) * (mean / shape);
  }

  std::uint64_t integer(std::uint64_t bound) { return gen_() % bound; }

 private:
  double normal() {
    // Box-Muller, one value per call (cache-free keeps streams simple).
    const double u = uniform(), v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586 * v);
  }

  double gamma(double shape) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::mt19937_64 gen_;
};

struct SimOptions {
  std::uint64_t seed = 1;
  double horizon_s = 5e5;      // fluid/frame simulators
  long slots = 20000000;       // slot simulator
  int batches = 20;
  double warmup_frac = 0.05;
  int erlang_shape = 0;        // 0: derive from the configured frame stddev
  std::size_t max_startup_samples_per_state = 300000;
  std::string trace_path;      // empty: no trace
  long trace_limit = 100000;
};

/// Empirical counterparts of the analytical quantities, with batch-means
/// errors. Merging replications concatenates batches; all derived statistics
/// are recomputed from the pooled batches.
struct SimStats {
  int state_count = 0;
  int replications = 0;
  long admitted = 0;        // completed post-warmup sessions
  long blocked = 0;
  long counted = 0;         // admitted with duration > q_a
  long starved_sessions = 0;
  int max_concurrent = 0;
  double sim_time = 0.0;    // post-warmup span summed over replications
  double max_conservation_error = 0.0;
  bool low_sample_warning = false;

  std::vector<long> entry_counts;             // per entry state
  std::vector<long> playback_start_counts;    // per prefetch end state
  std::vector<long> starved_by_start;         // first starvations by start state
  std::vector<std::vector<long>> first_starvation_joint;  // [start][starve]
  std::vector<long> starvation_histogram;     // sessions with exactly L events
  std::vector<std::vector<double>> startup_samples;  // per entry state

  // One row per batch: sessions, starved sessions, per-state entry counts.
  std::vector<double> batch_sessions;
  std::vector<double> batch_starved;
  std::vector<std::vector<double>> batch_entry;

  // Slot-simulator extras, indexed by active-flow count n = 1..K.
  std::vector<double> sched_rate_sum;    // sum of log2(1+snr*) over slots at n
  std::vector<double> sched_rate_sumsq;
  std::vector<long> slots_at_count;
  std::vector<std::vector<long>> sched_position;  // histogram by join order

  // Frame-size moments (VBR), for the served-duration variance check.
  double frame_sum = 0.0, frame_sumsq = 0.0;
  long frame_count = 0;

  void init(int states, int histogram_size = 201) {
    state_count = states;
    entry_counts.assign(states, 0);
    playback_start_counts.assign(states, 0);
    starved_by_start.assign(states, 0);
    first_starvation_joint.assign(states, std::vector<long>(states, 0));
    starvation_histogram.assign(histogram_size, 0);
    startup_samples.assign(states, {});
    sched_rate_sum.assign(states + 1, 0.0);
    sched_rate_sumsq.assign(states + 1, 0.0);
    slots_at_count.assign(states + 1, 0);
    sched_position.assign(states + 1, std::vector<long>(states, 0));
    replications = 1;
  }

  double starvation_probability() const {
    return admitted ? static_cast<double>(starved_sessions) / admitted : 0.0;
  }

  /// Batch-means standard error of the starvation probability.
  double starvation_probability_stderr() const {
    std::vector<double> ratios;
    for (std::size_t b = 0; b < batch_sessions.size(); ++b)
      if (batch_sessions[b] > 0)
        ratios.push_back(batch_starved[b] / batch_sessions[b]);
    if (ratios.size() < 2) return std::numeric_limits<double>::infinity();
    double mean = 0.0;
    for (double r : ratios) mean += r;
    mean /= ratios.size();
    double var = 0.0;
    for (double r : ratios) var += (r - mean) * (r - mean);
    var /= (ratios.size() - 1);
    return std::sqrt(var / ratios.size());
  }

  double entry_frequency(int state) const {
    return admitted ? static_cast<double>(entry_counts[state]) / admitted : 0.0;
  }

  double entry_frequency_stderr(int state) const {
    std::vector<double> ratios;
    for (std::size_t b = 0; b < batch_entry.size(); ++b)
      if (batch_sessions[b] > 0)
        ratios.push_back(batch_entry[b][state] / batch_sessions[b]);
    if (ratios.size() < 2) return std::numeric_limits<double>::infinity();
    double mean = 0.0;
    for (double r : ratios) mean += r;
    mean /= ratios.size();
    double var = 0.0;
    for (double r : ratios) var += (r - mean) * (r - mean);
    var /= (ratios.size() - 1);
    return std::sqrt(var / ratios.size());
  }

  /// Share of sessions with exactly `count` starvations.
  double count_probability(int count) const {
    if (!admitted) return 0.0;
    if (count >= static_cast<int>(starvation_histogram.size())) return 0.0;
    return static_cast<double>(starvation_histogram[count]) / admitted;
  }

  double mean_starvations() const {
    if (!admitted) return 0.0;
    double sum = 0.0;
    for (std::size_t l = 1; l < starvation_histogram.size(); ++l)
      sum += l * starvation_histogram[l];
    return sum / admitted;
  }

  double mean_startup_delay() const {
    double sum = 0.0;
    long n = 0;
    for (const auto& samples : startup_samples) {
      for (double s : samples) sum += s;
      n += samples.size();
    }
    return n ? sum / n : 0.0;
  }

  /// Empirical starvation probability given the playback start state.
  double starvation_given_start(int state) const {
    return playback_start_counts[state]
               ? static_cast<double>(starved_by_start[state]) /
                     playback_start_counts[state]
               : 0.0;
  }

  double scheduled_rate_mean(int active) const {
    return slots_at_count[active]
               ? sched_rate_sum[active] / slots_at_count[active]
               : 0.0;
  }

  double scheduled_rate_stderr(int active) const {
    const long n = slots_at_count[active];
    if (n < 2) return std::numeric_limits<double>::infinity();
    const double mean = sched_rate_mean(active);
    const double var =
        (sched_rate_sumsq[active] - n * mean * mean) / (n - 1);
    return std::sqrt(std::max(0.0, var) / n);
  }

  void merge(const SimStats& other) {
    if (state_count == 0) {
      *this = other;
      return;
    }
    if (other.state_count != state_count)
      throw ConfigError("cannot merge stats with different state counts");
    replications += other.replications;
    admitted += other.admitted;
    blocked += other.blocked;
    counted += other.counted;
    starved_sessions += other.starved_sessions;
    max_concurrent = std::max(max_concurrent, other.max_concurrent);
    sim_time += other.sim_time;
    max_conservation_error =
        std::max(max_conservation_error, other.max_conservation_error);
    low_sample_warning = low_sample_warning || other.low_sample_warning;
    for (int i = 0; i < state_count; ++i) {
      entry_counts[i] += other.entry_counts[i];
      playback_start_counts[i] += other.playback_start_counts[i];
      starved_by_start[i] += other.starved_by_start[i];
      for (int j = 0; j < state_count; ++j)
        first_starvation_joint[i][j] += other.first_starvation_joint[i][j];
      auto& samples = startup_samples[i];
      samples.insert(samples.end(), other.startup_samples[i].begin(),
                     other.startup_samples[i].end());
    }
    for (std::size_t l = 0; l < starvation_histogram.size(); ++l)
      starvation_histogram[l] += other.starvation_histogram[l];
    batch_sessions.insert(batch_sessions.end(), other.batch_sessions.begin(),
                          other.batch_sessions.end());
    batch_starved.insert(batch_starved.end(), other.batch_starved.begin(),
                         other.batch_starved.end());
    batch_entry.insert(batch_entry.end(), other.batch_entry.begin(),
                       other.batch_entry.end());
    for (std::size_t n = 0; n < sched_rate_sum.size(); ++n) {
      sched_rate_sum[n] += other.sched_rate_sum[n];
      sched_rate_sumsq[n] += other.sched_rate_sumsq[n];
      slots_at_count[n] += other.slots_at_count[n];
      for (int j = 0; j < state_count; ++j)
        sched_position[n][j] += other.sched_position[n][j];
    }
    frame_sum += other.frame_sum;
    frame_sumsq += other.frame_sumsq;
    frame_count += other.frame_count;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["replications"] = replications;
    j["admitted"] = admitted;
    j["blocked"] = blocked;
    j["counted"] = counted;
    j["max_concurrent"] = max_concurrent;
    j["sim_time_s"] = sim_time;
    j["low_sample_warning"] = low_sample_warning;
    j["max_conservation_error"] = max_conservation_error;
    j["starvation_probability"] = starvation_probability();
    j["starvation_probability_stderr"] = starvation_probability_stderr();
    j["mean_starvations"] = mean_starvations();
    j["mean_startup_delay_s"] = mean_startup_delay();
    std::vector<double> entry(state_count), starts(state_count);
    for (int i = 0; i < state_count; ++i) {
      entry[i] = entry_frequency(i);
      starts[i] = admitted ? static_cast<double>(playback_start_counts[i]) /
                                 std::max<long>(1, counted)
                           : 0.0;
    }
    j["entry_frequencies"] = entry;
    j["playback_start_frequencies"] = starts;
    j["starvation_histogram"] = starvation_histogram;
    std::vector<double> w(state_count);
    for (int i = 0; i < state_count; ++i) w[i] = starvation_given_start(i);
    j["starvation_given_start"] = w;
    if (frame_count) {
      j["frame_count"] = frame_count;
      j["frame_mean_bits"] = frame_sum / frame_count;
      j["frame_var_bits"] =
          frame_sumsq / frame_count - (frame_sum / frame_count) *
                                          (frame_sum / frame_count);
    }
    return j;
  }
};

namespace detail {

struct TraceWriter {
  std::ofstream out;
  long remaining = 0;

  TraceWriter(const std::string& path, long limit) {
    if (!path.empty()) {
      out.open(path);
      remaining = limit;
    }
  }

  void emit(double t, const char* kind, int state, double buffer) {
    if (!out.is_open() || remaining <= 0) return;
    out << t << ' ' << kind << ' ' << state << ' ' << buffer << '\n';
    --remaining;
  }
};

enum class Phase { Prefetch, Playing, Rebuffering, Done };

struct FluidSession {
  double entry_time = 0.0;
  int entry_state = 0;
  double duration = 0.0;        // video seconds
  double delivered = 0.0;       // video seconds downloaded
  double played = 0.0;          // video seconds consumed
  Phase phase = Phase::Prefetch;
  bool counted = false;         // duration > q_a
  double startup_delay = -1.0;
  int playback_start_state = -1;
  int starvations = 0;
  int first_starvation_state = -1;
  bool stalled = false;         // zero-rebuffer stall (buffer pinned at 0)
};

/// Advances one fluid session through an interval where the environment is
/// frozen: `others` concurrent flows, fill rate `fill` video-seconds per
/// second. Transitions inside the interval (prefetch completion, starvation,
/// rebuffer completion) happen at exact crossing times.
inline void advance_fluid_session(FluidSession& s, double t0, double dt,
                                  double fill, int others, double q_a,
                                  double q_b, TraceWriter& trace) {
  double now = t0;
  double left = dt;
  for (int guard = 0; guard < 1000 && left > 0; ++guard) {
    switch (s.phase) {
      case Phase::Prefetch: {
        const double buffer = s.delivered - s.played;
        const double need = q_a - buffer;
        const double tau = need <= 0 ? 0.0 : need / fill;
        if (tau <= left) {
          s.delivered = s.played + q_a;
          now += tau;
          left -= tau;
          if (s.startup_delay < 0) {
            s.startup_delay = now - s.entry_time;
            s.playback_start_state = others;
          }
          s.phase = Phase::Playing;
          trace.emit(now, "playback_start", others, q_a);
        } else {
          s.delivered += fill * left;
          return;
        }
        break;
      }
      case Phase::Playing: {
        const double drain = fill - 1.0;
        double buffer = s.delivered - s.played;
        if (s.stalled) {
          if (drain < 0) {  // still pinned: play exactly what arrives
            s.delivered += fill * left;
            s.played = s.delivered;
            return;
          }
          s.stalled = false;
        }
        if (drain >= 0) {  // buffer grows for the rest of the interval
          s.delivered += fill * left;
          s.played += left;
          return;
        }
        const double tau = std::max(0.0, buffer / -drain);
        if (tau > left) {
          s.delivered += fill * left;
          s.played += left;
          return;
        }
        now += tau;
        left -= tau;
        s.delivered += fill * tau;
        s.played = s.delivered;
        ++s.starvations;
        if (s.first_starvation_state < 0) s.first_starvation_state = others;
        trace.emit(now, "starvation", others, 0.0);
        if (q_b > 0) {
          s.phase = Phase::Rebuffering;
        } else {
          s.stalled = true;  // resume at the delivery rate until drain flips
        }
        break;
      }
      case Phase::Rebuffering: {
        const double buffer = s.delivered - s.played;
        const double tau = (q_b - buffer) / fill;
        if (tau <= left) {
          s.delivered = s.played + q_b;
          now += tau;
          left -= tau;
          s.phase = Phase::Playing;
          trace.emit(now, "rebuffer_done", others, q_b);
        } else {
          s.delivered += fill * left;
          return;
        }
        break;
      }
      case Phase::Done:
        return;
    }
  }
}

struct BatchRecorder {
  int batches;
  double window_start, window_len;

  int index(double t) const {
    const int b = static_cast<int>((t - window_start) / window_len);
    return std::clamp(b, 0, batches - 1);
  }
};

inline void record_session(SimStats& stats, const BatchRecorder& batches,
                           const SimOptions& opts, double entry_time,
                           int entry_state, bool counted, double startup_delay,
                           int playback_start_state, int starvations,
                           int first_starvation_state,
                           double conservation_error) {
  ++stats.admitted;
  stats.entry_counts[entry_state]++;
  const int b = batches.index(entry_time);
  stats.batch_sessions[b] += 1.0;
  stats.batch_entry[b][entry_state] += 1.0;
  const int hist_cap = static_cast<int>(stats.starvation_histogram.size()) - 1;
  stats.starvation_histogram[std::min(starvations, hist_cap)]++;
  if (starvations > 0) {
    ++stats.starved_sessions;
    stats.batch_starved[b] += 1.0;
  }
  stats.max_conservation_error =
      std::max(stats.max_conservation_error, conservation_error);
  if (!counted) return;
  ++stats.counted;
  if (playback_start_state >= 0) {
    stats.playback_start_counts[playback_start_state]++;
    if (starvations > 0) {
      stats.starved_by_start[playback_start_state]++;
      stats.first_starvation_joint[playback_start_state]
                                  [first_starvation_state]++;
    }
    auto& samples = stats.startup_samples[entry_state];
    if (samples.size() < opts.max_startup_samples_per_state)
      samples.push_back(startup_delay);
  }
}

}  // namespace detail

/// Event-driven fluid simulation of the cell: Poisson arrivals blocked at
/// the admission cap, exponential file sizes, egalitarian processor sharing.
/// Every admitted flow doubles as a tagged session with exact piecewise-linear
/// buffer accounting. With arrival rate 0, sequential probe sessions are
/// injected so per-session statistics still exist.
inline SimStats simulate_cbr(const CellConfig& config, const SimOptions& opts) {
  config.validate();
  const int K = config.admission_cap;
  const double capacity_video = config.capacity_bps / config.bitrate_bps;
  const double q_a = config.startup_threshold_s;
  const double q_b = config.rebuffer_threshold_s;
  const double horizon = opts.horizon_s;
  const double warmup = opts.warmup_frac * horizon;
  RandomStream arrivals(opts.seed, 0, 1);
  RandomStream sizes(opts.seed, 1, 1);
  detail::TraceWriter trace(opts.trace_path, opts.trace_limit);

  SimStats stats;
  stats.init(K);
  stats.sim_time = horizon - warmup;
  stats.batch_sessions.assign(opts.batches, 0.0);
  stats.batch_starved.assign(opts.batches, 0.0);
  stats.batch_entry.assign(opts.batches, std::vector<double>(K, 0.0));
  detail::BatchRecorder batches{opts.batches, warmup,
                                (horizon - warmup) / opts.batches};

  struct Flow {
    double remaining;  // video seconds left to download
    detail::FluidSession session;
    bool measured;
  };
  std::vector<Flow> flows;
  flows.reserve(K);

  double t = 0.0;
  const bool probing = config.arrival_rate == 0.0;
  double next_arrival = probing ? 0.0 : arrivals.exponential(config.arrival_rate);

  auto finalize = [&](Flow& flow, double when) {
    auto& s = flow.session;
    s.phase = detail::Phase::Done;
    trace.emit(when, "departure", static_cast<int>(flows.size()) - 1, 0.0);
    if (!flow.measured) return;
    const double conservation =
        std::abs(s.delivered - s.duration) / std::max(1.0, s.duration);
    detail::record_session(stats, batches, opts, s.entry_time, s.entry_state,
                           s.counted, s.startup_delay, s.playback_start_state,
                           s.starvations, s.first_starvation_state,
                           conservation);
  };

  while (t < horizon) {
    const int n = static_cast<int>(flows.size());
    double next_departure = std::numeric_limits<double>::infinity();
    int departing = -1;
    if (n > 0) {
      double min_remaining = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) {
        if (flows[i].remaining < min_remaining) {
          min_remaining = flows[i].remaining;
          departing = i;
        }
      }
      next_departure = t + min_remaining * n / capacity_video;
    }
    double arrival_t = next_arrival;
    if (probing && n > 0)
      arrival_t = std::numeric_limits<double>::infinity();
    const double t_next = std::min({arrival_t, next_departure, horizon});
    const double dt = t_next - t;
    if (dt > 0 && n > 0) {
      const double fill = capacity_video / n;
      for (auto& flow : flows) {
        flow.remaining -= fill * dt;
        detail::advance_fluid_session(flow.session, t, dt, fill, n - 1, q_a,
                                      q_b, trace);
      }
    }
    t = t_next;
    if (t >= horizon) break;
    if (next_departure <= arrival_t) {
      flows[departing].remaining = 0.0;
      finalize(flows[departing], t);
      flows.erase(flows.begin() + departing);
    } else {
      // Arrival at time t. Probe arrivals rearm on the next empty system.
      if (!probing) next_arrival = t + arrivals.exponential(config.arrival_rate);
      const double duration = sizes.exponential(config.duration_rate);
      if (static_cast<int>(flows.size()) == K) {
        if (t >= warmup) ++stats.blocked;
        trace.emit(t, "blocked", K, 0.0);
      } else {
        Flow flow;
        flow.remaining = duration;
        flow.measured = t >= warmup;
        flow.session.entry_time = t;
        flow.session.entry_state = static_cast<int>(flows.size());
        flow.session.duration = duration;
        flow.session.counted = duration > q_a;
        flows.push_back(std::move(flow));
        stats.max_concurrent =
            std::max(stats.max_concurrent, static_cast<int>(flows.size()));
        trace.emit(t, "arrival", static_cast<int>(flows.size()) - 1, 0.0);
      }
    }
    if (probing && flows.empty()) next_arrival = t + 1.0;
  }
  if (stats.admitted < 100) stats.low_sample_warning = true;
  return stats;
}

/// Frame-level VBR variant: the system still moves bits through processor
/// sharing, but playback consumes whole frames at the frame rate and starves
/// when the next frame is incomplete at its deadline. Frame sizes are
/// Erlang(shape) with mean bitrate/frame_rate.
inline SimStats simulate_vbr(const CellConfig& config, int erlang_shape,
                             const SimOptions& opts) {
  config.validate();
  if (!config.vbr) throw ConfigError("vbr: block required");
  if (erlang_shape < 1) throw ConfigError("erlang shape must be >= 1");
  const int K = config.admission_cap;
  const double fps = config.vbr->frame_rate;
  const double frame_interval = 1.0 / fps;
  const double mean_frame = config.bitrate_bps / fps;
  const double q_a = config.startup_threshold_s;
  const double q_b = config.rebuffer_threshold_s;
  const long frames_startup = std::lround(std::ceil(q_a * fps - 1e-9));
  const long frames_rebuffer = std::lround(std::ceil(q_b * fps - 1e-9));
  const double horizon = opts.horizon_s;
  const double warmup = opts.warmup_frac * horizon;
  RandomStream arrivals(opts.seed, 0, 1);
  RandomStream sizes(opts.seed, 1, 1);
  RandomStream frames(opts.seed, 3, 1);
  detail::TraceWriter trace(opts.trace_path, opts.trace_limit);

  SimStats stats;
  stats.init(K);
  stats.sim_time = horizon - warmup;
  stats.batch_sessions.assign(opts.batches, 0.0);
  stats.batch_starved.assign(opts.batches, 0.0);
  stats.batch_entry.assign(opts.batches, std::vector<double>(K, 0.0));
  detail::BatchRecorder batches{opts.batches, warmup,
                                (horizon - warmup) / opts.batches};

  struct Flow {
    double remaining_bits = 0.0;
    double size_bits = 0.0;
    std::vector<double> frame_prefix;  // cumulative bits, length frames+1
    long frame_count = 0;
    // player state
    detail::Phase phase = detail::Phase::Prefetch;
    long next_frame = 0;
    double next_deadline = 0.0;
    double rebuffer_target_bits = 0.0;
    double entry_time = 0.0;
    int entry_state = 0;
    bool measured = false;
    bool counted = false;
    double startup_delay = -1.0;
    int playback_start_state = -1;
    int starvations = 0;
    int first_starvation_state = -1;

    double delivered() const { return size_bits - remaining_bits; }
  };
  std::vector<Flow> flows;
  flows.reserve(K);

  auto advance_player = [&](Flow& f, double t0, double dt, double rate_bps,
                            int others) {
    double now = t0;
    double left = dt;
    const double delivered0 = f.delivered() - rate_bps * dt;  // at t0
    auto delivered_at = [&](double when) {
      return delivered0 + rate_bps * (when - t0);
    };
    for (int guard = 0; guard < 100000 && left > 0; ++guard) {
      if (f.phase == detail::Phase::Prefetch ||
          f.phase == detail::Phase::Rebuffering) {
        const double target = f.phase == detail::Phase::Prefetch
                                  ? f.frame_prefix[std::min(
                                        frames_startup, f.frame_count)]
                                  : f.rebuffer_target_bits;
        const double need = target - delivered_at(now);
        const double tau = need <= 0 ? 0.0 : need / rate_bps;
        if (tau > left) return;
        now += tau;
        left -= tau;
        if (f.phase == detail::Phase::Prefetch && f.startup_delay < 0) {
          f.startup_delay = now - f.entry_time;
          f.playback_start_state = others;
          trace.emit(now, "playback_start", others, 0.0);
        }
        f.phase = detail::Phase::Playing;
        f.next_deadline = now;
      } else if (f.phase == detail::Phase::Playing) {
        if (f.next_frame >= f.frame_count) return;  // played out
        if (f.next_deadline > now + left) return;
        const double step = std::max(0.0, f.next_deadline - now);
        now += step;
        left -= step;
        if (delivered_at(now) + 1e-3 >= f.frame_prefix[f.next_frame + 1]) {
          ++f.next_frame;
          f.next_deadline += frame_interval;
        } else {
          ++f.starvations;
          if (f.first_starvation_state < 0) f.first_starvation_state = others;
          trace.emit(now, "starvation", others, 0.0);
          // Wait for q_b worth of further frames, and always at least the
          // frame the player is stuck on.
          const long target_frame =
              std::min(f.next_frame + std::max<long>(frames_rebuffer, 1),
                       f.frame_count);
          f.rebuffer_target_bits = f.frame_prefix[target_frame];
          f.phase = detail::Phase::Rebuffering;
        }
      } else {
        return;
      }
    }
  };

  auto finalize = [&](Flow& f, double when) {
    f.phase = detail::Phase::Done;
    if (!f.measured || when >= horizon) return;
    const double conservation =
        std::abs(f.remaining_bits) / std::max(1.0, f.size_bits);
    detail::record_session(stats, batches, opts, f.entry_time, f.entry_state,
                           f.counted, f.startup_delay, f.playback_start_state,
                           f.starvations, f.first_starvation_state,
                           conservation);
  };

  double t = 0.0;
  double next_arrival = config.arrival_rate > 0
                            ? arrivals.exponential(config.arrival_rate)
                            : std::numeric_limits<double>::infinity();
  while (t < horizon) {
    const int n = static_cast<int>(flows.size());
    double next_departure = std::numeric_limits<double>::infinity();
    int departing = -1;
    if (n > 0) {
      double min_remaining = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) {
        if (flows[i].remaining_bits < min_remaining) {
          min_remaining = flows[i].remaining_bits;
          departing = i;
        }
      }
      next_departure = t + min_remaining * n / config.capacity_bps;
    }
    const double t_next = std::min({next_arrival, next_departure, horizon});
    const double dt = t_next - t;
    if (dt > 0 && n > 0) {
      const double rate = config.capacity_bps / n;
      for (auto& f : flows) {
        f.remaining_bits -= rate * dt;
        advance_player(f, t, dt, rate, n - 1);
      }
    }
    t = t_next;
    if (t >= horizon) break;
    if (next_departure <= next_arrival) {
      flows[departing].remaining_bits = 0.0;
      finalize(flows[departing], t);
      flows.erase(flows.begin() + departing);
    } else {
      next_arrival = t + arrivals.exponential(config.arrival_rate);
      const double duration = sizes.exponential(config.duration_rate);
      if (static_cast<int>(flows.size()) == K) {
        if (t >= warmup) ++stats.blocked;
      } else {
        Flow f;
        f.frame_count = std::max<long>(1, std::lround(duration * fps));
        f.frame_prefix.resize(f.frame_count + 1);
        f.frame_prefix[0] = 0.0;
        for (long m = 0; m < f.frame_count; ++m) {
          const double size = frames.erlang(erlang_shape, mean_frame);
          f.frame_prefix[m + 1] = f.frame_prefix[m] + size;
          if (t >= warmup) {
            stats.frame_sum += size;
            stats.frame_sumsq += size * size;
            ++stats.frame_count;
          }
        }
        f.size_bits = f.frame_prefix[f.frame_count];
        f.remaining_bits = f.size_bits;
        f.entry_time = t;
        f.entry_state = static_cast<int>(flows.size());
        f.measured = t >= warmup;
        f.counted = f.frame_count > frames_startup;
        flows.push_back(std::move(f));
        stats.max_concurrent =
            std::max(stats.max_concurrent, static_cast<int>(flows.size()));
      }
    }
  }
  if (stats.admitted < 100) stats.low_sample_warning = true;
  return stats;
}

/// Slot-level Rayleigh/NSNR simulation: per slot, every active user draws an
/// i.i.d. exponential SNR and the largest normalized SNR wins the slot,
/// receiving B * D_s * log2(1 + snr) bits. Flow arrivals and departures are
/// resolved at slot boundaries; player accounting matches the fluid
/// simulator at slot granularity.
inline SimStats simulate_fading(const CellConfig& config,
                                const SimOptions& opts) {
  config.validate();
  if (!config.fading) throw ConfigError("fading: block required");
  const int K = config.admission_cap;
  const auto& fad = *config.fading;
  const double slot = fad.slot_s;
  const double q_a = config.startup_threshold_s;
  const double q_b = config.rebuffer_threshold_s;
  const long slots = opts.slots;
  const long warmup_slots = static_cast<long>(opts.warmup_frac * slots);
  RandomStream arrivals(opts.seed, 0, 1);
  RandomStream sizes(opts.seed, 1, 1);
  RandomStream snr(opts.seed, 2, 1);
  detail::TraceWriter trace(opts.trace_path, opts.trace_limit);

  SimStats stats;
  stats.init(K);
  stats.sim_time = (slots - warmup_slots) * slot;
  stats.batch_sessions.assign(opts.batches, 0.0);
  stats.batch_starved.assign(opts.batches, 0.0);
  stats.batch_entry.assign(opts.batches, std::vector<double>(K, 0.0));
  detail::BatchRecorder batches{opts.batches, warmup_slots * slot,
                                (slots - warmup_slots) * slot / opts.batches};

  struct Flow {
    double remaining_bits = 0.0;
    double size_bits = 0.0;
    double duration = 0.0;
    double delivered_video = 0.0;  // seconds of video
    double played = 0.0;
    detail::Phase phase = detail::Phase::Prefetch;
    double entry_time = 0.0;
    int entry_state = 0;
    bool measured = false;
    bool counted = false;
    double startup_delay = -1.0;
    int playback_start_state = -1;
    int starvations = 0;
    int first_starvation_state = -1;
  };
  std::vector<Flow> flows;
  flows.reserve(K);

  auto finalize = [&](Flow& f, double when) {
    f.phase = detail::Phase::Done;
    if (!f.measured) return;
    const double conservation =
        std::abs(f.delivered_video - f.duration) / std::max(1.0, f.duration);
    detail::record_session(stats, batches, opts, f.entry_time, f.entry_state,
                           f.counted, f.startup_delay, f.playback_start_state,
                           f.starvations, f.first_starvation_state,
                           conservation);
  };

  double next_arrival = config.arrival_rate > 0
                            ? arrivals.exponential(config.arrival_rate)
                            : std::numeric_limits<double>::infinity();
  for (long s = 0; s < slots; ++s) {
    const double t = s * slot;
    // Arrivals land on slot boundaries.
    while (next_arrival <= t) {
      next_arrival += arrivals.exponential(config.arrival_rate);
      const double duration = sizes.exponential(config.duration_rate);
      if (static_cast<int>(flows.size()) == K) {
        if (s >= warmup_slots) ++stats.blocked;
        continue;
      }
      Flow f;
      f.duration = duration;
      f.size_bits = duration * config.bitrate_bps;
      f.remaining_bits = f.size_bits;
      f.entry_time = t;
      f.entry_state = static_cast<int>(flows.size());
      f.measured = s >= warmup_slots;
      f.counted = duration > q_a;
      flows.push_back(std::move(f));
      stats.max_concurrent =
          std::max(stats.max_concurrent, static_cast<int>(flows.size()));
    }
    const int n = static_cast<int>(flows.size());
    if (n == 0) continue;
    // NSNR pick: homogeneous mean SNR, so the largest draw wins.
    int winner = 0;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
      const double draw = snr.exponential(1.0 / fad.mean_snr);
      if (draw > best) {
        best = draw;
        winner = i;
      }
    }
    const double rate = std::log2(1.0 + best);
    if (s >= warmup_slots) {
      stats.sched_rate_sum[n] += rate;
      stats.sched_rate_sumsq[n] += rate * rate;
      stats.slots_at_count[n]++;
      stats.sched_position[n][winner]++;
    }
    const double bits =
        std::min(flows[winner].remaining_bits, fad.spectrum_hz * slot * rate);
    flows[winner].remaining_bits -= bits;
    flows[winner].delivered_video += bits / config.bitrate_bps;
    // Player accounting at slot granularity.
    const double t_end = t + slot;
    for (auto& f : flows) {
      switch (f.phase) {
        case detail::Phase::Prefetch:
          if (f.delivered_video >= q_a) {
            f.startup_delay = t_end - f.entry_time;
            f.playback_start_state = n - 1;
            f.phase = detail::Phase::Playing;
          }
          break;
        case detail::Phase::Playing: {
          f.played += slot;
          if (f.played > f.delivered_video) {
            f.played = f.delivered_video;
            ++f.starvations;
            if (f.first_starvation_state < 0)
              f.first_starvation_state = n - 1;
            f.phase = detail::Phase::Rebuffering;
          }
          break;
        }
        case detail::Phase::Rebuffering:
          if (f.delivered_video - f.played >= q_b)
            f.phase = detail::Phase::Playing;
          break;
        case detail::Phase::Done:
          break;
      }
    }
    for (int i = n - 1; i >= 0; --i) {
      if (flows[i].remaining_bits <= 0.0) {
        flows[i].delivered_video = flows[i].duration;
        finalize(flows[i], t_end);
        flows.erase(flows.begin() + i);
      }
    }
  }
  if (stats.admitted < 100) stats.low_sample_warning = true;
  return stats;
}

/// Dispatches on the configured blocks: fading -> slot simulation,
/// vbr -> frame simulation, otherwise the fluid CBR simulator.
inline SimStats simulate(const CellConfig& config, const SimOptions& opts) {
  if (config.fading) return simulate_fading(config, opts);
  if (config.vbr) {
    int shape = opts.erlang_shape;
    if (shape < 1) {
      const double mean_frame = config.bitrate_bps / config.vbr->frame_rate;
      const double sigma = config.vbr->frame_stddev_bits;
      shape = sigma > 0 ? std::max(1, static_cast<int>(std::lround(
                              mean_frame * mean_frame / (sigma * sigma))))
                        : 400;  // near-degenerate frames
    }
    return simulate_vbr(config, shape, opts);
  }
  return simulate_cbr(config, opts);
}

/// Independent replications with derived seeds, merged. Batch counts add up,
/// so standard errors shrink like 1/sqrt(replications).
inline SimStats simulate_replicated(const CellConfig& config,
                                    const SimOptions& opts, int replications) {
  if (replications < 1) throw ConfigError("replications must be >= 1");
  SimStats total;
  for (int r = 0; r < replications; ++r) {
    SimOptions rep = opts;
    rep.seed = opts.seed + 0x9e3779b97f4a7c15ull * r;
    if (r > 0) rep.trace_path.clear();
    total.merge(simulate(config, rep));
  }
  return total;
}

}  // namespace qoeflow
