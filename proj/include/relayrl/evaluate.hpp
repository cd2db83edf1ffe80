#pragma once
// Evaluation protocol: scripted scenario batteries, robustness sweeps under
// load growth, trip response times, and side-by-side strategy comparison.
// Every battery derives one seed per episode, so two strategies given the
// same seed face bitwise-identical episode realizations.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "relayrl/classify.hpp"
#include "relayrl/dqn.hpp"
#include "relayrl/policy.hpp"

namespace relayrl {

enum class ScenarioKind { LocalFault, Backup, RemoteFault, NoFault };

inline const char* scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::LocalFault: return "local_fault";
    case ScenarioKind::Backup: return "backup";
    case ScenarioKind::RemoteFault: return "remote_fault";
    case ScenarioKind::NoFault: return "no_fault";
  }
  return "unknown";
}

inline std::vector<ScenarioKind> all_scenarios() {
  return {ScenarioKind::LocalFault, ScenarioKind::Backup, ScenarioKind::RemoteFault,
          ScenarioKind::NoFault};
}

// Greedy adapter over trained agents; evaluation never explores.
class DqnPolicy : public Policy {
 public:
  explicit DqnPolicy(const std::map<int, DqnAgent>* agents) : agents_(agents) {}

  void begin_episode(const EpisodeContext& ctx) override {
    ids_ = ctx.relay_ids;
    for (int id : ids_)
      if (!agents_->count(id))
        throw std::invalid_argument("no trained agent for relay " + std::to_string(id));
  }

  std::vector<int> act(int, const std::vector<RelayObservation>& obs) override {
    std::vector<int> a(obs.size(), kActionCountdown);
    for (std::size_t i = 0; i < obs.size(); ++i)
      a[i] = agents_->at(ids_[i]).act_greedy(encode_state(obs[i]));
    return a;
  }

 private:
  const std::map<int, DqnAgent>* agents_;
  std::vector<int> ids_;
};

namespace detail {

inline int relay_for_segment(const FeederTopology& topo, int segment) {
  for (const auto& r : topo.relays)
    if (r.segment == segment) return r.id;
  return -1;
}

// (primary relay, its upstream backup) pairs, ordered by primary id.
inline std::vector<std::pair<int, int>> backup_pairs(const FeederTopology& topo) {
  std::vector<std::pair<int, int>> pairs;
  for (const auto& r : topo.relays)
    if (r.downstream >= 0) pairs.emplace_back(r.downstream, r.id);
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

}  // namespace detail

// Per-episode constraints for one scenario draw. A local fault pins the
// faulted segment's breaker functional; a backup scenario forces it stuck
// and keeps the backup relay's breaker functional so coordination is the
// thing under test. Fault position, impedance, onset, and loading stay on
// the episode stream.
inline EpisodeOverride scenario_override(const FeederTopology& topo, ScenarioKind kind,
                                         Rng& rng) {
  EpisodeOverride ov;
  switch (kind) {
    case ScenarioKind::LocalFault: {
      const auto& r = topo.relays[rng.uniform_int(static_cast<int>(topo.relays.size()))];
      ov.force_fault = true;
      ov.fault_segment = r.segment;
      ov.breaker_fate[r.id] = false;
      break;
    }
    case ScenarioKind::Backup: {
      auto pairs = detail::backup_pairs(topo);
      if (pairs.empty()) throw std::invalid_argument("topology has no backup relation");
      auto [primary, backup] = pairs[rng.uniform_int(static_cast<int>(pairs.size()))];
      ov.force_fault = true;
      ov.fault_segment = topo.relay_by_id(primary)->segment;
      ov.breaker_fate[primary] = true;
      ov.breaker_fate[backup] = false;
      break;
    }
    case ScenarioKind::RemoteFault: {
      std::vector<int> segs;
      for (std::size_t s = 0; s < topo.segments.size(); ++s)
        if (detail::relay_for_segment(topo, static_cast<int>(s)) < 0)
          segs.push_back(static_cast<int>(s));
      if (segs.empty()) throw std::invalid_argument("topology has no unprotected segment");
      ov.force_fault = true;
      ov.fault_segment = segs[rng.uniform_int(static_cast<int>(segs.size()))];
      break;
    }
    case ScenarioKind::NoFault:
      ov.force_fault = false;
      break;
  }
  return ov;
}

struct ScenarioReport {
  ScenarioKind kind = ScenarioKind::NoFault;
  int episodes = 0;
  int failed = 0;  // episodes with any misoperation
  int false_positive = 0;
  int false_negative = 0;
  int backup_before_primary = 0;

  double rate() const { return episodes > 0 ? static_cast<double>(failed) / episodes : 0.0; }
};

struct FailureReport {
  std::vector<ScenarioReport> rows;

  const ScenarioReport& row(ScenarioKind k) const {
    for (const auto& r : rows)
      if (r.kind == k) return r;
    throw std::invalid_argument(std::string("report has no row for ") + scenario_name(k));
  }
};

namespace detail {

inline std::uint64_t episode_seed(std::uint64_t seed, ScenarioKind kind, int ep) {
  return derive_seed(seed, {0x5343454eULL, static_cast<std::uint64_t>(kind),
                            static_cast<std::uint64_t>(ep)});
}

}  // namespace detail

inline ScenarioReport run_scenario(const FeederTopology& topo, const EpisodeConfig& cfg,
                                   Policy& policy, ScenarioKind kind, int n_episodes,
                                   std::uint64_t seed) {
  if (n_episodes <= 0) throw std::invalid_argument("episode count must be positive");
  ScenarioReport rep;
  rep.kind = kind;
  Environment env(topo, cfg, seed);
  for (int ep = 0; ep < n_episodes; ++ep) {
    std::uint64_t es = detail::episode_seed(seed, kind, ep);
    Rng rng(derive_seed(es, {0x4f564552ULL}));
    EpisodeOverride ov = scenario_override(topo, kind, rng);
    ov.seed = es;
    TraceClassification c = classify_trace(topo, rollout(env, policy, ov));
    ++rep.episodes;
    if (c.episode_failed) ++rep.failed;
    if (c.any_false_positive) ++rep.false_positive;
    if (c.any_false_negative) ++rep.false_negative;
    if (c.backup_before_primary) ++rep.backup_before_primary;
  }
  return rep;
}

inline FailureReport run_all_scenarios(const FeederTopology& topo, const EpisodeConfig& cfg,
                                       Policy& policy, int n_episodes, std::uint64_t seed) {
  FailureReport rep;
  for (ScenarioKind k : all_scenarios())
    rep.rows.push_back(run_scenario(topo, cfg, policy, k, n_episodes, seed));
  return rep;
}

// Trip timing measured from fault onset to the breaker actually opening.
// Episodes where the responsible relay never opened are counted, not pooled
// into the delay statistics.
struct ResponseTimeStats {
  double timestep_seconds = 0.0;
  int primary_trips = 0;
  int primary_no_trip = 0;
  double primary_mean_steps = 0.0;
  int primary_max_steps = 0;
  int backup_trips = 0;
  int backup_no_trip = 0;
  double backup_mean_steps = 0.0;
  int backup_max_steps = 0;

  double primary_mean_seconds() const { return primary_mean_steps * timestep_seconds; }
  double primary_max_seconds() const { return primary_max_steps * timestep_seconds; }
  double backup_mean_seconds() const { return backup_mean_steps * timestep_seconds; }
  double backup_max_seconds() const { return backup_max_steps * timestep_seconds; }
};

namespace detail {

// First step at which the given relay's breaker opened, or -1.
inline int opening_step(const EpisodeTrace& tr, int relay_id) {
  int idx = -1;
  for (std::size_t i = 0; i < tr.relay_ids.size(); ++i)
    if (tr.relay_ids[i] == relay_id) idx = static_cast<int>(i);
  if (idx < 0) return -1;
  for (const auto& s : tr.steps)
    if (s.relay[idx].opened && !s.relay[idx].exogenous_open) return s.t;
  return -1;
}

}  // namespace detail

inline ResponseTimeStats response_time(const FeederTopology& topo, const EpisodeConfig& cfg,
                                       Policy& policy, int n_episodes, std::uint64_t seed) {
  if (n_episodes <= 0) throw std::invalid_argument("episode count must be positive");
  ResponseTimeStats st;
  st.timestep_seconds = cfg.timestep_seconds;
  Environment env(topo, cfg, seed);
  for (ScenarioKind kind : {ScenarioKind::LocalFault, ScenarioKind::Backup}) {
    bool primary_role = kind == ScenarioKind::LocalFault;
    double sum = 0.0;
    int trips = 0, misses = 0, worst = 0;
    for (int ep = 0; ep < n_episodes; ++ep) {
      std::uint64_t es = detail::episode_seed(seed, kind, ep);
      Rng rng(derive_seed(es, {0x4f564552ULL}));
      EpisodeOverride ov = scenario_override(topo, kind, rng);
      ov.seed = es;
      const EpisodeTrace& tr = rollout(env, policy, ov);
      int faulted = *ov.fault_segment;
      int responsible = detail::relay_for_segment(topo, faulted);
      if (!primary_role) {
        for (auto [p, b] : detail::backup_pairs(topo))
          if (p == responsible) responsible = b;
      }
      int opened = detail::opening_step(tr, responsible);
      if (opened < 0) {
        ++misses;
        continue;
      }
      int delay = opened - tr.fault->onset_step;
      sum += delay;
      worst = std::max(worst, delay);
      ++trips;
    }
    double mean = trips > 0 ? sum / trips : 0.0;
    if (primary_role) {
      st.primary_trips = trips;
      st.primary_no_trip = misses;
      st.primary_mean_steps = mean;
      st.primary_max_steps = worst;
    } else {
      st.backup_trips = trips;
      st.backup_no_trip = misses;
      st.backup_mean_steps = mean;
      st.backup_max_steps = worst;
    }
  }
  return st;
}

// Load-growth stress without retraining. The peak axis narrows the trend
// interval to [peak, peak*(1+x%)]: every episode runs at or above the
// training peak. The mean axis shifts the whole trend interval up by x%.
enum class StressAxis { PeakLoad, MeanLoad };

inline EpisodeConfig stressed_config(const EpisodeConfig& cfg, StressAxis axis, double percent) {
  if (percent < 0.0) throw std::invalid_argument("stress percent must be non-negative");
  EpisodeConfig out = cfg;
  double s = 1.0 + percent / 100.0;
  if (axis == StressAxis::PeakLoad) {
    out.trend_min = cfg.trend_max;
    out.trend_max = cfg.trend_max * s;
  } else {
    out.trend_min = cfg.trend_min * s;
    out.trend_max = cfg.trend_max * s;
  }
  return out;
}

// Failure rate over the unconstrained episode mix at the given config; the
// seed fixes the episode set independently of the policy under test.
inline double failure_rate(const FeederTopology& topo, const EpisodeConfig& cfg, Policy& policy,
                           int n_episodes, std::uint64_t seed) {
  if (n_episodes <= 0) throw std::invalid_argument("episode count must be positive");
  Environment env(topo, cfg, seed);
  int failed = 0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    EpisodeOverride ov;
    ov.seed = derive_seed(seed, {0x4d495845ULL, static_cast<std::uint64_t>(ep)});
    if (classify_trace(topo, rollout(env, policy, ov)).episode_failed) ++failed;
  }
  return static_cast<double>(failed) / n_episodes;
}

struct RobustnessSweep {
  StressAxis axis = StressAxis::PeakLoad;
  std::vector<double> stress_percent;
  std::vector<double> rate_rl;
  std::vector<double> rate_baseline;
};

inline RobustnessSweep robustness_sweep(const FeederTopology& topo, const EpisodeConfig& cfg,
                                        Policy& rl, Policy& baseline, StressAxis axis,
                                        double max_percent, double step_percent, int n_episodes,
                                        std::uint64_t seed) {
  if (step_percent <= 0.0) throw std::invalid_argument("step percent must be positive");
  if (max_percent < 0.0) throw std::invalid_argument("max percent must be non-negative");
  RobustnessSweep sw;
  sw.axis = axis;
  for (double x = 0.0; x <= max_percent + 1e-9; x += step_percent) {
    EpisodeConfig stressed = stressed_config(cfg, axis, x);
    std::uint64_t level_seed =
        derive_seed(seed, {0x53545253ULL, static_cast<std::uint64_t>(x * 1000.0)});
    sw.stress_percent.push_back(x);
    sw.rate_rl.push_back(failure_rate(topo, stressed, rl, n_episodes, level_seed));
    sw.rate_baseline.push_back(failure_rate(topo, stressed, baseline, n_episodes, level_seed));
  }
  return sw;
}

inline void export_sweep_csv(const RobustnessSweep& sw, std::ostream& os) {
  os << "stress_percent,rate_rl,rate_baseline\n";
  for (std::size_t i = 0; i < sw.stress_percent.size(); ++i)
    os << format_double(sw.stress_percent[i]) << ',' << format_double(sw.rate_rl[i]) << ','
       << format_double(sw.rate_baseline[i]) << '\n';
}

namespace detail {

inline void check_comparable(const FailureReport& rl, const FailureReport& baseline) {
  if (rl.rows.empty() || baseline.rows.empty())
    throw std::invalid_argument("comparison needs at least one scenario");
  if (rl.rows.size() != baseline.rows.size())
    throw std::invalid_argument("reports cover different scenario sets");
  for (std::size_t i = 0; i < rl.rows.size(); ++i)
    if (rl.rows[i].kind != baseline.rows[i].kind ||
        rl.rows[i].episodes != baseline.rows[i].episodes)
      throw std::invalid_argument("reports cover different scenario sets");
}

}  // namespace detail

// Aligned text table: failure rate per scenario for both strategies plus the
// baseline-minus-rl delta in percentage points.
inline std::string compare_report(const FailureReport& rl, const FailureReport& baseline) {
  detail::check_comparable(rl, baseline);
  std::ostringstream os;
  os << std::left << std::setw(14) << "scenario" << std::right << std::setw(10) << "episodes"
     << std::setw(12) << "baseline" << std::setw(12) << "rl" << std::setw(12) << "delta"
     << '\n';
  os << std::fixed << std::setprecision(2);
  for (std::size_t i = 0; i < rl.rows.size(); ++i) {
    const ScenarioReport& a = baseline.rows[i];
    const ScenarioReport& b = rl.rows[i];
    os << std::left << std::setw(14) << scenario_name(b.kind) << std::right << std::setw(10)
       << b.episodes << std::setw(11) << 100.0 * a.rate() << '%' << std::setw(11)
       << 100.0 * b.rate() << '%' << std::setw(11) << 100.0 * (a.rate() - b.rate()) << '%'
       << '\n';
  }
  return os.str();
}

inline void export_comparison_csv(const FailureReport& rl, const FailureReport& baseline,
                                  std::ostream& os) {
  detail::check_comparable(rl, baseline);
  os << "scenario,episodes,rate_baseline,rate_rl\n";
  for (std::size_t i = 0; i < rl.rows.size(); ++i)
    os << scenario_name(rl.rows[i].kind) << ',' << rl.rows[i].episodes << ','
       << format_double(baseline.rows[i].rate()) << ',' << format_double(rl.rows[i].rate())
       << '\n';
}

}  // namespace relayrl
