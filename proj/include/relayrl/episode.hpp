#pragma once

#include <array>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "relayrl/circuit.hpp"
#include "relayrl/feeder.hpp"
#include "relayrl/rng.hpp"

namespace relayrl {

// Action indices. 0 decrements an armed counter (and is the idle action),
// 1..9 arm the counter at that value, 10 disarms it.
constexpr int kActionCountdown = 0;
constexpr int kActionReset = 10;
constexpr int kNumActions = 11;
inline int action_set(int k) {
  if (k < 1 || k > 9) throw std::invalid_argument("set action needs 1..9");
  return k;
}

// What a relay is exposed to at one step, per the four situations the reward
// table distinguishes.
enum class StepCondition {
  Normal = 0,         // no active fault anywhere (or fault not yet / no longer alive)
  FaultInMain = 1,    // active fault inside the relay's primary region
  FaultAsBackup = 2,  // active fault in the backup region after the downstream
                      // primary's trip command has been ignored
  FaultOutside = 3,   // active fault outside the relay's assigned regions
};

// Reward table. "tripped" means the relay issued its first trip command at
// this step; everything else counts as holding.
inline double reward_value(StepCondition c, bool tripped) {
  switch (c) {
    case StepCondition::Normal: return tripped ? -150.0 : 3.0;
    case StepCondition::FaultInMain: return tripped ? 120.0 : -3.0;
    case StepCondition::FaultAsBackup: return tripped ? 100.0 : -2.0;
    case StepCondition::FaultOutside: return tripped ? -150.0 : 5.0;
  }
  throw std::logic_error("unreachable");
}

struct RelayObservation {
  std::vector<double> voltage;  // |V| window, oldest first, length m
  std::vector<double> current;  // |I| window, oldest first, length m
  bool breaker_closed = true;
  int counter = 0;  // 0 = disarmed
};

// Flat network input: [V window, I window / 10, breaker closed flag, counter / 9].
inline std::vector<double> encode_state(const RelayObservation& o) {
  std::vector<double> s;
  s.reserve(o.voltage.size() + o.current.size() + 2);
  for (double v : o.voltage) s.push_back(v);
  for (double i : o.current) s.push_back(i / 10.0);
  s.push_back(o.breaker_closed ? 1.0 : 0.0);
  s.push_back(o.counter / 9.0);
  return s;
}

struct EpisodeConfig {
  int horizon = 240;
  int window = 10;
  double timestep_seconds = 1.0 / 600.0;
  double fault_probability = 0.8;
  int onset_min = 60;
  int onset_max = 120;
  double fault_impedance_min = 0.05;
  double fault_impedance_max = 1.5;
  double trend_min = 0.7;
  double trend_max = 1.3;
  double local_min = 0.8;
  double local_max = 1.2;
  double jitter_sd = 0.01;
  double breaker_failure_prob = 0.1;
  int settle_steps = 20;  // steps kept running after the fault clears
  // With this probability an episode contains one spontaneous upstream
  // breaker opening (maintenance switching); exposes relays to de-energized
  // lines they must hold through. Off by default.
  double isolation_prob = 0.0;

  void validate() const {
    if (horizon <= 0 || window <= 0) throw std::invalid_argument("horizon/window must be positive");
    if (onset_min > onset_max || onset_min < 0 || onset_max >= horizon)
      throw std::invalid_argument("fault onset range invalid");
    if (fault_probability < 0.0 || fault_probability > 1.0)
      throw std::invalid_argument("fault probability outside [0,1]");
    if (fault_impedance_min > fault_impedance_max || fault_impedance_min < 0.0)
      throw std::invalid_argument("fault impedance range invalid");
    if (breaker_failure_prob < 0.0 || breaker_failure_prob > 1.0)
      throw std::invalid_argument("breaker failure probability outside [0,1]");
    if (jitter_sd < 0.0) throw std::invalid_argument("jitter must be non-negative");
    if (settle_steps < 0) throw std::invalid_argument("settle steps must be non-negative");
    if (isolation_prob < 0.0 || isolation_prob > 1.0)
      throw std::invalid_argument("isolation probability outside [0,1]");
  }
};

// Per-reset forcing used by evaluation scenarios. Unset fields are sampled.
struct EpisodeOverride {
  std::optional<std::uint64_t> seed;      // reseed this episode's stream
  std::optional<bool> force_fault;       // override the fault coin
  std::optional<int> fault_segment;
  std::optional<double> fault_position;
  std::optional<double> fault_impedance;
  std::optional<int> onset;
  std::map<int, bool> breaker_fate;      // relay id -> breaker stuck when commanded
};

struct TraceRelayStep {
  double voltage = 0.0;  // measurement taken this step (window tail)
  double current = 0.0;
  int action = kActionCountdown;
  double reward = 0.0;
  int counter_after = 0;
  bool breaker_closed = true;   // status after this step
  bool command_issued = false;  // counter expiry reached the breaker this step
  bool command_ignored = false; // ...and the breaker is stuck
  bool opened = false;          // breaker physically opened this step
  bool exogenous_open = false;  // opening came from the isolation event
  StepCondition condition = StepCondition::Normal;
};

struct TraceStep {
  int t = 0;
  bool fault_active = false;
  double global_reward = 0.0;
  std::vector<TraceRelayStep> relay;  // parallel to relay_ids
};

struct EpisodeTrace {
  std::vector<int> relay_ids;
  std::optional<FaultSpec> fault;      // onset_step filled in
  std::map<int, bool> breaker_failed;  // sampled fate per relay
  int isolation_relay = -1;            // -1: no isolation event
  int isolation_step = -1;
  int cleared_step = -1;               // first step the fault point was de-energized
  LoadProfile profile;
  std::vector<TraceStep> steps;
};

struct StepResult {
  int t = -1;  // -1 for the reset observation
  std::vector<RelayObservation> obs;  // parallel to relay_ids
  std::vector<double> reward;
  double global_reward = 0.0;
  bool done = false;
  bool fault_active = false;
  std::vector<int> opened;     // relay ids whose breaker opened this step
  std::vector<int> commanded;  // relay ids that issued a trip command this step
  std::vector<int> ignored;    // commands that hit a stuck breaker
};

// Discrete-time multi-relay environment around the quasi-static feeder solve.
//
// Step order: (1) breaker openings scheduled last step (and any isolation
// event) take effect; (2) actions update counters, expiries issue trip
// commands, a command on a functional breaker schedules its opening for the
// next step, on a stuck breaker it is ignored permanently; (3) loads are
// jittered and the circuit solved, the fault shunt being present from its
// onset step while its segment stays energized; (4) measurement windows
// shift and rewards are assigned. So a counter expiring at step t opens the
// breaker in the solve of step t+1.
//
// All episode randomness is drawn at reset plus one jitter draw per load per
// step, independent of actions: two policies stepping an environment seeded
// the same way experience the identical load/fault realization.
class Environment {
 public:
  Environment(FeederTopology topo, EpisodeConfig cfg, std::uint64_t seed)
      : topo_(std::move(topo)), cfg_(cfg), master_seed_(seed), rng_(0) {
    topo_.validate();
    cfg_.validate();
    for (const auto& r : topo_.relays) relay_ids_.push_back(r.id);
    for (const auto& r : topo_.relays) {
      primary_.push_back(topo_.primary_zone(r.id));
      backup_.push_back(topo_.backup_zone(r.id));
    }
  }

  const FeederTopology& topology() const { return topo_; }
  const EpisodeConfig& config() const { return cfg_; }
  const std::vector<int>& relay_ids() const { return relay_ids_; }
  int state_dimension() const { return 2 * cfg_.window + 2; }
  bool done() const { return done_; }
  const EpisodeTrace& trace() const { return trace_; }

  StepResult reset(const EpisodeOverride& ov = {}) {
    std::uint64_t ep_seed = ov.seed ? derive_seed(*ov.seed, {0x45505345ULL})
                                    : derive_seed(master_seed_, {0x45505345ULL, episode_counter_});
    ++episode_counter_;
    rng_ = Rng(ep_seed);
    started_ = true;
    done_ = false;
    t_ = 0;
    trace_ = EpisodeTrace{};
    trace_.relay_ids = relay_ids_;

    trace_.profile = sample_load_profile(rng_, topo_, cfg_.trend_min, cfg_.trend_max,
                                         cfg_.local_min, cfg_.local_max);

    bool with_fault = ov.force_fault
                          ? *ov.force_fault
                          : (cfg_.fault_probability >= 1.0 ||
                             (cfg_.fault_probability > 0.0 && rng_.bernoulli(cfg_.fault_probability)));
    if (with_fault) {
      FaultSpec f;
      f.segment = ov.fault_segment ? *ov.fault_segment
                                   : rng_.uniform_int(static_cast<int>(topo_.segments.size()));
      if (f.segment < 0 || f.segment >= static_cast<int>(topo_.segments.size()))
        throw std::invalid_argument("fault segment out of range");
      f.position = ov.fault_position ? *ov.fault_position : rng_.uniform01();
      double zf = ov.fault_impedance
                      ? *ov.fault_impedance
                      : rng_.uniform(cfg_.fault_impedance_min, cfg_.fault_impedance_max);
      f.impedance = Complex{zf, 0.0};
      f.onset_step = ov.onset ? *ov.onset
                              : cfg_.onset_min + rng_.uniform_int(cfg_.onset_max - cfg_.onset_min + 1);
      if (f.onset_step < 0 || f.onset_step >= cfg_.horizon)
        throw std::invalid_argument("fault onset outside the episode");
      trace_.fault = f;
    }
    for (int id : relay_ids_) {
      auto it = ov.breaker_fate.find(id);
      bool failed = it != ov.breaker_fate.end()
                        ? it->second
                        : (cfg_.breaker_failure_prob >= 1.0 ||
                           (cfg_.breaker_failure_prob > 0.0 && rng_.bernoulli(cfg_.breaker_failure_prob)));
      trace_.breaker_failed[id] = failed;
    }
    if (cfg_.isolation_prob > 0.0 && rng_.bernoulli(cfg_.isolation_prob)) {
      trace_.isolation_relay = relay_ids_[rng_.uniform_int(static_cast<int>(relay_ids_.size()))];
      int lo = 30, hi = std::max(lo + 1, cfg_.horizon - 2 * cfg_.settle_steps);
      trace_.isolation_step = lo + rng_.uniform_int(hi - lo);
    }

    const int n = static_cast<int>(relay_ids_.size());
    counter_.assign(n, 0);
    breaker_closed_.assign(n, true);
    pending_open_.assign(n, false);
    first_command_step_.assign(n, -1);
    failure_established_.assign(n, -1);

    // Prime measurement windows with m pre-episode solves (no fault).
    volt_window_.assign(n, {});
    curr_window_.assign(n, {});
    for (int k = 0; k < cfg_.window; ++k) {
      auto sol = solve_now(false);
      push_measurements(sol);
    }

    StepResult r;
    r.t = -1;
    r.obs = observations();
    r.reward.assign(n, 0.0);
    return r;
  }

  StepResult step(const std::vector<int>& actions) {
    if (!started_) throw std::logic_error("step before reset");
    if (done_) throw std::logic_error("step after episode end");
    const int n = static_cast<int>(relay_ids_.size());
    if (static_cast<int>(actions.size()) != n)
      throw std::invalid_argument("need one action per relay, got " +
                                  std::to_string(actions.size()));
    for (int a : actions)
      if (a < 0 || a >= kNumActions)
        throw std::invalid_argument("action index " + std::to_string(a) + " out of range");

    StepResult res;
    res.t = t_;
    TraceStep ts;
    ts.t = t_;
    ts.relay.resize(n);

    // 1. scheduled openings and the isolation event take effect
    for (int i = 0; i < n; ++i) {
      if (pending_open_[i]) {
        pending_open_[i] = false;
        breaker_closed_[i] = false;
        ts.relay[i].opened = true;
        res.opened.push_back(relay_ids_[i]);
      }
      if (relay_ids_[i] == trace_.isolation_relay && t_ == trace_.isolation_step &&
          breaker_closed_[i]) {
        breaker_closed_[i] = false;
        ts.relay[i].opened = true;
        ts.relay[i].exogenous_open = true;
        res.opened.push_back(relay_ids_[i]);
      }
    }

    // 2. counter updates and trip commands
    for (int i = 0; i < n; ++i) {
      int a = actions[i];
      ts.relay[i].action = a;
      bool expired = false;
      if (a == kActionCountdown) {
        if (counter_[i] > 0 && --counter_[i] == 0) expired = true;
      } else if (a == kActionReset) {
        counter_[i] = 0;
      } else {
        counter_[i] = a;  // arm / rearm
      }
      if (expired && breaker_closed_[i]) {
        ts.relay[i].command_issued = true;
        res.commanded.push_back(relay_ids_[i]);
        if (first_command_step_[i] < 0) first_command_step_[i] = t_;
        if (trace_.breaker_failed[relay_ids_[i]]) {
          ts.relay[i].command_ignored = true;
          res.ignored.push_back(relay_ids_[i]);
          if (failure_established_[i] < 0) failure_established_[i] = t_;
        } else if (!pending_open_[i]) {
          pending_open_[i] = true;  // opens in the solve of t+1
        }
      }
      ts.relay[i].counter_after = counter_[i];
      ts.relay[i].breaker_closed = breaker_closed_[i];
    }

    // 3. solve with jitter; fault present from its onset while energized
    bool fault_scheduled = trace_.fault && t_ >= trace_.fault->onset_step;
    auto sol = solve_now(fault_scheduled);
    ts.fault_active = res.fault_active = sol.fault_active;
    if (fault_scheduled && !sol.fault_active && trace_.cleared_step < 0)
      trace_.cleared_step = t_;

    // 4. measurements, rewards, termination
    push_measurements(sol);
    res.reward.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
      StepCondition c = condition_for(i, sol.fault_active);
      bool tripped = ts.relay[i].command_issued && first_command_step_[i] == t_;
      double rew = reward_value(c, tripped);
      ts.relay[i].condition = c;
      ts.relay[i].reward = rew;
      ts.relay[i].voltage = volt_window_[i].back();
      ts.relay[i].current = curr_window_[i].back();
      res.reward[i] = rew;
      res.global_reward += rew;
    }
    ts.global_reward = res.global_reward;

    bool settled = trace_.cleared_step >= 0 && t_ >= trace_.cleared_step + cfg_.settle_steps;
    done_ = settled || t_ == cfg_.horizon - 1;
    res.done = done_;
    res.obs = observations();
    trace_.steps.push_back(std::move(ts));
    ++t_;
    return res;
  }

  // Episode metadata for omniscient policies and classification.
  const std::optional<FaultSpec>& fault() const { return trace_.fault; }
  const std::map<int, bool>& breaker_fates() const { return trace_.breaker_failed; }

 private:
  CircuitSolution solve_now(bool with_fault) {
    std::vector<Complex> eff(topo_.loads.size());
    for (std::size_t i = 0; i < eff.size(); ++i) {
      double jitter = std::max(0.01, rng_.normal(1.0, cfg_.jitter_sd));
      eff[i] = topo_.loads[i].admittance * trace_.profile.trend * trace_.profile.local[i] * jitter;
    }
    std::vector<char> open(topo_.segments.size(), 0);
    for (std::size_t i = 0; i < breaker_closed_.size(); ++i)
      if (!breaker_closed_[i]) open[topo_.relays[i].segment] = 1;
    std::optional<FaultSpec> f;
    if (with_fault) f = trace_.fault;
    return solve_circuit_admittances(topo_, eff, f, open);
  }

  void push_measurements(const CircuitSolution& sol) {
    auto meas = relay_measurements(topo_, sol);
    for (std::size_t i = 0; i < relay_ids_.size(); ++i) {
      auto& vw = volt_window_[i];
      auto& cw = curr_window_[i];
      vw.push_back(meas[relay_ids_[i]].voltage);
      cw.push_back(meas[relay_ids_[i]].current);
      if (static_cast<int>(vw.size()) > cfg_.window) vw.erase(vw.begin());
      if (static_cast<int>(cw.size()) > cfg_.window) cw.erase(cw.begin());
    }
  }

  StepCondition condition_for(int i, bool fault_active) const {
    if (!fault_active) return StepCondition::Normal;
    FaultLocation x{trace_.fault->segment, trace_.fault->position};
    if (primary_[i].contains(x)) return StepCondition::FaultInMain;
    if (backup_[i].contains(x)) {
      int down = topo_.relays[i].downstream;
      for (std::size_t j = 0; j < relay_ids_.size(); ++j) {
        if (relay_ids_[j] == down && failure_established_[j] >= 0 && failure_established_[j] <= t_)
          return StepCondition::FaultAsBackup;
      }
      // Downstream primary has not (yet) failed: patience expected, any trip
      // now is as wrong as tripping with no fault at all.
      return StepCondition::Normal;
    }
    return StepCondition::FaultOutside;
  }

  std::vector<RelayObservation> observations() const {
    std::vector<RelayObservation> out(relay_ids_.size());
    for (std::size_t i = 0; i < relay_ids_.size(); ++i) {
      out[i].voltage = volt_window_[i];
      out[i].current = curr_window_[i];
      out[i].breaker_closed = breaker_closed_[i];
      out[i].counter = counter_[i];
    }
    return out;
  }

  FeederTopology topo_;
  EpisodeConfig cfg_;
  std::uint64_t master_seed_;
  std::uint64_t episode_counter_ = 0;
  Rng rng_;
  std::vector<int> relay_ids_;
  std::vector<ProtectionZone> primary_, backup_;

  bool started_ = false;
  bool done_ = false;
  int t_ = 0;
  std::vector<int> counter_;
  std::vector<bool> breaker_closed_;
  std::vector<bool> pending_open_;
  std::vector<int> first_command_step_;
  std::vector<int> failure_established_;
  std::vector<std::vector<double>> volt_window_, curr_window_;
  EpisodeTrace trace_;
};

// Trace export: one row per step per relay.
inline void export_trace_csv(const EpisodeTrace& trace, std::ostream& os) {
  os << "step,relay,voltage,current,breaker_closed,counter,action,reward,fault_active\n";
  for (const auto& s : trace.steps) {
    for (std::size_t i = 0; i < trace.relay_ids.size(); ++i) {
      const auto& r = s.relay[i];
      os << s.t << "," << trace.relay_ids[i] << "," << format_double(r.voltage) << ","
         << format_double(r.current) << "," << (r.breaker_closed ? 1 : 0) << ","
         << r.counter_after << "," << r.action << "," << format_double(r.reward) << ","
         << (s.fault_active ? 1 : 0) << "\n";
    }
  }
}

}  // namespace relayrl
