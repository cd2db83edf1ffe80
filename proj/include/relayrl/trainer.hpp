#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "relayrl/classify.hpp"
#include "relayrl/dqn.hpp"
#include "relayrl/episode.hpp"
#include "relayrl/feeder.hpp"

namespace relayrl {

// Leaf-first topological order on the backup relation: a relay is scheduled
// only after the relay it backs up; independent branches order by id.
inline std::vector<int> training_order(const FeederTopology& topo) {
  std::map<int, std::vector<int>> dependents;  // id -> relays waiting on it
  std::map<int, int> waiting;                  // id -> unmet dependency count
  for (const auto& r : topo.relays) {
    waiting[r.id] = r.downstream >= 0 ? 1 : 0;
    if (r.downstream >= 0) dependents[r.downstream].push_back(r.id);
  }
  std::set<int> ready;
  for (const auto& [id, w] : waiting)
    if (w == 0) ready.insert(id);
  std::vector<int> order;
  while (!ready.empty()) {
    const int id = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(id);
    for (int up : dependents[id])
      if (--waiting[up] == 0) ready.insert(up);
  }
  if (order.size() != topo.relays.size())
    throw std::invalid_argument("backup relation contains a cycle");
  return order;
}

struct TrainerConfig {
  int episodes_per_relay = 500;
  int runs = 1;  // independent repetitions for mean/std curves
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int epsilon_decay_episodes = 150;  // linear decay horizon within each phase
  int failure_window = 50;           // trailing window of the failure-rate curve
  // Fault placement keeps full feeder support but re-weights toward the relay
  // under training: uniform sampling hands it one fault in six, which leaves
  // the replay buffer with roughly 24 wrong-trip punishments per earned trip
  // reward once exploration has decayed, and that imbalance drags the trip
  // actions below hold everywhere. Focused episodes keep the fault coin.
  double focus_prob = 0.5;           // P(fault lands in the trained relay's zones)
  double focus_backup_share = 1.0 / 3.0;  // within focus: P(backup zone) if one exists
  double focus_forced_failure = 0.5;      // within backup focus: P(downstream stuck)
  DqnConfig agent;
  EpisodeConfig episode;

  void validate() const {
    if (episodes_per_relay <= 0) throw std::invalid_argument("episode count must be positive");
    if (runs <= 0) throw std::invalid_argument("run count must be positive");
    if (epsilon_start < 0.0 || epsilon_start > 1.0 || epsilon_end < 0.0 || epsilon_end > 1.0)
      throw std::invalid_argument("exploration rates outside [0,1]");
    if (epsilon_decay_episodes <= 0) throw std::invalid_argument("decay horizon must be positive");
    if (failure_window <= 0) throw std::invalid_argument("failure window must be positive");
    if (focus_prob < 0.0 || focus_prob > 1.0 || focus_backup_share < 0.0 ||
        focus_backup_share > 1.0 || focus_forced_failure < 0.0 || focus_forced_failure > 1.0)
      throw std::invalid_argument("focus probabilities outside [0,1]");
    agent.validate();
    episode.validate();
  }
};

// Exploration rate for an episode index within a phase.
inline double epsilon_at(const TrainerConfig& cfg, int episode) {
  if (episode >= cfg.epsilon_decay_episodes) return cfg.epsilon_end;
  return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) *
                                 (static_cast<double>(episode) / cfg.epsilon_decay_episodes);
}

// Sum of one relay's per-step rewards across a completed episode.
inline double episodic_reward(const EpisodeTrace& trace, int relay_id) {
  int idx = -1;
  for (std::size_t i = 0; i < trace.relay_ids.size(); ++i)
    if (trace.relay_ids[i] == relay_id) idx = static_cast<int>(i);
  if (idx < 0) throw std::invalid_argument("relay not present in the trace");
  double total = 0.0;
  for (const auto& s : trace.steps) total += s.relay[idx].reward;
  return total;
}

struct RelayCurve {
  int relay_id = 0;
  std::vector<double> reward_mean;  // per episode index, across runs
  std::vector<double> reward_std;
  std::vector<double> failure_ma;  // trailing-window mean of episode failures
};

struct TrainingReport {
  std::vector<int> order;
  std::uint64_t master_seed = 0;
  int runs = 0;
  double wall_seconds = 0.0;
  std::vector<RelayCurve> curves;  // parallel to order
  // Raw per-run data, [run][phase][episode].
  std::vector<std::vector<std::vector<double>>> rewards;
  std::vector<std::vector<std::vector<char>>> failures;
  // Invariant audits from the first run: parameter hashes of every frozen
  // relay at each phase boundary, and trip commands by not-yet-trained relays
  // (both must show the frozen policies untouched and the untrained inert).
  std::vector<std::map<int, std::uint64_t>> frozen_hash_before, frozen_hash_after;
  std::uint64_t untrained_commands = 0;
};

struct TrainingResult {
  std::map<int, DqnAgent> agents;  // from the first run
  TrainingReport report;
};

namespace detail {

// One training phase: a single relay learns while earlier relays act greedily
// frozen and later relays idle.
inline void run_phase(const FeederTopology& topo, const TrainerConfig& cfg, int phase_index,
                      int relay_id, std::uint64_t run_seed, const std::map<int, DqnAgent>& frozen,
                      DqnAgent& agent, std::vector<double>& rewards, std::vector<char>& failures,
                      std::uint64_t* untrained_commands, std::ostream* progress) {
  Environment env(topo, cfg.episode,
                  derive_seed(run_seed, {0x50484153ULL, static_cast<std::uint64_t>(phase_index)}));
  Rng explore(derive_seed(run_seed, {0x45584d4cULL, static_cast<std::uint64_t>(phase_index)}));
  Rng mix(derive_seed(run_seed, {0x4d495858ULL, static_cast<std::uint64_t>(phase_index)}));
  const RelayDef* trained = topo.relay_by_id(relay_id);
  if (!trained) throw std::invalid_argument("training order names an unknown relay");
  const std::vector<int>& ids = env.relay_ids();
  int train_idx = -1;
  for (std::size_t j = 0; j < ids.size(); ++j)
    if (ids[j] == relay_id) train_idx = static_cast<int>(j);
  if (train_idx < 0) throw std::invalid_argument("training order names an unknown relay");
  std::set<int> untrained;
  for (int id : ids)
    if (id != relay_id && !frozen.count(id)) untrained.insert(id);

  rewards.assign(cfg.episodes_per_relay, 0.0);
  failures.assign(cfg.episodes_per_relay, 0);
  for (int ep = 0; ep < cfg.episodes_per_relay; ++ep) {
    const double eps = epsilon_at(cfg, ep);
    // Focused episodes pin only the fault location (and, for backup focus,
    // the downstream breaker fate); the fault coin and everything else stay
    // on the episode stream, so no-fault episodes keep their share.
    EpisodeOverride ov;
    if (mix.uniform01() < cfg.focus_prob) {
      if (trained->downstream >= 0 && mix.uniform01() < cfg.focus_backup_share) {
        ov.fault_segment = topo.relay_by_id(trained->downstream)->segment;
        if (mix.uniform01() < cfg.focus_forced_failure)
          ov.breaker_fate[trained->downstream] = true;
      } else {
        ov.fault_segment = trained->segment;
      }
    }
    StepResult r = env.reset(ov);
    std::vector<double> state = encode_state(r.obs[train_idx]);
    double total = 0.0;
    while (!r.done) {
      std::vector<int> actions(ids.size(), kActionCountdown);
      for (std::size_t j = 0; j < ids.size(); ++j) {
        if (static_cast<int>(j) == train_idx) continue;
        auto it = frozen.find(ids[j]);
        if (it != frozen.end()) actions[j] = it->second.act_greedy(encode_state(r.obs[j]));
      }
      actions[train_idx] = agent.act_epsilon(state, eps, explore);
      StepResult next = env.step(actions);
      if (untrained_commands)
        for (int id : next.commanded)
          if (untrained.count(id)) ++*untrained_commands;
      std::vector<double> next_state = encode_state(next.obs[train_idx]);
      Transition tr;
      tr.state = std::move(state);
      tr.action = actions[train_idx];
      tr.reward = next.reward[train_idx];
      tr.next_state = next_state;
      tr.done = next.done;
      agent.remember(std::move(tr));
      if (agent.ready()) agent.train_step();
      total += next.reward[train_idx];
      state = std::move(next_state);
      r = std::move(next);
    }
    rewards[ep] = total;
    // Failure flag tracks the relay under training only; untrained relays
    // upstream are forced to hold and would otherwise floor the curve.
    failures[ep] =
        classify_trace(topo, env.trace()).verdict.at(relay_id) != Verdict::Correct ? 1 : 0;
    if (progress && (ep + 1) % 50 == 0) {
      double m = 0.0;
      for (int e = ep - 49; e <= ep; ++e) m += rewards[e];
      *progress << "relay " << relay_id << " episode " << (ep + 1) << "/"
                << cfg.episodes_per_relay << " mean reward (last 50) " << (m / 50.0) << "\n";
    }
  }
}

// One complete nested pass over all relays.
inline std::map<int, DqnAgent> run_nested(const FeederTopology& topo, const TrainerConfig& cfg,
                                          std::uint64_t run_seed, const std::vector<int>& order,
                                          std::vector<std::vector<double>>& rewards,
                                          std::vector<std::vector<char>>& failures,
                                          TrainingReport* audit, std::ostream* progress) {
  std::map<int, DqnAgent> agents;
  rewards.resize(order.size());
  failures.resize(order.size());
  const int state_dim = 2 * cfg.episode.window + 2;
  for (std::size_t k = 0; k < order.size(); ++k) {
    DqnAgent agent(state_dim, kNumActions, cfg.agent,
                   derive_seed(run_seed, {0x4147454eULL, static_cast<std::uint64_t>(order[k])}));
    if (progress)
      *progress << "training relay " << order[k] << " (phase " << (k + 1) << "/" << order.size()
                << ")\n";
    std::map<int, std::uint64_t> before;
    for (const auto& [id, a] : agents) before[id] = parameter_hash(a.online());
    run_phase(topo, cfg, static_cast<int>(k), order[k], run_seed, agents, agent, rewards[k],
              failures[k], audit ? &audit->untrained_commands : nullptr, progress);
    if (audit) {
      audit->frozen_hash_before.push_back(before);
      std::map<int, std::uint64_t> after;
      for (const auto& [id, a] : agents) after[id] = parameter_hash(a.online());
      audit->frozen_hash_after.push_back(after);
    }
    agents.emplace(order[k], std::move(agent));
  }
  return agents;
}

}  // namespace detail

// Trains every relay in leaf-first order, optionally repeated over
// independent runs for aggregate curves. The returned agents come from the
// first run; curves aggregate all runs per episode index.
inline TrainingResult train_all(const FeederTopology& topo, const TrainerConfig& cfg,
                                std::uint64_t seed, std::ostream* progress = nullptr) {
  topo.validate();
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainingResult out;
  TrainingReport& rep = out.report;
  rep.order = training_order(topo);
  rep.master_seed = seed;
  rep.runs = cfg.runs;
  rep.rewards.resize(cfg.runs);
  rep.failures.resize(cfg.runs);

  auto run_seed = [&](int run) {
    return derive_seed(seed, {0x52554e53ULL, static_cast<std::uint64_t>(run)});
  };
  if (cfg.runs == 1) {
    out.agents = detail::run_nested(topo, cfg, run_seed(0), rep.order, rep.rewards[0],
                                    rep.failures[0], &rep, progress);
  } else {
    // Runs are independent given their seeds, so they execute concurrently;
    // only the first run feeds the audit trail, progress, and result agents.
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(cfg.runs);
    std::vector<std::map<int, DqnAgent>> per_run(cfg.runs);
    for (int run = 0; run < cfg.runs; ++run) {
      pool.emplace_back([&, run] {
        try {
          per_run[run] = detail::run_nested(topo, cfg, run_seed(run), rep.order,
                                            rep.rewards[run], rep.failures[run],
                                            run == 0 ? &rep : nullptr,
                                            run == 0 ? progress : nullptr);
        } catch (...) {
          errors[run] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
    out.agents = std::move(per_run[0]);
  }

  const int M = cfg.episodes_per_relay;
  for (std::size_t k = 0; k < rep.order.size(); ++k) {
    RelayCurve c;
    c.relay_id = rep.order[k];
    c.reward_mean.resize(M);
    c.reward_std.resize(M);
    c.failure_ma.resize(M);
    std::vector<double> fail_mean(M, 0.0);
    for (int e = 0; e < M; ++e) {
      double mean = 0.0;
      for (int run = 0; run < cfg.runs; ++run) mean += rep.rewards[run][k][e];
      mean /= cfg.runs;
      double var = 0.0;
      for (int run = 0; run < cfg.runs; ++run) {
        const double d = rep.rewards[run][k][e] - mean;
        var += d * d;
      }
      c.reward_mean[e] = mean;
      c.reward_std[e] = std::sqrt(var / cfg.runs);
      for (int run = 0; run < cfg.runs; ++run) fail_mean[e] += rep.failures[run][k][e];
      fail_mean[e] /= cfg.runs;
    }
    double window_sum = 0.0;
    for (int e = 0; e < M; ++e) {
      window_sum += fail_mean[e];
      if (e >= cfg.failure_window) window_sum -= fail_mean[e - cfg.failure_window];
      c.failure_ma[e] = window_sum / std::min(e + 1, cfg.failure_window);
    }
    rep.curves.push_back(std::move(c));
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// Plot-ready curve: one row per episode of this relay's training phase.
inline void export_learning_curve_csv(const TrainingReport& rep, int relay_id, std::ostream& os) {
  const RelayCurve* curve = nullptr;
  for (const auto& c : rep.curves)
    if (c.relay_id == relay_id) curve = &c;
  if (!curve) throw std::invalid_argument("no learning curve for that relay");
  os << "episode,reward_mean,reward_std,failure_ma\n";
  for (std::size_t e = 0; e < curve->reward_mean.size(); ++e)
    os << e << "," << format_double(curve->reward_mean[e]) << ","
       << format_double(curve->reward_std[e]) << "," << format_double(curve->failure_ma[e])
       << "\n";
}

}  // namespace relayrl
