#pragma once

#include <map>
#include <optional>
#include <vector>

#include "relayrl/classify.hpp"
#include "relayrl/episode.hpp"
#include "relayrl/feeder.hpp"

namespace relayrl {

// Episode facts an omniscient policy may consult. Learned policies must only
// use the observations passed to act().
struct EpisodeContext {
  const FeederTopology* topo = nullptr;
  std::vector<int> relay_ids;
  std::optional<FaultSpec> fault;
  std::map<int, bool> breaker_failed;
};

inline EpisodeContext episode_context(const Environment& env) {
  return EpisodeContext{&env.topology(), env.relay_ids(), env.fault(), env.breaker_fates()};
}

class Policy {
 public:
  virtual ~Policy() = default;
  virtual void begin_episode(const EpisodeContext&) {}
  // t is the index of the step about to execute; obs is the latest
  // observation bundle (from reset when t == 0).
  virtual std::vector<int> act(int t, const std::vector<RelayObservation>& obs) = 0;
};

// Idle everywhere: counters never armed, nothing ever trips.
class NullPolicy : public Policy {
 public:
  std::vector<int> act(int, const std::vector<RelayObservation>& obs) override {
    return std::vector<int>(obs.size(), kActionCountdown);
  }
};

// Fixed per-relay action schedule; unscheduled steps idle.
class ScriptedPolicy : public Policy {
 public:
  void schedule(int relay_index, int t, int action) { plan_[{relay_index, t}] = action; }
  std::vector<int> act(int t, const std::vector<RelayObservation>& obs) override {
    std::vector<int> a(obs.size(), kActionCountdown);
    for (std::size_t i = 0; i < obs.size(); ++i) {
      auto it = plan_.find({static_cast<int>(i), t});
      if (it != plan_.end()) a[i] = it->second;
    }
    return a;
  }

 private:
  std::map<std::pair<int, int>, int> plan_;
};

// Omniscient reference behaviour: the primary relay arms a one-step counter
// at the fault onset and lets it expire (trip command at onset+1, breaker
// open at onset+2, the minimum the counter mechanics allow). If that breaker
// is fated to stick, the backup arms at the failure step and commands one
// step later, never earlier. Everyone else idles.
class OraclePolicy : public Policy {
 public:
  void begin_episode(const EpisodeContext& ctx) override {
    plan_.clear();
    n_ = static_cast<int>(ctx.relay_ids.size());
    if (!ctx.fault) return;
    FaultLocation x{ctx.fault->segment, ctx.fault->position};
    int primary = -1;
    for (int i = 0; i < n_; ++i)
      if (ctx.topo->primary_zone(ctx.relay_ids[i]).contains(x)) primary = i;
    if (primary < 0) return;  // unprotected segment: everyone holds
    int onset = ctx.fault->onset_step;
    plan_[{primary, onset}] = action_set(1);  // command fires at onset+1
    auto fit = ctx.breaker_failed.find(ctx.relay_ids[primary]);
    bool primary_stuck = fit != ctx.breaker_failed.end() && fit->second;
    if (!primary_stuck) return;
    for (int i = 0; i < n_; ++i) {
      const RelayDef* rd = ctx.topo->relay_by_id(ctx.relay_ids[i]);
      if (rd->downstream == ctx.relay_ids[primary]) {
        // Failure is established at onset+1; command at onset+2 is the
        // earliest that is not premature.
        plan_[{i, onset + 1}] = action_set(1);
      }
    }
  }

  std::vector<int> act(int t, const std::vector<RelayObservation>& obs) override {
    std::vector<int> a(obs.size(), kActionCountdown);
    for (std::size_t i = 0; i < obs.size(); ++i) {
      auto it = plan_.find({static_cast<int>(i), t});
      if (it != plan_.end()) a[i] = it->second;
    }
    return a;
  }

 private:
  std::map<std::pair<int, int>, int> plan_;
  int n_ = 0;
};

// Runs one episode of env under policy; returns the final trace.
inline const EpisodeTrace& rollout(Environment& env, Policy& policy,
                                   const EpisodeOverride& ov = {}) {
  StepResult r = env.reset(ov);
  policy.begin_episode(episode_context(env));
  int t = 0;
  while (!r.done) {
    r = env.step(policy.act(t, r.obs));
    ++t;
  }
  return env.trace();
}

}  // namespace relayrl
