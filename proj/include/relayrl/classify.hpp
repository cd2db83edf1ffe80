#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relayrl/episode.hpp"
#include "relayrl/feeder.hpp"

namespace relayrl {

// Which relays ought to trip for a given fault location, taking breaker
// failures into account: a relay trips when the fault is in its primary
// region, or in its backup region while the downstream primary's trip is
// ineffective (the downstream relay would not trip, or its breaker is stuck).
// Evaluated leaves-first so the downstream answer exists when needed.
inline std::map<int, bool> ideal_actions(const FeederTopology& topo,
                                         const std::optional<FaultLocation>& fault,
                                         const std::map<int, bool>& breaker_failed) {
  std::map<int, bool> trip;
  for (const auto& r : topo.relays) trip[r.id] = false;
  if (!fault) return trip;
  // Resolve by iterating until stable; the downstream relation is acyclic and
  // shallow so a couple of passes settle it.
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& r : topo.relays) {
      bool want = topo.primary_zone(r.id).contains(*fault);
      if (!want && r.downstream >= 0 && topo.backup_zone(r.id).contains(*fault)) {
        auto fit = breaker_failed.find(r.downstream);
        bool down_failed = fit != breaker_failed.end() && fit->second;
        want = trip[r.downstream] && down_failed;
      }
      if (want != trip[r.id]) {
        trip[r.id] = want;
        changed = true;
      }
    }
  }
  return trip;
}

enum class Verdict { Correct, FalsePositive, FalseNegative };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Correct: return "correct";
    case Verdict::FalsePositive: return "false_positive";
    case Verdict::FalseNegative: return "false_negative";
  }
  return "?";
}

struct TraceClassification {
  std::map<int, Verdict> verdict;
  std::map<int, std::string> reason;  // filled for non-correct relays
  bool episode_failed = false;
  bool any_false_positive = false;
  bool any_false_negative = false;
  // A backup whose breaker opened for a command issued strictly before the
  // downstream primary's failure was established (criterion for grading).
  bool backup_before_primary = false;
};

// Post-episode misoperation analysis. A relay is judged on physical openings
// for false positives (a stuck breaker cannot mis-open) and on issued trip
// commands for false negatives (a relay that commanded into a stuck breaker
// did its job). Openings from the isolation event are not the relay's doing
// and are ignored. Fault conditions are taken at the step the opening was
// commanded, which is the relay's decision moment.
inline TraceClassification classify_trace(const FeederTopology& topo, const EpisodeTrace& trace) {
  TraceClassification out;
  const int n = static_cast<int>(trace.relay_ids.size());
  const int steps = static_cast<int>(trace.steps.size());

  // Reconstruct per-relay event times.
  std::vector<int> open_step(n, -1), first_ignored(n, -1);
  std::vector<std::vector<int>> command_steps(n);
  for (int t = 0; t < steps; ++t) {
    for (int i = 0; i < n; ++i) {
      const auto& r = trace.steps[t].relay[i];
      if (r.opened && !r.exogenous_open && open_step[i] < 0) open_step[i] = t;
      if (r.command_issued) command_steps[i].push_back(t);
      if (r.command_ignored && first_ignored[i] < 0) first_ignored[i] = t;
    }
  }
  auto fault_active_at = [&](int t) {
    return t >= 0 && t < steps && trace.steps[t].fault_active;
  };
  bool fault_ever_active = false;
  for (int t = 0; t < steps; ++t) fault_ever_active |= trace.steps[t].fault_active;

  std::optional<FaultLocation> x;
  if (trace.fault) x = FaultLocation{trace.fault->segment, trace.fault->position};

  for (int i = 0; i < n; ++i) {
    int id = trace.relay_ids[i];
    const RelayDef* rd = topo.relay_by_id(id);
    Verdict v = Verdict::Correct;
    std::string why;

    // --- false positives: any opening whose commanding step lacked a valid cause
    if (open_step[i] >= 0) {
      int cmd = open_step[i] - 1;  // openings follow their command by one step
      if (!x || !fault_active_at(cmd)) {
        v = Verdict::FalsePositive;
        why = "opened with no active fault";
      } else if (topo.primary_zone(id).contains(*x)) {
        // in-region trip, fine
      } else if (topo.backup_zone(id).contains(*x)) {
        int down_idx = -1;
        for (int j = 0; j < n; ++j)
          if (trace.relay_ids[j] == rd->downstream) down_idx = j;
        int failed_at = down_idx >= 0 ? first_ignored[down_idx] : -1;
        if (failed_at < 0 || cmd < failed_at) {
          v = Verdict::FalsePositive;
          why = "tripped as backup before the downstream primary failed";
          out.backup_before_primary = true;
        }
      } else {
        v = Verdict::FalsePositive;
        why = "opened for a fault outside its assigned regions";
      }
    }

    // --- false negatives: required operation never attempted
    if (v == Verdict::Correct && x && fault_ever_active) {
      if (topo.primary_zone(id).contains(*x)) {
        bool attempted = false;
        for (int s : command_steps[i]) attempted |= fault_active_at(s);
        if (!attempted) {
          v = Verdict::FalseNegative;
          why = "never tripped for a fault in its primary region";
        }
      } else if (rd->downstream >= 0 && topo.backup_zone(id).contains(*x)) {
        int down_idx = -1;
        for (int j = 0; j < n; ++j)
          if (trace.relay_ids[j] == rd->downstream) down_idx = j;
        int failed_at = down_idx >= 0 ? first_ignored[down_idx] : -1;
        if (failed_at >= 0) {
          bool attempted = false;
          for (int s : command_steps[i]) attempted |= s >= failed_at && fault_active_at(s);
          if (!attempted) {
            v = Verdict::FalseNegative;
            why = "never tripped as backup after the downstream primary failed";
          }
        }
      }
    }

    out.verdict[id] = v;
    if (v != Verdict::Correct) {
      out.reason[id] = why;
      out.episode_failed = true;
      if (v == Verdict::FalsePositive) out.any_false_positive = true;
      if (v == Verdict::FalseNegative) out.any_false_negative = true;
    }
  }
  return out;
}

}  // namespace relayrl
