#pragma once

#include <set>

#include "relayrl/episode.hpp"

// Shared test fixtures: fully pinned episode overrides so a test controls
// every sampled quantity that matters to it.
namespace relayrl::testing {

inline Environment make_env(std::uint64_t seed, EpisodeConfig cfg = {}) {
  return Environment(build_feeder_section(), cfg, seed);
}

inline EpisodeOverride no_fault_seeded(std::uint64_t seed) {
  EpisodeOverride ov;
  ov.seed = seed;
  ov.force_fault = false;
  for (int id = 1; id <= 5; ++id) ov.breaker_fate[id] = false;
  return ov;
}

inline EpisodeOverride forced_fault(std::uint64_t seed, int segment, double pos, double zf,
                                    int onset, std::set<int> stuck = {}) {
  EpisodeOverride ov;
  ov.seed = seed;
  ov.force_fault = true;
  ov.fault_segment = segment;
  ov.fault_position = pos;
  ov.fault_impedance = zf;
  ov.onset = onset;
  for (int id = 1; id <= 5; ++id) ov.breaker_fate[id] = stuck.count(id) > 0;
  return ov;
}

}  // namespace relayrl::testing
