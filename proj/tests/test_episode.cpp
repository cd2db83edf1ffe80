#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <sstream>

#include "env_fixtures.hpp"
#include "relayrl/episode.hpp"
#include "relayrl/policy.hpp"

using namespace relayrl;
using relayrl::testing::forced_fault;
using relayrl::testing::make_env;
using relayrl::testing::no_fault_seeded;

TEST_CASE("reset yields primed windows and zero rewards") {
  Environment env = make_env(1);
  StepResult r = env.reset();
  CHECK(r.t == -1);
  CHECK_FALSE(r.done);
  CHECK_FALSE(r.fault_active);
  REQUIRE(r.obs.size() == 5);
  REQUIRE(r.reward.size() == 5);
  CHECK(env.state_dimension() == 22);
  for (std::size_t i = 0; i < r.obs.size(); ++i) {
    REQUIRE(r.obs[i].voltage.size() == 10);
    REQUIRE(r.obs[i].current.size() == 10);
    CHECK(r.obs[i].breaker_closed);
    CHECK(r.obs[i].counter == 0);
    CHECK(r.reward[i] == 0.0);
    for (double v : r.obs[i].voltage) {
      CHECK(v > 0.8);
      CHECK(v < 1.05);
    }
  }
}

TEST_CASE("same episode seed reproduces the same realization bitwise") {
  Environment a = make_env(10), b = make_env(20);  // master seeds differ on purpose
  EpisodeOverride ov;
  ov.seed = 777;
  StepResult ra = a.reset(ov), rb = b.reset(ov);
  REQUIRE(a.fault().has_value() == b.fault().has_value());
  if (a.fault()) {
    CHECK(a.fault()->segment == b.fault()->segment);
    CHECK(a.fault()->position == b.fault()->position);
    CHECK(a.fault()->impedance == b.fault()->impedance);
    CHECK(a.fault()->onset_step == b.fault()->onset_step);
  }
  CHECK(a.breaker_fates() == b.breaker_fates());
  for (int i = 0; i < 5; ++i) {
    CHECK(ra.obs[i].voltage == rb.obs[i].voltage);
    CHECK(ra.obs[i].current == rb.obs[i].current);
  }
  for (int t = 0; t < 50; ++t) {
    std::vector<int> acts(5, kActionCountdown);
    StepResult sa = a.step(acts), sb = b.step(acts);
    CHECK(sa.reward == sb.reward);
    CHECK(sa.fault_active == sb.fault_active);
    for (int i = 0; i < 5; ++i) CHECK(sa.obs[i].current == sb.obs[i].current);
  }
}

TEST_CASE("same master seed replays the same episode sequence") {
  Environment a = make_env(42), b = make_env(42);
  NullPolicy idle;
  for (int ep = 0; ep < 3; ++ep) {
    const EpisodeTrace ta = rollout(a, idle);  // copy before b overwrites nothing (separate envs)
    const EpisodeTrace& tb = rollout(b, idle);
    REQUIRE(ta.steps.size() == tb.steps.size());
    CHECK(ta.profile.trend == tb.profile.trend);
    CHECK(ta.fault.has_value() == tb.fault.has_value());
    for (std::size_t t = 0; t < ta.steps.size(); ++t)
      for (int i = 0; i < 5; ++i) {
        CHECK(ta.steps[t].relay[i].voltage == tb.steps[t].relay[i].voltage);
        CHECK(ta.steps[t].relay[i].current == tb.steps[t].relay[i].current);
      }
  }
}

TEST_CASE("episode randomness does not depend on the actions taken") {
  EpisodeOverride ov;
  ov.seed = 31337;
  Environment a = make_env(5), b = make_env(5);
  NullPolicy idle;
  ScriptedPolicy scripted;
  scripted.schedule(0, 10, action_set(1));  // relay 1 trips around step 11
  const EpisodeTrace ta = rollout(a, idle, ov);
  const EpisodeTrace& tb = rollout(b, scripted, ov);
  CHECK(ta.profile.trend == tb.profile.trend);
  CHECK(ta.profile.local == tb.profile.local);
  REQUIRE(ta.fault.has_value() == tb.fault.has_value());
  if (ta.fault) {
    CHECK(ta.fault->segment == tb.fault->segment);
    CHECK(ta.fault->onset_step == tb.fault->onset_step);
  }
  CHECK(ta.breaker_failed == tb.breaker_failed);
  for (int t = 0; t < 10; ++t)  // identical until the scripted trip diverges the topology
    for (int i = 0; i < 5; ++i)
      CHECK(ta.steps[t].relay[i].current == tb.steps[t].relay[i].current);
}

TEST_CASE("fault probability zero and one behave as forced") {
  EpisodeConfig cfg;
  cfg.fault_probability = 0.0;
  Environment none = make_env(3, cfg);
  for (int k = 0; k < 30; ++k) {
    none.reset();
    CHECK_FALSE(none.fault().has_value());
  }
  cfg.fault_probability = 1.0;
  Environment always = make_env(3, cfg);
  std::set<int> segments;
  int onset_lo = 1000, onset_hi = -1;
  for (int k = 0; k < 300; ++k) {
    always.reset();
    REQUIRE(always.fault().has_value());
    const FaultSpec& f = *always.fault();
    CHECK(f.segment >= 0);
    CHECK(f.segment < 6);
    segments.insert(f.segment);
    CHECK(f.position >= 0.0);
    CHECK(f.position <= 1.0);
    CHECK(f.impedance.real() >= 0.05);
    CHECK(f.impedance.real() <= 1.5);
    CHECK(f.onset_step >= 60);
    CHECK(f.onset_step <= 120);
    onset_lo = std::min(onset_lo, f.onset_step);
    onset_hi = std::max(onset_hi, f.onset_step);
  }
  CHECK(segments.size() == 6);
  CHECK(onset_lo <= 65);
  CHECK(onset_hi >= 115);
}

TEST_CASE("default fault probability produces both kinds of episodes") {
  Environment env = make_env(8);
  int with = 0, without = 0;
  for (int k = 0; k < 200; ++k) {
    env.reset();
    (env.fault() ? with : without) += 1;
  }
  CHECK(with > 100);
  CHECK(without > 10);
}

TEST_CASE("counter walkthrough: arm two, count down, command, breaker opens next step") {
  Environment env = make_env(2);
  env.reset(no_fault_seeded(1234));
  std::vector<int> idle(5, kActionCountdown);
  auto act = [&](int relay_index, int a) {
    std::vector<int> v = idle;
    v[relay_index] = a;
    return v;
  };

  for (int t = 0; t < 5; ++t) {
    StepResult r = env.step(idle);
    CHECK(r.reward == std::vector<double>(5, 3.0));  // quiet line, holding
    CHECK(r.commanded.empty());
  }
  StepResult r5 = env.step(act(0, action_set(2)));
  CHECK(r5.obs[0].counter == 2);
  CHECK(r5.reward[0] == 3.0);  // arming is not tripping
  StepResult r6 = env.step(idle);
  CHECK(r6.obs[0].counter == 1);
  CHECK(r6.commanded.empty());
  StepResult r7 = env.step(idle);
  CHECK(r7.obs[0].counter == 0);
  REQUIRE(r7.commanded == std::vector<int>{1});
  CHECK(r7.ignored.empty());
  CHECK(r7.reward[0] == -150.0);  // tripping a healthy line
  CHECK(r7.obs[0].breaker_closed);  // command takes one step to reach the breaker
  CHECK(r7.opened.empty());
  StepResult r8 = env.step(idle);
  REQUIRE(r8.opened == std::vector<int>{1});
  CHECK_FALSE(r8.obs[0].breaker_closed);
  CHECK(r8.reward[0] == 3.0);  // only the commanding step carries the trip reward
  CHECK(r8.obs[0].current.back() == 0.0);  // own segment now open
  CHECK(r8.obs[0].voltage.back() > 0.8);   // source-side bus still live
  // everything fed through the opened segment reads dead
  for (int i : {2, 3, 4}) {
    CHECK(r8.obs[i].voltage.back() == 0.0);
    CHECK(r8.obs[i].current.back() == 0.0);
  }
  CHECK(r8.obs[1].voltage.back() > 0.8);  // sibling branch unaffected

  // counter expiry against an already-open breaker issues nothing
  StepResult r9 = env.step(act(0, action_set(1)));
  CHECK(r9.obs[0].counter == 1);
  StepResult r10 = env.step(idle);
  CHECK(r10.obs[0].counter == 0);
  CHECK(r10.commanded.empty());
  CHECK(env.trace().steps[10].relay[0].command_issued == false);
}

TEST_CASE("reset action disarms a running counter") {
  Environment env = make_env(2);
  env.reset(no_fault_seeded(99));
  std::vector<int> idle(5, kActionCountdown);
  std::vector<int> a = idle;
  a[1] = action_set(2);
  env.step(a);
  env.step(idle);  // counter now 1
  a[1] = kActionReset;
  StepResult r = env.step(a);
  CHECK(r.obs[1].counter == 0);
  CHECK(r.commanded.empty());
  for (int t = 0; t < 20; ++t) {
    r = env.step(idle);
    CHECK(r.commanded.empty());
    CHECK(r.opened.empty());
  }
}

TEST_CASE("re-arming overwrites the counter instead of stacking") {
  Environment env = make_env(2);
  env.reset(no_fault_seeded(5));
  std::vector<int> idle(5, kActionCountdown);
  std::vector<int> a = idle;
  a[2] = action_set(3);
  env.step(a);
  a[2] = action_set(1);
  StepResult r1 = env.step(a);
  CHECK(r1.obs[2].counter == 1);
  StepResult r2 = env.step(idle);
  CHECK(r2.commanded == std::vector<int>{3});
}

TEST_CASE("countdown on a disarmed counter stays disarmed") {
  Environment env = make_env(2);
  env.reset(no_fault_seeded(6));
  std::vector<int> idle(5, kActionCountdown);
  for (int t = 0; t < 30; ++t) {
    StepResult r = env.step(idle);
    for (const auto& o : r.obs) CHECK(o.counter == 0);
    CHECK(r.commanded.empty());
  }
}

TEST_CASE("primary clears its own fault through the counter pipeline") {
  Environment env = make_env(4);
  OraclePolicy oracle;
  const EpisodeTrace& tr = rollout(env, oracle, forced_fault(50, 3, 0.5, 0.2, 60));
  // relay 3 (index 2) hosts segment 836-840
  CHECK(tr.steps[60].relay[2].reward == -3.0);   // fault live, still holding
  CHECK(tr.steps[60].relay[2].condition == StepCondition::FaultInMain);
  CHECK(tr.steps[61].relay[2].command_issued);
  CHECK(tr.steps[61].relay[2].reward == 120.0);
  CHECK(tr.steps[62].relay[2].opened);
  CHECK(tr.cleared_step == 62);
  CHECK(tr.steps[62].relay[2].reward == 3.0);  // de-energized fault no longer counts as active
  CHECK(static_cast<int>(tr.steps.size()) == 83);  // 62 + 20 settle steps, inclusive
  CHECK(tr.steps.back().t == 82);
  // bystanders held and collected the outside-fault reward while it was live
  CHECK(tr.steps[60].relay[1].reward == 5.0);
  CHECK(tr.steps[61].relay[1].condition == StepCondition::FaultOutside);
}

TEST_CASE("stuck primary establishes failure and the backup takes over") {
  Environment env = make_env(4);
  env.reset(forced_fault(51, 5, 0.5, 0.05, 60, {5}));
  std::vector<int> idle(5, kActionCountdown);
  auto act = [&](std::vector<std::pair<int, int>> v) {
    std::vector<int> a = idle;
    for (auto [i, x] : v) a[i] = x;
    return a;
  };
  for (int t = 0; t < 60; ++t) env.step(idle);

  // t=60: fault appears; primary (relay 5, index 4) arms
  StepResult r60 = env.step(act({{4, action_set(1)}}));
  CHECK(r60.fault_active);
  CHECK(r60.reward[4] == -3.0);
  CHECK(r60.reward[3] == 3.0);  // backup sees no failure yet: treated as a quiet line
  CHECK(r60.reward[0] == 5.0);  // not this relay's fault region
  // t=61: primary commands, breaker sticks
  StepResult r61 = env.step(idle);
  REQUIRE(r61.commanded == std::vector<int>{5});
  REQUIRE(r61.ignored == std::vector<int>{5});
  CHECK(r61.reward[4] == 120.0);  // attempt counts even against a stuck breaker
  CHECK(r61.reward[3] == -2.0);   // failure established, backup now on the hook
  CHECK(env.trace().steps[61].relay[4].command_ignored);
  // t=62: backup arms; primary re-arms to show repeat commands earn nothing extra
  StepResult r62 = env.step(act({{3, action_set(1)}, {4, action_set(1)}}));
  CHECK(r62.reward[3] == -2.0);
  // t=63: both counters expire; backup command is the real one
  StepResult r63 = env.step(idle);
  std::set<int> cmd(r63.commanded.begin(), r63.commanded.end());
  CHECK(cmd == std::set<int>{4, 5});
  CHECK(r63.reward[3] == 100.0);
  CHECK(r63.reward[4] == -3.0);  // second command, no trip reward
  CHECK(r63.fault_active);
  // t=64: backup breaker opens, fault de-energized
  StepResult r64 = env.step(idle);
  REQUIRE(r64.opened == std::vector<int>{4});
  CHECK_FALSE(r64.fault_active);
  CHECK(env.trace().cleared_step == 64);
  CHECK(r64.reward == std::vector<double>(5, 3.0));
  // runs out the settle window then ends
  StepResult last = r64;
  while (!last.done) last = env.step(idle);
  CHECK(last.t == 84);
}

TEST_CASE("backup tripping before the failure is established is punished") {
  Environment env = make_env(4);
  ScriptedPolicy eager;
  eager.schedule(3, 60, action_set(1));  // relay 4 jumps in at onset, command at 61
  const EpisodeTrace& tr = rollout(env, eager, forced_fault(52, 5, 0.5, 0.05, 60, {5}));
  CHECK(tr.steps[61].relay[3].command_issued);
  CHECK(tr.steps[61].relay[3].condition == StepCondition::Normal);
  CHECK(tr.steps[61].relay[3].reward == -150.0);
  CHECK(tr.steps[62].relay[3].opened);
  CHECK(tr.cleared_step == 62);
}

TEST_CASE("reward table covers every condition and both choices") {
  CHECK(reward_value(StepCondition::Normal, false) == 3.0);
  CHECK(reward_value(StepCondition::Normal, true) == -150.0);
  CHECK(reward_value(StepCondition::FaultInMain, false) == -3.0);
  CHECK(reward_value(StepCondition::FaultInMain, true) == 120.0);
  CHECK(reward_value(StepCondition::FaultAsBackup, false) == -2.0);
  CHECK(reward_value(StepCondition::FaultAsBackup, true) == 100.0);
  CHECK(reward_value(StepCondition::FaultOutside, false) == 5.0);
  CHECK(reward_value(StepCondition::FaultOutside, true) == -150.0);
}

TEST_CASE("state encoding layout and scaling") {
  RelayObservation o;
  o.voltage = {1.0, 0.98};
  o.current = {1.2, 6.1};
  o.breaker_closed = true;
  o.counter = 3;
  std::vector<double> s = encode_state(o);
  REQUIRE(s.size() == 6);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == 0.98);
  CHECK(s[2] == 0.12);
  CHECK(s[3] == 0.61);
  CHECK(s[4] == 1.0);
  CHECK(s[5] == 3.0 / 9.0);

  o.counter = 9;
  CHECK(encode_state(o)[5] == 1.0);

  RelayObservation dead;
  dead.voltage = {0.0, 0.0};
  dead.current = {0.0, 0.0};
  dead.breaker_closed = false;
  dead.counter = 0;
  CHECK(encode_state(dead) == std::vector<double>(6, 0.0));
}

TEST_CASE("global reward is the sum of the per-relay rewards") {
  Environment env = make_env(17);
  Rng rng(1);
  for (int ep = 0; ep < 3; ++ep) {
    StepResult r = env.reset();
    while (!r.done) {
      std::vector<int> a(5);
      for (auto& x : a) x = rng.uniform_int(kNumActions);
      r = env.step(a);
      double s = 0.0;
      for (double x : r.reward) s += x;
      CHECK(r.global_reward == s);
    }
  }
}

TEST_CASE("every opening traces back to a command the step before") {
  Environment env = make_env(23);
  Rng rng(9);
  for (int ep = 0; ep < 4; ++ep) {
    StepResult r = env.reset();
    while (!r.done) {
      std::vector<int> a(5);
      for (auto& x : a) x = rng.uniform_int(kNumActions);
      r = env.step(a);
    }
    const EpisodeTrace& tr = env.trace();
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      for (int i = 0; i < 5; ++i) {
        const auto& rs = tr.steps[t].relay[i];
        if (rs.opened && !rs.exogenous_open) {
          REQUIRE(t >= 1);
          CHECK(tr.steps[t - 1].relay[i].command_issued);
          CHECK_FALSE(tr.steps[t - 1].relay[i].command_ignored);
        }
        if (rs.command_issued && !rs.command_ignored && t + 1 < tr.steps.size() &&
            tr.steps[t].relay[i].breaker_closed)
          CHECK(tr.steps[t + 1].relay[i].opened);
      }
    }
  }
}

TEST_CASE("environment rejects malformed stepping") {
  Environment env = make_env(3);
  CHECK_THROWS_AS(env.step(std::vector<int>(5, 0)), std::logic_error);  // before reset
  env.reset(no_fault_seeded(1));
  CHECK_THROWS_AS(env.step({0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(env.step({0, 0, 0, 0, 11}), std::invalid_argument);
  CHECK_THROWS_AS(env.step({0, 0, 0, 0, -1}), std::invalid_argument);
  std::vector<int> idle(5, kActionCountdown);
  StepResult r = env.reset(no_fault_seeded(1));
  while (!r.done) r = env.step(idle);
  CHECK(r.t == 239);  // no fault: runs the full horizon
  CHECK_THROWS_AS(env.step(idle), std::logic_error);
}

TEST_CASE("config validation rejects inconsistent settings") {
  EpisodeConfig cfg;
  cfg.onset_max = 400;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.fault_probability = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.fault_impedance_min = 2.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.jitter_sd = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.horizon = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("an unattended fault keeps the episode alive to the horizon") {
  Environment env = make_env(12);
  NullPolicy idle;
  const EpisodeTrace& tr = rollout(env, idle, forced_fault(60, 4, 0.5, 0.3, 90));
  CHECK(tr.cleared_step == -1);
  CHECK(static_cast<int>(tr.steps.size()) == 240);
  for (int t = 90; t < 240; ++t) CHECK(tr.steps[t].fault_active);
  for (int t = 0; t < 90; ++t) CHECK_FALSE(tr.steps[t].fault_active);
}

TEST_CASE("trace CSV export is deterministic and well-formed") {
  Environment a = make_env(2), b = make_env(2);
  OraclePolicy oracle;
  EpisodeOverride ov = forced_fault(70, 1, 0.4, 0.5, 60);
  const EpisodeTrace ta = rollout(a, oracle, ov);
  const EpisodeTrace& tb = rollout(b, oracle, ov);
  std::ostringstream sa, sb;
  export_trace_csv(ta, sa);
  export_trace_csv(tb, sb);
  CHECK(sa.str() == sb.str());
  std::istringstream lines(sa.str());
  std::string line;
  REQUIRE(std::getline(lines, line));
  CHECK(line == "step,relay,voltage,current,breaker_closed,counter,action,reward,fault_active");
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == ta.steps.size() * 5);
}

TEST_CASE("spontaneous isolation opens a breaker without any command") {
  EpisodeConfig cfg;
  cfg.fault_probability = 0.0;
  cfg.isolation_prob = 1.0;
  Environment env = make_env(77, cfg);
  NullPolicy idle;
  const EpisodeTrace& tr = rollout(env, idle);
  REQUIRE(tr.isolation_relay >= 1);
  REQUIRE(tr.isolation_step >= 30);
  int idx = tr.isolation_relay - 1;  // ids are 1..5 in index order
  const auto& rs = tr.steps[tr.isolation_step].relay[idx];
  CHECK(rs.opened);
  CHECK(rs.exogenous_open);
  CHECK_FALSE(tr.steps[tr.isolation_step - 1].relay[idx].command_issued);
  for (std::size_t t = tr.isolation_step; t < tr.steps.size(); ++t)
    CHECK_FALSE(tr.steps[t].relay[idx].breaker_closed);
}
