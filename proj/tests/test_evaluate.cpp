#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <sstream>

#include "relayrl/baseline.hpp"
#include "relayrl/evaluate.hpp"
#include "env_fixtures.hpp"

using namespace relayrl;
using relayrl::testing::no_fault_seeded;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

FeederTopology single_relay_line() {
  FeederTopology t;
  t.buses = {"src", "mid", "end"};
  t.source_bus = "src";
  t.segments.push_back({"src", "mid", {0.02, 0.06}});
  t.segments.push_back({"mid", "end", {0.02, 0.06}});
  t.loads.push_back({"end", Complex{0.3 * 0.9, 0.3 * -0.43588989435406733}});
  t.relays.push_back({1, 1, -1});
  t.validate();
  return t;
}

FeederTopology fully_protected_line() {
  FeederTopology t;
  t.buses = {"src", "mid", "end"};
  t.source_bus = "src";
  t.segments.push_back({"src", "mid", {0.02, 0.06}});
  t.segments.push_back({"mid", "end", {0.02, 0.06}});
  t.loads.push_back({"end", Complex{0.3 * 0.9, 0.3 * -0.43588989435406733}});
  t.relays.push_back({1, 0, 2});
  t.relays.push_back({2, 1, -1});
  t.validate();
  return t;
}

// Arms a one-step counter immediately and lets it expire: command at t=1,
// breaker open at t=2, in every episode regardless of conditions.
class TripOncePolicy : public Policy {
 public:
  std::vector<int> act(int t, const std::vector<RelayObservation>& obs) override {
    return std::vector<int>(obs.size(), t == 0 ? action_set(1) : kActionCountdown);
  }
};

}  // namespace

TEST_CASE("scenario overrides respect their constraints") {
  const FeederTopology topo = build_feeder_section();
  Rng rng(5);

  SECTION("local fault pins a functional breaker on a protected segment") {
    std::set<int> seen;
    for (int i = 0; i < 400; ++i) {
      EpisodeOverride ov = scenario_override(topo, ScenarioKind::LocalFault, rng);
      REQUIRE(ov.force_fault == true);
      REQUIRE(ov.fault_segment.has_value());
      const RelayDef* primary = nullptr;
      for (const auto& r : topo.relays)
        if (r.segment == *ov.fault_segment) primary = &r;
      REQUIRE(primary != nullptr);
      CHECK(ov.breaker_fate.size() == 1);
      CHECK(ov.breaker_fate.at(primary->id) == false);
      seen.insert(*ov.fault_segment);
    }
    CHECK(seen == std::set<int>{1, 2, 3, 4, 5});
  }

  SECTION("backup forces the primary stuck and keeps the backup functional") {
    std::set<int> seen;
    for (int i = 0; i < 200; ++i) {
      EpisodeOverride ov = scenario_override(topo, ScenarioKind::Backup, rng);
      REQUIRE(ov.force_fault == true);
      int seg = *ov.fault_segment;
      seen.insert(seg);
      if (seg == 4) {
        CHECK(ov.breaker_fate.at(4) == true);
        CHECK(ov.breaker_fate.at(1) == false);
      } else {
        REQUIRE(seg == 5);
        CHECK(ov.breaker_fate.at(5) == true);
        CHECK(ov.breaker_fate.at(4) == false);
      }
    }
    CHECK(seen == std::set<int>{4, 5});
  }

  SECTION("remote fault lands on the unprotected segment") {
    for (int i = 0; i < 50; ++i) {
      EpisodeOverride ov = scenario_override(topo, ScenarioKind::RemoteFault, rng);
      REQUIRE(ov.force_fault == true);
      CHECK(*ov.fault_segment == 0);
      CHECK(ov.breaker_fate.empty());
    }
  }

  SECTION("no fault suppresses the fault coin") {
    EpisodeOverride ov = scenario_override(topo, ScenarioKind::NoFault, rng);
    REQUIRE(ov.force_fault.has_value());
    CHECK(*ov.force_fault == false);
    CHECK_FALSE(ov.fault_segment.has_value());
  }

  SECTION("topologies without the needed structure are rejected") {
    Rng r2(9);
    CHECK_THROWS_WITH(scenario_override(single_relay_line(), ScenarioKind::Backup, r2),
                      ContainsSubstring("no backup relation"));
    CHECK_THROWS_WITH(scenario_override(fully_protected_line(), ScenarioKind::RemoteFault, r2),
                      ContainsSubstring("no unprotected segment"));
  }
}

TEST_CASE("oracle policy is failure-free in every scenario") {
  const FeederTopology topo = build_feeder_section();
  EpisodeConfig cfg;
  OraclePolicy oracle;
  FailureReport rep = run_all_scenarios(topo, cfg, oracle, 150, 11);
  REQUIRE(rep.rows.size() == 4);
  for (const auto& row : rep.rows) {
    INFO(scenario_name(row.kind));
    CHECK(row.episodes == 150);
    CHECK(row.failed == 0);
    CHECK(row.false_positive == 0);
    CHECK(row.false_negative == 0);
    CHECK(row.backup_before_primary == 0);
    CHECK(row.rate() == 0.0);
  }
}

TEST_CASE("degenerate policies hit the rate extremes") {
  const FeederTopology topo = build_feeder_section();
  EpisodeConfig cfg;

  SECTION("tripping in a healthy system is always a false positive") {
    TripOncePolicy trip;
    ScenarioReport rep = run_scenario(topo, cfg, trip, ScenarioKind::NoFault, 60, 21);
    CHECK(rep.rate() == 1.0);
    CHECK(rep.false_positive == 60);
    CHECK(rep.false_negative == 0);
  }

  SECTION("holding forever misses every local fault and nothing else") {
    NullPolicy null;
    ScenarioReport local = run_scenario(topo, cfg, null, ScenarioKind::LocalFault, 60, 22);
    CHECK(local.rate() == 1.0);
    CHECK(local.false_negative == 60);
    CHECK(local.false_positive == 0);
    CHECK(local.backup_before_primary == 0);
    ScenarioReport remote = run_scenario(topo, cfg, null, ScenarioKind::RemoteFault, 60, 22);
    CHECK(remote.rate() == 0.0);
    ScenarioReport none = run_scenario(topo, cfg, null, ScenarioKind::NoFault, 60, 22);
    CHECK(none.rate() == 0.0);
  }
}

TEST_CASE("scenario reports are deterministic in the seed") {
  const FeederTopology topo = build_feeder_section();
  EpisodeConfig cfg;
  OraclePolicy a, b;
  FailureReport r1 = run_all_scenarios(topo, cfg, a, 40, 77);
  FailureReport r2 = run_all_scenarios(topo, cfg, b, 40, 77);
  REQUIRE(r1.rows.size() == r2.rows.size());
  for (std::size_t i = 0; i < r1.rows.size(); ++i) {
    CHECK(r1.rows[i].kind == r2.rows[i].kind);
    CHECK(r1.rows[i].failed == r2.rows[i].failed);
    CHECK(r1.rows[i].false_positive == r2.rows[i].false_positive);
    CHECK(r1.rows[i].false_negative == r2.rows[i].false_negative);
  }
}

TEST_CASE("report construction rejects bad inputs") {
  const FeederTopology topo = build_feeder_section();
  EpisodeConfig cfg;
  NullPolicy null;
  CHECK_THROWS_AS(run_scenario(topo, cfg, null, ScenarioKind::NoFault, 0, 1),
                  std::invalid_argument);
  FailureReport empty;
  CHECK_THROWS_AS(empty.row(ScenarioKind::Backup), std::invalid_argument);
}

TEST_CASE("oracle response times sit at the counter minimum with graded backup") {
  const FeederTopology topo = build_feeder_section();
  EpisodeConfig cfg;
  OraclePolicy oracle;
  ResponseTimeStats st = response_time(topo, cfg, oracle, 80, 31);
  CHECK(st.primary_trips == 80);
  CHECK(st.primary_no_trip == 0);
  CHECK(st.primary_mean_steps == 2.0);
  CHECK(st.primary_max_steps == 2);
  CHECK(st.primary_mean_seconds() == Approx(2.0 / 600.0));
  CHECK(st.backup_trips == 80);
  CHECK(st.backup_no_trip == 0);
  CHECK(st.backup_mean_steps > st.primary_mean_steps);
  CHECK(st.backup_max_seconds() == Approx(st.backup_max_steps / 600.0));
  ResponseTimeStats held = [&] {
    NullPolicy null;
    return response_time(topo, cfg, null, 20, 31);
  }();
  CHECK(held.primary_trips == 0);
  CHECK(held.primary_no_trip == 20);
  CHECK(held.primary_mean_steps == 0.0);
}

TEST_CASE("stress axes reshape the load trend interval") {
  EpisodeConfig cfg;

  SECTION("peak axis samples only at or above the training peak") {
    EpisodeConfig s = stressed_config(cfg, StressAxis::PeakLoad, 9.0);
    CHECK(s.trend_min == Approx(1.3));
    CHECK(s.trend_max == Approx(1.3 * 1.09));
    s.validate();
  }

  SECTION("zero stress pins the trend at exactly the peak") {
    EpisodeConfig s = stressed_config(cfg, StressAxis::PeakLoad, 0.0);
    CHECK(s.trend_min == s.trend_max);
    CHECK(s.trend_max == Approx(1.3));
  }

  SECTION("mean axis shifts the whole interval") {
    EpisodeConfig s = stressed_config(cfg, StressAxis::MeanLoad, 6.0);
    CHECK(s.trend_min == Approx(0.7 * 1.06));
    CHECK(s.trend_max == Approx(1.3 * 1.06));
  }

  SECTION("negative stress is rejected") {
    CHECK_THROWS_AS(stressed_config(cfg, StressAxis::PeakLoad, -1.0), std::invalid_argument);
  }
}

TEST_CASE("sweep output is rectangular, seeded, and oracle-clean", "[slow]") {
  const FeederTopology topo = build_feeder_section();
  EpisodeConfig cfg;
  OraclePolicy oracle;
  NullPolicy null;
  RobustnessSweep sw =
      robustness_sweep(topo, cfg, oracle, null, StressAxis::PeakLoad, 15.0, 3.0, 30, 41);
  REQUIRE(sw.stress_percent == std::vector<double>{0.0, 3.0, 6.0, 9.0, 12.0, 15.0});
  REQUIRE(sw.rate_rl.size() == 6);
  REQUIRE(sw.rate_baseline.size() == 6);
  for (double r : sw.rate_rl) CHECK(r == 0.0);
  // The hold-everything strategy misses faults at a rate set by the fault
  // coin, independent of stress level.
  for (double r : sw.rate_baseline) CHECK(r > 0.5);

  std::ostringstream csv1, csv2;
  export_sweep_csv(sw, csv1);
  OraclePolicy oracle2;
  NullPolicy null2;
  export_sweep_csv(
      robustness_sweep(topo, cfg, oracle2, null2, StressAxis::PeakLoad, 15.0, 3.0, 30, 41),
      csv2);
  CHECK(csv1.str() == csv2.str());
  CHECK(csv1.str().rfind("stress_percent,rate_rl,rate_baseline\n", 0) == 0);

  CHECK_THROWS_AS(
      robustness_sweep(topo, cfg, oracle, null, StressAxis::PeakLoad, 15.0, 0.0, 10, 1),
      std::invalid_argument);
}

TEST_CASE("fixed thresholds degrade monotonically under peak stress", "[slow]") {
  const FeederTopology topo = build_feeder_section();
  EpisodeConfig cfg;
  CurrentSampleSet samples = collect_samples(topo, cfg, 300, 6021);
  PickupThreshold th = fit_threshold(topo, samples);
  ThresholdPolicy pol(th);
  double r0 = failure_rate(topo, stressed_config(cfg, StressAxis::PeakLoad, 0.0), pol, 250, 88);
  double r9 = failure_rate(topo, stressed_config(cfg, StressAxis::PeakLoad, 9.0), pol, 250, 88);
  double r15 = failure_rate(topo, stressed_config(cfg, StressAxis::PeakLoad, 15.0), pol, 250, 88);
  INFO("rates " << r0 << " " << r9 << " " << r15);
  CHECK(r0 <= r9);
  CHECK(r9 <= r15);
}

TEST_CASE("comparison table pairs the strategies row by row") {
  const FeederTopology topo = build_feeder_section();
  EpisodeConfig cfg;
  OraclePolicy oracle;
  NullPolicy null;
  FailureReport good = run_all_scenarios(topo, cfg, oracle, 40, 91);
  FailureReport bad = run_all_scenarios(topo, cfg, null, 40, 91);

  std::string table = compare_report(good, bad);
  CHECK_THAT(table, ContainsSubstring("scenario"));
  CHECK_THAT(table, ContainsSubstring("local_fault"));
  CHECK_THAT(table, ContainsSubstring("no_fault"));
  CHECK_THAT(table, ContainsSubstring("100.00%"));

  std::string same = compare_report(good, good);
  CHECK_THAT(same, ContainsSubstring("0.00%"));

  std::ostringstream csv;
  export_comparison_csv(good, bad, csv);
  CHECK(csv.str().rfind("scenario,episodes,rate_baseline,rate_rl\n", 0) == 0);
  int lines = 0;
  for (char c : csv.str())
    if (c == '\n') ++lines;
  CHECK(lines == 5);

  FailureReport fewer = good;
  fewer.rows.pop_back();
  CHECK_THROWS_AS(compare_report(fewer, bad), std::invalid_argument);
  FailureReport other = run_all_scenarios(topo, cfg, oracle, 20, 91);
  CHECK_THROWS_AS(compare_report(good, other), std::invalid_argument);
  FailureReport empty;
  CHECK_THROWS_AS(compare_report(empty, empty), std::invalid_argument);
}

TEST_CASE("greedy agent adapter demands full relay coverage") {
  const FeederTopology topo = build_feeder_section();
  EpisodeConfig cfg;
  Environment env(topo, cfg, 3);

  std::map<int, DqnAgent> agents;
  DqnConfig dc;
  dc.hidden = {8};
  const int dim = 2 * cfg.window + 2;
  for (int id : {1, 2, 3, 4}) agents.emplace(id, DqnAgent(dim, kNumActions, dc, 100 + id));
  DqnPolicy partial(&agents);
  CHECK_THROWS_WITH(rollout(env, partial), ContainsSubstring("relay 5"));

  agents.emplace(5, DqnAgent(dim, kNumActions, dc, 105));
  DqnPolicy full(&agents);
  const EpisodeTrace& t1 = rollout(env, full, no_fault_seeded(9));
  double sum1 = 0.0;
  for (const auto& s : t1.steps) sum1 += s.global_reward;
  const EpisodeTrace& t2 = rollout(env, full, no_fault_seeded(9));
  double sum2 = 0.0;
  for (const auto& s : t2.steps) sum2 += s.global_reward;
  CHECK(sum1 == sum2);
}
