#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "env_fixtures.hpp"
#include "relayrl/policy.hpp"
#include "relayrl/trainer.hpp"

using namespace relayrl;

namespace {

// Study feeder with throwaway training sizes; keeps the full nested pipeline
// exercised in well under a second.
TrainerConfig tiny_config() {
  TrainerConfig cfg;
  cfg.episodes_per_relay = 8;
  cfg.epsilon_decay_episodes = 5;
  cfg.failure_window = 4;
  cfg.agent.hidden = {8};
  cfg.agent.batch_size = 8;
  cfg.agent.warmup = 16;
  cfg.agent.replay_capacity = 64;
  cfg.episode.horizon = 60;
  cfg.episode.onset_min = 10;
  cfg.episode.onset_max = 30;
  return cfg;
}

// Source, an unprotected trunk, then one protected segment feeding a load.
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

}  // namespace

TEST_CASE("training order is leaf first with id tie-break") {
  CHECK(training_order(build_feeder_section()) == std::vector<int>{2, 3, 5, 4, 1});
}

TEST_CASE("training order of a single relay") {
  CHECK(training_order(single_relay_line()) == std::vector<int>{1});
}

TEST_CASE("training order puts the backed-up relay before its backup") {
  FeederTopology t;
  t.buses = {"a", "b", "c"};
  t.source_bus = "a";
  t.segments.push_back({"a", "b", {0.02, 0.06}});
  t.segments.push_back({"b", "c", {0.02, 0.06}});
  t.loads.push_back({"c", {0.27, -0.131}});
  t.relays.push_back({1, 1, -1});
  t.relays.push_back({2, 0, 1});  // relay 2 backs up relay 1
  t.validate();
  CHECK(training_order(t) == std::vector<int>{1, 2});
}

TEST_CASE("training order rejects a cyclic backup relation") {
  FeederTopology t;  // deliberately inconsistent, bypassing validate()
  t.relays.push_back({1, 0, 2});
  t.relays.push_back({2, 1, 1});
  CHECK_THROWS_AS(training_order(t), std::invalid_argument);
}

TEST_CASE("exploration rate decays linearly then holds at the floor") {
  TrainerConfig cfg;
  CHECK(epsilon_at(cfg, 0) == 1.0);
  CHECK(epsilon_at(cfg, 75) == Catch::Approx(0.525));
  CHECK(epsilon_at(cfg, 150) == 0.05);
  CHECK(epsilon_at(cfg, 400) == 0.05);
}

TEST_CASE("episodic reward sums one relay's per-step rewards") {
  Environment env = testing::make_env(11);
  NullPolicy hold;
  const EpisodeTrace& tr = rollout(env, hold, testing::no_fault_seeded(7));
  // No fault, everyone holds: the hold reward on every one of the 240 steps.
  for (int id = 1; id <= 5; ++id) CHECK(episodic_reward(tr, id) == 720.0);
  CHECK_THROWS_AS(episodic_reward(tr, 9), std::invalid_argument);
}

TEST_CASE("trainer configuration validation") {
  TrainerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.episodes_per_relay = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.runs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.epsilon_start = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.epsilon_decay_episodes = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.failure_window = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.focus_prob = 1.2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.focus_backup_share = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.focus_forced_failure = 2.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.agent.batch_size = 0;  // nested sections are validated too
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.episode.horizon = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("nested training is reproducible and leaves an audit trail") {
  const FeederTopology topo = build_feeder_section();
  const TrainerConfig cfg = tiny_config();
  TrainingResult a = train_all(topo, cfg, 2026);
  TrainingResult b = train_all(topo, cfg, 2026);

  REQUIRE(a.report.order == std::vector<int>{2, 3, 5, 4, 1});
  CHECK(a.report.master_seed == 2026);
  CHECK(a.report.runs == 1);
  CHECK(a.report.wall_seconds > 0.0);

  // Relays not yet in training never reach their breaker.
  CHECK(a.report.untrained_commands == 0);

  // Same seed, same everything: curves and weights are bitwise identical.
  REQUIRE(a.report.rewards.size() == 1);
  CHECK(a.report.rewards == b.report.rewards);
  CHECK(a.report.failures == b.report.failures);
  REQUIRE(a.agents.size() == 5);
  for (const auto& [id, agent] : a.agents) {
    REQUIRE(b.agents.count(id) == 1);
    CHECK(agent.online().parameters() == b.agents.at(id).online().parameters());
    CHECK(agent.target().parameters() == b.agents.at(id).target().parameters());
  }

  // Frozen policies never move while a later relay trains.
  REQUIRE(a.report.frozen_hash_before.size() == 5);
  REQUIRE(a.report.frozen_hash_after.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(a.report.frozen_hash_before[k].size() == k);
    CHECK(a.report.frozen_hash_before[k] == a.report.frozen_hash_after[k]);
  }

  REQUIRE(a.report.curves.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    const RelayCurve& c = a.report.curves[k];
    CHECK(c.relay_id == a.report.order[k]);
    CHECK(c.reward_mean.size() == 8);
    CHECK(c.reward_std.size() == 8);
    CHECK(c.failure_ma.size() == 8);
    for (double s : c.reward_std) CHECK(s == 0.0);  // one run, no spread
    for (double f : c.failure_ma) {
      CHECK(f >= 0.0);
      CHECK(f <= 1.0);
    }
    for (std::size_t e = 0; e < c.reward_mean.size(); ++e)
      CHECK(c.reward_mean[e] == a.report.rewards[0][k][e]);
  }
}

TEST_CASE("independent runs aggregate into mean and spread curves") {
  const FeederTopology topo = build_feeder_section();
  TrainerConfig cfg = tiny_config();
  TrainingResult solo = train_all(topo, cfg, 99);
  cfg.runs = 2;
  TrainingResult both = train_all(topo, cfg, 99);

  REQUIRE(both.report.rewards.size() == 2);
  // The first run repeats the single-run training exactly; the returned
  // agents come from it.
  CHECK(both.report.rewards[0] == solo.report.rewards[0]);
  for (const auto& [id, agent] : solo.agents)
    CHECK(agent.online().parameters() == both.agents.at(id).online().parameters());
  // The second run draws a different seed stream.
  CHECK(both.report.rewards[1] != both.report.rewards[0]);

  for (std::size_t k = 0; k < both.report.curves.size(); ++k) {
    const RelayCurve& c = both.report.curves[k];
    for (std::size_t e = 0; e < c.reward_mean.size(); ++e) {
      const double r0 = both.report.rewards[0][k][e];
      const double r1 = both.report.rewards[1][k][e];
      CHECK(c.reward_mean[e] == Catch::Approx((r0 + r1) / 2.0));
      CHECK_THAT(c.reward_std[e],
                 Catch::Matchers::WithinAbs(std::abs(r0 - r1) / 2.0, 1e-9));
    }
  }
}

TEST_CASE("learning curve export is stable and complete") {
  TrainingResult r = train_all(build_feeder_section(), tiny_config(), 5);
  std::ostringstream first, again;
  export_learning_curve_csv(r.report, 3, first);
  export_learning_curve_csv(r.report, 3, again);
  CHECK(first.str() == again.str());

  std::istringstream lines(first.str());
  std::string line;
  REQUIRE(std::getline(lines, line));
  CHECK(line == "episode,reward_mean,reward_std,failure_ma");
  int rows = 0;
  while (std::getline(lines, line)) {
    CHECK(line.find(',') != std::string::npos);
    ++rows;
  }
  CHECK(rows == 8);

  std::ostringstream sink;
  CHECK_THROWS_AS(export_learning_curve_csv(r.report, 42, sink), std::invalid_argument);
}

TEST_CASE("the learner improves on a single protected line", "[slow]") {
  TrainerConfig cfg;
  cfg.episodes_per_relay = 150;
  cfg.epsilon_decay_episodes = 100;
  cfg.agent.hidden = {32, 16};
  cfg.agent.warmup = 200;
  cfg.episode.horizon = 120;
  cfg.episode.onset_min = 30;
  cfg.episode.onset_max = 60;
  cfg.episode.breaker_failure_prob = 0.0;
  TrainingResult r = train_all(single_relay_line(), cfg, 7);
  const std::vector<double>& rewards = r.report.rewards[0][0];
  double first = 0.0, last = 0.0;
  for (int e = 0; e < 50; ++e) first += rewards[e];
  for (int e = 100; e < 150; ++e) last += rewards[e];
  INFO("first-50 mean " << first / 50.0 << ", last-50 mean " << last / 50.0);
  CHECK(last / 50.0 > first / 50.0);
}
