#pragma once
// Run configuration shared by the command line tools: one plain-text file
// covering the topology source, episode physics, agent hyperparameters,
// training counts, and evaluation counts. Numbers are written with enough
// digits that a save/load round trip reproduces every value exactly.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "relayrl/evaluate.hpp"
#include "relayrl/trainer.hpp"

namespace relayrl {

struct EvalConfig {
  int scenario_episodes = 1000;  // per failure-rate scenario
  int response_episodes = 300;   // per response-time leg
  int sweep_episodes = 400;      // per stress level and strategy
  double sweep_max_percent = 15.0;
  double sweep_step_percent = 3.0;

  void validate() const {
    if (scenario_episodes <= 0 || response_episodes <= 0 || sweep_episodes <= 0)
      throw std::invalid_argument("evaluation episode counts must be positive");
    if (sweep_step_percent <= 0.0) throw std::invalid_argument("sweep step must be positive");
    if (sweep_max_percent < 0.0) throw std::invalid_argument("sweep maximum must be nonnegative");
  }
};

struct BaselineConfig {
  int episodes = 500;  // idle sampling episodes behind the density fit
  double weight_faulty = 3.0;
  int base_delay = 3;
  int grading_margin = 6;

  void validate() const {
    if (episodes < 2) throw std::invalid_argument("need at least two sampling episodes");
    if (weight_faulty < 1.0) throw std::invalid_argument("faulty-class weight must be at least 1");
    if (base_delay < 1 || grading_margin < 1)
      throw std::invalid_argument("delays must be at least 1");
  }
};

struct RunConfig {
  std::string topology = "builtin";  // the study feeder section, or a file path
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;  // commands that compute require one
  TrainerConfig trainer;              // nests agent + episode settings
  EvalConfig eval;
  BaselineConfig baseline;

  void validate() const {
    if (topology.empty()) throw std::invalid_argument("topology must not be empty");
    if (out_dir.empty()) throw std::invalid_argument("output directory must not be empty");
    trainer.validate();
    eval.validate();
    baseline.validate();
  }
};

inline std::string save_run_config(const RunConfig& c) {
  std::ostringstream o;
  o << "# run configuration\n";
  o << "[run]\n";
  o << "topology = " << c.topology << "\n";
  o << "out_dir = " << c.out_dir << "\n";
  if (c.seed) o << "seed = " << *c.seed << "\n";
  const EpisodeConfig& e = c.trainer.episode;
  o << "\n[episode]\n";
  o << "horizon = " << e.horizon << "\n";
  o << "window = " << e.window << "\n";
  o << "timestep_seconds = " << format_double(e.timestep_seconds) << "\n";
  o << "fault_probability = " << format_double(e.fault_probability) << "\n";
  o << "onset_min = " << e.onset_min << "\n";
  o << "onset_max = " << e.onset_max << "\n";
  o << "fault_impedance_min = " << format_double(e.fault_impedance_min) << "\n";
  o << "fault_impedance_max = " << format_double(e.fault_impedance_max) << "\n";
  o << "trend_min = " << format_double(e.trend_min) << "\n";
  o << "trend_max = " << format_double(e.trend_max) << "\n";
  o << "local_min = " << format_double(e.local_min) << "\n";
  o << "local_max = " << format_double(e.local_max) << "\n";
  o << "jitter_sd = " << format_double(e.jitter_sd) << "\n";
  o << "breaker_failure_prob = " << format_double(e.breaker_failure_prob) << "\n";
  o << "settle_steps = " << e.settle_steps << "\n";
  o << "isolation_prob = " << format_double(e.isolation_prob) << "\n";
  const DqnConfig& a = c.trainer.agent;
  o << "\n[agent]\n";
  o << "hidden =";
  for (int h : a.hidden) o << " " << h;
  o << "\n";
  o << "learning_rate = " << format_double(a.learning_rate) << "\n";
  o << "gamma = " << format_double(a.gamma) << "\n";
  o << "tau = " << format_double(a.tau) << "\n";
  o << "adam_beta1 = " << format_double(a.adam_beta1) << "\n";
  o << "adam_beta2 = " << format_double(a.adam_beta2) << "\n";
  o << "adam_epsilon = " << format_double(a.adam_epsilon) << "\n";
  o << "replay_capacity = " << a.replay_capacity << "\n";
  o << "batch_size = " << a.batch_size << "\n";
  o << "warmup = " << a.warmup << "\n";
  const TrainerConfig& t = c.trainer;
  o << "\n[trainer]\n";
  o << "episodes_per_relay = " << t.episodes_per_relay << "\n";
  o << "runs = " << t.runs << "\n";
  o << "epsilon_start = " << format_double(t.epsilon_start) << "\n";
  o << "epsilon_end = " << format_double(t.epsilon_end) << "\n";
  o << "epsilon_decay_episodes = " << t.epsilon_decay_episodes << "\n";
  o << "failure_window = " << t.failure_window << "\n";
  o << "focus_prob = " << format_double(t.focus_prob) << "\n";
  o << "focus_backup_share = " << format_double(t.focus_backup_share) << "\n";
  o << "focus_forced_failure = " << format_double(t.focus_forced_failure) << "\n";
  const EvalConfig& v = c.eval;
  o << "\n[evaluation]\n";
  o << "scenario_episodes = " << v.scenario_episodes << "\n";
  o << "response_episodes = " << v.response_episodes << "\n";
  o << "sweep_episodes = " << v.sweep_episodes << "\n";
  o << "sweep_max_percent = " << format_double(v.sweep_max_percent) << "\n";
  o << "sweep_step_percent = " << format_double(v.sweep_step_percent) << "\n";
  const BaselineConfig& b = c.baseline;
  o << "\n[baseline]\n";
  o << "episodes = " << b.episodes << "\n";
  o << "weight_faulty = " << format_double(b.weight_faulty) << "\n";
  o << "base_delay = " << b.base_delay << "\n";
  o << "grading_margin = " << b.grading_margin << "\n";
  return o.str();
}

namespace detail {

inline long long parse_int_field(const std::string& v, const std::string& what) {
  try {
    std::size_t pos = 0;
    long long n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return n;
  } catch (...) {
    throw std::invalid_argument("bad integer value '" + v + "' for " + what);
  }
}

inline std::uint64_t parse_uint_field(const std::string& v, const std::string& what) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("");
    unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return n;
  } catch (...) {
    throw std::invalid_argument("bad unsigned value '" + v + "' for " + what);
  }
}

}  // namespace detail

inline RunConfig load_run_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw std::invalid_argument("line " + std::to_string(lineno) + ": unterminated section");
      section = detail::trim(s.substr(1, s.size() - 2));
      if (section != "run" && section != "episode" && section != "agent" &&
          section != "trainer" && section != "evaluation" && section != "baseline")
        throw std::invalid_argument("line " + std::to_string(lineno) + ": unknown section [" +
                                    section + "]");
      continue;
    }
    std::size_t eq = s.find('=');
    if (eq == std::string::npos || section.empty())
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string val = detail::trim(s.substr(eq + 1));
    const std::string what = "[" + section + "] " + key;
    auto num = [&] { return detail::parse_double_field(val, what); };
    auto integer = [&] { return static_cast<int>(detail::parse_int_field(val, what)); };
    auto count = [&] { return static_cast<std::size_t>(detail::parse_uint_field(val, what)); };
    EpisodeConfig& e = c.trainer.episode;
    DqnConfig& a = c.trainer.agent;
    TrainerConfig& t = c.trainer;
    EvalConfig& v = c.eval;
    bool known = true;
    if (section == "run") {
      if (key == "topology") c.topology = val;
      else if (key == "out_dir") c.out_dir = val;
      else if (key == "seed") c.seed = detail::parse_uint_field(val, what);
      else known = false;
    } else if (section == "episode") {
      if (key == "horizon") e.horizon = integer();
      else if (key == "window") e.window = integer();
      else if (key == "timestep_seconds") e.timestep_seconds = num();
      else if (key == "fault_probability") e.fault_probability = num();
      else if (key == "onset_min") e.onset_min = integer();
      else if (key == "onset_max") e.onset_max = integer();
      else if (key == "fault_impedance_min") e.fault_impedance_min = num();
      else if (key == "fault_impedance_max") e.fault_impedance_max = num();
      else if (key == "trend_min") e.trend_min = num();
      else if (key == "trend_max") e.trend_max = num();
      else if (key == "local_min") e.local_min = num();
      else if (key == "local_max") e.local_max = num();
      else if (key == "jitter_sd") e.jitter_sd = num();
      else if (key == "breaker_failure_prob") e.breaker_failure_prob = num();
      else if (key == "settle_steps") e.settle_steps = integer();
      else if (key == "isolation_prob") e.isolation_prob = num();
      else known = false;
    } else if (section == "agent") {
      if (key == "hidden") {
        a.hidden.clear();
        std::istringstream hs(val);
        std::string tok;
        while (hs >> tok) a.hidden.push_back(static_cast<int>(detail::parse_int_field(tok, what)));
      } else if (key == "learning_rate") a.learning_rate = num();
      else if (key == "gamma") a.gamma = num();
      else if (key == "tau") a.tau = num();
      else if (key == "adam_beta1") a.adam_beta1 = num();
      else if (key == "adam_beta2") a.adam_beta2 = num();
      else if (key == "adam_epsilon") a.adam_epsilon = num();
      else if (key == "replay_capacity") a.replay_capacity = count();
      else if (key == "batch_size") a.batch_size = count();
      else if (key == "warmup") a.warmup = count();
      else known = false;
    } else if (section == "trainer") {
      if (key == "episodes_per_relay") t.episodes_per_relay = integer();
      else if (key == "runs") t.runs = integer();
      else if (key == "epsilon_start") t.epsilon_start = num();
      else if (key == "epsilon_end") t.epsilon_end = num();
      else if (key == "epsilon_decay_episodes") t.epsilon_decay_episodes = integer();
      else if (key == "failure_window") t.failure_window = integer();
      else if (key == "focus_prob") t.focus_prob = num();
      else if (key == "focus_backup_share") t.focus_backup_share = num();
      else if (key == "focus_forced_failure") t.focus_forced_failure = num();
      else known = false;
    } else if (section == "evaluation") {
      if (key == "scenario_episodes") v.scenario_episodes = integer();
      else if (key == "response_episodes") v.response_episodes = integer();
      else if (key == "sweep_episodes") v.sweep_episodes = integer();
      else if (key == "sweep_max_percent") v.sweep_max_percent = num();
      else if (key == "sweep_step_percent") v.sweep_step_percent = num();
      else known = false;
    } else if (section == "baseline") {
      BaselineConfig& b = c.baseline;
      if (key == "episodes") b.episodes = integer();
      else if (key == "weight_faulty") b.weight_faulty = num();
      else if (key == "base_delay") b.base_delay = integer();
      else if (key == "grading_margin") b.grading_margin = integer();
      else known = false;
    }
    if (!known)
      throw std::invalid_argument("line " + std::to_string(lineno) + ": unknown key '" + key +
                                  "' in section [" + section + "]");
  }
  c.validate();
  return c;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline RunConfig load_run_config_file(const std::string& path) {
  return load_run_config(read_text_file(path));
}

// "builtin" names the study feeder section; anything else is a topology file.
inline FeederTopology resolve_topology(const RunConfig& c) {
  if (c.topology == "builtin") return build_feeder_section();
  return load_topology(read_text_file(c.topology));
}

}  // namespace relayrl
