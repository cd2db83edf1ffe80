#pragma once
// Operator entry point: train agents, fit the overcurrent baseline, run the
// evaluation suite, export traces, and serve the environment over TCP. Owns
// the output-file conventions; every artifact lands inside the configured
// output directory. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "relayrl/baseline.hpp"
#include "relayrl/classify.hpp"
#include "relayrl/config.hpp"
#include "relayrl/evaluate.hpp"
#include "relayrl/server.hpp"
#include "relayrl/trainer.hpp"

namespace relayrl {

// Flag/config problems the caller can fix; mapped to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cli_detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write file: " + path.string());
  os << text;
  if (!os.flush()) throw std::runtime_error("write failed: " + path.string());
}

inline std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::uint64_t require_seed(const RunConfig& cfg) {
  if (!cfg.seed) throw UsageError("this command requires a seed (--seed or config file)");
  return *cfg.seed;
}

inline std::filesystem::path model_path(const std::filesystem::path& dir, int relay_id) {
  return dir / ("relay" + std::to_string(relay_id) + ".bin");
}

inline std::map<int, DqnAgent> load_agents(const std::string& dir,
                                           const std::vector<int>& relay_ids) {
  std::vector<int> missing;
  for (int id : relay_ids)
    if (!std::filesystem::exists(model_path(dir, id))) missing.push_back(id);
  if (!missing.empty()) {
    std::string ids;
    for (int id : missing) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
    throw std::runtime_error("missing model files for relays " + ids + " in " + dir);
  }
  std::map<int, DqnAgent> agents;
  for (int id : relay_ids) {
    std::filesystem::path p = model_path(dir, id);
    std::ifstream is(p, std::ios::binary);
    try {
      agents.emplace(id, DqnAgent::load(is));
    } catch (const std::exception& e) {
      throw std::runtime_error("cannot load model " + p.string() + ": " + e.what());
    }
  }
  return agents;
}

inline std::string rates_csv(const FailureReport& rep) {
  std::ostringstream os;
  os << "scenario,episodes,failed,false_positive,false_negative,backup_before_primary,rate\n";
  for (const auto& r : rep.rows)
    os << scenario_name(r.kind) << ',' << r.episodes << ',' << r.failed << ','
       << r.false_positive << ',' << r.false_negative << ',' << r.backup_before_primary << ','
       << format_double(r.rate()) << '\n';
  return os.str();
}

inline std::string response_text(const ResponseTimeStats& rt) {
  std::ostringstream os;
  os << "primary: mean " << format_double(rt.primary_mean_steps) << " steps ("
     << format_double(rt.primary_mean_seconds()) << " s), max " << rt.primary_max_steps
     << " steps, trips " << rt.primary_trips << ", missed " << rt.primary_no_trip << "\n";
  os << "backup: mean " << format_double(rt.backup_mean_steps) << " steps ("
     << format_double(rt.backup_mean_seconds()) << " s), max " << rt.backup_max_steps
     << " steps, trips " << rt.backup_trips << ", missed " << rt.backup_no_trip << "\n";
  return os.str();
}

}  // namespace cli_detail

inline int cmd_train(const RunConfig& cfg, bool verbose, std::ostream& out, std::ostream& err) {
  const std::uint64_t seed = cli_detail::require_seed(cfg);
  const FeederTopology topo = resolve_topology(cfg);
  const std::filesystem::path dir = cli_detail::prepare_out_dir(cfg);
  TrainingResult result = train_all(topo, cfg.trainer, seed, verbose ? &err : nullptr);
  for (const auto& [id, agent] : result.agents) {
    std::ofstream os(cli_detail::model_path(dir, id), std::ios::binary);
    if (!os) throw std::runtime_error("cannot write model file for relay " + std::to_string(id));
    agent.save(os);
  }
  for (int id : result.report.order) {
    std::ostringstream csv;
    export_learning_curve_csv(result.report, id, csv);
    cli_detail::write_text_file(dir / ("curve_relay" + std::to_string(id) + ".csv"), csv.str());
  }
  out << "trained " << result.report.order.size() << " relays in "
      << format_double(result.report.wall_seconds) << " s (order:";
  for (int id : result.report.order) out << " " << id;
  out << ")\n";
  const int window = std::min(50, cfg.trainer.episodes_per_relay);
  for (const auto& curve : result.report.curves) {
    double sum = 0.0;
    for (int e = cfg.trainer.episodes_per_relay - window; e < cfg.trainer.episodes_per_relay; ++e)
      sum += curve.reward_mean[e];
    out << "relay " << curve.relay_id << ": mean episodic reward over the last " << window
        << " episodes " << format_double(sum / window) << ", failure moving average "
        << format_double(curve.failure_ma.back()) << "\n";
  }
  out << "wrote models and learning curves to " << dir.string() << "\n";
  return 0;
}

inline int cmd_baseline(const RunConfig& cfg, bool self_test, std::ostream& out) {
  const std::uint64_t seed = cli_detail::require_seed(cfg);
  if (self_test) {
    const double x = crossing_self_test();
    out << "self test: two-class crossing recovered at " << format_double(x) << "\n";
  }
  const FeederTopology topo = resolve_topology(cfg);
  const std::filesystem::path dir = cli_detail::prepare_out_dir(cfg);
  CurrentSampleSet samples = collect_samples(topo, cfg.trainer.episode, cfg.baseline.episodes,
                                             seed, cfg.baseline.weight_faulty);
  PickupThreshold th =
      fit_threshold(topo, samples, cfg.baseline.base_delay, cfg.baseline.grading_margin);
  cli_detail::write_text_file(dir / "thresholds.txt", save_thresholds(th));
  for (const auto& [id, pickup] : th.pickup) {
    std::ostringstream csv;
    export_density_csv(samples, id, csv);
    cli_detail::write_text_file(dir / ("density_relay" + std::to_string(id) + ".csv"), csv.str());
    out << "relay " << id << ": pickup " << format_double(pickup) << " pu, delay "
        << th.delay.at(id) << " steps\n";
  }
  out << "wrote thresholds and density curves to " << dir.string() << "\n";
  return 0;
}

inline int cmd_eval(const RunConfig& cfg, const std::string& models_dir,
                    const std::string& baseline_file, bool oracle, std::ostream& out) {
  const std::uint64_t seed = cli_detail::require_seed(cfg);
  const FeederTopology topo = resolve_topology(cfg);
  const std::filesystem::path dir = cli_detail::prepare_out_dir(cfg);
  const EpisodeConfig& ep = cfg.trainer.episode;

  // The policy under test: trained agents, or the ideal-action reference.
  std::map<int, DqnAgent> agents;
  OraclePolicy ideal;
  std::optional<DqnPolicy> learned;
  Policy* policy = &ideal;
  if (!oracle) {
    std::vector<int> ids;
    for (const auto& r : topo.relays) ids.push_back(r.id);
    agents = cli_detail::load_agents(models_dir, ids);
    learned.emplace(&agents);
    policy = &*learned;
  }

  const std::uint64_t scen_seed = derive_seed(seed, {0x4556414cULL, 1});
  const std::uint64_t resp_seed = derive_seed(seed, {0x4556414cULL, 2});
  const std::uint64_t sweep_seed = derive_seed(seed, {0x4556414cULL, 3});

  FailureReport rl = run_all_scenarios(topo, ep, *policy, cfg.eval.scenario_episodes, scen_seed);
  cli_detail::write_text_file(dir / "failure_rates.csv", cli_detail::rates_csv(rl));

  ResponseTimeStats rt = response_time(topo, ep, *policy, cfg.eval.response_episodes, resp_seed);
  cli_detail::write_text_file(dir / "response_times.txt", cli_detail::response_text(rt));

  std::optional<PickupThreshold> th;
  if (!baseline_file.empty()) th = load_thresholds(read_text_file(baseline_file));

  if (th) {
    ThresholdPolicy fitted(*th);
    // Same seed as the policy under test: both strategies face the identical
    // episode sets, so the comparison is paired.
    FailureReport base = run_all_scenarios(topo, ep, fitted, cfg.eval.scenario_episodes,
                                           scen_seed);
    out << compare_report(rl, base);
    std::ostringstream cmp;
    export_comparison_csv(rl, base, cmp);
    cli_detail::write_text_file(dir / "comparison.csv", cmp.str());
    for (StressAxis axis : {StressAxis::PeakLoad, StressAxis::MeanLoad}) {
      ThresholdPolicy fresh(*th);
      RobustnessSweep sw = robustness_sweep(topo, ep, *policy, fresh, axis,
                                            cfg.eval.sweep_max_percent,
                                            cfg.eval.sweep_step_percent,
                                            cfg.eval.sweep_episodes, sweep_seed);
      std::ostringstream csv;
      export_sweep_csv(sw, csv);
      const char* name = axis == StressAxis::PeakLoad ? "sweep_peak.csv" : "sweep_mean.csv";
      cli_detail::write_text_file(dir / name, csv.str());
    }
  } else {
    for (const auto& row : rl.rows)
      out << scenario_name(row.kind) << ": rate " << format_double(row.rate()) << " over "
          << row.episodes << " episodes\n";
  }
  out << cli_detail::response_text(rt);
  out << "wrote evaluation artifacts to " << dir.string() << "\n";
  return 0;
}

inline int cmd_sweep(const RunConfig& cfg, const std::string& models_dir,
                     const std::string& baseline_file, const std::string& axis_name,
                     std::ostream& out) {
  const std::uint64_t seed = cli_detail::require_seed(cfg);
  if (baseline_file.empty()) throw UsageError("sweep requires --baseline thresholds");
  StressAxis axis;
  if (axis_name == "peak") axis = StressAxis::PeakLoad;
  else if (axis_name == "mean") axis = StressAxis::MeanLoad;
  else throw UsageError("unknown sweep axis '" + axis_name + "' (peak or mean)");
  const FeederTopology topo = resolve_topology(cfg);
  const std::filesystem::path dir = cli_detail::prepare_out_dir(cfg);

  std::vector<int> ids;
  for (const auto& r : topo.relays) ids.push_back(r.id);
  std::map<int, DqnAgent> agents = cli_detail::load_agents(models_dir, ids);
  DqnPolicy learned(&agents);
  ThresholdPolicy fitted(load_thresholds(read_text_file(baseline_file)));

  RobustnessSweep sw = robustness_sweep(topo, cfg.trainer.episode, learned, fitted, axis,
                                        cfg.eval.sweep_max_percent, cfg.eval.sweep_step_percent,
                                        cfg.eval.sweep_episodes,
                                        derive_seed(seed, {0x4556414cULL, 3}));
  std::ostringstream csv;
  export_sweep_csv(sw, csv);
  const std::string name = "sweep_" + axis_name + ".csv";
  cli_detail::write_text_file(dir / name, csv.str());
  out << csv.str();
  out << "wrote " << (dir / name).string() << "\n";
  return 0;
}

inline int cmd_trace(const RunConfig& cfg, const std::string& policy_name,
                     const std::string& models_dir, const std::string& baseline_file,
                     const EpisodeOverride& ov, const std::string& file_name, std::ostream& out) {
  const std::uint64_t seed = cli_detail::require_seed(cfg);
  const FeederTopology topo = resolve_topology(cfg);
  const std::filesystem::path dir = cli_detail::prepare_out_dir(cfg);

  std::map<int, DqnAgent> agents;
  NullPolicy idle;
  OraclePolicy ideal;
  std::optional<DqnPolicy> learned;
  std::optional<ThresholdPolicy> fitted;
  Policy* policy = nullptr;
  if (policy_name == "null") policy = &idle;
  else if (policy_name == "oracle") policy = &ideal;
  else if (policy_name == "models") {
    std::vector<int> ids;
    for (const auto& r : topo.relays) ids.push_back(r.id);
    agents = cli_detail::load_agents(models_dir, ids);
    learned.emplace(&agents);
    policy = &*learned;
  } else if (policy_name == "baseline") {
    if (baseline_file.empty()) throw UsageError("trace --policy baseline requires --baseline");
    fitted.emplace(load_thresholds(read_text_file(baseline_file)));
    policy = &*fitted;
  } else {
    throw UsageError("unknown policy '" + policy_name + "' (null, oracle, baseline, models)");
  }

  Environment env(topo, cfg.trainer.episode, seed);
  EpisodeOverride seeded = ov;
  if (!seeded.seed) seeded.seed = seed;
  const EpisodeTrace& tr = rollout(env, *policy, seeded);
  std::ostringstream csv;
  export_trace_csv(tr, csv);
  cli_detail::write_text_file(dir / file_name, csv.str());

  TraceClassification cls = classify_trace(topo, tr);
  out << "episode " << (cls.episode_failed ? "failed" : "clean");
  if (tr.fault)
    out << ", fault on segment " << tr.fault->segment << " at step " << tr.fault->onset_step;
  else
    out << ", no fault";
  out << "\n";
  out << "wrote " << (dir / file_name).string() << "\n";
  return 0;
}

inline int cmd_serve(const RunConfig& cfg, int port, std::ostream& out,
                     std::atomic<bool>* interrupt) {
  const FeederTopology topo = resolve_topology(cfg);
  const std::uint64_t seed = cfg.seed.value_or(0);
  EnvServer server(topo, cfg.trainer.episode, seed, port);
  out << "serving environment on port " << server.port() << " (seed " << seed << ")\n";
  out.flush();
  while (!(interrupt && interrupt->load()))
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  out << "server stopped\n";
  return 0;
}

// argv-driven frontend; interrupt, when given, makes serve stoppable (the
// binary wires it to SIGINT).
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr, std::atomic<bool>* interrupt = nullptr) {
  CLI::App app{"nested reinforcement learning for feeder relay protection"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_flag;
  std::string topology_flag, out_dir_flag;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file");
    cmd->add_option("--seed", seed_flag, "master seed");
    cmd->add_option("--topology", topology_flag, "'builtin' or a topology file");
    cmd->add_option("--out", out_dir_flag, "output directory");
  };

  CLI::App* train = app.add_subcommand("train", "train all relays in nested order");
  add_common(train);
  int episodes_flag = -1, runs_flag = -1;
  bool verbose = false;
  train->add_option("--episodes", episodes_flag, "training episodes per relay");
  train->add_option("--runs", runs_flag, "independent training runs");
  train->add_flag("--verbose", verbose, "print per-episode progress");

  CLI::App* baseline = app.add_subcommand("baseline", "fit overcurrent thresholds");
  add_common(baseline);
  int baseline_episodes_flag = -1;
  bool self_test = false;
  baseline->add_option("--episodes", baseline_episodes_flag, "sampling episodes");
  baseline->add_flag("--self-test", self_test, "verify crossing recovery on a known fixture");

  CLI::App* eval = app.add_subcommand("eval", "run the evaluation suite");
  add_common(eval);
  std::string models_dir, baseline_file;
  bool oracle = false;
  int scenario_episodes_flag = -1;
  eval->add_option("--models", models_dir, "directory with relay<i>.bin files");
  eval->add_option("--baseline", baseline_file, "fitted thresholds for the comparison");
  eval->add_flag("--oracle", oracle, "evaluate the ideal-action reference instead of models");
  eval->add_option("--episodes", scenario_episodes_flag, "episodes per scenario");

  CLI::App* sweep = app.add_subcommand("sweep", "stress failure rates along one load axis");
  add_common(sweep);
  std::string axis_name = "peak";
  std::string sweep_models, sweep_baseline;
  double sweep_max_flag = -1.0, sweep_step_flag = -1.0;
  int sweep_episodes_flag = -1;
  sweep->add_option("--axis", axis_name, "peak or mean");
  sweep->add_option("--models", sweep_models, "directory with relay<i>.bin files");
  sweep->add_option("--baseline", sweep_baseline, "fitted thresholds");
  sweep->add_option("--max", sweep_max_flag, "largest stress percent");
  sweep->add_option("--step", sweep_step_flag, "stress increment percent");
  sweep->add_option("--episodes", sweep_episodes_flag, "episodes per level");

  CLI::App* serve = app.add_subcommand("serve", "serve the environment over TCP");
  add_common(serve);
  int port = -1;
  serve->add_option("--port", port, "listen port (0 picks a free one)");

  CLI::App* trace = app.add_subcommand("trace", "export one seeded episode as CSV");
  add_common(trace);
  std::string trace_policy = "null", trace_models, trace_baseline, trace_file = "trace.csv";
  int seg_flag = -1;
  double pos_flag = -1.0, imp_flag = -1.0;
  int onset_flag = -1;
  bool no_fault = false;
  std::vector<int> stuck_ids;
  trace->add_option("--policy", trace_policy, "null, oracle, baseline, or models");
  trace->add_option("--models", trace_models, "directory with relay<i>.bin files");
  trace->add_option("--baseline", trace_baseline, "fitted thresholds");
  trace->add_option("--file", trace_file, "output file name inside the output directory");
  trace->add_option("--segment", seg_flag, "force the fault onto this segment");
  trace->add_option("--position", pos_flag, "fault position along the segment [0,1]");
  trace->add_option("--impedance", imp_flag, "fault impedance magnitude");
  trace->add_option("--onset", onset_flag, "fault onset step");
  trace->add_flag("--no-fault", no_fault, "force a fault-free episode");
  trace->add_option("--stuck", stuck_ids, "relay ids whose breakers are stuck");

  CLI::App* config_cmd = app.add_subcommand("config", "configuration helpers");
  CLI::App* show_defaults = config_cmd->add_subcommand("show-defaults", "print every default");
  config_cmd->require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config_file(config_path);
    if (seed_flag) cfg.seed = *seed_flag;
    if (!topology_flag.empty()) cfg.topology = topology_flag;
    if (!out_dir_flag.empty()) cfg.out_dir = out_dir_flag;

    if (app.got_subcommand(train)) {
      if (episodes_flag > 0) cfg.trainer.episodes_per_relay = episodes_flag;
      if (runs_flag > 0) cfg.trainer.runs = runs_flag;
      cfg.validate();
      return cmd_train(cfg, verbose, out, err);
    }
    if (app.got_subcommand(baseline)) {
      if (baseline_episodes_flag > 0) cfg.baseline.episodes = baseline_episodes_flag;
      cfg.validate();
      return cmd_baseline(cfg, self_test, out);
    }
    if (app.got_subcommand(eval)) {
      if (scenario_episodes_flag > 0) cfg.eval.scenario_episodes = scenario_episodes_flag;
      cfg.validate();
      if (models_dir.empty()) models_dir = cfg.out_dir;
      if (baseline_file.empty()) {
        std::filesystem::path guess = std::filesystem::path(cfg.out_dir) / "thresholds.txt";
        if (std::filesystem::exists(guess)) baseline_file = guess.string();
      }
      return cmd_eval(cfg, models_dir, baseline_file, oracle, out);
    }
    if (app.got_subcommand(sweep)) {
      if (sweep_max_flag >= 0.0) cfg.eval.sweep_max_percent = sweep_max_flag;
      if (sweep_step_flag > 0.0) cfg.eval.sweep_step_percent = sweep_step_flag;
      if (sweep_episodes_flag > 0) cfg.eval.sweep_episodes = sweep_episodes_flag;
      cfg.validate();
      if (sweep_models.empty()) sweep_models = cfg.out_dir;
      return cmd_sweep(cfg, sweep_models, sweep_baseline, axis_name, out);
    }
    if (app.got_subcommand(serve)) {
      cfg.validate();
      if (port < 0) {
        const char* env_port = std::getenv("RELAYRL_PORT");
        port = env_port ? static_cast<int>(detail::parse_int_field(env_port, "RELAYRL_PORT"))
                        : 7700;
      }
      return cmd_serve(cfg, port, out, interrupt);
    }
    if (app.got_subcommand(trace)) {
      cfg.validate();
      EpisodeOverride ov;
      if (no_fault) ov.force_fault = false;
      if (seg_flag >= 0) {
        ov.force_fault = true;
        ov.fault_segment = seg_flag;
      }
      if (pos_flag >= 0.0) ov.fault_position = pos_flag;
      if (imp_flag >= 0.0) ov.fault_impedance = imp_flag;
      if (onset_flag >= 0) ov.onset = onset_flag;
      for (int id : stuck_ids) ov.breaker_fate[id] = true;
      if (trace_models.empty()) trace_models = cfg.out_dir;
      return cmd_trace(cfg, trace_policy, trace_models, trace_baseline, ov, trace_file, out);
    }
    if (app.got_subcommand(config_cmd)) {
      if (config_cmd->got_subcommand(show_defaults)) out << save_run_config(RunConfig{});
      return 0;
    }
    throw UsageError("no command given");
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace relayrl
