#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "relayrl/episode.hpp"
#include "relayrl/feeder.hpp"
#include "relayrl/policy.hpp"

namespace relayrl {

// Gaussian kernel density estimate with the Silverman rule-of-thumb
// bandwidth 0.9 min(sd, IQR/1.34) n^(-1/5).
class GaussianKde {
 public:
  explicit GaussianKde(std::vector<double> samples) : x_(std::move(samples)) {
    if (x_.empty()) throw std::invalid_argument("density estimate needs samples");
    std::sort(x_.begin(), x_.end());
    const double n = static_cast<double>(x_.size());
    double mean = 0.0;
    for (double v : x_) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x_) var += (v - mean) * (v - mean);
    const double sd = x_.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    const double iqr = quantile(0.75) - quantile(0.25);
    double scale = std::min(sd, iqr / 1.34);
    if (scale <= 0.0) scale = std::max(sd, iqr / 1.34);
    if (scale <= 0.0) scale = std::max(1e-3, 1e-3 * std::abs(x_.front()));
    h_ = 0.9 * scale * std::pow(n, -0.2);
  }

  double bandwidth() const { return h_; }
  const std::vector<double>& samples() const { return x_; }

  // Interpolated sample quantile (the convention most numeric packages default
  // to: index h = (n-1)p, linear between the flanking order statistics).
  double quantile(double p) const {
    const double h = (static_cast<double>(x_.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= x_.size()) return x_.back();
    return x_[lo] + (h - static_cast<double>(lo)) * (x_[lo + 1] - x_[lo]);
  }
  double median() const { return quantile(0.5); }

  double operator()(double x) const {
    const double norm = 1.0 / (std::sqrt(2.0 * 3.141592653589793) * h_ * x_.size());
    double sum = 0.0;
    for (double xi : x_) {
      const double z = (x - xi) / h_;
      sum += std::exp(-0.5 * z * z);
    }
    return norm * sum;
  }

 private:
  std::vector<double> x_;
  double h_ = 0.0;
};

// Per-relay current magnitudes observed with everything running normally
// (pre) versus with an uncleared fault in the relay's assigned region (post).
struct CurrentSampleSet {
  std::map<int, std::vector<double>> pre, post;  // relay id -> |I| readings
  double weight_faulty = 3.0;                    // faulty-class weight, >= 1
};

// Runs idle episodes (no relay ever acts, so breakers never open) and sorts
// every current reading into the pre class (steps before the fault onset, or
// all steps of a no-fault episode) or the post class (steps from onset on,
// kept only for relays whose assigned region contains the fault).
inline CurrentSampleSet collect_samples(const FeederTopology& topo, const EpisodeConfig& cfg,
                                        int n_episodes, std::uint64_t seed,
                                        double weight_faulty = 3.0) {
  if (n_episodes < 2) throw std::invalid_argument("need at least two sampling episodes");
  if (weight_faulty < 1.0) throw std::invalid_argument("faulty-class weight must be at least 1");
  Environment env(topo, cfg, seed);
  NullPolicy idle;
  CurrentSampleSet out;
  out.weight_faulty = weight_faulty;
  for (int id : env.relay_ids()) {
    out.pre[id];
    out.post[id];
  }
  for (int ep = 0; ep < n_episodes; ++ep) {
    const EpisodeTrace& tr = rollout(env, idle);
    const int onset = tr.fault ? tr.fault->onset_step : std::numeric_limits<int>::max();
    std::vector<char> in_zone(tr.relay_ids.size(), 0);
    if (tr.fault) {
      const FaultLocation where{tr.fault->segment, tr.fault->position};
      for (std::size_t i = 0; i < tr.relay_ids.size(); ++i)
        in_zone[i] = topo.assigned_zone(tr.relay_ids[i]).contains(where) ? 1 : 0;
    }
    for (const auto& s : tr.steps) {
      for (std::size_t i = 0; i < tr.relay_ids.size(); ++i) {
        if (s.t < onset)
          out.pre[tr.relay_ids[i]].push_back(s.relay[i].current);
        else if (in_zone[i])
          out.post[tr.relay_ids[i]].push_back(s.relay[i].current);
      }
    }
  }
  return out;
}

// Fixed per-relay trip settings: pickup current plus the number of
// consecutive above-pickup readings required before the trip command.
struct PickupThreshold {
  std::map<int, double> pickup;  // pu
  std::map<int, int> delay;      // steps
};

// Hops down the backup chain below a relay (0 when nobody is below it).
inline int backup_depth(const FeederTopology& topo, int relay_id) {
  const RelayDef* r = topo.relay_by_id(relay_id);
  if (!r) throw std::invalid_argument("unknown relay id " + std::to_string(relay_id));
  int depth = 0;
  while (r->downstream >= 0) {
    r = topo.relay_by_id(r->downstream);
    ++depth;
  }
  return depth;
}

// Pickup = the current where the pre-fault density equals the weighted
// post-fault density, found by bisection between the class medians. Delays
// implement coordination grading: base at the bottom of each chain, one
// margin added per relay above.
inline PickupThreshold fit_threshold(const FeederTopology& topo, const CurrentSampleSet& samples,
                                     int base_delay = 3, int grading_margin = 6) {
  if (base_delay < 1) throw std::invalid_argument("base delay must be at least 1");
  if (grading_margin < 1) throw std::invalid_argument("grading margin must be at least 1");
  if (samples.weight_faulty < 1.0)
    throw std::invalid_argument("faulty-class weight must be at least 1");
  PickupThreshold th;
  for (const auto& r : topo.relays) {
    auto pit = samples.pre.find(r.id);
    auto qit = samples.post.find(r.id);
    if (pit == samples.pre.end() || pit->second.empty())
      throw std::invalid_argument("no pre-fault samples for relay " + std::to_string(r.id));
    if (qit == samples.post.end() || qit->second.empty())
      throw std::invalid_argument("no post-fault samples for relay " + std::to_string(r.id));
    const GaussianKde pre(pit->second);
    const GaussianKde post(qit->second);
    const double w = samples.weight_faulty;
    auto g = [&](double x) { return pre(x) - w * post(x); };
    double a = pre.median(), b = post.median();
    if (a > b) std::swap(a, b);
    double ga = g(a), gb = g(b);
    double x;
    if (ga == 0.0) {
      x = a;
    } else if (gb == 0.0) {
      x = b;
    } else if (ga * gb > 0.0) {
      throw std::runtime_error("relay " + std::to_string(r.id) + ": no density crossing in [" +
                               format_double(a) + ", " + format_double(b) + "]");
    } else {
      while (b - a > 1e-9) {
        const double mid = 0.5 * (a + b);
        const double gm = g(mid);
        if (gm == 0.0) {
          a = b = mid;
        } else if ((gm > 0.0) == (ga > 0.0)) {
          a = mid;
          ga = gm;
        } else {
          b = mid;
        }
      }
      x = 0.5 * (a + b);
    }
    th.pickup[r.id] = x;
    th.delay[r.id] = base_delay + grading_margin * backup_depth(topo, r.id);
  }
  return th;
}

// Trip-if-above with a consecutive-readings delay, expressed through the
// counter interface: the counter is armed one step before the streak
// completes and aborted if the streak breaks, so the trip command lands
// exactly delay steps after the first above-pickup reading. Delays below 2
// still take two steps (arm, then expiry).
class ThresholdPolicy : public Policy {
 public:
  explicit ThresholdPolicy(PickupThreshold th) : th_(std::move(th)) {}

  void begin_episode(const EpisodeContext& ctx) override {
    ids_ = ctx.relay_ids;
    above_.assign(ids_.size(), 0);
    for (int id : ids_)
      if (!th_.pickup.count(id) || !th_.delay.count(id))
        throw std::invalid_argument("no fitted threshold for relay " + std::to_string(id));
  }

  std::vector<int> act(int, const std::vector<RelayObservation>& obs) override {
    std::vector<int> a(obs.size(), kActionCountdown);
    for (std::size_t i = 0; i < obs.size(); ++i) {
      if (!obs[i].breaker_closed) {
        above_[i] = 0;
        continue;
      }
      above_[i] = obs[i].current.back() > th_.pickup.at(ids_[i]) ? above_[i] + 1 : 0;
      if (obs[i].counter > 0)
        a[i] = above_[i] == 0 ? kActionReset : kActionCountdown;
      else if (above_[i] > 0 && above_[i] >= th_.delay.at(ids_[i]) - 1)
        a[i] = action_set(1);
    }
    return a;
  }

 private:
  PickupThreshold th_;
  std::vector<int> ids_;
  std::vector<int> above_;
};

// Plain-text settings format, full-precision so a save/load round trip is
// exact.
inline std::string save_thresholds(const PickupThreshold& th) {
  std::ostringstream o;
  o << "# fitted overcurrent settings\n";
  for (const auto& [id, pickup] : th.pickup) {
    o << "[relay " << id << "]\n";
    o << "pickup_pu = " << format_double(pickup) << "\n";
    o << "delay_steps = " << th.delay.at(id) << "\n";
  }
  return o.str();
}

inline PickupThreshold load_thresholds(const std::string& text) {
  PickupThreshold th;
  std::istringstream in(text);
  std::string line;
  int relay = -1;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("threshold file line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.compare(0, 7, "[relay ") != 0) fail("expected [relay N]");
      try {
        relay = std::stoi(line.substr(7, line.size() - 8));
      } catch (...) {
        fail("bad relay id");
      }
      if (relay <= 0) fail("relay ids must be positive");
      if (th.pickup.count(relay)) fail("duplicate relay section");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (relay < 0) fail("setting outside a relay section");
    if (key == "pickup_pu") {
      const double p = detail::parse_double_field(val, "pickup_pu");
      if (p <= 0.0) fail("pickup must be positive");
      th.pickup[relay] = p;
    } else if (key == "delay_steps") {
      int d = 0;
      try {
        std::size_t pos = 0;
        d = std::stoi(val, &pos);
        if (pos != val.size()) throw std::invalid_argument("");
      } catch (...) {
        fail("bad delay value");
      }
      if (d < 1) fail("delay must be at least 1");
      th.delay[relay] = d;
    } else {
      fail("unknown key " + key);
    }
  }
  if (th.pickup.empty()) throw std::invalid_argument("threshold file describes no relays");
  for (const auto& [id, p] : th.pickup)
    if (!th.delay.count(id))
      throw std::invalid_argument("relay " + std::to_string(id) + " has no delay");
  for (const auto& [id, d] : th.delay)
    if (!th.pickup.count(id))
      throw std::invalid_argument("relay " + std::to_string(id) + " has no pickup");
  return th;
}

// Synthetic two-class fixture with a known crossing: normal readings around
// 1.0, faulty around 3.0, both unit variance, equal weight, so the fitted
// pickup must land at 2.0. Throws if the fitting machinery has drifted.
// Returns the recovered crossing.
inline double crossing_self_test(double tolerance = 0.05, double residual_limit = 1e-6) {
  FeederTopology t;
  t.buses = {"a", "b"};
  t.source_bus = "a";
  t.segments.push_back({"a", "b", {0.02, 0.06}});
  t.loads.push_back({"b", {0.2, -0.1}});
  t.relays.push_back({1, 0, -1});
  CurrentSampleSet s;
  s.weight_faulty = 1.0;
  Rng rng(0x53454c46ULL);
  for (int i = 0; i < 4000; ++i) {
    s.pre[1].push_back(1.0 + rng.normal());
    s.post[1].push_back(3.0 + rng.normal());
  }
  const double x = fit_threshold(t, s).pickup.at(1);
  if (std::abs(x - 2.0) > tolerance)
    throw std::runtime_error("self test: crossing " + format_double(x) +
                             " strayed more than " + format_double(tolerance) + " from 2");
  const GaussianKde pre(s.pre.at(1));
  const GaussianKde post(s.post.at(1));
  const double residual = std::abs(pre(x) - s.weight_faulty * post(x));
  if (residual > residual_limit)
    throw std::runtime_error("self test: weighted densities differ by " +
                             format_double(residual) + " at the fitted crossing");
  return x;
}

// Both class densities for one relay on a regular grid, for plotting.
inline void export_density_csv(const CurrentSampleSet& samples, int relay_id, std::ostream& os,
                               int points = 256) {
  auto pit = samples.pre.find(relay_id);
  auto qit = samples.post.find(relay_id);
  if (pit == samples.pre.end() || pit->second.empty() || qit == samples.post.end() ||
      qit->second.empty())
    throw std::invalid_argument("no samples for relay " + std::to_string(relay_id));
  if (points < 2) throw std::invalid_argument("need at least two grid points");
  const GaussianKde pre(pit->second);
  const GaussianKde post(qit->second);
  double lo = std::min(pre.samples().front(), post.samples().front());
  double hi = std::max(pre.samples().back(), post.samples().back());
  const double pad = std::max(pre.bandwidth(), post.bandwidth());
  lo -= pad;
  hi += pad;
  os << "current,pre_density,post_density\n";
  for (int i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * i / (points - 1);
    os << format_double(x) << "," << format_double(pre(x)) << "," << format_double(post(x))
       << "\n";
  }
}

}  // namespace relayrl
