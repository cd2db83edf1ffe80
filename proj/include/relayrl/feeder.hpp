#pragma once

#include <algorithm>
#include <complex>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "relayrl/rng.hpp"

namespace relayrl {

using Complex = std::complex<double>;

struct Segment {
  std::string from;  // source-side bus
  std::string to;
  Complex impedance;  // per-unit, resistance > 0

  std::string name() const { return from + "-" + to; }
};

struct Load {
  std::string bus;
  Complex admittance;  // per-unit base value; positive conductance, non-positive susceptance
};

struct RelayDef {
  int id = 0;
  int segment = -1;     // index into segments; relay sits at the segment's from end
  int downstream = -1;  // relay id of the next relay downstream, -1 if none
};

// Location on a segment: position in [0,1] measured from the from end.
struct FaultLocation {
  int segment = -1;
  double position = 0.0;
};

// Sampled fault for one episode.
struct FaultSpec {
  int segment = -1;
  double position = 0.5;
  Complex impedance{0.0, 0.0};  // shunt at the fault point; sampled resistive
  int onset_step = 0;
};

// Union of segment intervals.
struct ProtectionZone {
  struct Span {
    int segment = -1;
    double lo = 0.0;
    double hi = 1.0;
  };
  std::vector<Span> spans;

  bool contains(const FaultLocation& x) const {
    for (const auto& s : spans) {
      if (s.segment == x.segment && x.position >= s.lo && x.position <= s.hi) return true;
    }
    return false;
  }
  bool empty() const { return spans.empty(); }
};

// Per-episode load scaling: effective admittance = base * trend * local[i].
struct LoadProfile {
  double trend = 1.0;
  std::vector<double> local;  // parallel to FeederTopology::loads
};

class FeederTopology {
 public:
  std::vector<std::string> buses;
  std::vector<Segment> segments;
  std::vector<Load> loads;
  std::vector<RelayDef> relays;  // sorted by id
  std::string source_bus;
  double source_voltage = 1.0;

  int bus_index(const std::string& name) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i] == name) return static_cast<int>(i);
    return -1;
  }

  int segment_index(const std::string& name) const {
    for (std::size_t i = 0; i < segments.size(); ++i)
      if (segments[i].name() == name) return static_cast<int>(i);
    return -1;
  }

  const RelayDef* relay_by_id(int id) const {
    for (const auto& r : relays)
      if (r.id == id) return &r;
    return nullptr;
  }

  // Full extent of the relay's own segment.
  ProtectionZone primary_zone(int relay_id) const {
    const RelayDef* r = relay_by_id(relay_id);
    if (!r) throw std::invalid_argument("unknown relay id " + std::to_string(relay_id));
    return ProtectionZone{{{r->segment, 0.0, 1.0}}};
  }

  // The downstream neighbour's primary zone; empty when there is no neighbour.
  ProtectionZone backup_zone(int relay_id) const {
    const RelayDef* r = relay_by_id(relay_id);
    if (!r) throw std::invalid_argument("unknown relay id " + std::to_string(relay_id));
    if (r->downstream < 0) return {};
    return primary_zone(r->downstream);
  }

  ProtectionZone assigned_zone(int relay_id) const {
    ProtectionZone z = primary_zone(relay_id);
    ProtectionZone b = backup_zone(relay_id);
    z.spans.insert(z.spans.end(), b.spans.begin(), b.spans.end());
    return z;
  }

  // Parent bus of each bus in the tree rooted at the source (-1 for source),
  // and the segment connecting the bus to its parent.
  void tree_structure(std::vector<int>& parent, std::vector<int>& parent_segment) const {
    int n = static_cast<int>(buses.size());
    parent.assign(n, -2);
    parent_segment.assign(n, -1);
    int src = bus_index(source_bus);
    if (src < 0) throw std::invalid_argument("source bus not in bus list");
    parent[src] = -1;
    std::vector<int> stack{src};
    while (!stack.empty()) {
      int b = stack.back();
      stack.pop_back();
      for (std::size_t s = 0; s < segments.size(); ++s) {
        int f = bus_index(segments[s].from);
        int t = bus_index(segments[s].to);
        int other = -1;
        if (f == b) other = t;
        else if (t == b) other = f;
        else continue;
        if (parent[other] == -2) {
          parent[other] = b;
          parent_segment[other] = static_cast<int>(s);
          stack.push_back(other);
        }
      }
    }
  }

  // Buses at or below the far end of a segment (everything the segment feeds).
  std::set<int> buses_fed_by(int segment) const {
    std::vector<int> parent, pseg;
    tree_structure(parent, pseg);
    int head = bus_index(segments[segment].to);
    std::set<int> fed{head};
    bool grew = true;
    while (grew) {
      grew = false;
      for (std::size_t b = 0; b < buses.size(); ++b) {
        if (!fed.count(static_cast<int>(b)) && parent[b] >= 0 && fed.count(parent[b])) {
          fed.insert(static_cast<int>(b));
          grew = true;
        }
      }
    }
    return fed;
  }

  void validate() const {
    if (buses.empty()) throw std::invalid_argument("feeder has no buses");
    if (bus_index(source_bus) < 0) throw std::invalid_argument("source bus not in bus list");
    if (source_voltage <= 0.0) throw std::invalid_argument("source voltage must be positive");
    {
      std::set<std::string> seen(buses.begin(), buses.end());
      if (seen.size() != buses.size()) throw std::invalid_argument("duplicate bus names");
    }
    if (segments.size() + 1 != buses.size())
      throw std::invalid_argument("feeder is not a tree: need |segments| = |buses| - 1");
    for (const auto& s : segments) {
      if (bus_index(s.from) < 0 || bus_index(s.to) < 0)
        throw std::invalid_argument("segment " + s.name() + " references unknown bus");
      if (s.impedance.real() <= 0.0)
        throw std::invalid_argument("segment " + s.name() + " must have positive resistance");
    }
    // Connectivity and orientation: every bus reachable, every segment's from
    // end must be the end nearer the source.
    std::vector<int> parent, pseg;
    tree_structure(parent, pseg);
    for (std::size_t b = 0; b < buses.size(); ++b)
      if (parent[b] == -2)
        throw std::invalid_argument("bus " + buses[b] + " unreachable from source");
    for (std::size_t s = 0; s < segments.size(); ++s) {
      int t = bus_index(segments[s].to);
      if (pseg[t] != static_cast<int>(s) || parent[t] != bus_index(segments[s].from))
        throw std::invalid_argument("segment " + segments[s].name() +
                                    " not oriented away from the source");
    }
    for (const auto& l : loads) {
      if (bus_index(l.bus) < 0) throw std::invalid_argument("load at unknown bus " + l.bus);
      if (l.bus == source_bus) throw std::invalid_argument("load at source bus");
      if (l.admittance.real() <= 0.0)
        throw std::invalid_argument("load at " + l.bus + " must have positive conductance");
    }
    std::set<int> ids;
    for (const auto& r : relays) {
      if (r.id <= 0) throw std::invalid_argument("relay ids must be positive");
      if (!ids.insert(r.id).second)
        throw std::invalid_argument("duplicate relay id " + std::to_string(r.id));
      if (r.segment < 0 || r.segment >= static_cast<int>(segments.size()))
        throw std::invalid_argument("relay " + std::to_string(r.id) + " on unknown segment");
    }
    std::set<int> host_segments;
    for (const auto& r : relays) {
      if (!host_segments.insert(r.segment).second)
        throw std::invalid_argument("two relays share segment " + segments[r.segment].name());
    }
    for (const auto& r : relays) {
      if (r.downstream < 0) continue;
      const RelayDef* d = relay_by_id(r.downstream);
      if (!d)
        throw std::invalid_argument("relay " + std::to_string(r.id) + " has unknown downstream relay");
      if (d->id == r.id) throw std::invalid_argument("relay cannot back itself up");
      // The neighbour's segment must be fed through this relay's segment.
      std::set<int> fed = buses_fed_by(r.segment);
      if (!fed.count(bus_index(segments[d->segment].from)))
        throw std::invalid_argument("relay " + std::to_string(r.id) +
                                    " downstream neighbour is not downstream of it");
    }
    // Acyclic downstream relation (downstream-of is a strict partial order on
    // a tree, so any cycle means ids were wired inconsistently).
    for (const auto& r : relays) {
      int hops = 0;
      const RelayDef* cur = &r;
      while (cur->downstream >= 0) {
        cur = relay_by_id(cur->downstream);
        if (++hops > static_cast<int>(relays.size()))
          throw std::invalid_argument("cycle in downstream relation");
      }
    }
  }
};

// Default study feeder: a 1.0 pu source behind one unprotected segment, then a
// protected subtree with two branch points and a two-segment chain at the end.
//
//   830 ──(no relay)── 834 ──[1]── 836 ──[4]── 862 ──[5]── 838
//                       │           │
//                      [2]         [3]
//                       │           │
//                      842         840
//
// Relay 1 backs up relay 4, relay 4 backs up relay 5; the branch relays 2, 3
// and the end relay 5 have nobody below them. Load levels are chosen so the
// no-fault voltage profile stays inside (0.8, 1.05) pu across the whole load
// multiplier range while the heaviest feeder loading still overlaps the
// weakest (highest impedance) fault currents.
inline FeederTopology build_feeder_section() {
  FeederTopology t;
  t.buses = {"830", "834", "836", "840", "842", "862", "838"};
  t.source_bus = "830";
  t.source_voltage = 1.0;
  const Complex z{0.02, 0.06};
  t.segments = {
      {"830", "834", z},  // unprotected upstream tie
      {"834", "836", z},  // relay 1
      {"834", "842", z},  // relay 2
      {"836", "840", z},  // relay 3
      {"836", "862", z},  // relay 4
      {"862", "838", z},  // relay 5
  };
  // Constant-impedance loads, power factor 0.9 (inductive).
  auto load = [](const std::string& bus, double mag) {
    return Load{bus, Complex{mag * 0.9, -mag * 0.43588989435406733}};
  };
  t.loads = {
      load("842", 0.06),
      load("840", 0.22),
      load("836", 0.66),
      load("862", 0.10),
      load("838", 0.22),
  };
  t.relays = {
      {1, 1, 4},
      {2, 2, -1},
      {3, 3, -1},
      {4, 4, 5},
      {5, 5, -1},
  };
  t.validate();
  return t;
}

// Episode load profile: one trend factor for the whole feeder and one local
// factor per load, all uniform. Throws when an interval is empty (lo > hi).
inline LoadProfile sample_load_profile(Rng& rng, const FeederTopology& topo,
                                       double trend_lo, double trend_hi,
                                       double local_lo, double local_hi) {
  if (trend_lo > trend_hi) throw std::invalid_argument("empty trend interval");
  if (local_lo > local_hi) throw std::invalid_argument("empty local interval");
  if (trend_lo <= 0.0 || local_lo <= 0.0)
    throw std::invalid_argument("load multipliers must stay positive");
  LoadProfile p;
  p.trend = rng.uniform(trend_lo, trend_hi);
  p.local.resize(topo.loads.size());
  for (auto& v : p.local) v = rng.uniform(local_lo, local_hi);
  return p;
}

// ---------------------------------------------------------------------------
// Plain-text topology format: INI-style sections, one per segment / load /
// relay, plus a [feeder] section. Numbers are full-precision decimals so a
// save/load round trip reproduces the topology exactly.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string save_topology(const FeederTopology& t) {
  std::ostringstream o;
  o << "# radial feeder description\n";
  o << "[feeder]\n";
  o << "source_bus = " << t.source_bus << "\n";
  o << "source_voltage_pu = " << format_double(t.source_voltage) << "\n";
  o << "buses =";
  for (const auto& b : t.buses) o << " " << b;
  o << "\n";
  for (const auto& s : t.segments) {
    o << "\n[segment " << s.name() << "]\n";
    o << "resistance_pu = " << format_double(s.impedance.real()) << "\n";
    o << "reactance_pu = " << format_double(s.impedance.imag()) << "\n";
  }
  for (const auto& l : t.loads) {
    o << "\n[load " << l.bus << "]\n";
    o << "conductance_pu = " << format_double(l.admittance.real()) << "\n";
    o << "susceptance_pu = " << format_double(l.admittance.imag()) << "\n";
  }
  for (const auto& r : t.relays) {
    o << "\n[relay " << r.id << "]\n";
    o << "segment = " << t.segments[r.segment].name() << "\n";
    o << "downstream = " << (r.downstream < 0 ? 0 : r.downstream) << "\n";
  }
  return o.str();
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_double_field(const std::string& v, const std::string& what) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw std::invalid_argument("bad numeric value '" + v + "' for " + what);
  }
}

}  // namespace detail

inline FeederTopology load_topology(const std::string& text) {
  FeederTopology t;
  std::istringstream in(text);
  std::string line, section, arg;
  // section -> key/value handling below keeps insertion order of sections.
  struct Pending {
    std::string section, arg;
    std::map<std::string, std::string> kv;
  };
  std::vector<Pending> pending;
  Pending* cur = nullptr;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw std::invalid_argument("line " + std::to_string(lineno) + ": unterminated section");
      std::string inner = detail::trim(s.substr(1, s.size() - 2));
      std::size_t sp = inner.find(' ');
      pending.push_back({});
      cur = &pending.back();
      cur->section = sp == std::string::npos ? inner : inner.substr(0, sp);
      cur->arg = sp == std::string::npos ? "" : detail::trim(inner.substr(sp + 1));
      continue;
    }
    std::size_t eq = s.find('=');
    if (eq == std::string::npos || !cur)
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key = value");
    cur->kv[detail::trim(s.substr(0, eq))] = detail::trim(s.substr(eq + 1));
  }
  auto need = [](Pending& p, const std::string& key) -> std::string {
    auto it = p.kv.find(key);
    if (it == p.kv.end())
      throw std::invalid_argument("section [" + p.section +
                                  (p.arg.empty() ? "" : " " + p.arg) + "] missing key " + key);
    return it->second;
  };
  struct RelayRaw {
    int id;
    std::string segment;
    int downstream;
  };
  std::vector<RelayRaw> relays_raw;
  for (auto& p : pending) {
    if (p.section == "feeder") {
      t.source_bus = need(p, "source_bus");
      t.source_voltage = detail::parse_double_field(need(p, "source_voltage_pu"), "source voltage");
      std::istringstream bs(need(p, "buses"));
      std::string b;
      while (bs >> b) t.buses.push_back(b);
    } else if (p.section == "segment") {
      std::size_t dash = p.arg.find('-');
      if (dash == std::string::npos)
        throw std::invalid_argument("segment section needs a from-to name, got '" + p.arg + "'");
      Segment s;
      s.from = p.arg.substr(0, dash);
      s.to = p.arg.substr(dash + 1);
      s.impedance = Complex{detail::parse_double_field(need(p, "resistance_pu"), "resistance"),
                            detail::parse_double_field(need(p, "reactance_pu"), "reactance")};
      t.segments.push_back(s);
    } else if (p.section == "load") {
      Load l;
      l.bus = p.arg;
      l.admittance = Complex{detail::parse_double_field(need(p, "conductance_pu"), "conductance"),
                             detail::parse_double_field(need(p, "susceptance_pu"), "susceptance")};
      t.loads.push_back(l);
    } else if (p.section == "relay") {
      RelayRaw r;
      r.id = static_cast<int>(detail::parse_double_field(p.arg, "relay id"));
      r.segment = need(p, "segment");
      r.downstream = static_cast<int>(detail::parse_double_field(need(p, "downstream"), "downstream"));
      relays_raw.push_back(r);
    } else {
      throw std::invalid_argument("unknown section [" + p.section + "]");
    }
  }
  for (const auto& r : relays_raw) {
    int seg = t.segment_index(r.segment);
    if (seg < 0) throw std::invalid_argument("relay " + std::to_string(r.id) +
                                             " references unknown segment " + r.segment);
    t.relays.push_back({r.id, seg, r.downstream == 0 ? -1 : r.downstream});
  }
  std::sort(t.relays.begin(), t.relays.end(),
            [](const RelayDef& a, const RelayDef& b) { return a.id < b.id; });
  t.validate();
  return t;
}

}  // namespace relayrl
