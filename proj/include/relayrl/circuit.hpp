#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "relayrl/feeder.hpp"

namespace relayrl {

struct CircuitSingular : std::runtime_error {
  explicit CircuitSingular(const std::string& what) : std::runtime_error(what) {}
};

struct RelayReading {
  double voltage = 0.0;  // |V| at the relay bus
  double current = 0.0;  // |I| through the relay segment
};

struct CircuitSolution {
  std::vector<Complex> bus_voltage;      // per bus; exactly zero when de-energized
  std::vector<Complex> segment_current;  // sending-end current; zero when open or de-energized
  std::vector<char> bus_energized;       // connectivity to the source over closed segments
  bool fault_active = false;             // fault point is on an energized closed segment
  bool fault_split = false;              // fault strictly inside the segment (extra node)
  int fault_segment = -1;
  double fault_position = 0.0;
  Complex fault_voltage{0.0, 0.0};
  Complex fault_current{0.0, 0.0};
};

namespace detail {

// Dense complex Gaussian elimination with partial pivoting, in place.
// a is row-major n x n, b length n. Throws CircuitSingular on tiny pivots.
inline void solve_dense_complex(std::vector<Complex>& a, std::vector<Complex>& b, int n) {
  for (int col = 0; col < n; ++col) {
    int piv = col;
    double best = std::abs(a[col * n + col]);
    for (int r = col + 1; r < n; ++r) {
      double m = std::abs(a[r * n + col]);
      if (m > best) {
        best = m;
        piv = r;
      }
    }
    if (best < 1e-13) throw CircuitSingular("singular nodal admittance matrix");
    if (piv != col) {
      for (int c = col; c < n; ++c) std::swap(a[piv * n + c], a[col * n + c]);
      std::swap(b[piv], b[col]);
    }
    const Complex d = a[col * n + col];
    for (int r = col + 1; r < n; ++r) {
      const Complex f = a[r * n + col] / d;
      if (f == Complex{0.0, 0.0}) continue;
      a[r * n + col] = {0.0, 0.0};
      for (int c = col + 1; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    Complex acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= a[r * n + c] * b[c];
    b[r] = acc / a[r * n + r];
  }
}

}  // namespace detail

// Quasi-static single-phase solve. Inputs:
//   load_admittance: effective per-load admittance (base x profile x jitter),
//                    parallel to topo.loads;
//   fault:           optional shunt on a segment (onset_step is ignored here);
//   segment_open:    per-segment breaker state, parallel to topo.segments.
// De-energized buses and segments read exactly zero. A bolted fault at the
// source bus has no finite solution and raises CircuitSingular.
inline CircuitSolution solve_circuit_admittances(const FeederTopology& topo,
                                                 const std::vector<Complex>& load_admittance,
                                                 const std::optional<FaultSpec>& fault,
                                                 const std::vector<char>& segment_open) {
  const int nbus = static_cast<int>(topo.buses.size());
  const int nseg = static_cast<int>(topo.segments.size());
  if (load_admittance.size() != topo.loads.size())
    throw std::invalid_argument("load admittance vector has wrong length");
  if (segment_open.size() != topo.segments.size())
    throw std::invalid_argument("segment_open vector has wrong length");

  CircuitSolution sol;
  sol.bus_voltage.assign(nbus, {0.0, 0.0});
  sol.segment_current.assign(nseg, {0.0, 0.0});
  sol.bus_energized.assign(nbus, 0);

  // Connectivity from the source over closed segments.
  const int src = topo.bus_index(topo.source_bus);
  std::vector<int> stack{src};
  sol.bus_energized[src] = 1;
  while (!stack.empty()) {
    int b = stack.back();
    stack.pop_back();
    for (int s = 0; s < nseg; ++s) {
      if (segment_open[s]) continue;
      int f = topo.bus_index(topo.segments[s].from);
      int t = topo.bus_index(topo.segments[s].to);
      int other = f == b ? t : (t == b ? f : -1);
      if (other >= 0 && !sol.bus_energized[other]) {
        sol.bus_energized[other] = 1;
        stack.push_back(other);
      }
    }
  }

  // Classify the fault. Positions within 1e-9 of an end collapse onto the end
  // bus so the solver never builds a nearly-degenerate half segment.
  bool bolted = false;
  int fault_bus = -1;  // fault collapsed onto this bus (no extra node)
  double pos = 0.0;
  if (fault) {
    if (fault->segment < 0 || fault->segment >= nseg)
      throw std::invalid_argument("fault on unknown segment");
    if (fault->position < 0.0 || fault->position > 1.0)
      throw std::invalid_argument("fault position outside [0,1]");
    if (fault->impedance.real() < 0.0)
      throw std::invalid_argument("fault impedance must have non-negative resistance");
    int f = topo.bus_index(topo.segments[fault->segment].from);
    if (!segment_open[fault->segment] && sol.bus_energized[f]) {
      sol.fault_active = true;
      sol.fault_segment = fault->segment;
      pos = fault->position;
      bolted = std::abs(fault->impedance) == 0.0;
      if (pos <= 1e-9) fault_bus = f;
      else if (pos >= 1.0 - 1e-9) fault_bus = topo.bus_index(topo.segments[fault->segment].to);
      else sol.fault_split = true;
      sol.fault_position = pos;
      if (bolted && fault_bus == src)
        throw CircuitSingular("bolted fault at the source bus");
    }
  }

  // Node table: unknown index per bus (-1 source, -2 de-energized, -3 pinned
  // to zero volts by a bolted fault), plus one optional fault node.
  std::vector<int> node(nbus, -2);
  int nunk = 0;
  for (int b = 0; b < nbus; ++b) {
    if (!sol.bus_energized[b]) continue;
    if (b == src) {
      node[b] = -1;
    } else if (bolted && fault_bus == b) {
      node[b] = -3;
    } else {
      node[b] = nunk++;
    }
  }
  int fault_node = -1;
  if (sol.fault_split && !bolted) fault_node = nunk++;
  // A bolted split fault pins the internal node to zero; both half segments
  // then act as shunts and no extra unknown is needed.

  std::vector<Complex> Y(static_cast<std::size_t>(nunk) * nunk, Complex{0.0, 0.0});
  std::vector<Complex> rhs(nunk, Complex{0.0, 0.0});
  const Complex vs{topo.source_voltage, 0.0};

  // Branch between two node slots; slot >= 0 is an unknown, -1 the source,
  // -3 a zero-volt pin (-2 never reaches here).
  auto stamp_branch = [&](int na, int nb, Complex y) {
    if (na >= 0) {
      Y[static_cast<std::size_t>(na) * nunk + na] += y;
      if (nb >= 0) Y[static_cast<std::size_t>(na) * nunk + nb] -= y;
      else if (nb == -1) rhs[na] += y * vs;
    }
    if (nb >= 0) {
      Y[static_cast<std::size_t>(nb) * nunk + nb] += y;
      if (na >= 0) Y[static_cast<std::size_t>(nb) * nunk + na] -= y;
      else if (na == -1) rhs[nb] += y * vs;
    }
  };
  auto stamp_shunt = [&](int n, Complex y) {
    if (n >= 0) Y[static_cast<std::size_t>(n) * nunk + n] += y;
  };

  for (int s = 0; s < nseg; ++s) {
    if (segment_open[s]) continue;
    int f = topo.bus_index(topo.segments[s].from);
    int t = topo.bus_index(topo.segments[s].to);
    if (!sol.bus_energized[f]) continue;
    const Complex z = topo.segments[s].impedance;
    if (sol.fault_active && s == sol.fault_segment && sol.fault_split) {
      const Complex y1 = 1.0 / (pos * z);
      const Complex y2 = 1.0 / ((1.0 - pos) * z);
      int nf = bolted ? -3 : fault_node;
      stamp_branch(node[f], nf, y1);
      stamp_branch(nf, node[t], y2);
    } else {
      stamp_branch(node[f], node[t], 1.0 / z);
    }
  }
  for (std::size_t l = 0; l < topo.loads.size(); ++l) {
    int b = topo.bus_index(topo.loads[l].bus);
    if (sol.bus_energized[b]) stamp_shunt(node[b], load_admittance[l]);
  }
  if (sol.fault_active && !bolted) {
    const Complex yf = 1.0 / fault->impedance;
    if (sol.fault_split) stamp_shunt(fault_node, yf);
    else stamp_shunt(node[fault_bus], yf);
    // A resistive fault shunt directly at the source bus only loads the ideal
    // source; nothing to stamp (node[src] == -1).
  }

  std::vector<Complex> x = rhs;
  if (nunk > 0) detail::solve_dense_complex(Y, x, nunk);

  for (int b = 0; b < nbus; ++b) {
    if (node[b] >= 0) sol.bus_voltage[b] = x[node[b]];
    else if (node[b] == -1) sol.bus_voltage[b] = vs;
    // -2 (de-energized) and -3 (pinned) stay exactly zero.
  }
  auto volt_at = [&](int slot) -> Complex {
    if (slot >= 0) return x[slot];
    if (slot == -1) return vs;
    return {0.0, 0.0};
  };

  for (int s = 0; s < nseg; ++s) {
    if (segment_open[s]) continue;
    int f = topo.bus_index(topo.segments[s].from);
    int t = topo.bus_index(topo.segments[s].to);
    if (!sol.bus_energized[f]) continue;
    const Complex z = topo.segments[s].impedance;
    if (sol.fault_active && s == sol.fault_segment && sol.fault_split) {
      const Complex vfault = bolted ? Complex{0.0, 0.0} : volt_at(fault_node);
      sol.segment_current[s] = (sol.bus_voltage[f] - vfault) / (pos * z);
      sol.fault_voltage = vfault;
    } else {
      sol.segment_current[s] = (sol.bus_voltage[f] - sol.bus_voltage[t]) / z;
    }
  }

  if (sol.fault_active) {
    if (!sol.fault_split) sol.fault_voltage = sol.bus_voltage[fault_bus];
    if (!bolted) {
      sol.fault_current = sol.fault_voltage / fault->impedance;
    } else if (sol.fault_split) {
      int f = topo.bus_index(topo.segments[sol.fault_segment].from);
      int t = topo.bus_index(topo.segments[sol.fault_segment].to);
      const Complex z = topo.segments[sol.fault_segment].impedance;
      sol.fault_current = sol.bus_voltage[f] / (pos * z) + sol.bus_voltage[t] / ((1.0 - pos) * z);
    } else {
      // Bolted fault at a bus: everything flowing into the bus feeds the fault.
      Complex into{0.0, 0.0};
      for (int s = 0; s < nseg; ++s) {
        if (segment_open[s]) continue;
        if (topo.bus_index(topo.segments[s].to) == fault_bus) into += sol.segment_current[s];
        if (topo.bus_index(topo.segments[s].from) == fault_bus) into -= sol.segment_current[s];
      }
      sol.fault_current = into;
    }
  }
  return sol;
}

// Profile-level entry: effective admittance = base * trend * local, no jitter.
inline CircuitSolution solve_circuit(const FeederTopology& topo, const LoadProfile& profile,
                                     const std::optional<FaultSpec>& fault,
                                     const std::vector<char>& segment_open) {
  if (profile.local.size() != topo.loads.size())
    throw std::invalid_argument("profile local factors have wrong length");
  std::vector<Complex> eff(topo.loads.size());
  for (std::size_t i = 0; i < eff.size(); ++i)
    eff[i] = topo.loads[i].admittance * profile.trend * profile.local[i];
  return solve_circuit_admittances(topo, eff, fault, segment_open);
}

// What each relay meters: |V| at its bus (segment sending end), |I| through
// its segment. Exactly zero on a de-energized or open segment.
inline std::map<int, RelayReading> relay_measurements(const FeederTopology& topo,
                                                      const CircuitSolution& sol) {
  std::map<int, RelayReading> out;
  for (const auto& r : topo.relays) {
    int fb = topo.bus_index(topo.segments[r.segment].from);
    out[r.id] = RelayReading{std::abs(sol.bus_voltage[fb]), std::abs(sol.segment_current[r.segment])};
  }
  return out;
}

}  // namespace relayrl
