#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhs/errors.hpp"

namespace mhs {

using Ticks = std::int64_t;

// System layout and timing. Times are in seconds and must be whole multiples of `tick`.
struct SimConfig {
  int n_loops = 3;
  int n_incoming = 4;
  int n_storage = 20;
  int n_outgoing = 6;
  int n_junctions = 4;

  double t_proc_incoming = 5.0;
  double t_proc_storage = 10.0;
  double t_proc_outgoing = 6.0;
  double t_proc_junction = 0.5;

  int buf_incoming = 4;
  int buf_storage = 8;
  int buf_outgoing = 10;
  int buf_junction = 4;

  int n_pallets = 500;
  double tick = 0.1;
  double horizon = 3600.0;

  // Conveyor kinematics and demand; these are the calibration knobs.
  int slots_per_loop = 200;
  double slot_travel_time = 0.3;
  double demand_rate_per_outgoing = 0.2;
  int initial_inventory_per_storage = 40;
  // Empty pallets a storage point may pull in ahead of pending retrieval loads.
  int max_reserved_empties = 1;

  bool operator==(const SimConfig&) const = default;

  Ticks to_ticks(double seconds) const { return static_cast<Ticks>(std::llround(seconds / tick)); }
  Ticks horizon_ticks() const { return to_ticks(horizon); }
  Ticks slot_ticks() const { return to_ticks(slot_travel_time); }
};

struct HeuristicParams {
  int c1 = 6;
  int c2 = 12;
  int c3 = 6;
  // loop_cost[from][to]; empty means "derive from hop distance".
  std::vector<std::vector<double>> loop_cost;

  bool operator==(const HeuristicParams&) const = default;
};

struct ExperimentConfig {
  SimConfig sim;
  HeuristicParams heuristics;

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

inline bool is_tick_multiple(double seconds, double tick) {
  const double ratio = seconds / tick;
  return std::abs(ratio - std::round(ratio)) <= 1e-6 * std::max(1.0, std::abs(ratio));
}

}  // namespace detail

inline void validate(const SimConfig& c) {
  auto positive = [](long v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("SimConfig.") + name + " must be positive");
  };
  positive(c.n_loops, "n_loops");
  positive(c.n_incoming, "n_incoming");
  positive(c.n_storage, "n_storage");
  positive(c.n_outgoing, "n_outgoing");
  positive(c.buf_incoming, "buf_incoming");
  positive(c.buf_storage, "buf_storage");
  positive(c.buf_outgoing, "buf_outgoing");
  positive(c.buf_junction, "buf_junction");
  positive(c.n_pallets, "n_pallets");
  positive(c.slots_per_loop, "slots_per_loop");
  positive(c.max_reserved_empties, "max_reserved_empties");
  if (c.n_junctions < 0) throw ConfigError("SimConfig.n_junctions must be non-negative");
  if (c.n_junctions != 2 * (c.n_loops - 1))
    throw ConfigError("SimConfig.n_junctions must equal 2*(n_loops-1) for a chain of loops");
  if (c.n_incoming < c.n_loops || c.n_storage < c.n_loops || c.n_outgoing < c.n_loops)
    throw ConfigError("SimConfig.n_loops exceeds a point count; every loop needs a point of each kind");
  if (!(c.tick > 0.0)) throw ConfigError("SimConfig.tick must be positive");
  if (c.horizon < 0.0) throw ConfigError("SimConfig.horizon must be non-negative");
  if (c.demand_rate_per_outgoing < 0.0) throw ConfigError("SimConfig.demand_rate_per_outgoing must be non-negative");
  if (c.initial_inventory_per_storage < 0)
    throw ConfigError("SimConfig.initial_inventory_per_storage must be non-negative");

  const std::pair<double, const char*> times[] = {
      {c.t_proc_incoming, "t_proc_incoming"}, {c.t_proc_storage, "t_proc_storage"},
      {c.t_proc_outgoing, "t_proc_outgoing"}, {c.t_proc_junction, "t_proc_junction"},
      {c.slot_travel_time, "slot_travel_time"}, {c.horizon, "horizon"}};
  for (const auto& [value, name] : times) {
    if (value < 0.0 || !detail::is_tick_multiple(value, c.tick))
      throw ConfigError(std::string("SimConfig.") + name + " must be a non-negative multiple of tick");
  }
  for (const auto& [value, name] : times) {
    if (value == 0.0 && std::string(name) != "horizon")
      throw ConfigError(std::string("SimConfig.") + name + " must be positive");
  }
  // The conveyor must hold every pallet at once, otherwise the system can gridlock.
  if (static_cast<long>(c.n_loops) * c.slots_per_loop <= c.n_pallets)
    throw ConfigError("SimConfig.slots_per_loop too small: n_loops*slots_per_loop must exceed n_pallets");
}

// C_{from,to}: 0.5 per junction hop along the loop chain.
inline std::vector<std::vector<double>> default_loop_cost(int n_loops, double per_hop = 0.5) {
  std::vector<std::vector<double>> cost(n_loops, std::vector<double>(n_loops, 0.0));
  for (int i = 0; i < n_loops; ++i)
    for (int j = 0; j < n_loops; ++j) cost[i][j] = per_hop * std::abs(i - j);
  return cost;
}

inline HeuristicParams resolved(HeuristicParams p, int n_loops) {
  if (p.loop_cost.empty()) p.loop_cost = default_loop_cost(n_loops);
  return p;
}

inline void validate(const HeuristicParams& p, int n_loops) {
  if (p.c1 <= 0) throw ConfigError("HeuristicParams.c1 must be positive");
  if (p.c2 <= 0) throw ConfigError("HeuristicParams.c2 must be positive");
  if (p.c3 <= 0) throw ConfigError("HeuristicParams.c3 must be positive");
  if (p.loop_cost.empty()) return;
  if (static_cast<int>(p.loop_cost.size()) != n_loops)
    throw ConfigError("HeuristicParams.loop_cost must be n_loops x n_loops");
  for (int i = 0; i < n_loops; ++i) {
    if (static_cast<int>(p.loop_cost[i].size()) != n_loops)
      throw ConfigError("HeuristicParams.loop_cost must be n_loops x n_loops");
    if (p.loop_cost[i][i] != 0.0) throw ConfigError("HeuristicParams.loop_cost diagonal must be zero");
    for (double v : p.loop_cost[i])
      if (!(v >= 0.0)) throw ConfigError("HeuristicParams.loop_cost entries must be non-negative");
  }
}

inline void validate(const ExperimentConfig& c) {
  validate(c.sim);
  validate(c.heuristics, c.sim.n_loops);
}

// ---------------------------------------------------------------------------
// JSON schema
//
//   { "sim": { <every SimConfig field> },
//     "heuristics": { "c1": int, "c2": int, "c3": int,
//                     "loop_cost": [[...], ...]   (optional, n_loops x n_loops) } }
//
// Missing fields keep their defaults; unknown fields are rejected.

#define MHS_SIM_FIELDS(X)                                                                          \
  X(n_loops) X(n_incoming) X(n_storage) X(n_outgoing) X(n_junctions) X(t_proc_incoming)            \
  X(t_proc_storage) X(t_proc_outgoing) X(t_proc_junction) X(buf_incoming) X(buf_storage)           \
  X(buf_outgoing) X(buf_junction) X(n_pallets) X(tick) X(horizon) X(slots_per_loop)                \
  X(slot_travel_time) X(demand_rate_per_outgoing) X(initial_inventory_per_storage)                \
  X(max_reserved_empties)

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json sim = nlohmann::json::object();
#define MHS_PUT(f) sim[#f] = c.sim.f;
  MHS_SIM_FIELDS(MHS_PUT)
#undef MHS_PUT
  nlohmann::json h = {{"c1", c.heuristics.c1}, {"c2", c.heuristics.c2}, {"c3", c.heuristics.c3}};
  h["loop_cost"] = resolved(c.heuristics, c.sim.n_loops).loop_cost;
  return {{"sim", sim}, {"heuristics", h}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "sim" && key != "heuristics") throw ConfigError("unknown config section: " + key);

  if (j.contains("sim")) {
    const auto& sim = j.at("sim");
    for (const auto& [key, value] : sim.items()) {
      bool known = false;
#define MHS_GET(f)                                                                                 \
  if (key == #f) {                                                                                 \
    try {                                                                                          \
      value.get_to(c.sim.f);                                                                       \
    } catch (const nlohmann::json::exception&) {                                                   \
      throw ConfigError("SimConfig." #f " has the wrong type");                                    \
    }                                                                                              \
    known = true;                                                                                  \
  }
      MHS_SIM_FIELDS(MHS_GET)
#undef MHS_GET
      if (!known) throw ConfigError("unknown SimConfig field: " + key);
    }
  }
  if (j.contains("heuristics")) {
    const auto& h = j.at("heuristics");
    try {
      for (const auto& [key, value] : h.items()) {
        if (key == "c1") value.get_to(c.heuristics.c1);
        else if (key == "c2") value.get_to(c.heuristics.c2);
        else if (key == "c3") value.get_to(c.heuristics.c3);
        else if (key == "loop_cost") value.get_to(c.heuristics.loop_cost);
        else throw ConfigError("unknown HeuristicParams field: " + key);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("HeuristicParams has the wrong type: ") + e.what());
    }
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file: " + path);
  out << to_json(c).dump(2) << '\n';
}

// FNV-1a over the canonical (key-sorted, compact) JSON form.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string canonical = to_json(c).dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mhs
