#pragma once

#include <algorithm>
#include <cstdint>
#include <tuple>
#include <vector>

#include "mhs/config.hpp"

namespace mhs {

enum class PointKind : std::uint8_t { Incoming, Storage, Outgoing, Junction };

struct PointRef {
  PointKind kind{};
  int index = 0;

  bool operator==(const PointRef&) const = default;
  auto operator<=>(const PointRef&) const = default;
};

struct SlotRef {
  int loop = 0;
  int position = 0;

  bool operator==(const SlotRef&) const = default;
};

struct JunctionLink {
  int id = 0;
  int from_loop = 0;
  int to_loop = 0;
  int exit_position = 0;   // on from_loop
  int entry_position = 0;  // on to_loop

  bool operator==(const JunctionLink&) const = default;
};

// A point of interaction between a loop and a station. Junctions appear twice:
// once as an exit on the source loop and once as an entry on the target loop.
struct Station {
  enum class Role : std::uint8_t { Point, JunctionExit, JunctionEntry };
  Role role{};
  PointRef point;
  int position = 0;

  bool operator==(const Station&) const = default;
};

struct Topology {
  int n_loops = 0;
  int slots_per_loop = 0;
  std::vector<std::vector<Station>> stations;  // per loop, sorted by position
  std::vector<SlotRef> incoming_at;
  std::vector<SlotRef> storage_at;
  std::vector<SlotRef> outgoing_at;
  std::vector<JunctionLink> junctions;
  std::vector<int> loop_of_storage;
  std::vector<int> loop_of_incoming;
  std::vector<int> loop_of_outgoing;
  // next_hop[from][to]: neighbouring loop on the shortest path, or `from` when equal.
  std::vector<std::vector<int>> next_hop;
  std::vector<std::vector<int>> hops;

  bool operator==(const Topology&) const = default;

  int loop_of(PointRef p) const {
    switch (p.kind) {
      case PointKind::Incoming: return loop_of_incoming.at(p.index);
      case PointKind::Storage: return loop_of_storage.at(p.index);
      case PointKind::Outgoing: return loop_of_outgoing.at(p.index);
      case PointKind::Junction: return junctions.at(p.index).from_loop;
    }
    return 0;
  }

  std::vector<int> storages_on_loop(int loop) const {
    std::vector<int> out;
    for (int s = 0; s < static_cast<int>(loop_of_storage.size()); ++s)
      if (loop_of_storage[s] == loop) out.push_back(s);
    return out;
  }
};

namespace detail {

// Split `n` items over `loops` as evenly as possible; earlier loops take the remainder.
inline std::vector<int> split_counts(int n, int loops) {
  std::vector<int> counts(loops, n / loops);
  for (int i = 0; i < n % loops; ++i) ++counts[i];
  return counts;
}

}  // namespace detail

// Loops form a chain L0 - L1 - ... with a junction pair between neighbours:
// junction 2i carries L_i -> L_{i+1}, junction 2i+1 carries L_{i+1} -> L_i.
// On each loop the stations of every kind are spread evenly around the ring and
// interleaved by phase, so no kind clusters on one side.
inline Topology build_topology(const SimConfig& config) {
  validate(config);
  Topology t;
  t.n_loops = config.n_loops;
  t.slots_per_loop = config.slots_per_loop;
  t.stations.resize(config.n_loops);

  auto assign = [&](int n) {
    std::vector<int> loop_of;
    const auto counts = detail::split_counts(n, config.n_loops);
    for (int l = 0; l < config.n_loops; ++l) loop_of.insert(loop_of.end(), counts[l], l);
    return loop_of;
  };
  t.loop_of_incoming = assign(config.n_incoming);
  t.loop_of_storage = assign(config.n_storage);
  t.loop_of_outgoing = assign(config.n_outgoing);

  for (int l = 0; l + 1 < config.n_loops; ++l) {
    t.junctions.push_back({2 * l, l, l + 1, 0, 0});
    t.junctions.push_back({2 * l + 1, l + 1, l, 0, 0});
  }

  // (phase, kind rank, station) per loop, then rank-order onto evenly spaced positions.
  std::vector<std::vector<std::tuple<double, int, Station>>> pending(config.n_loops);
  auto place = [&](const std::vector<int>& loop_of, PointKind kind, int kind_rank) {
    std::vector<int> seen(config.n_loops, 0);
    std::vector<int> total(config.n_loops, 0);
    for (int l : loop_of) ++total[l];
    for (int i = 0; i < static_cast<int>(loop_of.size()); ++i) {
      const int l = loop_of[i];
      const double phase = (seen[l]++ + 0.5) / total[l];
      pending[l].push_back({phase, kind_rank, Station{Station::Role::Point, {kind, i}, 0}});
    }
  };
  place(t.loop_of_incoming, PointKind::Incoming, 0);
  place(t.loop_of_storage, PointKind::Storage, 1);
  place(t.loop_of_outgoing, PointKind::Outgoing, 2);
  {
    std::vector<int> exits(config.n_loops, 0), entries(config.n_loops, 0);
    std::vector<int> exit_total(config.n_loops, 0), entry_total(config.n_loops, 0);
    for (const auto& j : t.junctions) {
      ++exit_total[j.from_loop];
      ++entry_total[j.to_loop];
    }
    for (const auto& j : t.junctions) {
      const double exit_phase = (exits[j.from_loop]++ + 0.5) / exit_total[j.from_loop];
      pending[j.from_loop].push_back(
          {exit_phase, 3, Station{Station::Role::JunctionExit, {PointKind::Junction, j.id}, 0}});
      const double entry_phase = (entries[j.to_loop]++ + 0.5) / entry_total[j.to_loop];
      pending[j.to_loop].push_back(
          {entry_phase, 4, Station{Station::Role::JunctionEntry, {PointKind::Junction, j.id}, 0}});
    }
  }

  t.incoming_at.resize(config.n_incoming);
  t.storage_at.resize(config.n_storage);
  t.outgoing_at.resize(config.n_outgoing);
  for (int l = 0; l < config.n_loops; ++l) {
    auto& items = pending[l];
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });
    const int m = static_cast<int>(items.size());
    if (m > config.slots_per_loop)
      throw ConfigError("SimConfig.slots_per_loop smaller than the number of stations on a loop");
    for (int k = 0; k < m; ++k) {
      Station st = std::get<2>(items[k]);
      st.position = static_cast<int>(static_cast<long>(k) * config.slots_per_loop / m);
      t.stations[l].push_back(st);
      const SlotRef at{l, st.position};
      switch (st.role) {
        case Station::Role::Point:
          if (st.point.kind == PointKind::Incoming) t.incoming_at[st.point.index] = at;
          if (st.point.kind == PointKind::Storage) t.storage_at[st.point.index] = at;
          if (st.point.kind == PointKind::Outgoing) t.outgoing_at[st.point.index] = at;
          break;
        case Station::Role::JunctionExit: t.junctions[st.point.index].exit_position = st.position; break;
        case Station::Role::JunctionEntry: t.junctions[st.point.index].entry_position = st.position; break;
      }
    }
  }

  t.next_hop.assign(config.n_loops, std::vector<int>(config.n_loops, 0));
  t.hops.assign(config.n_loops, std::vector<int>(config.n_loops, 0));
  for (int a = 0; a < config.n_loops; ++a) {
    for (int b = 0; b < config.n_loops; ++b) {
      t.next_hop[a][b] = a == b ? a : (b > a ? a + 1 : a - 1);
      t.hops[a][b] = std::abs(a - b);
    }
  }
  return t;
}

}  // namespace mhs
