#pragma once

#include <cstdint>
#include <vector>

#include "mhs/config.hpp"

namespace mhs {

enum class PayloadKind : std::uint8_t { Empty, Inbound, Outbound };

// Inbound carries a storage id, Outbound an outgoing-point id.
struct Payload {
  PayloadKind kind = PayloadKind::Empty;
  int dest = -1;

  bool operator==(const Payload&) const = default;

  static Payload empty() { return {}; }
  static Payload inbound(int storage) { return {PayloadKind::Inbound, storage}; }
  static Payload outbound(int outgoing) { return {PayloadKind::Outbound, outgoing}; }
};

// Flattened layout: [heading_to_storage | junction_downstream | inventory].
struct Observation {
  std::vector<int> heading_to_storage;
  std::vector<int> junction_downstream;
  std::vector<int> inventory;

  bool operator==(const Observation&) const = default;

  std::size_t size() const {
    return heading_to_storage.size() + junction_downstream.size() + inventory.size();
  }

  std::vector<int> flat() const {
    std::vector<int> v;
    v.reserve(size());
    v.insert(v.end(), heading_to_storage.begin(), heading_to_storage.end());
    v.insert(v.end(), junction_downstream.begin(), junction_downstream.end());
    v.insert(v.end(), inventory.begin(), inventory.end());
    return v;
  }
};

// Observation length for a layout: two per-storage vectors plus one entry per junction.
inline std::size_t observation_size(const SimConfig& c) {
  return static_cast<std::size_t>(2 * c.n_storage + c.n_junctions);
}

struct DispatchEvent {
  std::uint64_t sequence = 0;  // unique per episode; used to reject stale answers
  Ticks tick = 0;
  double time = 0.0;
  int incoming_id = 0;
  Observation observation;

  bool operator==(const DispatchEvent&) const = default;
};

struct EpisodeEnd {
  double time = 0.0;

  bool operator==(const EpisodeEnd&) const = default;
};

// Inputs shared by the rule-based dispatchers. In(s) and Out(s) are indexed by storage id.
struct HeuristicContext {
  int incoming_id = 0;
  int origin_loop = 0;
  std::vector<int> in_count;
  std::vector<int> out_count;
  std::vector<int> loop_of_storage;
  int x_same = 0;
  int x_other = 0;
  std::vector<int> per_loop_assigned;
  std::vector<int> same_loop_set;
  std::vector<int> other_loop_set;

  int n_storage() const { return static_cast<int>(in_count.size()); }
  int n_loops() const { return static_cast<int>(per_loop_assigned.size()); }
};

// Build a context from raw per-storage counts; keeps the derived fields consistent.
inline HeuristicContext make_heuristic_context(int incoming_id, int origin_loop, std::vector<int> in_count,
                                               std::vector<int> out_count, std::vector<int> loop_of_storage,
                                               int n_loops) {
  HeuristicContext ctx;
  ctx.incoming_id = incoming_id;
  ctx.origin_loop = origin_loop;
  ctx.per_loop_assigned.assign(n_loops, 0);
  for (int s = 0; s < static_cast<int>(in_count.size()); ++s) {
    const int loop = loop_of_storage[s];
    ctx.per_loop_assigned[loop] += in_count[s];
    if (loop == origin_loop) {
      ctx.same_loop_set.push_back(s);
      ctx.x_same += in_count[s];
    } else {
      ctx.other_loop_set.push_back(s);
      ctx.x_other += in_count[s];
    }
  }
  ctx.in_count = std::move(in_count);
  ctx.out_count = std::move(out_count);
  ctx.loop_of_storage = std::move(loop_of_storage);
  return ctx;
}

struct ThroughputCounter {
  long storage_receipts = 0;
  long outgoing_deliveries = 0;
  long total = 0;

  bool operator==(const ThroughputCounter&) const = default;
};

}  // namespace mhs
