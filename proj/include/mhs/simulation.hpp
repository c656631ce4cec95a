#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <variant>
#include <vector>

#include "mhs/config.hpp"
#include "mhs/errors.hpp"
#include "mhs/policies.hpp"
#include "mhs/topology.hpp"
#include "mhs/types.hpp"

namespace mhs {

struct PalletPosition {
  enum class Kind : std::uint8_t { OnSlot, InBuffer, Processing };
  Kind kind = Kind::OnSlot;
  int loop = -1;  // OnSlot
  int slot = -1;  // OnSlot: physical slot index on the ring
  PointRef point;  // InBuffer / Processing

  bool operator==(const PalletPosition&) const = default;
};

struct Pallet {
  int id = 0;
  Payload payload;
  PalletPosition position;

  bool operator==(const Pallet&) const = default;
};

// A station that holds pallets: FIFO queue plus a single processing position.
struct PointState {
  std::deque<int> queue;
  int active = -1;           // pallet in the processing position, -1 if idle
  Ticks remaining = 0;       // ticks left on the active job
  bool done = false;         // job finished; waiting for an empty slot to release into
  bool awaiting_dispatch = false;

  bool operator==(const PointState&) const = default;
};

struct StorageState {
  int inventory = 0;
  std::deque<int> requests;  // outgoing ids, oldest first
  int empties_held = 0;      // empty pallets inside the point reserved for retrieval loads

  bool operator==(const StorageState&) const = default;
};

struct Ring {
  std::vector<int> slots;  // pallet id per physical slot, -1 when empty
  int offset = 0;          // physical slot at position p is (p - offset) mod size
  int pallet_count = 0;

  bool operator==(const Ring&) const = default;

  int slot_at(int position) const {
    const int n = static_cast<int>(slots.size());
    return ((position - offset) % n + n) % n;
  }
};

struct SimulationState {
  Ticks tick = 0;
  bool ended = false;
  std::uint64_t next_sequence = 0;
  std::optional<DispatchEvent> outstanding;

  std::vector<Pallet> pallets;
  std::vector<Ring> rings;
  std::vector<PointState> incoming;
  std::vector<PointState> storage;
  std::vector<PointState> outgoing;
  std::vector<PointState> junctions;
  std::vector<StorageState> stores;

  std::vector<int> heading_to_storage;
  std::deque<int> pending_events;  // incoming ids that finished loading, in order
  std::vector<Ticks> next_demand_tick;
  std::deque<int> unassigned_requests;  // outgoing ids waiting for inventory
  std::vector<long> requests_issued;    // per outgoing point

  ThroughputCounter throughput;
  std::mt19937_64 rng;

  bool operator==(const SimulationState&) const = default;
};

// Physical pallet census, computed by scanning every holding location.
struct Census {
  int on_slots = 0;
  int in_buffers = 0;
  int processing = 0;
  int max_incoming_queue = 0;
  int max_storage_queue = 0;
  int max_outgoing_queue = 0;
  int max_junction_queue = 0;

  int total() const { return on_slots + in_buffers + processing; }
};

using StepResult = std::variant<DispatchEvent, EpisodeEnd>;

// Single-threaded, seedable conveyor simulation. Time advances in ticks; the
// conveyor advances one slot every `slot_travel_time`. Stations exchange pallets
// with the slot currently in front of them whenever the conveyor steps.
class Simulation {
 public:
  explicit Simulation(ExperimentConfig config, std::uint64_t seed = 0)
      : config_(std::move(config)), topology_(build_topology(config_.sim)) {
    validate(config_);
    reset(seed);
  }

  const ExperimentConfig& config() const { return config_; }
  const Topology& topology() const { return topology_; }
  const SimulationState& state() const { return state_; }

  void set_tick_observer(std::function<void(const Simulation&)> fn) { tick_observer_ = std::move(fn); }

  void reset(std::uint64_t seed) {
    const SimConfig& c = config_.sim;
    SimulationState s;
    s.rng.seed(seed);
    s.pallets.resize(c.n_pallets);
    s.rings.resize(c.n_loops);
    for (auto& r : s.rings) r.slots.assign(c.slots_per_loop, -1);
    // Round-robin over loops, evenly spaced within each loop.
    std::vector<int> per_loop(c.n_loops, 0);
    for (int i = 0; i < c.n_pallets; ++i) ++per_loop[i % c.n_loops];
    std::vector<int> placed(c.n_loops, 0);
    for (int i = 0; i < c.n_pallets; ++i) {
      const int loop = i % c.n_loops;
      const int slot = static_cast<int>(static_cast<long>(placed[loop]++) * c.slots_per_loop / per_loop[loop]);
      s.pallets[i] = Pallet{i, Payload::empty(), {PalletPosition::Kind::OnSlot, loop, slot, {}}};
      s.rings[loop].slots[slot] = i;
      ++s.rings[loop].pallet_count;
    }
    s.incoming.resize(c.n_incoming);
    s.storage.resize(c.n_storage);
    s.outgoing.resize(c.n_outgoing);
    s.junctions.resize(c.n_junctions);
    s.stores.assign(c.n_storage, StorageState{c.initial_inventory_per_storage, {}, 0});
    s.heading_to_storage.assign(c.n_storage, 0);
    s.requests_issued.assign(c.n_outgoing, 0);
    s.next_demand_tick.resize(c.n_outgoing);
    for (int o = 0; o < c.n_outgoing; ++o) s.next_demand_tick[o] = sample_arrival(s.rng, 0);
    state_ = std::move(s);
  }

  double time() const { return static_cast<double>(state_.tick) * config_.sim.tick; }

  StepResult advance_to_next_event() {
    if (state_.ended) throw UsageError("advance_to_next_event called after the episode ended");
    if (state_.outstanding) throw UsageError("previous dispatch event has not been answered");
    const Ticks horizon = config_.sim.horizon_ticks();
    for (;;) {
      if (!state_.pending_events.empty()) {
        const int incoming = state_.pending_events.front();
        state_.pending_events.pop_front();
        DispatchEvent ev;
        ev.sequence = state_.next_sequence++;
        ev.tick = state_.tick;
        ev.time = time();
        ev.incoming_id = incoming;
        ev.observation = observe(incoming);
        state_.outstanding = ev;
        return ev;
      }
      if (state_.tick >= horizon) {
        state_.ended = true;
        return EpisodeEnd{time()};
      }
      step_tick();
    }
  }

  void apply_dispatch(const DispatchEvent& event, int storage_id) {
    if (!state_.outstanding || state_.outstanding->sequence != event.sequence)
      throw UsageError("dispatch answers a stale or unknown event");
    if (storage_id < 0 || storage_id >= config_.sim.n_storage)
      throw ActionError("storage id " + std::to_string(storage_id) + " out of range [0, " +
                        std::to_string(config_.sim.n_storage) + ")");
    PointState& point = state_.incoming[event.incoming_id];
    state_.pallets[point.active].payload = Payload::inbound(storage_id);
    ++state_.heading_to_storage[storage_id];
    point.awaiting_dispatch = false;
    point.done = true;
    state_.outstanding.reset();
  }

  Observation observe(int incoming_id) const {
    if (incoming_id < 0 || incoming_id >= config_.sim.n_incoming) throw UsageError("invalid incoming id");
    Observation o;
    o.heading_to_storage = state_.heading_to_storage;
    o.junction_downstream.reserve(state_.junctions.size());
    for (const auto& j : state_.junctions)
      o.junction_downstream.push_back(static_cast<int>(j.queue.size()) + (j.active >= 0 ? 1 : 0));
    o.inventory.reserve(state_.stores.size());
    for (const auto& st : state_.stores) o.inventory.push_back(st.inventory);
    return o;
  }

  HeuristicContext heuristic_context(int incoming_id) const {
    if (incoming_id < 0 || incoming_id >= config_.sim.n_incoming) throw UsageError("invalid incoming id");
    std::vector<int> out(config_.sim.n_storage);
    for (int s = 0; s < config_.sim.n_storage; ++s) out[s] = static_cast<int>(state_.stores[s].requests.size());
    return make_heuristic_context(incoming_id, topology_.loop_of_incoming[incoming_id], state_.heading_to_storage,
                                  std::move(out), topology_.loop_of_storage, config_.sim.n_loops);
  }

  const ThroughputCounter& throughput() const { return state_.throughput; }

  Census census() const {
    Census c;
    for (const auto& r : state_.rings)
      for (int p : r.slots) c.on_slots += p >= 0;
    auto scan = [&](const std::vector<PointState>& points, int& max_queue) {
      for (const auto& pt : points) {
        c.in_buffers += static_cast<int>(pt.queue.size());
        c.processing += pt.active >= 0;
        max_queue = std::max(max_queue, static_cast<int>(pt.queue.size()));
      }
    };
    scan(state_.incoming, c.max_incoming_queue);
    scan(state_.storage, c.max_storage_queue);
    scan(state_.outgoing, c.max_outgoing_queue);
    scan(state_.junctions, c.max_junction_queue);
    return c;
  }

 private:
  Ticks sample_arrival(std::mt19937_64& rng, Ticks now) const {
    const double rate = config_.sim.demand_rate_per_outgoing;
    if (rate <= 0.0) return -1;
    std::exponential_distribution<double> gap(rate);
    const double seconds = gap(rng);
    // Arrivals land on the first tick boundary at or after the sampled instant.
    const auto ticks = static_cast<Ticks>(std::ceil(seconds / config_.sim.tick));
    return now + std::max<Ticks>(ticks, 1);
  }

  PointState& point_state(PointRef p) {
    switch (p.kind) {
      case PointKind::Incoming: return state_.incoming[p.index];
      case PointKind::Storage: return state_.storage[p.index];
      case PointKind::Outgoing: return state_.outgoing[p.index];
      case PointKind::Junction: return state_.junctions[p.index];
    }
    return state_.incoming[0];
  }

  int buffer_size(PointKind kind) const {
    switch (kind) {
      case PointKind::Incoming: return config_.sim.buf_incoming;
      case PointKind::Storage: return config_.sim.buf_storage;
      case PointKind::Outgoing: return config_.sim.buf_outgoing;
      case PointKind::Junction: return config_.sim.buf_junction;
    }
    return 0;
  }

  Ticks processing_ticks(PointKind kind) const {
    switch (kind) {
      case PointKind::Incoming: return config_.sim.to_ticks(config_.sim.t_proc_incoming);
      case PointKind::Storage: return config_.sim.to_ticks(config_.sim.t_proc_storage);
      case PointKind::Outgoing: return config_.sim.to_ticks(config_.sim.t_proc_outgoing);
      case PointKind::Junction: return config_.sim.to_ticks(config_.sim.t_proc_junction);
    }
    return 0;
  }

  void step_tick() {
    const Ticks t = ++state_.tick;
    const bool conveyor_step = t % config_.sim.slot_ticks() == 0;
    if (conveyor_step)
      for (auto& r : state_.rings) r.offset = (r.offset + 1) % static_cast<int>(r.slots.size());

    generate_demand(t);
    advance_timers();
    if (conveyor_step)
      for (int l = 0; l < config_.sim.n_loops; ++l) exchange_with_loop(l);
    start_jobs();
    if (tick_observer_) tick_observer_(*this);
  }

  void generate_demand(Ticks t) {
    for (int o = 0; o < config_.sim.n_outgoing; ++o) {
      while (state_.next_demand_tick[o] >= 0 && state_.next_demand_tick[o] <= t) {
        ++state_.requests_issued[o];
        state_.unassigned_requests.push_back(o);
        state_.next_demand_tick[o] = sample_arrival(state_.rng, state_.next_demand_tick[o]);
      }
    }
    // Requests pick uniformly among storage points with unreserved inventory;
    // when none exists they stay queued and are retried on later ticks.
    while (!state_.unassigned_requests.empty()) {
      std::vector<int> available;
      for (int s = 0; s < config_.sim.n_storage; ++s) {
        const auto& st = state_.stores[s];
        if (st.inventory > static_cast<int>(st.requests.size())) available.push_back(s);
      }
      if (available.empty()) break;
      std::uniform_int_distribution<std::size_t> pick(0, available.size() - 1);
      const int s = available[pick(state_.rng)];
      state_.stores[s].requests.push_back(state_.unassigned_requests.front());
      state_.unassigned_requests.pop_front();
    }
  }

  void advance_timers() {
    auto tick_points = [&](std::vector<PointState>& points, PointKind kind) {
      for (int i = 0; i < static_cast<int>(points.size()); ++i) {
        PointState& pt = points[i];
        if (pt.active < 0 || pt.done || pt.awaiting_dispatch) continue;
        if (--pt.remaining > 0) continue;
        complete_job(PointRef{kind, i}, pt);
      }
    };
    tick_points(state_.incoming, PointKind::Incoming);
    tick_points(state_.storage, PointKind::Storage);
    tick_points(state_.outgoing, PointKind::Outgoing);
    tick_points(state_.junctions, PointKind::Junction);
  }

  void complete_job(PointRef where, PointState& pt) {
    Pallet& pallet = state_.pallets[pt.active];
    switch (where.kind) {
      case PointKind::Incoming:
        // Good loaded; the pallet waits for a destination.
        pt.awaiting_dispatch = true;
        state_.pending_events.push_back(where.index);
        return;
      case PointKind::Storage: {
        StorageState& st = state_.stores[where.index];
        if (pallet.payload.kind == PayloadKind::Inbound) {
          ++st.inventory;
          ++state_.throughput.storage_receipts;
          pallet.payload = Payload::empty();
        } else {
          const int outgoing = st.requests.front();
          st.requests.pop_front();
          --st.inventory;
          --st.empties_held;
          pallet.payload = Payload::outbound(outgoing);
        }
        break;
      }
      case PointKind::Outgoing:
        ++state_.throughput.outgoing_deliveries;
        pallet.payload = Payload::empty();
        break;
      case PointKind::Junction: break;
    }
    state_.throughput.total = state_.throughput.storage_receipts + state_.throughput.outgoing_deliveries;
    pt.done = true;
  }

  void start_jobs() {
    auto start = [&](std::vector<PointState>& points, PointKind kind) {
      for (int i = 0; i < static_cast<int>(points.size()); ++i) {
        PointState& pt = points[i];
        if (pt.active >= 0 || pt.queue.empty()) continue;
        pt.active = pt.queue.front();
        pt.queue.pop_front();
        pt.remaining = processing_ticks(kind);
        pt.done = false;
        state_.pallets[pt.active].position = {PalletPosition::Kind::Processing, -1, -1, PointRef{kind, i}};
      }
    };
    start(state_.incoming, PointKind::Incoming);
    start(state_.storage, PointKind::Storage);
    start(state_.outgoing, PointKind::Outgoing);
    start(state_.junctions, PointKind::Junction);
  }

  bool wants(PointRef where, const Pallet& pallet) const {
    const auto& payload = pallet.payload;
    switch (where.kind) {
      case PointKind::Incoming: return payload.kind == PayloadKind::Empty;
      case PointKind::Storage: {
        if (payload.kind == PayloadKind::Inbound) return payload.dest == where.index;
        if (payload.kind != PayloadKind::Empty) return false;
        const auto& st = state_.stores[where.index];
        return static_cast<int>(st.requests.size()) > st.empties_held &&
               st.empties_held < config_.sim.max_reserved_empties;
      }
      case PointKind::Outgoing: return payload.kind == PayloadKind::Outbound && payload.dest == where.index;
      case PointKind::Junction: {
        const auto& link = topology_.junctions[where.index];
        JunctionQuery q;
        q.payload = payload;
        q.from_loop = link.from_loop;
        q.to_loop = link.to_loop;
        if (payload.kind == PayloadKind::Inbound) q.dest_loop = topology_.loop_of_storage[payload.dest];
        if (payload.kind == PayloadKind::Outbound) q.dest_loop = topology_.loop_of_outgoing[payload.dest];
        q.pallets_on_from = state_.rings[link.from_loop].pallet_count;
        q.pallets_on_to = state_.rings[link.to_loop].pallet_count;
        return route_junction(q, topology_) == JunctionRoute::Cross;
      }
    }
    return false;
  }

  void take_from_slot(int loop, int slot, PointRef where) {
    Ring& ring = state_.rings[loop];
    const int id = ring.slots[slot];
    Pallet& pallet = state_.pallets[id];
    ring.slots[slot] = -1;
    --ring.pallet_count;
    point_state(where).queue.push_back(id);
    pallet.position = {PalletPosition::Kind::InBuffer, -1, -1, where};
    if (where.kind == PointKind::Storage) {
      if (pallet.payload.kind == PayloadKind::Inbound) --state_.heading_to_storage[where.index];
      else ++state_.stores[where.index].empties_held;
    }
  }

  void release_to_slot(int loop, int slot, PointState& pt) {
    Ring& ring = state_.rings[loop];
    const int id = pt.active;
    ring.slots[slot] = id;
    ++ring.pallet_count;
    state_.pallets[id].position = {PalletPosition::Kind::OnSlot, loop, slot, {}};
    pt.active = -1;
    pt.done = false;
  }

  void exchange_with_loop(int loop) {
    Ring& ring = state_.rings[loop];
    for (const Station& st : topology_.stations[loop]) {
      const int slot = ring.slot_at(st.position);
      if (st.role == Station::Role::JunctionEntry) {
        PointState& j = state_.junctions[st.point.index];
        if (j.active >= 0 && j.done && ring.slots[slot] < 0) release_to_slot(loop, slot, j);
        continue;
      }
      PointState& pt = point_state(st.point);
      const int occupant = ring.slots[slot];
      if (occupant >= 0 && static_cast<int>(pt.queue.size()) < buffer_size(st.point.kind) &&
          wants(st.point, state_.pallets[occupant])) {
        take_from_slot(loop, slot, st.point);
      }
      // Junction exits only receive; their pallets leave through the entry on the other loop.
      if (st.role == Station::Role::Point && pt.active >= 0 && pt.done && ring.slots[slot] < 0)
        release_to_slot(loop, slot, pt);
    }
  }

  ExperimentConfig config_;
  Topology topology_;
  SimulationState state_;
  std::function<void(const Simulation&)> tick_observer_;
};

}  // namespace mhs
