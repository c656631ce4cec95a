#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mhs/config.hpp"
#include "mhs/errors.hpp"
#include "mhs/topology.hpp"
#include "mhs/types.hpp"

namespace mhs {

struct LoopStats {
  std::vector<int> assigned_per_loop;
  int x_min = 0;
  int x_max = 0;
};

inline LoopStats make_loop_stats(std::vector<int> assigned_per_loop) {
  LoopStats stats;
  if (!assigned_per_loop.empty()) {
    const auto [lo, hi] = std::minmax_element(assigned_per_loop.begin(), assigned_per_loop.end());
    stats.x_min = *lo;
    stats.x_max = *hi;
  }
  stats.assigned_per_loop = std::move(assigned_per_loop);
  return stats;
}

// Normalised loop load plus distance cost from the origin loop. The load term is
// zero when every loop carries the same number of assigned pallets.
inline double loop_cost(const LoopStats& stats, int candidate_loop, int origin_loop, const HeuristicParams& params) {
  const auto& cost = params.loop_cost.empty() ? default_loop_cost(static_cast<int>(stats.assigned_per_loop.size()))
                                              : params.loop_cost;
  double load = 0.0;
  if (stats.x_max != stats.x_min) {
    load = static_cast<double>(stats.assigned_per_loop.at(candidate_loop) - stats.x_min) /
           static_cast<double>(stats.x_max - stats.x_min);
  }
  return load + cost.at(origin_loop).at(candidate_loop);
}

namespace detail {

// argmin over `candidates` of key(s); ties go to the lowest storage id.
template <typename Key>
int argmin_storage(const std::vector<int>& candidates, Key key) {
  int best = -1;
  long best_key = std::numeric_limits<long>::max();
  for (int s : candidates) {
    const long k = key(s);
    if (best < 0 || k < best_key || (k == best_key && s < best)) {
      best = s;
      best_key = k;
    }
  }
  return best;
}

inline std::vector<int> all_storages(const HeuristicContext& ctx) {
  std::vector<int> all(ctx.n_storage());
  for (int s = 0; s < ctx.n_storage(); ++s) all[s] = s;
  return all;
}

template <typename Pred>
std::vector<int> filtered(const std::vector<int>& set, Pred keep) {
  std::vector<int> out;
  for (int s : set)
    if (keep(s)) out.push_back(s);
  return out;
}

}  // namespace detail

inline int dispatch_random(const HeuristicContext& ctx, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, ctx.n_storage() - 1);
  return pick(rng);
}

// Uniform over storage points on the incoming point's own loop.
inline int dispatch_low(const HeuristicContext& ctx, std::mt19937_64& rng) {
  if (ctx.same_loop_set.empty()) throw ConfigError("incoming point has no storage on its loop");
  std::uniform_int_distribution<std::size_t> pick(0, ctx.same_loop_set.size() - 1);
  return ctx.same_loop_set[pick(rng)];
}

// Filter by In(s) <= C1, keep the cheapest loop, then take the fewest incoming pallets.
// If the threshold removes every storage point, fall back to argmin In(s) over all of them.
inline int dispatch_medium(const HeuristicContext& ctx, const HeuristicParams& params) {
  const auto in = [&](int s) { return static_cast<long>(ctx.in_count[s]); };
  const auto all = detail::all_storages(ctx);
  auto set = detail::filtered(all, [&](int s) { return ctx.in_count[s] <= params.c1; });
  if (set.empty()) return detail::argmin_storage(all, in);

  const LoopStats stats = make_loop_stats(ctx.per_loop_assigned);
  int best_loop = -1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int s : set) {
    const int loop = ctx.loop_of_storage[s];
    const double c = loop_cost(stats, loop, ctx.origin_loop, params);
    if (c < best_cost || (c == best_cost && loop < best_loop)) {
      best_cost = c;
      best_loop = loop;
    }
  }
  set = detail::filtered(set, [&](int s) { return ctx.loop_of_storage[s] == best_loop; });
  if (set.size() == 1) return set.front();
  return detail::argmin_storage(set, in);
}

// Which storage set the congestion branch of the High rule starts from.
enum class HighBranch : std::uint8_t { All, Same, Other };

inline HighBranch high_branch(const HeuristicContext& ctx, const HeuristicParams& params) {
  if (ctx.x_same < params.c1 && ctx.x_other < params.c2) return HighBranch::All;
  if (ctx.x_same < params.c1 && ctx.x_other > params.c2) return HighBranch::Same;
  if (ctx.x_same > params.c1 && ctx.x_other < params.c2) return HighBranch::Other;
  return HighBranch::All;
}

inline int dispatch_high(const HeuristicContext& ctx, const HeuristicParams& params) {
  const auto out_minus_in = [&](int s) { return static_cast<long>(ctx.out_count[s]) - ctx.in_count[s]; };
  const auto all = detail::all_storages(ctx);
  std::vector<int> set;
  switch (high_branch(ctx, params)) {
    case HighBranch::All: set = all; break;
    case HighBranch::Same: set = ctx.same_loop_set; break;
    case HighBranch::Other: set = ctx.other_loop_set; break;
  }
  set = detail::filtered(set, [&](int s) { return ctx.in_count[s] <= params.c3; });
  auto same_only = detail::filtered(set, [&](int s) { return ctx.loop_of_storage[s] == ctx.origin_loop; });
  if (!same_only.empty()) set = std::move(same_only);
  if (set.empty()) return detail::argmin_storage(all, out_minus_in);
  if (set.size() == 1) return set.front();
  return detail::argmin_storage(set, out_minus_in);
}

// Same loop, least assigned.
inline int dispatch_sll(const HeuristicContext& ctx) {
  if (ctx.same_loop_set.empty()) throw ConfigError("incoming point has no storage on its loop");
  return detail::argmin_storage(ctx.same_loop_set, [&](int s) { return static_cast<long>(ctx.in_count[s]); });
}

// ---------------------------------------------------------------------------
// Junction routing

enum class JunctionRoute : std::uint8_t { Stay, Cross };

struct JunctionQuery {
  Payload payload;
  int from_loop = 0;
  int to_loop = 0;
  int dest_loop = 0;  // ignored for empty pallets
  int pallets_on_from = 0;
  int pallets_on_to = 0;
};

// Empty pallets move to the emptier loop (ties stay). Loaded pallets follow the
// shortest junction path to their destination loop.
inline JunctionRoute route_junction(const JunctionQuery& q, const Topology& topology) {
  if (q.payload.kind == PayloadKind::Empty)
    return q.pallets_on_to < q.pallets_on_from ? JunctionRoute::Cross : JunctionRoute::Stay;
  if (q.dest_loop == q.from_loop) return JunctionRoute::Stay;
  return topology.next_hop[q.from_loop][q.dest_loop] == q.to_loop ? JunctionRoute::Cross : JunctionRoute::Stay;
}

// ---------------------------------------------------------------------------
// Dispatch-policy interface

struct DispatchRequest {
  const DispatchEvent& event;
  const HeuristicContext& context;
  long throughput_total = 0;  // system throughput at event time
};

class DispatchPolicy {
 public:
  virtual ~DispatchPolicy() = default;
  virtual std::string name() const = 0;
  // Called once before each episode; stochastic policies reseed here.
  virtual void begin_episode(std::uint64_t seed) = 0;
  virtual int dispatch(const DispatchRequest& request) = 0;
};

enum class HeuristicKind : std::uint8_t { Random, Low, Medium, High, Sll };

inline HeuristicKind parse_heuristic(const std::string& name) {
  if (name == "random") return HeuristicKind::Random;
  if (name == "low") return HeuristicKind::Low;
  if (name == "medium") return HeuristicKind::Medium;
  if (name == "high") return HeuristicKind::High;
  if (name == "sll") return HeuristicKind::Sll;
  throw ConfigError("unknown heuristic: " + name + " (expected random|low|medium|high|sll)");
}

inline std::string heuristic_name(HeuristicKind kind) {
  switch (kind) {
    case HeuristicKind::Random: return "random";
    case HeuristicKind::Low: return "low";
    case HeuristicKind::Medium: return "medium";
    case HeuristicKind::High: return "high";
    case HeuristicKind::Sll: return "sll";
  }
  return "";
}

class HeuristicPolicy final : public DispatchPolicy {
 public:
  HeuristicPolicy(HeuristicKind kind, HeuristicParams params) : kind_(kind), params_(std::move(params)) {}

  std::string name() const override { return heuristic_name(kind_); }
  void begin_episode(std::uint64_t seed) override { rng_.seed(seed); }

  int dispatch(const DispatchRequest& request) override {
    const auto& ctx = request.context;
    switch (kind_) {
      case HeuristicKind::Random: return dispatch_random(ctx, rng_);
      case HeuristicKind::Low: return dispatch_low(ctx, rng_);
      case HeuristicKind::Medium: return dispatch_medium(ctx, params_);
      case HeuristicKind::High: return dispatch_high(ctx, params_);
      case HeuristicKind::Sll: return dispatch_sll(ctx);
    }
    return 0;
  }

 private:
  HeuristicKind kind_;
  HeuristicParams params_;
  std::mt19937_64 rng_;
};

inline std::unique_ptr<DispatchPolicy> make_heuristic_policy(const std::string& name, const HeuristicParams& params) {
  return std::make_unique<HeuristicPolicy>(parse_heuristic(name), params);
}

}  // namespace mhs
