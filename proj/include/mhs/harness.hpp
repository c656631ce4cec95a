#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mhs/config.hpp"
#include "mhs/dataset.hpp"
#include "mhs/dt_model.hpp"
#include "mhs/policies.hpp"
#include "mhs/simulation.hpp"
#include "mhs/stats.hpp"

namespace mhs {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seed of episode `episode` within the seed set `seed`.
inline std::uint64_t episode_seed(std::uint64_t seed, int episode) {
  return splitmix64(splitmix64(seed) + static_cast<std::uint64_t>(episode));
}

// Stochastic policies draw from a stream separate from the simulator's.
inline std::uint64_t policy_seed(std::uint64_t sim_seed) { return splitmix64(sim_seed ^ 0x5851f42d4c957f2dull); }

using PolicyFactory = std::function<std::unique_ptr<DispatchPolicy>()>;

struct PolicySpec {
  std::string name;                  // random|low|medium|high|sll|dt
  std::vector<std::string> weights;  // dt: one shared file, or one per incoming point
  long target_return = 0;            // dt only
  SelectMode mode;
};

// Loads weights once; every call of the returned factory builds an independent policy.
inline PolicyFactory make_policy_factory(const PolicySpec& spec, const ExperimentConfig& config) {
  if (spec.name != "dt") {
    parse_heuristic(spec.name);
    return [name = spec.name, params = config.heuristics] { return make_heuristic_policy(name, params); };
  }
  if (spec.weights.empty()) throw ConfigError("policy dt requires a weight file");
  const int state_dim = static_cast<int>(observation_size(config.sim));
  std::vector<std::shared_ptr<const DTModel>> models;
  for (const auto& path : spec.weights) {
    auto m = std::make_shared<const DTModel>(load_weights(path, state_dim));
    if (m->config().n_actions != config.sim.n_storage)
      throw LoadError("weight file " + path + " predicts " + std::to_string(m->config().n_actions) +
                      " actions but the layout has " + std::to_string(config.sim.n_storage) + " storage points");
    models.push_back(std::move(m));
  }
  if (models.size() != 1 && static_cast<int>(models.size()) != config.sim.n_incoming)
    throw ConfigError("give one weight file or one per incoming point");
  return [models, target = spec.target_return, mode = spec.mode] {
    return std::make_unique<DTDispatchPolicy>(models, target, mode);
  };
}

struct EpisodeOutcome {
  std::uint64_t seed = 0;
  long throughput = 0;
  std::vector<int> events_per_agent;
  std::vector<EpisodeTrajectory> trajectories;
};

inline EpisodeOutcome run_episode(DispatchPolicy& policy, const ExperimentConfig& config, std::uint64_t seed,
                                  int episode_id = 0, bool keep_trajectories = true) {
  Simulation sim(config, seed);
  policy.begin_episode(policy_seed(seed));
  EpisodeResult r = record_episode(sim, policy, episode_id);
  EpisodeOutcome out;
  out.seed = seed;
  out.throughput = r.throughput.total;
  out.events_per_agent.assign(config.sim.n_incoming, 0);
  for (const auto& t : r.trajectories) out.events_per_agent[t.agent_id] = static_cast<int>(t.transitions.size());
  if (keep_trajectories) out.trajectories = std::move(r.trajectories);
  return out;
}

// Runs fn(0..n-1) on up to `threads` workers; results land in index order.
template <typename Fn>
auto parallel_map(int n, int threads, Fn fn) -> std::vector<decltype(fn(0))> {
  std::vector<decltype(fn(0))> results(n);
  threads = std::clamp(threads, 1, std::max(1, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) results[i] = fn(i);
    return results;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          results[i] = fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return results;
}

struct EvalSummary {
  std::string policy;
  int n_episodes = 0;
  int n_seeds = 0;
  FiveNumber throughput;
  std::vector<double> per_seed_medians;
  std::vector<long> throughputs;      // seed-major: [seed][episode]
  std::vector<int> events_per_agent;  // every (episode, agent) pair
};

struct EvalOptions {
  std::uint64_t base_seed = 1;
  int threads = 1;
};

// Seed set i uses base_seed + i; episode j in that set runs with episode_seed(base_seed + i, j).
inline EvalSummary evaluate(const PolicyFactory& factory, int n_episodes, int n_seeds, const ExperimentConfig& config,
                            EvalOptions options = {}) {
  if (n_episodes < 1 || n_seeds < 1) throw ConfigError("n_episodes and n_seeds must be at least 1");
  const int total = n_episodes * n_seeds;
  auto outcomes = parallel_map(total, options.threads, [&](int i) {
    const std::uint64_t seed = episode_seed(options.base_seed + static_cast<std::uint64_t>(i / n_episodes), i % n_episodes);
    auto policy = factory();
    return run_episode(*policy, config, seed, i % n_episodes, false);
  });
  EvalSummary s;
  s.policy = factory()->name();
  s.n_episodes = n_episodes;
  s.n_seeds = n_seeds;
  for (const auto& o : outcomes) {
    s.throughputs.push_back(o.throughput);
    s.events_per_agent.insert(s.events_per_agent.end(), o.events_per_agent.begin(), o.events_per_agent.end());
  }
  s.throughput = five_number_summary(s.throughputs);
  for (int k = 0; k < n_seeds; ++k) {
    const std::vector<long> block(s.throughputs.begin() + k * n_episodes, s.throughputs.begin() + (k + 1) * n_episodes);
    s.per_seed_medians.push_back(five_number_summary(block).median);
  }
  return s;
}

struct SweepSpec {
  std::vector<std::string> weights;
  long base_return = 0;
  std::vector<long> offsets = {-200, -100, 0, 100, 200};
  int episodes = 50;
  int seeds = 5;
  SelectMode mode;
};

struct SweepPoint {
  long offset = 0;
  long target_return = 0;
  EvalSummary summary;
};

inline std::vector<SweepPoint> sweep_conditioning(const SweepSpec& spec, const ExperimentConfig& config,
                                                  EvalOptions options = {}) {
  if (spec.offsets.empty()) throw ConfigError("sweep needs at least one offset");
  if (std::set<long>(spec.offsets.begin(), spec.offsets.end()).size() != spec.offsets.size())
    throw ConfigError("sweep offsets must be distinct");
  std::vector<SweepPoint> out;
  for (long offset : spec.offsets) {
    const long target = spec.base_return + offset;
    const auto factory = make_policy_factory({"dt", spec.weights, target, spec.mode}, config);
    out.push_back({offset, target, evaluate(factory, spec.episodes, spec.seeds, config, options)});
  }
  return out;
}

// Episode j runs with episode_seed(seed, j).
inline Dataset gen_data(const PolicyFactory& factory, int n_episodes, std::uint64_t seed, const ExperimentConfig& config,
                        int threads = 1) {
  if (n_episodes < 0) throw ConfigError("n_episodes must be non-negative");
  auto outcomes = parallel_map(n_episodes, threads, [&](int j) {
    auto policy = factory();
    return run_episode(*policy, config, episode_seed(seed, j), j, true);
  });
  Dataset ds;
  for (auto& o : outcomes)
    for (auto& t : o.trajectories) ds.trajectories.push_back(std::move(t));
  ds.manifest.source_policy = factory()->name();
  ds.manifest.n_episodes = n_episodes;
  ds.manifest.seed = seed;
  ds.manifest.config_hash = config_hash(config);
  ds.manifest.state_dim = static_cast<int>(observation_size(config.sim));
  ds.manifest.provenance = {{"generator", "gen-data"}};
  refresh_manifest_counts(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// CSV output; every row carries the config hash.

inline std::string five_number_csv(const FiveNumber& f) {
  return detail::shortest(f.min) + "," + detail::shortest(f.q1) + "," + detail::shortest(f.median) + "," +
         detail::shortest(f.q3) + "," + detail::shortest(f.max);
}

inline void write_eval_csv(const std::vector<EvalSummary>& summaries, const std::string& hash, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "policy,n_episodes,n_seeds,min,q1,median,q3,max,per_seed_medians,config_hash\n";
  for (const auto& s : summaries) {
    std::string medians;
    for (double m : s.per_seed_medians) medians += (medians.empty() ? "" : ";") + detail::shortest(m);
    out << s.policy << ',' << s.n_episodes << ',' << s.n_seeds << ',' << five_number_csv(s.throughput) << ','
        << medians << ',' << hash << '\n';
  }
}

inline void write_episodes_csv(const std::vector<EvalSummary>& summaries, const std::string& hash,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "policy,seed_index,episode,throughput,config_hash\n";
  for (const auto& s : summaries)
    for (std::size_t i = 0; i < s.throughputs.size(); ++i)
      out << s.policy << ',' << i / s.n_episodes << ',' << i % s.n_episodes << ',' << s.throughputs[i] << ',' << hash
          << '\n';
}

inline void write_sweep_csv(const std::vector<SweepPoint>& points, const std::string& hash, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "offset,target_return,n_episodes,n_seeds,min,q1,median,q3,max,config_hash\n";
  for (const auto& p : points)
    out << p.offset << ',' << p.target_return << ',' << p.summary.n_episodes << ',' << p.summary.n_seeds << ','
        << five_number_csv(p.summary.throughput) << ',' << hash << '\n';
}

// Summary rows go to `path`; the action histogram to `<path stem>_actions.csv`.
inline std::string actions_csv_path(const std::string& path) {
  const auto dot = path.rfind('.');
  const auto slash = path.find_last_of("/\\");
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? path.substr(0, dot) : path) + "_actions.csv";
}

inline void write_stats_csv(const DatasetStats& s, const std::string& hash, const std::string& path) {
  {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "metric,n,min,q1,median,q3,max,config_hash\n";
    out << "events_per_trajectory," << s.n_trajectories << ',' << five_number_csv(s.event_counts) << ',' << hash
        << '\n';
    out << "return," << s.n_trajectories << ',' << five_number_csv(s.returns) << ',' << hash << '\n';
  }
  std::ofstream out(actions_csv_path(path));
  if (!out) throw std::runtime_error("cannot write " + actions_csv_path(path));
  out << "action,count,config_hash\n";
  for (std::size_t a = 0; a < s.action_histogram.size(); ++a)
    out << a << ',' << s.action_histogram[a] << ',' << hash << '\n';
}

}  // namespace mhs
