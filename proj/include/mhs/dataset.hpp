#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mhs/errors.hpp"
#include "mhs/simulation.hpp"
#include "mhs/stats.hpp"

namespace mhs {

struct Transition {
  int episode_id = 0;
  int agent_id = 0;
  int step_index = 0;
  Ticks time_ticks = 0;
  std::vector<int> state;
  int action = 0;
  long reward = 0;
  bool done = false;

  bool operator==(const Transition&) const = default;
};

struct EpisodeTrajectory {
  int episode_id = 0;
  int agent_id = 0;
  std::vector<Transition> transitions;
  std::vector<long> returns_to_go;
  long total_return = 0;

  bool operator==(const EpisodeTrajectory&) const = default;
};

struct DatasetManifest {
  std::string source_policy;
  int n_episodes = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  int state_dim = 0;
  int n_agents = 0;
  long n_trajectories = 0;
  long n_transitions = 0;
  // Five-number summary of trajectory length, per agent id.
  std::map<int, FiveNumber> per_agent_event_counts;
  nlohmann::json provenance = nlohmann::json::object();

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<EpisodeTrajectory> trajectories;

  bool operator==(const Dataset&) const = default;
};

// rtg[t] = sum of rewards from t to the end.
inline void compute_returns_to_go(EpisodeTrajectory& traj) {
  traj.returns_to_go.assign(traj.transitions.size(), 0);
  long running = 0;
  for (std::size_t i = traj.transitions.size(); i-- > 0;) {
    running += traj.transitions[i].reward;
    traj.returns_to_go[i] = running;
  }
  traj.total_return = traj.returns_to_go.empty() ? 0 : traj.returns_to_go.front();
}

// Collects per-agent transitions during one episode. Rewards are filled in at
// finalize(): transition t of agent i earns the system throughput gained between
// i's event t and its next event (or the end of the episode); throughput gained
// before i's first event is folded into its first transition.
class EpisodeRecorder {
 public:
  EpisodeRecorder(int episode_id, int n_agents) : episode_id_(episode_id), agents_(n_agents) {}

  void on_dispatch(const DispatchEvent& event, int action, long throughput_at_event) {
    Agent& a = agents_.at(event.incoming_id);
    Transition t;
    t.episode_id = episode_id_;
    t.agent_id = event.incoming_id;
    t.step_index = static_cast<int>(a.transitions.size());
    t.time_ticks = event.tick;
    t.state = event.observation.flat();
    t.action = action;
    a.transitions.push_back(std::move(t));
    a.throughput_at.push_back(throughput_at_event);
  }

  // Agents without any event produce no trajectory.
  std::vector<EpisodeTrajectory> finalize(long throughput_at_end) {
    std::vector<EpisodeTrajectory> out;
    for (int id = 0; id < static_cast<int>(agents_.size()); ++id) {
      Agent& a = agents_[id];
      if (a.transitions.empty()) continue;
      const std::size_t n = a.transitions.size();
      for (std::size_t k = 0; k < n; ++k) {
        const long next = k + 1 < n ? a.throughput_at[k + 1] : throughput_at_end;
        a.transitions[k].reward = next - a.throughput_at[k] + (k == 0 ? a.throughput_at[0] : 0);
        a.transitions[k].done = k + 1 == n;
      }
      EpisodeTrajectory traj;
      traj.episode_id = episode_id_;
      traj.agent_id = id;
      traj.transitions = std::move(a.transitions);
      compute_returns_to_go(traj);
      out.push_back(std::move(traj));
    }
    agents_.clear();
    return out;
  }

 private:
  struct Agent {
    std::vector<Transition> transitions;
    std::vector<long> throughput_at;
  };
  int episode_id_;
  std::vector<Agent> agents_;
};

struct EpisodeResult {
  ThroughputCounter throughput;
  std::vector<EpisodeTrajectory> trajectories;
};

// Runs `sim` (already reset) to the horizon under `policy`, recording every dispatch.
inline EpisodeResult record_episode(Simulation& sim, DispatchPolicy& policy, int episode_id) {
  EpisodeRecorder recorder(episode_id, sim.config().sim.n_incoming);
  for (;;) {
    StepResult step = sim.advance_to_next_event();
    const auto* event = std::get_if<DispatchEvent>(&step);
    if (!event) break;
    const HeuristicContext ctx = sim.heuristic_context(event->incoming_id);
    const long tp = sim.throughput().total;
    const int action = policy.dispatch(DispatchRequest{*event, ctx, tp});
    sim.apply_dispatch(*event, action);
    recorder.on_dispatch(*event, action, tp);
  }
  return {sim.throughput(), recorder.finalize(sim.throughput().total)};
}

// Recomputes the count fields and per-agent event statistics from the trajectories.
inline void refresh_manifest_counts(Dataset& ds) {
  auto& m = ds.manifest;
  m.n_trajectories = static_cast<long>(ds.trajectories.size());
  m.n_transitions = 0;
  std::map<int, std::vector<long>> lengths;
  for (const auto& t : ds.trajectories) {
    m.n_transitions += static_cast<long>(t.transitions.size());
    lengths[t.agent_id].push_back(static_cast<long>(t.transitions.size()));
    if (!t.transitions.empty()) m.state_dim = static_cast<int>(t.transitions.front().state.size());
  }
  m.per_agent_event_counts.clear();
  for (const auto& [agent, v] : lengths) m.per_agent_event_counts[agent] = five_number_summary(v);
  m.n_agents = static_cast<int>(lengths.size());
}

// ---------------------------------------------------------------------------
// Files: `<path>` holds one transition per line,
//   episode,agent,step,time_ticks,action,reward,done,rtg,s0,...,s{D-1}
// (integers only, header line first); `<path>.manifest.json` holds the manifest.

inline std::string manifest_path(const std::string& data_path) { return data_path + ".manifest.json"; }

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [agent, f] : m.per_agent_event_counts)
    counts[std::to_string(agent)] = {{"min", f.min}, {"q1", f.q1}, {"median", f.median}, {"q3", f.q3}, {"max", f.max}};
  return {{"format", "mhs-trajectories"},
          {"version", 1},
          {"source_policy", m.source_policy},
          {"n_episodes", m.n_episodes},
          {"seed", m.seed},
          {"config_hash", m.config_hash},
          {"state_dim", m.state_dim},
          {"n_agents", m.n_agents},
          {"n_trajectories", m.n_trajectories},
          {"n_transitions", m.n_transitions},
          {"per_agent_event_counts", counts},
          {"provenance", m.provenance}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    if (j.at("format") != "mhs-trajectories" || j.at("version") != 1)
      throw ParseError("manifest has an unsupported format or version");
    j.at("source_policy").get_to(m.source_policy);
    j.at("n_episodes").get_to(m.n_episodes);
    j.at("seed").get_to(m.seed);
    j.at("config_hash").get_to(m.config_hash);
    j.at("state_dim").get_to(m.state_dim);
    j.at("n_agents").get_to(m.n_agents);
    j.at("n_trajectories").get_to(m.n_trajectories);
    j.at("n_transitions").get_to(m.n_transitions);
    for (const auto& [agent, f] : j.at("per_agent_event_counts").items()) {
      m.per_agent_event_counts[std::stoi(agent)] = {f.at("min").get<double>(), f.at("q1").get<double>(),
                                                    f.at("median").get<double>(), f.at("q3").get<double>(),
                                                    f.at("max").get<double>()};
    }
    m.provenance = j.at("provenance");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

inline std::string dataset_header(int state_dim) {
  std::string h = "episode,agent,step,time_ticks,action,reward,done,rtg";
  for (int i = 0; i < state_dim; ++i) h += ",s" + std::to_string(i);
  return h;
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    out << dataset_header(ds.manifest.state_dim) << '\n';
    std::string line;
    for (const auto& traj : ds.trajectories) {
      for (std::size_t k = 0; k < traj.transitions.size(); ++k) {
        const Transition& t = traj.transitions[k];
        line.clear();
        auto put = [&](long long v) {
          if (!line.empty()) line += ',';
          line += std::to_string(v);
        };
        put(t.episode_id);
        put(t.agent_id);
        put(t.step_index);
        put(t.time_ticks);
        put(t.action);
        put(t.reward);
        put(t.done ? 1 : 0);
        put(traj.returns_to_go.at(k));
        for (int s : t.state) put(s);
        out << line << '\n';
      }
    }
    if (!out) throw std::runtime_error("failed writing dataset file: " + path);
  }
  std::ofstream mout(manifest_path(path));
  if (!mout) throw std::runtime_error("cannot write manifest: " + manifest_path(path));
  mout << manifest_to_json(ds.manifest).dump(2) << '\n';
}

namespace detail {

inline void parse_fields(std::string_view line, std::vector<long long>& fields, long line_no) {
  fields.clear();
  std::size_t pos = 0;
  while (pos <= line.size()) {
    const std::size_t comma = std::min(line.find(',', pos), line.size());
    long long v = 0;
    const char* first = line.data() + pos;
    const char* last = line.data() + comma;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || first == last) throw ParseError("non-integer field", line_no);
    fields.push_back(v);
    pos = comma + 1;
  }
}

}  // namespace detail

// Validates every structural invariant; any mismatch (including truncation)
// aborts the load instead of returning partial data.
inline Dataset read_dataset(const std::string& path) {
  Dataset ds;
  {
    std::ifstream min(manifest_path(path));
    if (!min) throw ParseError("missing manifest: " + manifest_path(path));
    nlohmann::json j;
    try {
      min >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("manifest is not valid JSON: ") + e.what());
    }
    ds.manifest = manifest_from_json(j);
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset file: " + path);
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (content.empty() || content.back() != '\n') throw ParseError("dataset file is truncated (no final newline)");

  const int dim = ds.manifest.state_dim;
  const std::size_t expected_fields = 8 + static_cast<std::size_t>(dim);
  std::vector<long long> f;
  long line_no = 0;
  std::size_t pos = 0;
  EpisodeTrajectory* current = nullptr;
  std::vector<long> stored_rtg;
  auto close_trajectory = [&](long at_line) {
    if (!current) return;
    if (current->transitions.empty() || !current->transitions.back().done)
      throw ParseError("trajectory ended without a done flag", at_line);
    compute_returns_to_go(*current);
    if (current->returns_to_go != stored_rtg) throw ParseError("stored returns-to-go do not match rewards", at_line);
    current = nullptr;
  };

  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    const std::string_view line(content.data() + pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != dataset_header(dim)) throw ParseError("unexpected header", line_no);
      continue;
    }
    detail::parse_fields(line, f, line_no);
    if (f.size() != expected_fields) throw ParseError("wrong number of fields", line_no);
    Transition t;
    t.episode_id = static_cast<int>(f[0]);
    t.agent_id = static_cast<int>(f[1]);
    t.step_index = static_cast<int>(f[2]);
    t.time_ticks = f[3];
    t.action = static_cast<int>(f[4]);
    t.reward = static_cast<long>(f[5]);
    if (f[6] != 0 && f[6] != 1) throw ParseError("done flag must be 0 or 1", line_no);
    t.done = f[6] == 1;
    if (t.reward < 0) throw ParseError("negative reward", line_no);
    t.state.assign(f.begin() + 8, f.end());

    if (t.step_index == 0) {
      close_trajectory(line_no);
      ds.trajectories.push_back({t.episode_id, t.agent_id, {}, {}, 0});
      current = &ds.trajectories.back();
      stored_rtg.clear();
    } else if (!current || current->episode_id != t.episode_id || current->agent_id != t.agent_id ||
               static_cast<int>(current->transitions.size()) != t.step_index || current->transitions.back().done) {
      throw ParseError("transition out of sequence", line_no);
    }
    stored_rtg.push_back(static_cast<long>(f[7]));
    current->transitions.push_back(std::move(t));
  }
  if (line_no == 0) throw ParseError("dataset file has no header");
  close_trajectory(line_no);

  const auto& m = ds.manifest;
  long n_transitions = 0;
  for (const auto& t : ds.trajectories) n_transitions += static_cast<long>(t.transitions.size());
  if (static_cast<long>(ds.trajectories.size()) != m.n_trajectories || n_transitions != m.n_transitions)
    throw ParseError("dataset contents do not match manifest counts (truncated file?)");
  return ds;
}

// ---------------------------------------------------------------------------
// Mixing and statistics

// Samples `per_source` trajectories per agent from each source without
// replacement. Sampled trajectories are renumbered 0..N-1 per agent; the
// manifest provenance records (source index, original episode id) for each.
inline Dataset mix_datasets(const std::vector<const Dataset*>& sources, int per_source, std::uint64_t seed) {
  if (sources.empty()) throw std::invalid_argument("mix_datasets needs at least one source");
  if (per_source <= 0) throw std::invalid_argument("trajectories_per_source must be positive");
  std::map<int, std::vector<std::vector<const EpisodeTrajectory*>>> by_agent;
  for (std::size_t k = 0; k < sources.size(); ++k)
    for (const auto& t : sources[k]->trajectories) {
      auto& slots = by_agent[t.agent_id];
      slots.resize(sources.size());
      slots[k].push_back(&t);
    }

  Dataset mix;
  nlohmann::json picks = nlohmann::json::object();
  for (auto& [agent, per_src] : by_agent) {
    per_src.resize(sources.size());
    int next_id = 0;
    auto& agent_picks = picks[std::to_string(agent)] = nlohmann::json::array();
    for (std::size_t k = 0; k < sources.size(); ++k) {
      auto& pool = per_src[k];
      if (static_cast<int>(pool.size()) < per_source)
        throw std::invalid_argument("source " + std::to_string(k) + " has " + std::to_string(pool.size()) +
                                    " trajectories for agent " + std::to_string(agent) + ", need " +
                                    std::to_string(per_source));
      std::vector<std::size_t> idx(pool.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ull * (k + 1)) ^ (0xbf58476d1ce4e5b9ull * (agent + 1)));
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_source);
      std::sort(idx.begin(), idx.end());
      for (std::size_t i : idx) {
        EpisodeTrajectory t = *pool[i];
        agent_picks.push_back({k, t.episode_id});
        t.episode_id = next_id++;
        for (auto& tr : t.transitions) tr.episode_id = t.episode_id;
        mix.trajectories.push_back(std::move(t));
      }
    }
  }
  std::stable_sort(mix.trajectories.begin(), mix.trajectories.end(), [](const auto& a, const auto& b) {
    return std::tie(a.episode_id, a.agent_id) < std::tie(b.episode_id, b.agent_id);
  });

  nlohmann::json src = nlohmann::json::array();
  std::string policy, hash = sources.front()->manifest.config_hash;
  for (const Dataset* d : sources) {
    src.push_back({{"source_policy", d->manifest.source_policy},
                   {"config_hash", d->manifest.config_hash},
                   {"seed", d->manifest.seed},
                   {"n_episodes", d->manifest.n_episodes}});
    policy += (policy.empty() ? "" : "+") + d->manifest.source_policy;
    if (d->manifest.config_hash != hash) hash = "mixed";
  }
  mix.manifest.source_policy = "mix:" + policy;
  mix.manifest.n_episodes = per_source * static_cast<int>(sources.size());
  mix.manifest.seed = seed;
  mix.manifest.config_hash = hash;
  mix.manifest.state_dim = sources.front()->manifest.state_dim;
  mix.manifest.provenance = {{"trajectories_per_source", per_source}, {"sources", src}, {"picks", picks}};
  refresh_manifest_counts(mix);
  return mix;
}

struct DatasetStats {
  long n_trajectories = 0;
  long n_transitions = 0;
  FiveNumber event_counts;
  FiveNumber returns;
  std::vector<long> action_histogram;
};

inline DatasetStats dataset_stats(const Dataset& ds, int n_actions = 20) {
  if (ds.trajectories.empty()) throw std::invalid_argument("statistics of an empty dataset");
  DatasetStats s;
  s.action_histogram.assign(n_actions, 0);
  std::vector<long> lengths, returns;
  for (const auto& t : ds.trajectories) {
    lengths.push_back(static_cast<long>(t.transitions.size()));
    returns.push_back(t.total_return);
    s.n_transitions += static_cast<long>(t.transitions.size());
    for (const auto& tr : t.transitions) {
      if (tr.action >= static_cast<int>(s.action_histogram.size())) s.action_histogram.resize(tr.action + 1, 0);
      ++s.action_histogram.at(tr.action);
    }
  }
  s.n_trajectories = static_cast<long>(ds.trajectories.size());
  s.event_counts = five_number_summary(lengths);
  s.returns = five_number_summary(returns);
  return s;
}

}  // namespace mhs
