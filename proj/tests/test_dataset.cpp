#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "mhs/dataset.hpp"

using namespace mhs;

namespace {

std::string temp_path(const std::string& name) { return ::testing::TempDir() + "mhs_" + name; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

EpisodeTrajectory with_rewards(std::vector<long> rewards) {
  EpisodeTrajectory t;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    Transition tr;
    tr.step_index = static_cast<int>(i);
    tr.reward = rewards[i];
    tr.done = i + 1 == rewards.size();
    t.transitions.push_back(tr);
  }
  compute_returns_to_go(t);
  return t;
}

// Synthetic dataset: every agent's rewards in an episode sum to the same total.
Dataset synthetic(int episodes, int agents, std::uint64_t seed, const std::string& policy = "medium") {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(1, 12), val(0, 9), act(0, 19);
  Dataset ds;
  for (int e = 0; e < episodes; ++e) {
    for (int a = 0; a < agents; ++a) {
      EpisodeTrajectory t;
      t.episode_id = e;
      t.agent_id = a;
      const int n = len(rng);
      for (int k = 0; k < n; ++k) {
        Transition tr;
        tr.episode_id = e;
        tr.agent_id = a;
        tr.step_index = k;
        tr.time_ticks = 50 + 37 * k;
        tr.state.resize(44);
        for (int& s : tr.state) s = val(rng);
        tr.action = act(rng);
        tr.reward = val(rng);
        tr.done = k + 1 == n;
        t.transitions.push_back(std::move(tr));
      }
      compute_returns_to_go(t);
      ds.trajectories.push_back(std::move(t));
    }
  }
  ds.manifest.source_policy = policy;
  ds.manifest.n_episodes = episodes;
  ds.manifest.seed = seed;
  ds.manifest.config_hash = "0123456789abcdef";
  ds.manifest.state_dim = 44;
  refresh_manifest_counts(ds);
  return ds;
}

std::string parse_error_of(const std::string& path) {
  try {
    read_dataset(path);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ReturnsToGo, HandSuffixSums) {
  EXPECT_EQ(with_rewards({3, 0, 5}).returns_to_go, (std::vector<long>{8, 5, 5}));
  EXPECT_EQ(with_rewards({0, 0, 0}).returns_to_go, (std::vector<long>{0, 0, 0}));
  const auto single = with_rewards({7});
  EXPECT_EQ(single.returns_to_go, (std::vector<long>{7}));
  EXPECT_EQ(single.total_return, 7);
}

TEST(ReturnsToGo, Telescoping) {
  const auto t = with_rewards({4, 1, 0, 9, 2, 2});
  for (std::size_t i = 0; i + 1 < t.transitions.size(); ++i)
    EXPECT_EQ(t.returns_to_go[i] - t.returns_to_go[i + 1], t.transitions[i].reward);
  EXPECT_EQ(t.returns_to_go.back(), t.transitions.back().reward);
  EXPECT_EQ(t.total_return, 18);
}

TEST(Recorder, RewardsAreThroughputBetweenOwnEvents) {
  EpisodeRecorder rec(3, 2);
  auto event = [](int agent, Ticks tick) {
    DispatchEvent e;
    e.incoming_id = agent;
    e.tick = tick;
    e.observation.heading_to_storage = {1, 2};
    return e;
  };
  rec.on_dispatch(event(0, 10), 4, 2);
  rec.on_dispatch(event(0, 20), 5, 5);
  rec.on_dispatch(event(0, 30), 6, 9);
  const auto trajs = rec.finalize(12);
  ASSERT_EQ(trajs.size(), 1u);  // agent 1 never acted
  const auto& t = trajs[0];
  EXPECT_EQ(t.episode_id, 3);
  ASSERT_EQ(t.transitions.size(), 3u);
  EXPECT_EQ(t.transitions[0].reward, 5);  // 2 before the first event + 3 until the next
  EXPECT_EQ(t.transitions[1].reward, 4);
  EXPECT_EQ(t.transitions[2].reward, 3);
  EXPECT_EQ(t.total_return, 12);
  EXPECT_FALSE(t.transitions[1].done);
  EXPECT_TRUE(t.transitions[2].done);
  EXPECT_EQ(t.transitions[1].action, 5);
  EXPECT_EQ(t.transitions[2].time_ticks, 30);
  EXPECT_EQ(t.transitions[0].state, (std::vector<int>{1, 2}));
}

TEST(Recorder, SimulatedEpisode) {
  ExperimentConfig c;
  c.sim.horizon = 600.0;
  Simulation sim(c, 9);
  HeuristicPolicy policy(HeuristicKind::Medium, resolved(c.heuristics, 3));
  policy.begin_episode(1);
  const auto r = record_episode(sim, policy, 0);
  ASSERT_EQ(r.trajectories.size(), 4u);
  for (const auto& t : r.trajectories) {
    EXPECT_EQ(t.total_return, r.throughput.total);
    for (std::size_t k = 0; k < t.transitions.size(); ++k) {
      const auto& tr = t.transitions[k];
      EXPECT_EQ(tr.step_index, static_cast<int>(k));
      EXPECT_EQ(tr.done, k + 1 == t.transitions.size());
      EXPECT_GE(tr.reward, 0);
      EXPECT_EQ(tr.state.size(), 44u);
      EXPECT_EQ(tr.agent_id, t.agent_id);
      if (k) {
        EXPECT_GT(tr.time_ticks, t.transitions[k - 1].time_ticks);
      }
    }
  }
}

TEST(DatasetFile, RoundTripIsIdentityAndByteStable) {
  const auto ds = synthetic(6, 4, 11);
  const std::string a = temp_path("rt_a.csv"), b = temp_path("rt_b.csv");
  write_dataset(ds, a);
  const auto back = read_dataset(a);
  EXPECT_EQ(back, ds);
  write_dataset(back, b);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(slurp(manifest_path(a)), slurp(manifest_path(b)));
}

TEST(DatasetFile, HeaderAndFieldOrder) {
  const auto ds = synthetic(1, 1, 2);
  const std::string p = temp_path("fields.csv");
  write_dataset(ds, p);
  std::istringstream in(slurp(p));
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header.rfind("episode,agent,step,time_ticks,action,reward,done,rtg,s0,", 0), 0u);
  EXPECT_EQ(std::count(first.begin(), first.end(), ','), 51);
  const auto& t = ds.trajectories[0];
  std::ostringstream expect;
  expect << "0,0,0,50," << t.transitions[0].action << ',' << t.transitions[0].reward << ','
         << (t.transitions.size() == 1 ? 1 : 0) << ',' << t.returns_to_go[0] << ',';
  EXPECT_EQ(first.rfind(expect.str(), 0), 0u);
}

TEST(DatasetFile, EmptyDataset) {
  Dataset ds;
  ds.manifest.source_policy = "high";
  ds.manifest.state_dim = 44;
  refresh_manifest_counts(ds);
  const std::string p = temp_path("empty.csv");
  write_dataset(ds, p);
  const auto back = read_dataset(p);
  EXPECT_EQ(back.manifest.n_episodes, 0);
  EXPECT_TRUE(back.trajectories.empty());
  EXPECT_EQ(back, ds);
}

TEST(DatasetFile, TruncationIsDetected) {
  const auto ds = synthetic(3, 4, 5);
  const std::string p = temp_path("trunc.csv");
  write_dataset(ds, p);
  const std::string full = slurp(p);

  spit(p, full.substr(0, full.size() - 7));  // mid-line
  EXPECT_THROW(read_dataset(p), ParseError);

  const auto cut = full.rfind('\n', full.size() - 2);
  spit(p, full.substr(0, cut + 1));  // whole last line gone
  EXPECT_THROW(read_dataset(p), ParseError);

  // Drop a whole trajectory that ends cleanly: only the manifest counts catch it.
  const auto& last = ds.trajectories.back();
  std::size_t keep = full.size();
  for (std::size_t i = 0; i < last.transitions.size(); ++i) keep = full.rfind('\n', keep - 2) + 1;
  spit(p, full.substr(0, keep));
  EXPECT_NE(parse_error_of(p).find("manifest"), std::string::npos);
}

TEST(DatasetFile, ErrorsCarryLineNumbers) {
  const auto ds = synthetic(2, 2, 8);
  const std::string p = temp_path("bad.csv");
  write_dataset(ds, p);
  std::string content = slurp(p);
  // Corrupt a field on data line 3 (file line 4).
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) pos = content.find('\n', pos) + 1;
  content.insert(pos, "x");
  spit(p, content);
  EXPECT_NE(parse_error_of(p).find("line 4"), std::string::npos);
}

TEST(DatasetFile, StoredReturnsToGoAreVerified) {
  auto ds = synthetic(1, 1, 4);
  ds.trajectories[0].returns_to_go[0] += 1;
  const std::string p = temp_path("rtg.csv");
  write_dataset(ds, p);
  EXPECT_NE(parse_error_of(p).find("returns-to-go"), std::string::npos);
}

TEST(DatasetFile, MissingManifest) {
  const std::string p = temp_path("nomanifest.csv");
  spit(p, "episode\n");
  std::filesystem::remove(manifest_path(p));
  EXPECT_THROW(read_dataset(p), ParseError);
}

TEST(Mix, ThreeSourcesConserveCounts) {
  const auto low = synthetic(10, 4, 1, "low"), med = synthetic(10, 4, 2, "medium"), high = synthetic(10, 4, 3, "high");
  const auto mix = mix_datasets({&low, &med, &high}, 4, 99);
  EXPECT_EQ(mix.trajectories.size(), 3u * 4u * 4u);
  EXPECT_EQ(mix.manifest.n_episodes, 12);
  EXPECT_EQ(mix.manifest.source_policy, "mix:low+medium+high");
  for (int a = 0; a < 4; ++a) {
    const auto& picks = mix.manifest.provenance.at("picks").at(std::to_string(a));
    ASSERT_EQ(picks.size(), 12u);
    std::set<std::pair<int, int>> seen;
    for (const auto& pick : picks) EXPECT_TRUE(seen.insert({pick[0].get<int>(), pick[1].get<int>()}).second);
  }
  // Every mixed trajectory appears verbatim in its source, up to renumbering.
  const Dataset* sources[] = {&low, &med, &high};
  for (const auto& t : mix.trajectories) {
    const auto& pick = mix.manifest.provenance.at("picks").at(std::to_string(t.agent_id)).at(t.episode_id);
    const Dataset& src = *sources[pick[0].get<int>()];
    const int orig = pick[1].get<int>();
    auto it = std::find_if(src.trajectories.begin(), src.trajectories.end(),
                           [&](const auto& s) { return s.episode_id == orig && s.agent_id == t.agent_id; });
    ASSERT_NE(it, src.trajectories.end());
    EXPECT_EQ(it->returns_to_go, t.returns_to_go);
    ASSERT_EQ(it->transitions.size(), t.transitions.size());
    for (std::size_t k = 0; k < t.transitions.size(); ++k) {
      auto tr = it->transitions[k];
      tr.episode_id = t.episode_id;
      EXPECT_EQ(tr, t.transitions[k]);
    }
  }
}

TEST(Mix, TwoSourcesAndSingleSourceSubset) {
  const auto a = synthetic(8, 4, 5), b = synthetic(8, 4, 6);
  EXPECT_EQ(mix_datasets({&a, &b}, 6, 1).trajectories.size(), 2u * 6u * 4u);
  const auto sub = mix_datasets({&a}, 8, 1);
  EXPECT_EQ(sub.trajectories.size(), a.trajectories.size());
}

TEST(Mix, DeterministicGivenSeed) {
  const auto a = synthetic(8, 2, 5), b = synthetic(8, 2, 6);
  EXPECT_EQ(mix_datasets({&a, &b}, 3, 17), mix_datasets({&a, &b}, 3, 17));
}

TEST(Mix, InsufficientSourceIsAnError) {
  const auto a = synthetic(5, 4, 5), b = synthetic(3, 4, 6);
  EXPECT_THROW(mix_datasets({&a, &b}, 4, 1), std::invalid_argument);
}

TEST(Mix, RoundTripsThroughFiles) {
  const auto a = synthetic(5, 2, 5), b = synthetic(5, 2, 6);
  const auto mix = mix_datasets({&a, &b}, 2, 3);
  const std::string p = temp_path("mix.csv");
  write_dataset(mix, p);
  EXPECT_EQ(read_dataset(p), mix);
}

TEST(Stats, ReturnsAndHistogram) {
  Dataset ds;
  for (long r : {1, 2, 3, 4, 5}) {
    auto t = with_rewards({r});
    t.transitions[0].action = static_cast<int>(r);
    ds.trajectories.push_back(t);
  }
  const auto s = dataset_stats(ds);
  EXPECT_DOUBLE_EQ(s.returns.min, 1);
  EXPECT_DOUBLE_EQ(s.returns.median, 3);
  EXPECT_DOUBLE_EQ(s.returns.max, 5);
  EXPECT_EQ(s.n_transitions, 5);
  EXPECT_EQ(s.action_histogram.size(), 20u);
  EXPECT_EQ(s.action_histogram[3], 1);
  EXPECT_EQ(s.action_histogram[0], 0);
}

TEST(Stats, SingleEpisodeAllEqual) {
  Dataset ds;
  for (int a = 0; a < 4; ++a) {
    auto t = with_rewards({a == 0 ? 10L : 4L, a == 0 ? 0L : 6L});
    t.agent_id = a;
    ds.trajectories.push_back(t);
  }
  const auto s = dataset_stats(ds);
  EXPECT_EQ(s.returns, (FiveNumber{10, 10, 10, 10, 10}));
}

TEST(Stats, EmptyDatasetIsAnError) { EXPECT_THROW(dataset_stats(Dataset{}), std::invalid_argument); }
