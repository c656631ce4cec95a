#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "mhs/dt_model.hpp"
#include "mhs/harness.hpp"

using namespace mhs;

namespace {

DTConfig small_config() {
  DTConfig c;
  c.embed_dim = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  return c;
}

std::string temp_path(const std::string& name) { return ::testing::TempDir() + "mhs_" + name; }

std::vector<int> random_state(std::mt19937_64& rng, int dim = 44) {
  std::uniform_int_distribution<int> d(0, 40);
  std::vector<int> s(dim);
  for (int& v : s) v = d(rng);
  return s;
}

AgentContext random_context(std::mt19937_64& rng, int length, int k = 20) {
  AgentContext ctx = make_context(0, 4500, k);
  context_start(ctx, random_state(rng));
  std::uniform_int_distribution<int> a(0, 19), r(0, 20);
  for (int i = 1; i < length; ++i) context_step(ctx, random_state(rng), a(rng), r(rng));
  return ctx;
}

bool bit_equal(const DTWeights& a, const DTWeights& b) {
  if (a.tensors.size() != b.tensors.size() || !(a.config == b.config)) return false;
  if (std::bit_cast<std::uint64_t>(a.return_scale) != std::bit_cast<std::uint64_t>(b.return_scale)) return false;
  for (const auto& [name, t] : a.tensors) {
    const auto& u = b.tensors.at(name);
    if (t.shape != u.shape || t.data.size() != u.data.size()) return false;
    for (std::size_t i = 0; i < t.data.size(); ++i)
      if (std::bit_cast<std::uint32_t>(t.data[i]) != std::bit_cast<std::uint32_t>(u.data[i])) return false;
  }
  return true;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(DTConfig, Validation) {
  DTConfig c;
  EXPECT_NO_THROW(validate(c));
  c.n_heads = 3;
  EXPECT_THROW(validate(c), ConfigError);
  c = DTConfig{};
  c.context_k = 0;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Init, DeterministicWithZeroHeadBias) {
  const auto a = init_model(DTConfig{}, 5), b = init_model(DTConfig{}, 5);
  EXPECT_TRUE(bit_equal(a, b));
  EXPECT_FALSE(bit_equal(a, init_model(DTConfig{}, 6)));
  EXPECT_EQ(a.at("head.weight").shape, (std::vector<int>{20, 128}));
  for (float v : a.at("head.bias").data) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(a.at("embed_action.weight").shape, (std::vector<int>{21, 128}));
}

TEST(Forward, ZeroWeightsGiveUniformLogits) {
  auto w = init_model(small_config(), 1);
  for (auto& [name, t] : w.tensors) std::fill(t.data.begin(), t.data.end(), name == "state_std" ? 1.0f : 0.0f);
  const DTModel model(w);
  std::mt19937_64 rng(1);
  const auto logits = model.forward(random_context(rng, 5));
  for (float v : logits) EXPECT_EQ(v, 0.0f);
  for (double p : softmax(logits)) EXPECT_NEAR(p, 1.0 / 20, 1e-12);
}

TEST(Forward, FiniteLogitsAndNormalisedSoftmax) {
  const DTModel model(init_model(DTConfig{}, 3));
  std::mt19937_64 rng(2);
  for (int len = 1; len <= 20; len += 3) {
    const auto logits = model.forward(random_context(rng, len));
    ASSERT_EQ(logits.size(), 20u);
    for (float v : logits) EXPECT_TRUE(std::isfinite(v));
    const auto p = softmax(logits);
    double sum = 0.0;
    for (double v : p) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Forward, CausalMask) {
  const DTModel model(init_model(small_config(), 4));
  std::mt19937_64 rng(3);
  AgentContext ctx = random_context(rng, 8);
  const auto before = model.forward_all(ctx);
  ASSERT_EQ(before.size(), 8u);

  AgentContext longer = ctx;
  context_step(longer, random_state(rng), 3, 7);
  const auto after = model.forward_all(longer);
  ASSERT_EQ(after.size(), 9u);
  for (std::size_t t = 0; t < before.size(); ++t) EXPECT_EQ(before[t], after[t]) << "position " << t;

  // Changing later tuples leaves earlier positions untouched.
  AgentContext edited = ctx;
  edited.window[5].state = random_state(rng);
  edited.window[6].return_to_go = -999;
  edited.window[7].prev_action = 19;
  const auto changed = model.forward_all(edited);
  for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(before[t], changed[t]);
  EXPECT_NE(before[7], changed[7]);
  EXPECT_EQ(model.forward(ctx), before.back());
}

TEST(Forward, ContextErrors) {
  const DTModel model(init_model(small_config(), 4));
  AgentContext empty = make_context(0, 100, 20);
  EXPECT_THROW(model.forward(empty), UsageError);
  std::mt19937_64 rng(3);
  AgentContext big = random_context(rng, 20, 25);
  context_step(big, random_state(rng), 0, 0);
  EXPECT_EQ(big.window.size(), 21u);
  EXPECT_THROW(model.forward(big), UsageError);
  AgentContext wrong = random_context(rng, 2);
  wrong.window.back().state.pop_back();
  EXPECT_THROW(model.forward(wrong), UsageError);
}

TEST(Select, GreedyAndTies) {
  std::mt19937_64 rng(1);
  std::vector<float> logits(20, 0.0f);
  EXPECT_EQ(select_action(logits, SelectMode::greedy(), rng), 0);
  logits[7] = 2.5f;
  EXPECT_EQ(select_action(logits, SelectMode::greedy(), rng), 7);
  logits[12] = 2.5f;
  EXPECT_EQ(select_action(logits, SelectMode::greedy(), rng), 7);
}

TEST(Select, LowTemperatureSamplingMatchesGreedy) {
  std::mt19937_64 rng(9);
  std::vector<float> logits(20);
  for (int i = 0; i < 20; ++i) logits[i] = std::sin(static_cast<float>(i));
  const int greedy = select_action(logits, SelectMode::greedy(), rng);
  int agree = 0;
  for (int i = 0; i < 10000; ++i) agree += select_action(logits, SelectMode::sample(1e-5), rng) == greedy;
  EXPECT_EQ(agree, 10000);
}

TEST(Select, SamplingFollowsSoftmax) {
  std::mt19937_64 rng(10);
  std::vector<float> logits = {0.0f, 1.0f, 2.0f, -1.0f};
  const auto p = softmax(logits);
  std::vector<long> counts(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[select_action(logits, SelectMode::sample(1.0), rng)];
  double chi = 0.0;
  for (int i = 0; i < 4; ++i) chi += std::pow(counts[i] - n * p[i], 2) / (n * p[i]);
  EXPECT_LT(chi, 11.345);  // df 3, alpha 0.01
}

TEST(Context, ReturnDecrement) {
  AgentContext ctx = make_context(2, 4550, 20);
  context_start(ctx, std::vector<int>(44, 0));
  EXPECT_EQ(ctx.window.front().return_to_go, 4550);
  EXPECT_EQ(ctx.window.front().prev_action, -1);
  context_step(ctx, std::vector<int>(44, 1), 5, 3);
  EXPECT_EQ(ctx.current_rtg, 4547);
  EXPECT_EQ(ctx.window.back().return_to_go, 4547);
  EXPECT_EQ(ctx.window.back().prev_action, 5);
}

TEST(Context, EvictionKeepsLatestK) {
  AgentContext ctx = make_context(0, 100, 20);
  context_start(ctx, std::vector<int>(44, 0));
  for (int i = 1; i <= 20; ++i) context_step(ctx, std::vector<int>(44, i), i % 20, 1);
  EXPECT_EQ(ctx.window.size(), 20u);
  EXPECT_EQ(ctx.window.front().state[0], 1);
  EXPECT_EQ(ctx.window.front().timestep, 1);
  EXPECT_EQ(ctx.window.back().state[0], 20);
  EXPECT_EQ(ctx.steps, 21);
}

TEST(Context, TelescopesToZero) {
  AgentContext ctx = make_context(0, 60, 20);
  context_start(ctx, {});
  for (long r : {10, 0, 25, 5, 20}) context_step(ctx, {}, 0, r);
  EXPECT_EQ(ctx.current_rtg, 0);
  context_step(ctx, {}, 0, 4);
  EXPECT_EQ(ctx.current_rtg, -4);
}

TEST(WeightFile, BitExactRoundTrip) {
  auto w = init_model(DTConfig{}, 21);
  w.return_scale = 1.0 / 3000.0;
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0.0f, 3.0f);
  for (float& v : w.tensors.at("state_mean").data) v = n(rng);
  for (float& v : w.tensors.at("head.bias").data) v = n(rng);
  const std::string p = temp_path("weights.bin");
  save_weights(w, p);
  const auto back = load_weights(p, 44);
  EXPECT_TRUE(bit_equal(w, back));
  const std::string q = temp_path("weights2.bin");
  save_weights(back, q);
  EXPECT_EQ(slurp(p), slurp(q));

  const DTModel a(w), b(back);
  const auto ctx = random_context(rng, 20);
  EXPECT_EQ(a.forward(ctx), b.forward(ctx));
}

TEST(WeightFile, WrongStateDimIsRejected) {
  const std::string p = temp_path("statedim.bin");
  save_weights(init_model(small_config(), 1), p);
  std::string content = slurp(p);
  const auto pos = content.find("state_dim 44");
  ASSERT_NE(pos, std::string::npos);
  content.replace(pos, 12, "state_dim 43");
  {
    std::ofstream out(p, std::ios::binary);
    out << content;
  }
  try {
    load_weights(p);
    FAIL() << "expected a load error";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("state_mean"), std::string::npos) << e.what();
  }

  DTConfig c = small_config();
  c.state_dim = 40;
  save_weights(init_model(c, 1), p);
  EXPECT_THROW(load_weights(p, 44), LoadError);
  EXPECT_NO_THROW(load_weights(p));
}

TEST(WeightFile, TruncatedPayloadNamesTensor) {
  const std::string p = temp_path("trunc.bin");
  save_weights(init_model(small_config(), 1), p);
  const std::string content = slurp(p);
  {
    std::ofstream out(p, std::ios::binary);
    out << content.substr(0, content.size() - 10);
  }
  try {
    load_weights(p);
    FAIL() << "expected a load error";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("head.bias"), std::string::npos) << e.what();
  }
}

TEST(WeightFile, BadMagicAndVersion) {
  const std::string p = temp_path("magic.bin");
  {
    std::ofstream out(p);
    out << "something else\n";
  }
  EXPECT_THROW(load_weights(p), LoadError);
  {
    std::ofstream out(p);
    out << "mhs-dt-weights 9\n";
  }
  EXPECT_THROW(load_weights(p), LoadError);
  EXPECT_THROW(load_weights(temp_path("does_not_exist.bin")), LoadError);
}

TEST(WeightFile, HeaderDocumentsLayout) {
  const std::string p = temp_path("header.bin");
  save_weights(init_model(small_config(), 1), p);
  const std::string content = slurp(p);
  const auto end = content.find("\nend\n");
  ASSERT_NE(end, std::string::npos);
  const std::string header = content.substr(0, end);
  EXPECT_EQ(header.rfind("mhs-dt-weights 1\n", 0), 0u);
  EXPECT_NE(header.find("tensor head.weight 20x32 "), std::string::npos);
  std::size_t floats = 0;
  for (const auto& [name, shape] : tensor_layout(small_config())) {
    std::size_t n = 1;
    for (int d : shape) n *= d;
    floats += n;
  }
  EXPECT_EQ(content.size() - (end + 5), floats * 4);
}

namespace {

DispatchEvent event_for(int agent, std::uint64_t seq, std::mt19937_64& rng) {
  DispatchEvent e;
  e.sequence = seq;
  e.incoming_id = agent;
  e.observation.heading_to_storage = random_state(rng, 20);
  e.observation.junction_downstream = random_state(rng, 4);
  e.observation.inventory = random_state(rng, 20);
  return e;
}

HeuristicContext any_context() {
  return make_heuristic_context(0, 0, std::vector<int>(20, 0), std::vector<int>(20, 0), std::vector<int>(20, 0), 1);
}

}  // namespace

TEST(DTPolicy, FirstTokenIsTargetAndRewardsSinceOwnEvent) {
  auto model = std::make_shared<const DTModel>(init_model(small_config(), 2));
  DTDispatchPolicy policy(model, 4552);
  policy.begin_episode(1);
  std::mt19937_64 rng(1);
  const auto ctx = any_context();
  for (int agent = 0; agent < 4; ++agent) {
    const auto ev = event_for(agent, agent, rng);
    policy.dispatch({ev, ctx, 3});
    ASSERT_NE(policy.context(agent), nullptr);
    EXPECT_EQ(policy.context(agent)->window.front().return_to_go, 4552);
    EXPECT_EQ(policy.context(agent)->window.front().state, ev.observation.flat());
  }
  policy.dispatch({event_for(1, 10, rng), ctx, 25});
  EXPECT_EQ(policy.context(1)->current_rtg, 4552 - 25);
  policy.dispatch({event_for(1, 11, rng), ctx, 31});
  EXPECT_EQ(policy.context(1)->current_rtg, 4552 - 31);
  EXPECT_EQ(policy.context(0)->window.size(), 1u);
  EXPECT_EQ(policy.context(1)->window.size(), 3u);
}

TEST(DTPolicy, AgentsAreIsolatedFromOtherAgentsInterleaving) {
  auto model = std::make_shared<const DTModel>(init_model(small_config(), 8));
  std::mt19937_64 rng(5);
  std::vector<DispatchEvent> own, other;
  for (int i = 0; i < 6; ++i) own.push_back(event_for(0, 0, rng));
  for (int i = 0; i < 9; ++i) other.push_back(event_for(1 + i % 3, 0, rng));
  const std::vector<long> own_tp = {0, 4, 9, 15, 15, 22};
  const auto ctx = any_context();

  auto run = [&](const std::vector<int>& order) {
    DTDispatchPolicy policy(model, 4000);
    policy.begin_episode(3);
    std::vector<int> actions;
    std::size_t i = 0, j = 0;
    std::uint64_t seq = 0;
    for (int who : order) {
      if (who == 0) {
        auto ev = own[i];
        ev.sequence = seq++;
        actions.push_back(policy.dispatch({ev, ctx, own_tp[i]}));
        ++i;
      } else {
        auto ev = other[j++];
        ev.sequence = seq++;
        policy.dispatch({ev, ctx, own_tp[std::min(i, own_tp.size() - 1)]});
      }
    }
    return actions;
  };
  const auto a = run({0, 1, 0, 1, 1, 0, 0, 1, 0, 1, 0, 1, 1, 1, 1});
  const auto b = run({1, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 1, 1, 1});
  EXPECT_EQ(a, b);
}

TEST(DTPolicy, GreedyEpisodesAreReproducible) {
  const std::string p = temp_path("episode_weights.bin");
  save_weights(init_model(small_config(), 12), p);
  ExperimentConfig c;
  c.sim.horizon = 120.0;
  const auto factory = make_policy_factory({"dt", {p}, 4552, SelectMode::greedy()}, c);
  auto first = factory(), second = factory();
  const auto a = run_episode(*first, c, 99);
  const auto b = run_episode(*second, c, 99);
  EXPECT_EQ(a.throughput, b.throughput);
  EXPECT_EQ(a.trajectories, b.trajectories);
  EXPECT_EQ(a.trajectories.size(), 4u);
  EXPECT_EQ(first->name(), "dt");
}

TEST(DTPolicy, RejectsMismatchedWeights) {
  const std::string p = temp_path("mismatch.bin");
  DTConfig c = small_config();
  c.n_actions = 12;
  save_weights(init_model(c, 1), p);
  EXPECT_THROW(make_policy_factory({"dt", {p}, 0, {}}, ExperimentConfig{}), LoadError);
  EXPECT_THROW(make_policy_factory({"dt", {}, 0, {}}, ExperimentConfig{}), ConfigError);
}
