#include <cmath>
#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mhs/mhs.hpp"

using namespace mhs;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 1;
  int episodes = 0;
  int seeds = 5;
  int threads = 1;
  std::string out;
};

struct DtFlags {
  std::vector<std::string> weights;
  std::string target_return;
  double temperature = 0.0;
};

ExperimentConfig load(const Common& c) { return c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path); }

SelectMode mode_of(const DtFlags& dt) {
  return dt.temperature > 0.0 ? SelectMode::sample(dt.temperature) : SelectMode::greedy();
}

void print_summary(const EvalSummary& s) {
  std::printf("%-8s n=%dx%d  min %.0f  q1 %.1f  median %.1f  q3 %.1f  max %.0f\n", s.policy.c_str(), s.n_episodes,
              s.n_seeds, s.throughput.min, s.throughput.q1, s.throughput.median, s.throughput.q3, s.throughput.max);
}

// An integer, or "auto-median:<heuristic>" which evaluates that heuristic under
// the same protocol and uses its median throughput.
long resolve_target(const std::string& spec, const ExperimentConfig& config, const Common& c, int episodes) {
  const std::string prefix = "auto-median:";
  if (spec.rfind(prefix, 0) == 0) {
    const std::string policy = spec.substr(prefix.size());
    if (policy == "dt") throw ConfigError("auto-median needs a heuristic policy");
    const auto s = evaluate(make_policy_factory({policy, {}, 0, {}}, config), episodes, c.seeds, config,
                            {c.seed, c.threads});
    std::printf("target return from %s median: %.1f\n", policy.c_str(), s.throughput.median);
    return std::lround(s.throughput.median);
  }
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(spec, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != spec.size())
    throw ConfigError("--target-return must be an integer or auto-median:<policy>, got '" + spec + "'");
  return v;
}

PolicySpec policy_spec(const std::string& name, const DtFlags& dt, const ExperimentConfig& config, const Common& c,
                       int episodes) {
  PolicySpec spec{name, {}, 0, mode_of(dt)};
  if (name == "dt") {
    if (dt.weights.empty()) throw ConfigError("--policy dt requires --weights");
    if (dt.target_return.empty()) throw ConfigError("--policy dt requires --target-return");
    spec.weights = dt.weights;
    spec.target_return = resolve_target(dt.target_return, config, c, episodes);
  }
  return spec;
}

void add_common(CLI::App* cmd, Common& c, bool with_seeds) {
  cmd->add_option("--config", c.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Base seed");
  if (with_seeds) cmd->add_option("--seeds", c.seeds, "Number of seed sets")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
}

void add_dt(CLI::App* cmd, DtFlags& dt) {
  cmd->add_option("--weights", dt.weights, "Weight file (one, or one per incoming point)");
  cmd->add_option("--target-return", dt.target_return, "Integer or auto-median:<policy>");
  cmd->add_option("--temperature", dt.temperature, "Sample actions at this temperature (0: greedy)")
      ->check(CLI::NonNegativeNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conveyor dispatching simulator and experiment runner"};
  app.require_subcommand(1);

  Common gen;
  DtFlags gen_dt;
  std::string gen_policy;
  bool full = false;
  gen.episodes = 200;
  auto* gen_cmd = app.add_subcommand("gen-data", "Record a trajectory dataset from one policy");
  add_common(gen_cmd, gen, false);
  add_dt(gen_cmd, gen_dt);
  gen_cmd->add_option("--policy", gen_policy, "random|low|medium|high|sll|dt")->required();
  gen_cmd->add_option("--episodes", gen.episodes, "Episodes to record")->check(CLI::NonNegativeNumber);
  gen_cmd->add_flag("--full", full, "Record 4000 episodes");
  gen_cmd->add_option("--out", gen.out, "Dataset file; the manifest goes to <out>.manifest.json")->required();

  Common ev;
  DtFlags ev_dt;
  std::vector<std::string> ev_policies;
  std::string ev_episodes_out;
  ev.episodes = 50;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate policies over episodes and seeds");
  add_common(ev_cmd, ev, true);
  add_dt(ev_cmd, ev_dt);
  ev_cmd->add_option("--policy", ev_policies, "Policies to evaluate (repeatable)")->required();
  ev_cmd->add_option("--episodes", ev.episodes, "Episodes per seed")->check(CLI::PositiveNumber);
  ev_cmd->add_option("--out", ev.out, "Summary CSV");
  ev_cmd->add_option("--episodes-out", ev_episodes_out, "Per-episode throughput CSV");

  Common sw;
  DtFlags sw_dt;
  std::vector<long> offsets = {-200, -100, 0, 100, 200};
  sw.episodes = 50;
  auto* sw_cmd = app.add_subcommand("sweep", "Evaluate a model over target returns around a base value");
  add_common(sw_cmd, sw, true);
  add_dt(sw_cmd, sw_dt);
  sw_cmd->add_option("--episodes", sw.episodes, "Episodes per seed")->check(CLI::PositiveNumber);
  sw_cmd->add_option("--offsets", offsets, "Offsets added to the base return")->delimiter(',');
  sw_cmd->add_option("--out", sw.out, "Sweep CSV");

  std::vector<std::string> mix_inputs;
  int per_source = 0;
  std::uint64_t mix_seed = 1;
  std::string mix_out;
  auto* mix_cmd = app.add_subcommand("mix", "Sample trajectories from several datasets into one");
  mix_cmd->add_option("--inputs", mix_inputs, "Source dataset files")->required();
  mix_cmd->add_option("--per-source", per_source, "Trajectories per agent taken from each source")
      ->required()
      ->check(CLI::PositiveNumber);
  mix_cmd->add_option("--seed", mix_seed, "Sampling seed");
  mix_cmd->add_option("--out", mix_out, "Output dataset file")->required();

  std::string stats_in, stats_out;
  auto* stats_cmd = app.add_subcommand("stats", "Summarise a dataset");
  stats_cmd->add_option("--dataset", stats_in, "Dataset file")->required();
  stats_cmd->add_option("--out", stats_out, "Summary CSV (histogram goes to <stem>_actions.csv)");

  DTConfig init_cfg;
  std::uint64_t init_seed = 1;
  std::string init_out, init_config;
  auto* init_cmd = app.add_subcommand("init-weights", "Write a seed-initialised model weight file");
  init_cmd->add_option("--seed", init_seed, "Initialisation seed");
  init_cmd->add_option("--config", init_config, "Experiment config; sets state and action sizes")
      ->check(CLI::ExistingFile);
  init_cmd->add_option("--context-k", init_cfg.context_k, "Context length")->check(CLI::PositiveNumber);
  init_cmd->add_option("--embed-dim", init_cfg.embed_dim, "Embedding width")->check(CLI::PositiveNumber);
  init_cmd->add_option("--layers", init_cfg.n_layers, "Transformer blocks")->check(CLI::PositiveNumber);
  init_cmd->add_option("--heads", init_cfg.n_heads, "Attention heads")->check(CLI::PositiveNumber);
  init_cmd->add_option("--out", init_out, "Weight file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      const auto config = load(gen);
      if (full) gen.episodes = 4000;
      const auto factory = make_policy_factory(policy_spec(gen_policy, gen_dt, config, gen, 50), config);
      const Dataset ds = gen_data(factory, gen.episodes, gen.seed, config, gen.threads);
      write_dataset(ds, gen.out);
      std::printf("wrote %ld trajectories, %ld transitions to %s (config %s)\n", ds.manifest.n_trajectories,
                  ds.manifest.n_transitions, gen.out.c_str(), ds.manifest.config_hash.c_str());
    } else if (*ev_cmd) {
      const auto config = load(ev);
      std::vector<EvalSummary> summaries;
      for (const auto& name : ev_policies) {
        const auto factory = make_policy_factory(policy_spec(name, ev_dt, config, ev, ev.episodes), config);
        summaries.push_back(evaluate(factory, ev.episodes, ev.seeds, config, {ev.seed, ev.threads}));
        print_summary(summaries.back());
      }
      const auto hash = config_hash(config);
      if (!ev.out.empty()) write_eval_csv(summaries, hash, ev.out);
      if (!ev_episodes_out.empty()) write_episodes_csv(summaries, hash, ev_episodes_out);
    } else if (*sw_cmd) {
      const auto config = load(sw);
      if (sw_dt.weights.empty()) throw ConfigError("sweep requires --weights");
      if (sw_dt.target_return.empty()) throw ConfigError("sweep requires --target-return");
      SweepSpec spec;
      spec.weights = sw_dt.weights;
      spec.base_return = resolve_target(sw_dt.target_return, config, sw, sw.episodes);
      spec.offsets = offsets;
      spec.episodes = sw.episodes;
      spec.seeds = sw.seeds;
      spec.mode = mode_of(sw_dt);
      const auto points = sweep_conditioning(spec, config, {sw.seed, sw.threads});
      for (const auto& p : points) {
        std::printf("target %ld (%+ld): ", p.target_return, p.offset);
        print_summary(p.summary);
      }
      if (!sw.out.empty()) write_sweep_csv(points, config_hash(config), sw.out);
    } else if (*mix_cmd) {
      std::vector<Dataset> sources;
      for (const auto& path : mix_inputs) sources.push_back(read_dataset(path));
      std::vector<const Dataset*> ptrs;
      for (const auto& d : sources) ptrs.push_back(&d);
      const Dataset mix = mix_datasets(ptrs, per_source, mix_seed);
      write_dataset(mix, mix_out);
      std::printf("wrote %ld trajectories (%s) to %s\n", mix.manifest.n_trajectories,
                  mix.manifest.source_policy.c_str(), mix_out.c_str());
    } else if (*stats_cmd) {
      const Dataset ds = read_dataset(stats_in);
      const auto s = dataset_stats(ds);
      std::printf("%s: %ld trajectories, %ld transitions\n", ds.manifest.source_policy.c_str(), s.n_trajectories,
                  s.n_transitions);
      std::printf("events/trajectory  min %.0f  q1 %.1f  median %.1f  q3 %.1f  max %.0f\n", s.event_counts.min,
                  s.event_counts.q1, s.event_counts.median, s.event_counts.q3, s.event_counts.max);
      std::printf("return             min %.0f  q1 %.1f  median %.1f  q3 %.1f  max %.0f\n", s.returns.min,
                  s.returns.q1, s.returns.median, s.returns.q3, s.returns.max);
      if (!stats_out.empty()) write_stats_csv(s, ds.manifest.config_hash, stats_out);
    } else if (*init_cmd) {
      const ExperimentConfig config = init_config.empty() ? ExperimentConfig{} : load_config(init_config);
      init_cfg.state_dim = static_cast<int>(observation_size(config.sim));
      init_cfg.n_actions = config.sim.n_storage;
      save_weights(init_model(init_cfg, init_seed), init_out);
      std::printf("wrote %s\n", init_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
