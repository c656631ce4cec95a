#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mhs/errors.hpp"
#include "mhs/policies.hpp"
#include "mhs/types.hpp"

namespace mhs {

struct DTConfig {
  int context_k = 20;
  int embed_dim = 128;
  int n_layers = 3;
  int n_heads = 1;
  int state_dim = 44;
  int n_actions = 20;
  int max_timestep = 1024;
  double dropout = 0.1;  // training only

  bool operator==(const DTConfig&) const = default;

  int no_action_index() const { return n_actions; }
};

inline void validate(const DTConfig& c) {
  if (c.context_k < 1) throw ConfigError("DTConfig.context_k must be at least 1");
  if (c.embed_dim < 1 || c.n_layers < 1 || c.n_heads < 1 || c.state_dim < 1 || c.n_actions < 1 || c.max_timestep < 1)
    throw ConfigError("DTConfig dimensions must be positive");
  if (c.embed_dim % c.n_heads != 0) throw ConfigError("DTConfig.embed_dim must be divisible by n_heads");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw ConfigError("DTConfig.dropout must be in [0, 1)");
}

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  bool operator==(const Tensor&) const = default;

  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
};

// Named tensors plus the normalisation constants applied to model inputs.
// Linear weights are stored [out, in], row-major.
struct DTWeights {
  DTConfig config;
  double return_scale = 0.001;
  std::map<std::string, Tensor> tensors;

  bool operator==(const DTWeights&) const = default;

  const Tensor& at(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw LoadError("missing tensor: " + name);
    return it->second;
  }
};

// The full tensor directory for a config, in file order.
inline std::vector<std::pair<std::string, std::vector<int>>> tensor_layout(const DTConfig& c) {
  const int d = c.embed_dim;
  std::vector<std::pair<std::string, std::vector<int>>> out = {
      {"state_mean", {c.state_dim}},
      {"state_std", {c.state_dim}},
      {"embed_timestep.weight", {c.max_timestep, d}},
      {"embed_return.weight", {d, 1}},
      {"embed_return.bias", {d}},
      {"embed_state.weight", {d, c.state_dim}},
      {"embed_state.bias", {d}},
      {"embed_action.weight", {c.n_actions + 1, d}},
      {"embed_ln.weight", {d}},
      {"embed_ln.bias", {d}},
  };
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.push_back({p + "ln1.weight", {d}});
    out.push_back({p + "ln1.bias", {d}});
    out.push_back({p + "attn.qkv.weight", {3 * d, d}});
    out.push_back({p + "attn.qkv.bias", {3 * d}});
    out.push_back({p + "attn.proj.weight", {d, d}});
    out.push_back({p + "attn.proj.bias", {d}});
    out.push_back({p + "ln2.weight", {d}});
    out.push_back({p + "ln2.bias", {d}});
    out.push_back({p + "mlp.fc.weight", {4 * d, d}});
    out.push_back({p + "mlp.fc.bias", {4 * d}});
    out.push_back({p + "mlp.proj.weight", {d, 4 * d}});
    out.push_back({p + "mlp.proj.bias", {d}});
  }
  out.push_back({"ln_f.weight", {d}});
  out.push_back({"ln_f.bias", {d}});
  out.push_back({"head.weight", {c.n_actions, d}});
  out.push_back({"head.bias", {c.n_actions}});
  return out;
}

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

// Weight matrices and embeddings ~ N(0, 0.02); biases zero; layer norms identity;
// state normalisation identity.
inline DTWeights init_model(const DTConfig& config, std::uint64_t seed) {
  validate(config);
  DTWeights w;
  w.config = config;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 0.02f);
  for (const auto& [name, shape] : tensor_layout(config)) {
    Tensor t{shape, {}};
    t.data.assign(t.numel(), 0.0f);
    if (name == "state_std" || (name.find("ln") != std::string::npos && detail::ends_with(name, ".weight"))) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    } else if (detail::ends_with(name, ".weight")) {
      for (float& v : t.data) v = normal(rng);
    }
    w.tensors.emplace(name, std::move(t));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Per-agent context

struct ContextEntry {
  long return_to_go = 0;
  std::vector<int> state;
  int prev_action = -1;  // -1: no previous action
  int timestep = 0;

  bool operator==(const ContextEntry&) const = default;
};

struct AgentContext {
  int agent_id = 0;
  int k = 20;
  long current_rtg = 0;
  int steps = 0;  // tuples appended so far
  std::deque<ContextEntry> window;
};

inline AgentContext make_context(int agent_id, long target_return, int k) {
  if (k < 1) throw ConfigError("context length must be at least 1");
  AgentContext ctx;
  ctx.agent_id = agent_id;
  ctx.k = k;
  ctx.current_rtg = target_return;
  return ctx;
}

// First tuple of an episode: the target return itself, no previous action.
inline void context_start(AgentContext& ctx, std::vector<int> state) {
  ctx.window.push_back({ctx.current_rtg, std::move(state), -1, ctx.steps++});
  while (static_cast<int>(ctx.window.size()) > ctx.k) ctx.window.pop_front();
}

// R_{t+1} = R_t - r_t; negative values pass through.
inline void context_step(AgentContext& ctx, std::vector<int> new_state, int last_action, long observed_reward) {
  ctx.current_rtg -= observed_reward;
  ctx.window.push_back({ctx.current_rtg, std::move(new_state), last_action, ctx.steps++});
  while (static_cast<int>(ctx.window.size()) > ctx.k) ctx.window.pop_front();
}

// ---------------------------------------------------------------------------
// Inference

// Immutable inference view of a weight set. Linear weights are cached
// transposed so every matrix product is a sequence of contiguous axpy updates;
// the summation order per output is fixed, which keeps results bitwise
// reproducible and independent of sequence length.
class DTModel {
 public:
  explicit DTModel(DTWeights weights) : w_(std::move(weights)) {
    validate(w_.config);
    check_shapes(w_);
    for (int l = 0; l < w_.config.n_layers; ++l) {
      const std::string p = "blocks." + std::to_string(l) + ".";
      Layer layer;
      layer.ln1_w = &w_.at(p + "ln1.weight").data;
      layer.ln1_b = &w_.at(p + "ln1.bias").data;
      layer.qkv_t = transposed(w_.at(p + "attn.qkv.weight"));
      layer.qkv_b = &w_.at(p + "attn.qkv.bias").data;
      layer.proj_t = transposed(w_.at(p + "attn.proj.weight"));
      layer.proj_b = &w_.at(p + "attn.proj.bias").data;
      layer.ln2_w = &w_.at(p + "ln2.weight").data;
      layer.ln2_b = &w_.at(p + "ln2.bias").data;
      layer.fc_t = transposed(w_.at(p + "mlp.fc.weight"));
      layer.fc_b = &w_.at(p + "mlp.fc.bias").data;
      layer.mp_t = transposed(w_.at(p + "mlp.proj.weight"));
      layer.mp_b = &w_.at(p + "mlp.proj.bias").data;
      layers_.push_back(std::move(layer));
    }
    state_t_ = transposed(w_.at("embed_state.weight"));
    head_t_ = transposed(w_.at("head.weight"));
  }

  // Layers point into the owned weight map, so copies are disallowed.
  DTModel(const DTModel&) = delete;
  DTModel& operator=(const DTModel&) = delete;
  DTModel(DTModel&&) = default;
  DTModel& operator=(DTModel&&) = default;

  const DTWeights& weights() const { return w_; }
  const DTConfig& config() const { return w_.config; }

  // Logits for the action after the latest state token.
  std::vector<float> forward(const AgentContext& ctx) const {
    auto all = run(ctx, false);
    return std::move(all.back());
  }

  // Logits at every state token of the window, oldest first.
  std::vector<std::vector<float>> forward_all(const AgentContext& ctx) const { return run(ctx, true); }

  static void check_shapes(const DTWeights& w) {
    for (const auto& [name, shape] : tensor_layout(w.config)) {
      const auto it = w.tensors.find(name);
      if (it == w.tensors.end()) throw LoadError("missing tensor: " + name);
      if (it->second.shape != shape || it->second.data.size() != it->second.numel())
        throw LoadError("tensor " + name + " has a shape inconsistent with the config");
    }
    if (w.tensors.size() != tensor_layout(w.config).size()) throw LoadError("unexpected extra tensors");
  }

 private:
  struct Layer {
    const std::vector<float>* ln1_w;
    const std::vector<float>* ln1_b;
    std::vector<float> qkv_t;
    const std::vector<float>* qkv_b;
    std::vector<float> proj_t;
    const std::vector<float>* proj_b;
    const std::vector<float>* ln2_w;
    const std::vector<float>* ln2_b;
    std::vector<float> fc_t;
    const std::vector<float>* fc_b;
    std::vector<float> mp_t;
    const std::vector<float>* mp_b;
  };

  static std::vector<float> transposed(const Tensor& t) {
    const int rows = t.shape[0], cols = t.shape[1];
    std::vector<float> out(t.data.size());
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(c) * rows + r] = t.data[static_cast<std::size_t>(r) * cols + c];
    return out;
  }

  // y[out] = b + x[in] * wt[in][out]
  static void linear(const float* x, int in, const std::vector<float>& wt, const std::vector<float>& b, int out,
                     float* y) {
    std::copy(b.begin(), b.begin() + out, y);
    for (int i = 0; i < in; ++i) {
      const float xi = x[i];
      const float* row = wt.data() + static_cast<std::size_t>(i) * out;
      for (int o = 0; o < out; ++o) y[o] += xi * row[o];
    }
  }

  static void layer_norm(const float* x, int d, const std::vector<float>& g, const std::vector<float>& b, float* y) {
    float mean = 0.0f;
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<float>(d);
    float var = 0.0f;
    for (int i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<float>(d);
    const float inv = 1.0f / std::sqrt(var + 1e-5f);
    for (int i = 0; i < d; ++i) y[i] = (x[i] - mean) * inv * g[i] + b[i];
  }

  static float gelu(float x) {
    constexpr float c = 0.7978845608028654f;  // sqrt(2/pi)
    return 0.5f * x * (1.0f + std::tanh(c * (x + 0.044715f * x * x * x)));
  }

  std::vector<std::vector<float>> run(const AgentContext& ctx, bool all_positions) const {
    const DTConfig& c = w_.config;
    if (ctx.window.empty()) throw UsageError("forward on an empty context");
    if (static_cast<int>(ctx.window.size()) > c.context_k)
      throw UsageError("context longer than context_k; evict before calling forward");
    const int d = c.embed_dim;
    const int n = static_cast<int>(ctx.window.size());
    const int T = 3 * n;
    std::vector<float> x(static_cast<std::size_t>(T) * d);

    // Token order per tuple: return, previous action, state.
    const auto& time_emb = w_.at("embed_timestep.weight").data;
    const auto& ret_w = w_.at("embed_return.weight").data;
    const auto& ret_b = w_.at("embed_return.bias").data;
    const auto& state_b = w_.at("embed_state.bias").data;
    const auto& act_emb = w_.at("embed_action.weight").data;
    const auto& mean = w_.at("state_mean").data;
    const auto& stdev = w_.at("state_std").data;
    std::vector<float> s(c.state_dim);
    for (int t = 0; t < n; ++t) {
      const ContextEntry& e = ctx.window[t];
      if (static_cast<int>(e.state.size()) != c.state_dim)
        throw UsageError("state has " + std::to_string(e.state.size()) + " entries, model expects " +
                         std::to_string(c.state_dim));
      if (e.prev_action < -1 || e.prev_action >= c.n_actions) throw UsageError("previous action out of range");
      const float* te = time_emb.data() + static_cast<std::size_t>(std::min(e.timestep, c.max_timestep - 1)) * d;
      float* xr = x.data() + static_cast<std::size_t>(3 * t) * d;
      float* xa = xr + d;
      float* xs = xa + d;
      const float r = static_cast<float>(static_cast<double>(e.return_to_go) * w_.return_scale);
      for (int i = 0; i < d; ++i) xr[i] = ret_w[i] * r + ret_b[i] + te[i];
      const int a = e.prev_action < 0 ? c.no_action_index() : e.prev_action;
      for (int i = 0; i < d; ++i) xa[i] = act_emb[static_cast<std::size_t>(a) * d + i] + te[i];
      for (int j = 0; j < c.state_dim; ++j) s[j] = (static_cast<float>(e.state[j]) - mean[j]) / stdev[j];
      linear(s.data(), c.state_dim, state_t_, state_b, d, xs);
      for (int i = 0; i < d; ++i) xs[i] += te[i];
    }
    {
      const auto& g = w_.at("embed_ln.weight").data;
      const auto& b = w_.at("embed_ln.bias").data;
      for (int t = 0; t < T; ++t) layer_norm(x.data() + t * d, d, g, b, x.data() + t * d);
    }

    const int H = c.n_heads;
    const int hd = d / H;
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    std::vector<float> h(static_cast<std::size_t>(T) * d), qkv(static_cast<std::size_t>(T) * 3 * d);
    std::vector<float> att(static_cast<std::size_t>(T) * d), tmp(d), fc(4 * d), p(T);
    for (int l = 0; l < c.n_layers; ++l) {
      const Layer& L = layers_[l];
      // The last layer only needs outputs at state tokens (or the final token).
      const bool last = l + 1 == c.n_layers;
      auto needed = [&](int t) { return !last || (all_positions ? t % 3 == 2 : t == T - 1); };
      for (int t = 0; t < T; ++t) {
        layer_norm(x.data() + t * d, d, *L.ln1_w, *L.ln1_b, h.data() + t * d);
        linear(h.data() + t * d, d, L.qkv_t, *L.qkv_b, 3 * d, qkv.data() + static_cast<std::size_t>(t) * 3 * d);
      }
      for (int t = 0; t < T; ++t) {
        if (!needed(t)) continue;
        float* out = att.data() + t * d;
        std::fill(out, out + d, 0.0f);
        for (int hh = 0; hh < H; ++hh) {
          const float* q = qkv.data() + static_cast<std::size_t>(t) * 3 * d + hh * hd;
          float mx = -INFINITY;
          for (int j = 0; j <= t; ++j) {
            const float* kv = qkv.data() + static_cast<std::size_t>(j) * 3 * d + d + hh * hd;
            float dot = 0.0f;
            for (int i = 0; i < hd; ++i) dot += q[i] * kv[i];
            p[j] = dot * scale;
            mx = std::max(mx, p[j]);
          }
          float sum = 0.0f;
          for (int j = 0; j <= t; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
          }
          for (int j = 0; j <= t; ++j) {
            const float wj = p[j] / sum;
            const float* v = qkv.data() + static_cast<std::size_t>(j) * 3 * d + 2 * d + hh * hd;
            for (int i = 0; i < hd; ++i) out[hh * hd + i] += wj * v[i];
          }
        }
        linear(out, d, L.proj_t, *L.proj_b, d, tmp.data());
        float* xt = x.data() + t * d;
        for (int i = 0; i < d; ++i) xt[i] += tmp[i];
        layer_norm(xt, d, *L.ln2_w, *L.ln2_b, h.data() + t * d);
        linear(h.data() + t * d, d, L.fc_t, *L.fc_b, 4 * d, fc.data());
        for (float& v : fc) v = gelu(v);
        linear(fc.data(), 4 * d, L.mp_t, *L.mp_b, d, tmp.data());
        for (int i = 0; i < d; ++i) xt[i] += tmp[i];
      }
    }

    const auto& gf = w_.at("ln_f.weight").data;
    const auto& bf = w_.at("ln_f.bias").data;
    const auto& hb = w_.at("head.bias").data;
    std::vector<std::vector<float>> logits;
    for (int t = all_positions ? 2 : T - 1; t < T; t += 3) {
      layer_norm(x.data() + t * d, d, gf, bf, tmp.data());
      std::vector<float> out(c.n_actions);
      linear(tmp.data(), d, head_t_, hb, c.n_actions, out.data());
      logits.push_back(std::move(out));
    }
    return logits;
  }

  DTWeights w_;
  std::vector<Layer> layers_;
  std::vector<float> state_t_;
  std::vector<float> head_t_;
};

inline std::vector<double> softmax(const std::vector<float>& logits, double temperature = 1.0) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

struct SelectMode {
  enum Kind : std::uint8_t { Greedy, Sample } kind = Greedy;
  double temperature = 1.0;

  static SelectMode greedy() { return {}; }
  static SelectMode sample(double temperature) { return {Sample, temperature}; }
};

inline int select_action(const std::vector<float>& logits, SelectMode mode, std::mt19937_64& rng) {
  if (logits.empty()) throw UsageError("select_action on empty logits");
  if (mode.kind == SelectMode::Greedy || mode.temperature <= 0.0)
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const auto p = softmax(logits, mode.temperature);
  std::discrete_distribution<int> pick(p.begin(), p.end());
  return pick(rng);
}

// ---------------------------------------------------------------------------
// Weight file
//
//   mhs-dt-weights 1
//   context_k <int>        embed_dim <int>   n_layers <int>  n_heads <int>
//   state_dim <int>        n_actions <int>   max_timestep <int>
//   dropout <real>         return_scale <real>
//   tensors <count>
//   tensor <name> <d0>x<d1>... <byte offset>      (one line per tensor)
//   end
// followed immediately by the little-endian float32 payloads in directory order.
// Each header key sits on its own line.

inline constexpr const char* kWeightMagic = "mhs-dt-weights";
inline constexpr int kWeightVersion = 1;

namespace detail {

inline std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

}  // namespace detail

inline void save_weights(const DTWeights& w, const std::string& path) {
  DTModel::check_shapes(w);
  std::ostringstream header;
  const DTConfig& c = w.config;
  header << kWeightMagic << ' ' << kWeightVersion << '\n'
         << "context_k " << c.context_k << '\n'
         << "embed_dim " << c.embed_dim << '\n'
         << "n_layers " << c.n_layers << '\n'
         << "n_heads " << c.n_heads << '\n'
         << "state_dim " << c.state_dim << '\n'
         << "n_actions " << c.n_actions << '\n'
         << "max_timestep " << c.max_timestep << '\n'
         << "dropout " << detail::shortest(c.dropout) << '\n'
         << "return_scale " << detail::shortest(w.return_scale) << '\n';
  const auto layout = tensor_layout(c);
  header << "tensors " << layout.size() << '\n';
  std::size_t offset = 0;
  for (const auto& [name, shape] : layout) {
    header << "tensor " << name << ' ';
    for (std::size_t i = 0; i < shape.size(); ++i) header << (i ? "x" : "") << shape[i];
    header << ' ' << offset << '\n';
    offset += w.at(name).numel() * sizeof(float);
  }
  header << "end\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write weight file: " + path);
  out << header.str();
  std::vector<std::uint32_t> buf;
  for (const auto& [name, shape] : layout) {
    const auto& data = w.at(name).data;
    buf.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) buf[i] = detail::to_le(std::bit_cast<std::uint32_t>(data[i]));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
  if (!out) throw std::runtime_error("failed writing weight file: " + path);
}

// Parses and validates the whole file before returning; on any error nothing
// is returned. If `expected_state_dim` is positive the header must match it.
inline DTWeights load_weights(const std::string& path, int expected_state_dim = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open weight file: " + path);
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw LoadError(std::string("weight file ends before ") + what);
    return std::istringstream(line);
  };
  {
    auto ls = next("magic");
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kWeightMagic) throw LoadError("not a weight file: " + path);
    if (version != kWeightVersion) throw LoadError("unsupported weight file version " + std::to_string(version));
  }
  DTWeights w;
  auto read_key = [&](const char* key, auto& value) {
    auto ls = next(key);
    std::string k;
    ls >> k;
    if (k != key) throw LoadError(std::string("expected header key ") + key + ", found " + k);
    if (!(ls >> value)) throw LoadError(std::string("bad value for header key ") + key);
  };
  DTConfig& c = w.config;
  read_key("context_k", c.context_k);
  read_key("embed_dim", c.embed_dim);
  read_key("n_layers", c.n_layers);
  read_key("n_heads", c.n_heads);
  read_key("state_dim", c.state_dim);
  read_key("n_actions", c.n_actions);
  read_key("max_timestep", c.max_timestep);
  read_key("dropout", c.dropout);
  read_key("return_scale", w.return_scale);
  try {
    validate(c);
  } catch (const ConfigError& e) {
    throw LoadError(std::string("invalid model config in weight file: ") + e.what());
  }
  if (expected_state_dim > 0 && c.state_dim != expected_state_dim)
    throw LoadError("weight file state_dim " + std::to_string(c.state_dim) + " does not match observation size " +
                    std::to_string(expected_state_dim));

  std::size_t count = 0;
  read_key("tensors", count);
  const auto layout = tensor_layout(c);
  if (count != layout.size())
    throw LoadError("weight file lists " + std::to_string(count) + " tensors, config needs " +
                    std::to_string(layout.size()));
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::size_t offset;
  };
  std::vector<Entry> dir;
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < count; ++i) {
    auto ls = next("tensor directory");
    std::string tag, name, dims;
    std::size_t offset = 0;
    if (!(ls >> tag >> name >> dims >> offset) || tag != "tensor") throw LoadError("malformed tensor entry: " + line);
    std::vector<int> shape;
    std::size_t pos = 0;
    while (pos <= dims.size()) {
      const std::size_t x = std::min(dims.find('x', pos), dims.size());
      int v = 0;
      const auto [ptr, ec] = std::from_chars(dims.data() + pos, dims.data() + x, v);
      if (ec != std::errc{} || ptr != dims.data() + x) throw LoadError("tensor " + name + ": malformed shape " + dims);
      shape.push_back(v);
      pos = x + 1;
    }
    const auto& [want_name, want_shape] = layout[i];
    if (name != want_name) throw LoadError("tensor " + name + ": expected " + want_name + " at this position");
    if (shape != want_shape) throw LoadError("tensor " + name + ": shape " + dims + " does not match config");
    if (offset != expected_offset) throw LoadError("tensor " + name + ": unexpected payload offset");
    std::size_t numel = 1;
    for (int v : shape) numel *= static_cast<std::size_t>(v);
    expected_offset += numel * sizeof(float);
    dir.push_back({name, shape, offset});
  }
  if (!std::getline(in, line) || line != "end") throw LoadError("weight file header is missing its end marker");

  std::vector<std::uint32_t> buf;
  for (const Entry& e : dir) {
    Tensor t{e.shape, {}};
    buf.resize(t.numel());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * 4))
      throw LoadError("tensor " + e.name + ": payload truncated");
    t.data.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) t.data[i] = std::bit_cast<float>(detail::to_le(buf[i]));
    w.tensors.emplace(e.name, std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw LoadError("trailing bytes after the last tensor payload");
  return w;
}

// ---------------------------------------------------------------------------
// Dispatch policy

// One rolling context per incoming point, all conditioned on the same target
// return. An agent's observed reward is the system throughput gained since its
// previous event; throughput before its first event counts toward the first step.
class DTDispatchPolicy final : public DispatchPolicy {
 public:
  // `models` holds one shared model, or one model per incoming point.
  DTDispatchPolicy(std::vector<std::shared_ptr<const DTModel>> models, long target_return,
                   SelectMode mode = SelectMode::greedy())
      : models_(std::move(models)), target_(target_return), mode_(mode) {
    if (models_.empty()) throw ConfigError("DT policy needs at least one model");
  }
  DTDispatchPolicy(std::shared_ptr<const DTModel> model, long target_return, SelectMode mode = SelectMode::greedy())
      : DTDispatchPolicy(std::vector<std::shared_ptr<const DTModel>>{std::move(model)}, target_return, mode) {}

  std::string name() const override { return "dt"; }

  void begin_episode(std::uint64_t seed) override {
    rng_.seed(seed);
    agents_.clear();
  }

  int dispatch(const DispatchRequest& request) override {
    const int id = request.event.incoming_id;
    if (id >= static_cast<int>(agents_.size())) agents_.resize(id + 1);
    Agent& a = agents_[id];
    const DTModel& model = model_for(id);
    if (!a.started) {
      a.context = make_context(id, target_, model.config().context_k);
      context_start(a.context, request.event.observation.flat());
      a.started = true;
    } else {
      context_step(a.context, request.event.observation.flat(), a.last_action, request.throughput_total - a.last_tp);
      a.last_tp = request.throughput_total;
    }
    const int action = select_action(model.forward(a.context), mode_, rng_);
    if (action >= request.context.n_storage())
      throw ActionError("model chose storage " + std::to_string(action) + " but only " +
                        std::to_string(request.context.n_storage()) + " exist");
    a.last_action = action;
    return action;
  }

  const AgentContext* context(int agent_id) const {
    if (agent_id < 0 || agent_id >= static_cast<int>(agents_.size()) || !agents_[agent_id].started) return nullptr;
    return &agents_[agent_id].context;
  }

 private:
  struct Agent {
    bool started = false;
    AgentContext context;
    int last_action = -1;
    long last_tp = 0;
  };

  const DTModel& model_for(int id) const {
    if (models_.size() == 1) return *models_.front();
    if (id >= static_cast<int>(models_.size())) throw ConfigError("no DT model for incoming point " + std::to_string(id));
    return *models_[id];
  }

  std::vector<std::shared_ptr<const DTModel>> models_;
  long target_;
  SelectMode mode_;
  std::mt19937_64 rng_;
  std::vector<Agent> agents_;
};

}  // namespace mhs
