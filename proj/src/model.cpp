#include "bssm/model.hpp"

#include <cmath>

#include "bssm/error.hpp"
#include "bssm/ops.hpp"

namespace bssm {

std::string to_string(HeadMode m) { return m == HeadMode::MultiHead ? "multi" : "single"; }

HeadMode head_mode_from_string(const std::string& s) {
  if (s == "multi") return HeadMode::MultiHead;
  if (s == "single") return HeadMode::SingleHead;
  throw ConfigError("unknown head mode '" + s + "' (expected multi or single)");
}

bool ModelConfig::has_classifier() const {
  for (Index k : num_classes)
    if (k > 0) return true;
  return false;
}

void ModelConfig::validate() const {
  std::string bad;
  auto need = [&](bool ok, const char* what) {
    if (!ok) bad += std::string(bad.empty() ? "" : "; ") + what;
  };
  need(vocab_size > kNumSpecials, "model.vocab_size must exceed the special tokens");
  need(d_model > 0, "model.d_model must be positive");
  need(n_blocks > 0, "model.n_blocks must be positive");
  need(head_dim > 0, "model.head_dim must be positive");
  need(expand > 0, "model.expand must be positive");
  need(d_state > 0, "model.d_state must be positive");
  need(conv_kernel > 0, "model.conv_kernel must be positive");
  need(groups > 0, "model.groups must be positive");
  need(mlp_ratio > 0, "model.mlp_ratio must be positive");
  need(max_len > 0, "model.max_len must be positive");
  need(head_dim <= 0 || (expand * d_model) % head_dim == 0, "model.expand * d_model must be divisible by head_dim");
  need(head_dim <= 0 || groups <= 0 || (expand * d_model) % head_dim != 0 || n_heads() % groups == 0,
       "model.groups must divide the number of heads");
  if (!bad.empty()) throw ConfigError(bad);
}

std::vector<std::string> ModelConfig::backbone_mismatches(const ModelConfig& o) const {
  std::vector<std::string> out;
  if (vocab_size != o.vocab_size) out.push_back("vocab_size");
  if (d_model != o.d_model) out.push_back("d_model");
  if (n_blocks != o.n_blocks) out.push_back("n_blocks");
  if (head_dim != o.head_dim) out.push_back("head_dim");
  if (expand != o.expand) out.push_back("expand");
  if (d_state != o.d_state) out.push_back("d_state");
  if (conv_kernel != o.conv_kernel) out.push_back("conv_kernel");
  if (groups != o.groups) out.push_back("groups");
  if (mlp_ratio != o.mlp_ratio) out.push_back("mlp_ratio");
  return out;
}

ModelConfig ModelConfig::preset(const std::string& name, Index vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  if (name == "tiny") {
    c.d_model = 64, c.n_blocks = 2, c.head_dim = 16, c.d_state = 16;
  } else if (name == "base") {
    c.d_model = 256, c.n_blocks = 12, c.head_dim = 64, c.d_state = 64;
  } else if (name == "large") {
    c.d_model = 512, c.n_blocks = 13, c.head_dim = 64, c.d_state = 64;
  } else {
    throw ConfigError("unknown model preset '" + name + "' (expected tiny, base or large)");
  }
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},       {"n_blocks", c.n_blocks},
       {"head_dim", c.head_dim},     {"expand", c.expand},         {"d_state", c.d_state},
       {"conv_kernel", c.conv_kernel}, {"groups", c.groups},       {"mlp_ratio", c.mlp_ratio},
       {"max_len", c.max_len},       {"head_mode", to_string(c.head_mode)}, {"num_classes", c.num_classes}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.vocab_size = j.at("vocab_size").get<Index>();
  c.d_model = j.at("d_model").get<Index>();
  c.n_blocks = j.at("n_blocks").get<Index>();
  c.head_dim = j.at("head_dim").get<Index>();
  c.expand = j.at("expand").get<Index>();
  c.d_state = j.at("d_state").get<Index>();
  c.conv_kernel = j.at("conv_kernel").get<Index>();
  c.groups = j.at("groups").get<Index>();
  c.mlp_ratio = j.at("mlp_ratio").get<Index>();
  c.max_len = j.at("max_len").get<Index>();
  c.head_mode = head_mode_from_string(j.at("head_mode").get<std::string>());
  c.num_classes = j.at("num_classes").get<std::array<Index, kNumRanks>>();
}

Index parameter_count(const ModelConfig& c) {
  const Index d = c.d_model, e = c.inner(), h = c.n_heads(), gn = c.groups * c.d_state, m = c.mlp_ratio * d;
  const Index block = 2 * d                          // norm1
                      + d * (2 * e + 2 * gn + h)     // in_proj
                      + c.conv_kernel * e + e        // conv
                      + 3 * h                        // a_log, dt_bias, skip
                      + e * d                        // out_proj
                      + 2 * d                        // norm2
                      + d * m + m + m * d + d;       // mlp
  Index total = c.vocab_size * d + c.n_blocks * block + 2 * d + d * c.vocab_size;
  for (int r = 0; r < kNumRanks; ++r) {
    if (c.head_mode == HeadMode::SingleHead && r != kNumRanks - 1) continue;
    if (c.num_classes[r] > 0) total += d * c.num_classes[r] + c.num_classes[r];
  }
  return total;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 1469598103934665603ull;
  for (char ch : stream) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace {

template <typename S>
Var<S> normal_param(std::mt19937_64& rng, Shape shape, double std) {
  std::normal_distribution<double> dist(0.0, std);
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(dist(rng));
  return Var<S>::parameter(std::move(t));
}

template <typename S>
Var<S> const_param(Shape shape, double value) {
  return Var<S>::parameter(Tensor<S>::constant(std::move(shape), static_cast<S>(value)));
}

}  // namespace

template <typename S>
ModelState<S> init_backbone(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(derive_seed(seed, "backbone"));
  const Index d = config.d_model, e = config.inner(), h = config.n_heads(), gn = config.groups * config.d_state;
  const Index m = config.mlp_ratio * d;
  constexpr double kStd = 0.02;

  ModelState<S> st;
  st.config = config;
  st.embedding = normal_param<S>(rng, {config.vocab_size, d}, kStd);
  for (Index b = 0; b < config.n_blocks; ++b) {
    BlockParams<S> p;
    p.norm1_gain = const_param<S>({d}, 1.0);
    p.norm1_bias = const_param<S>({d}, 0.0);
    p.in_proj = normal_param<S>(rng, {d, 2 * e + 2 * gn + h}, kStd);

    const double bound = 1.0 / std::sqrt(static_cast<double>(config.conv_kernel));
    std::uniform_real_distribution<double> conv(-bound, bound);
    Tensor<S> kernel(Shape{config.conv_kernel, e});
    for (Index i = 0; i < kernel.numel(); ++i) kernel[i] = static_cast<S>(conv(rng));
    p.conv_kernel = Var<S>::parameter(std::move(kernel));
    p.conv_bias = const_param<S>({e}, 0.0);

    // Decay rates A log-uniform in [1, 16] stored as log A; step sizes
    // log-uniform in [1e-3, 1e-1] stored through the inverse softplus.
    std::uniform_real_distribution<double> log_rate(0.0, std::log(16.0));
    std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
    Tensor<S> a_log(Shape{h}), dt_bias(Shape{h});
    for (Index i = 0; i < h; ++i) {
      a_log[i] = static_cast<S>(log_rate(rng));
      const double dt = std::exp(log_dt(rng));
      dt_bias[i] = static_cast<S>(dt + std::log(-std::expm1(-dt)));
    }
    p.a_log = Var<S>::parameter(std::move(a_log));
    p.dt_bias = Var<S>::parameter(std::move(dt_bias));
    p.skip = const_param<S>({h}, 1.0);
    p.out_proj = normal_param<S>(rng, {e, d}, kStd);
    p.norm2_gain = const_param<S>({d}, 1.0);
    p.norm2_bias = const_param<S>({d}, 0.0);
    p.mlp_in = normal_param<S>(rng, {d, m}, kStd);
    p.mlp_in_bias = const_param<S>({m}, 0.0);
    p.mlp_out = normal_param<S>(rng, {m, d}, kStd);
    p.mlp_out_bias = const_param<S>({d}, 0.0);
    st.blocks.push_back(std::move(p));
  }
  st.final_gain = const_param<S>({d}, 1.0);
  st.final_bias = const_param<S>({d}, 0.0);
  st.lm_head = const_param<S>({d, config.vocab_size}, 0.0);
  return st;
}

template <typename S>
void init_heads(ModelState<S>& state, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "heads"));
  state.head_weights.clear();
  state.head_biases.clear();
  for (int r : state.head_ranks()) {
    const Index k = state.config.num_classes[r];
    state.head_weights.push_back(normal_param<S>(rng, {state.config.d_model, k}, 0.02));
    state.head_biases.push_back(const_param<S>({k}, 0.0));
  }
}

template <typename S>
ModelState<S> init_model(const ModelConfig& config, std::uint64_t seed) {
  ModelState<S> st = init_backbone<S>(config, seed);
  init_heads(st, seed);
  return st;
}

template <typename S>
std::vector<int> ModelState<S>::head_ranks() const {
  std::vector<int> ranks;
  for (int r = 0; r < kNumRanks; ++r) {
    if (config.head_mode == HeadMode::SingleHead && r != kNumRanks - 1) continue;
    if (config.num_classes[r] > 0) ranks.push_back(r);
  }
  return ranks;
}

template <typename S>
std::vector<NamedParam<S>> ModelState<S>::backbone_parameters() const {
  std::vector<NamedParam<S>> out;
  out.push_back({"embedding", embedding, true});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& p = blocks[b];
    const std::string pre = "blocks." + std::to_string(b) + ".";
    out.push_back({pre + "norm1_gain", p.norm1_gain, false});
    out.push_back({pre + "norm1_bias", p.norm1_bias, false});
    out.push_back({pre + "in_proj", p.in_proj, true});
    out.push_back({pre + "conv_kernel", p.conv_kernel, true});
    out.push_back({pre + "conv_bias", p.conv_bias, false});
    out.push_back({pre + "a_log", p.a_log, false});
    out.push_back({pre + "dt_bias", p.dt_bias, false});
    out.push_back({pre + "skip", p.skip, false});
    out.push_back({pre + "out_proj", p.out_proj, true});
    out.push_back({pre + "norm2_gain", p.norm2_gain, false});
    out.push_back({pre + "norm2_bias", p.norm2_bias, false});
    out.push_back({pre + "mlp_in", p.mlp_in, true});
    out.push_back({pre + "mlp_in_bias", p.mlp_in_bias, false});
    out.push_back({pre + "mlp_out", p.mlp_out, true});
    out.push_back({pre + "mlp_out_bias", p.mlp_out_bias, false});
  }
  out.push_back({"final_gain", final_gain, false});
  out.push_back({"final_bias", final_bias, false});
  out.push_back({"lm_head", lm_head, true});
  return out;
}

template <typename S>
std::vector<NamedParam<S>> ModelState<S>::head_parameters() const {
  std::vector<NamedParam<S>> out;
  const auto ranks = head_ranks();
  for (std::size_t i = 0; i < head_weights.size(); ++i) {
    const std::string pre = "head." + std::string(kRankNames[ranks[i]]) + ".";
    out.push_back({pre + "weight", head_weights[i], true});
    out.push_back({pre + "bias", head_biases[i], false});
  }
  return out;
}

template <typename S>
std::vector<NamedParam<S>> ModelState<S>::parameters() const {
  auto out = backbone_parameters();
  auto heads = head_parameters();
  out.insert(out.end(), heads.begin(), heads.end());
  return out;
}

template <typename S>
template <typename T>
ModelState<T> ModelState<S>::cast() const {
  auto c = [](const Var<S>& v) { return Var<T>::parameter(v.value().template cast<T>()); };
  ModelState<T> out;
  out.config = config;
  out.embedding = c(embedding);
  for (const auto& p : blocks) {
    out.blocks.push_back({c(p.norm1_gain), c(p.norm1_bias), c(p.in_proj), c(p.conv_kernel), c(p.conv_bias),
                          c(p.a_log), c(p.dt_bias), c(p.skip), c(p.out_proj), c(p.norm2_gain), c(p.norm2_bias),
                          c(p.mlp_in), c(p.mlp_in_bias), c(p.mlp_out), c(p.mlp_out_bias)});
  }
  out.final_gain = c(final_gain);
  out.final_bias = c(final_bias);
  out.lm_head = c(lm_head);
  for (const auto& w : head_weights) out.head_weights.push_back(c(w));
  for (const auto& b : head_biases) out.head_biases.push_back(c(b));
  return out;
}

template <typename S>
TokenBatch<S> make_batch(std::span<const TokenSequence* const> sequences) {
  TokenBatch<S> batch;
  batch.batch = static_cast<Index>(sequences.size());
  for (const auto* s : sequences) batch.seq_len = std::max<Index>(batch.seq_len, static_cast<Index>(s->length()));
  if (batch.batch == 0 || batch.seq_len == 0) throw ContractError("make_batch: empty batch");
  batch.ids.assign(static_cast<std::size_t>(batch.batch * batch.seq_len), kPad);
  batch.mask.assign(batch.ids.size(), S(0));
  for (Index b = 0; b < batch.batch; ++b) {
    const auto& ids = sequences[static_cast<std::size_t>(b)]->ids;
    batch.lengths.push_back(static_cast<Index>(ids.size()));
    for (std::size_t t = 0; t < ids.size(); ++t) {
      const auto pos = static_cast<std::size_t>(b * batch.seq_len) + t;
      batch.ids[pos] = ids[t];
      batch.mask[pos] = S(1);
    }
  }
  return batch;
}

template <typename S>
TokenBatch<S> make_batch(std::span<const TokenSequence> sequences) {
  std::vector<const TokenSequence*> ptrs;
  for (const auto& s : sequences) ptrs.push_back(&s);
  return make_batch<S>(std::span<const TokenSequence* const>(ptrs));
}

template <typename S>
Var<S> block_forward(const BlockParams<S>& p, const ModelConfig& c, const Var<S>& x, Index seq_len) {
  const Index e = c.inner(), gn = c.groups * c.d_state, h = c.n_heads();
  const Index rows = x.value().rows();
  if (seq_len <= 0 || rows % seq_len != 0) throw ShapeError("block_forward: rows not a multiple of seq_len");
  const ScanLayout layout{rows / seq_len, seq_len, h, c.head_dim, c.groups, c.d_state};

  const Var<S> normed = layer_norm(x, p.norm1_gain, p.norm1_bias);
  const Var<S> proj = matmul(normed, p.in_proj);
  const Var<S> gate = slice(proj, 0, e);
  const Var<S> value = silu(causal_depthwise_conv(slice(proj, e, e), p.conv_kernel, p.conv_bias, seq_len));
  const Var<S> B = slice(proj, 2 * e, gn);
  const Var<S> C = slice(proj, 2 * e + gn, gn);
  const Var<S> delta = softplus(add(slice(proj, 2 * e + 2 * gn, h), p.dt_bias));
  const Var<S> a = neg(exp(p.a_log));
  const Var<S> scanned = ssd_scan(value, delta, a, B, C, p.skip, layout);
  const Var<S> mixed = matmul(mul(scanned, silu(gate)), p.out_proj);
  const Var<S> u = add(x, mixed);

  const Var<S> normed2 = layer_norm(u, p.norm2_gain, p.norm2_bias);
  const Var<S> hidden = silu(add(matmul(normed2, p.mlp_in), p.mlp_in_bias));
  return add(u, add(matmul(hidden, p.mlp_out), p.mlp_out_bias));
}

template <typename S>
Var<S> model_forward(const ModelState<S>& state, const TokenBatch<S>& batch) {
  const std::span<const S> mask(batch.mask);
  Var<S> x = mask_rows(embedding_lookup(state.embedding, std::span<const int>(batch.ids)), mask);
  for (const auto& block : state.blocks) x = mask_rows(block_forward(block, state.config, x, batch.seq_len), mask);
  x = mask_rows(layer_norm(x, state.final_gain, state.final_bias), mask);
  return reshape(x, {batch.batch, batch.seq_len, state.config.d_model});
}

template <typename S>
Var<S> lm_logits(const ModelState<S>& state, const Var<S>& hidden) {
  return matmul(hidden, state.lm_head);
}

template <typename S>
Var<S> lm_loss(const ModelState<S>& state, const Var<S>& hidden, const TokenBatch<S>& batch) {
  const Var<S> logits = reshape(lm_logits(state, hidden), {batch.batch * batch.seq_len, state.config.vocab_size});
  std::vector<int> targets(batch.ids.size(), 0);
  std::vector<S> weights(batch.ids.size(), S(0));
  std::size_t count = 0;
  for (Index b = 0; b < batch.batch; ++b) {
    for (Index t = 0; t + 1 < batch.lengths[static_cast<std::size_t>(b)]; ++t) {
      const auto pos = static_cast<std::size_t>(b * batch.seq_len + t);
      targets[pos] = batch.ids[pos + 1];
      weights[pos] = S(1);
      ++count;
    }
  }
  if (count == 0) throw ContractError("lm_loss: batch has no next-token targets");
  for (auto& w : weights) w /= static_cast<S>(count);
  return sparse_cross_entropy(logits, std::span<const int>(targets), std::span<const S>(weights));
}

template <typename S>
std::vector<Var<S>> classify(const ModelState<S>& state, const Var<S>& hidden, const TokenBatch<S>& batch) {
  if (state.head_weights.empty()) throw ContractError("classify: model has no classification heads");
  const Var<S> flat = reshape(hidden, {batch.batch * batch.seq_len, state.config.d_model});
  const Var<S> pooled = masked_mean_pool(flat, std::span<const S>(batch.mask), batch.seq_len);
  std::vector<Var<S>> logits;
  for (std::size_t i = 0; i < state.head_weights.size(); ++i)
    logits.push_back(add(matmul(pooled, state.head_weights[i]), state.head_biases[i]));
  return logits;
}

#define BSSM_INSTANTIATE_MODEL(S)                                                                            \
  template struct ModelState<S>;                                                                             \
  template ModelState<S> init_backbone<S>(const ModelConfig&, std::uint64_t);                               \
  template void init_heads<S>(ModelState<S>&, std::uint64_t);                                                \
  template ModelState<S> init_model<S>(const ModelConfig&, std::uint64_t);                                  \
  template TokenBatch<S> make_batch<S>(std::span<const TokenSequence* const>);                              \
  template TokenBatch<S> make_batch<S>(std::span<const TokenSequence>);                                     \
  template Var<S> block_forward<S>(const BlockParams<S>&, const ModelConfig&, const Var<S>&, Index);        \
  template Var<S> model_forward<S>(const ModelState<S>&, const TokenBatch<S>&);                             \
  template Var<S> lm_logits<S>(const ModelState<S>&, const Var<S>&);                                        \
  template Var<S> lm_loss<S>(const ModelState<S>&, const Var<S>&, const TokenBatch<S>&);                    \
  template std::vector<Var<S>> classify<S>(const ModelState<S>&, const Var<S>&, const TokenBatch<S>&);

BSSM_INSTANTIATE_MODEL(float)
BSSM_INSTANTIATE_MODEL(double)

template ModelState<double> ModelState<float>::cast<double>() const;
template ModelState<float> ModelState<double>::cast<float>() const;
template ModelState<float> ModelState<float>::cast<float>() const;
template ModelState<double> ModelState<double>::cast<double>() const;

}  // namespace bssm
