#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bssm/autograd.hpp"
#include "bssm/label.hpp"
#include "bssm/scan.hpp"
#include "bssm/tokenize.hpp"
#include "json.hpp"

namespace bssm {

enum class HeadMode { MultiHead, SingleHead };

std::string to_string(HeadMode m);
HeadMode head_mode_from_string(const std::string& s);

struct ModelConfig {
  Index vocab_size = 0;
  Index d_model = 64;
  Index n_blocks = 2;
  Index head_dim = 16;
  Index expand = 2;
  Index d_state = 64;
  Index conv_kernel = 4;
  /// B/C groups shared by the heads.
  Index groups = 1;
  Index mlp_ratio = 4;
  Index max_len = 1024;
  HeadMode head_mode = HeadMode::MultiHead;
  /// Classes per rank for the classification heads; all zero means the
  /// model only carries the language-model head.
  std::array<Index, kNumRanks> num_classes{};

  Index inner() const { return expand * d_model; }
  Index n_heads() const { return inner() / head_dim; }
  bool has_classifier() const;
  void validate() const;
  /// Names of backbone fields that differ (used for checkpoint compatibility).
  std::vector<std::string> backbone_mismatches(const ModelConfig& other) const;

  static ModelConfig preset(const std::string& name, Index vocab_size);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Exact trainable-scalar count for a configuration.
Index parameter_count(const ModelConfig& config);

template <typename S>
struct NamedParam {
  std::string name;
  Var<S> var;
  bool decay;
};

template <typename S>
struct BlockParams {
  Var<S> norm1_gain, norm1_bias;
  Var<S> in_proj;  // d x (2E + 2GN + H): gate | value | B | C | dt
  Var<S> conv_kernel, conv_bias;
  Var<S> a_log, dt_bias, skip;
  Var<S> out_proj;
  Var<S> norm2_gain, norm2_bias;
  Var<S> mlp_in, mlp_in_bias, mlp_out, mlp_out_bias;
};

template <typename S>
struct ModelState {
  ModelConfig config;
  Var<S> embedding;
  std::vector<BlockParams<S>> blocks;
  Var<S> final_gain, final_bias;
  Var<S> lm_head;
  /// One (weight, bias) pair per classified rank; MultiHead has seven,
  /// SingleHead only species.
  std::vector<Var<S>> head_weights, head_biases;

  std::vector<NamedParam<S>> parameters() const;
  std::vector<NamedParam<S>> backbone_parameters() const;
  std::vector<NamedParam<S>> head_parameters() const;
  /// Ranks that own a classification head, in head order.
  std::vector<int> head_ranks() const;

  template <typename T>
  ModelState<T> cast() const;
};

/// Seeds derived per component so a backbone and its heads can be
/// initialized independently.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

template <typename S>
ModelState<S> init_backbone(const ModelConfig& config, std::uint64_t seed);
/// Fresh classification heads for `config.num_classes` (backbone untouched).
template <typename S>
void init_heads(ModelState<S>& state, std::uint64_t seed);
template <typename S>
ModelState<S> init_model(const ModelConfig& config, std::uint64_t seed);

/// Right-padded token ids (batch x seq_len) with a per-position mask.
template <typename S>
struct TokenBatch {
  Index batch = 0;
  Index seq_len = 0;
  std::vector<int> ids;
  std::vector<S> mask;
  std::vector<Index> lengths;
};

template <typename S>
TokenBatch<S> make_batch(std::span<const TokenSequence* const> sequences);
template <typename S>
TokenBatch<S> make_batch(std::span<const TokenSequence> sequences);

/// Pre-norm residual block: u = x + Mixer(LN(x)); y = u + MLP(LN(u)).
template <typename S>
Var<S> block_forward(const BlockParams<S>& params, const ModelConfig& config, const Var<S>& x, Index seq_len);

/// Embedding, blocks (padding rows zeroed after each), final norm.
/// Result shape (batch, seq_len, d_model).
template <typename S>
Var<S> model_forward(const ModelState<S>& state, const TokenBatch<S>& batch);

/// (batch, seq_len, vocab) next-token logits.
template <typename S>
Var<S> lm_logits(const ModelState<S>& state, const Var<S>& hidden);

/// Mean next-token cross-entropy over positions whose target is not PAD.
template <typename S>
Var<S> lm_loss(const ModelState<S>& state, const Var<S>& hidden, const TokenBatch<S>& batch);

/// Mean-pooled representation fed through the classification heads. One
/// logit matrix (batch x classes) per entry of head_ranks().
template <typename S>
std::vector<Var<S>> classify(const ModelState<S>& state, const Var<S>& hidden, const TokenBatch<S>& batch);

}  // namespace bssm
