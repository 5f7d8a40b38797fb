#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bssm/model.hpp"
#include "bssm/seqdata.hpp"
#include "bssm/taxonomy.hpp"
#include "bssm/tokenize.hpp"
#include "bssm/trainer.hpp"
#include "json.hpp"

namespace bssm {

struct TokenizerSettings {
  TokenizerKind kind = TokenizerKind::Bpe;
  int k = 6;
  std::size_t vocab_size = 512;
  /// Sequences are cut to this many bases before tokenization.
  std::size_t max_len = 1024;
};

struct EvalSettings {
  std::string method = "model";  // model | besthit
  int k = 8;
  int batch_size = 32;
  LiftMode lift = LiftMode::ProbabilitySum;
  bool timing = true;
};

struct PathSettings {
  std::string input_fasta, train, val, test, query, vocab, taxonomy, pretrained, checkpoint, resume;
};

/// Every module's settings plus file paths. Built from the defaults, an
/// optional JSON file, then dotted `--set` overrides.
struct RunConfig {
  std::uint64_t seed = 0;
  PathSettings paths;
  FilterConfig filter;
  SplitFractions split;
  SynthConfig synth;
  TokenizerSettings tokenizer;
  EvalSettings eval;
  std::vector<double> ttest_a, ttest_b;
  /// The merged document, written as the resolved-config snapshot.
  nlohmann::json resolved;
};

nlohmann::json default_config_json();

/// Applies `overrides` ("a.b=VALUE", VALUE parsed as JSON or else taken as a
/// string) on top of the file. Throws ConfigError listing every unknown key,
/// type mismatch and invalid value.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed = std::nullopt);

/// Train settings for a stage; unset lr / max_epochs take the stage defaults.
TrainConfig train_config_for(const RunConfig& cfg, Stage stage);
/// Stage named by train.stage, or `fallback` when it is "auto".
Stage configured_stage(const RunConfig& cfg, Stage fallback);
ModelConfig model_config_for(const RunConfig& cfg, Index vocab_size);

}  // namespace bssm
