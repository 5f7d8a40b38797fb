#include "bssm/run_config.hpp"

#include <cmath>
#include <fstream>
#include <functional>

#include "bssm/error.hpp"

namespace bssm {

using nlohmann::json;

json default_config_json() {
  const SynthConfig s;
  const FilterConfig f;
  const SplitFractions sp;
  const ModelConfig m;
  const TrainConfig t = TrainConfig::defaults(Stage::Pretrain);
  return {
      {"seed", 0},
      {"paths",
       {{"input_fasta", ""}, {"train", ""}, {"val", ""}, {"test", ""}, {"query", ""}, {"vocab", ""},
        {"taxonomy", ""}, {"pretrained", ""}, {"checkpoint", ""}, {"resume", ""}}},
      {"filter",
       {{"length_sigma", f.length_sigma},
        {"max_ambiguous_fraction", f.max_ambiguous_fraction},
        {"min_class_size", f.min_class_size}}},
      {"split", {{"train", sp.train}, {"val", sp.val}, {"test", sp.test}}},
      {"synth",
       {{"rank_fanouts", s.rank_fanouts},
        {"base_length", s.base_length},
        {"length_jitter", s.length_jitter},
        {"mutation_rate_per_rank", s.mutation_rate_per_rank},
        {"sample_mutation_rate", s.sample_mutation_rate},
        {"samples_per_species", s.samples_per_species},
        {"label_dropout_per_rank", s.label_dropout_per_rank},
        {"max_species", s.max_species}}},
      {"tokenizer", {{"kind", "bpe"}, {"k", 6}, {"vocab_size", 512}, {"max_len", 1024}}},
      {"model",
       {{"preset", nullptr},
        {"d_model", m.d_model},
        {"n_blocks", m.n_blocks},
        {"head_dim", m.head_dim},
        {"expand", m.expand},
        {"d_state", m.d_state},
        {"conv_kernel", m.conv_kernel},
        {"groups", m.groups},
        {"mlp_ratio", m.mlp_ratio}}},
      {"train",
       {{"stage", "auto"},
        {"lr", nullptr},
        {"max_epochs", nullptr},
        {"weight_decay", t.weight_decay},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"adam_eps", t.adam_eps},
        {"patience", t.patience},
        {"batch_size", t.batch_size},
        {"smoothing_mode", to_string(t.smoothing_mode)},
        {"epsilon", t.epsilon},
        {"weighted_loss", t.weighted_loss},
        {"head_mode", to_string(t.head_mode)},
        {"wall_clock_limit", nullptr},
        {"max_steps", t.max_steps}}},
      {"eval", {{"method", "model"}, {"k", 8}, {"batch_size", 32}, {"lift", "probability_sum"}, {"timing", true}}},
      {"ttest", {{"a", json::array()}, {"b", json::array()}}},
  };
}

namespace {

const char* type_word(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

/// Expected types of slots whose default is null.
const json& nullable_types() {
  static const json t = {{"model.preset", ""}, {"train.lr", 0.0}, {"train.max_epochs", 0}, {"train.wall_clock_limit", 0.0}};
  return t;
}

bool compatible(const json& def, const json& v) {
  if (def.is_null() || v.is_null()) return true;  // explicit resets
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  if (def.is_object()) return v.is_object();
  return false;
}

/// Merges `src` into `dst` following the shape of `schema`.
void merge(json& dst, const json& schema, const json& src, const std::string& prefix, std::vector<std::string>& errs) {
  if (!src.is_object()) {
    errs.push_back((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
    return;
  }
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) {
      errs.push_back("unknown key '" + key + "'");
      continue;
    }
    const json& def = schema.at(it.key()).is_null() && nullable_types().contains(key) ? nullable_types().at(key)
                                                                                     : schema.at(it.key());
    if (def.is_object()) {
      merge(dst[it.key()], def, it.value(), key, errs);
    } else if (!compatible(def, it.value())) {
      errs.push_back("key '" + key + "' expects " + type_word(def) + ", got " + type_word(it.value()));
    } else {
      dst[it.key()] = it.value();
    }
  }
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

template <typename T>
void read(const json& doc, const char* section, const char* key, T& out, std::vector<std::string>& errs) {
  try {
    const json& v = doc.at(section).at(key);
    if (!v.is_null()) out = v.get<T>();
  } catch (const json::exception& e) {
    errs.push_back(std::string(section) + "." + key + ": " + e.what());
  }
}

void collect(std::vector<std::string>& errs, const std::function<void()>& check) {
  try {
    check();
  } catch (const ConfigError& e) {
    errs.emplace_back(e.what());
  }
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
  return out;
}

}  // namespace

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed) {
  const json schema = default_config_json();
  json doc = schema;
  std::vector<std::string> errs;

  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    json user;
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + file->string() + " is not valid JSON: " + e.what());
    }
    merge(doc, schema, user, "", errs);
  }

  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      errs.push_back("override '" + ov + "' is not KEY=VALUE");
      continue;
    }
    const std::string path = ov.substr(0, eq);
    json nested = parse_override_value(ov.substr(eq + 1));
    std::size_t end = path.size();
    while (true) {
      const std::size_t dot = path.rfind('.', end - 1);
      const std::string part = path.substr(dot == std::string::npos ? 0 : dot + 1,
                                           end - (dot == std::string::npos ? 0 : dot + 1));
      nested = json{{part, nested}};
      if (dot == std::string::npos) break;
      end = dot;
    }
    merge(doc, schema, nested, "", errs);
  }
  if (seed) doc["seed"] = *seed;
  // Structural problems leave the default in place, so value checks below
  // still run and every violation is reported together.

  RunConfig c;
  c.resolved = doc;
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    errs.push_back("seed must be a non-negative integer");
  }

  auto path = [&](const char* key, std::string& out) { read(doc, "paths", key, out, errs); };
  path("input_fasta", c.paths.input_fasta);
  path("train", c.paths.train);
  path("val", c.paths.val);
  path("test", c.paths.test);
  path("query", c.paths.query);
  path("vocab", c.paths.vocab);
  path("taxonomy", c.paths.taxonomy);
  path("pretrained", c.paths.pretrained);
  path("checkpoint", c.paths.checkpoint);
  path("resume", c.paths.resume);

  read(doc, "filter", "length_sigma", c.filter.length_sigma, errs);
  read(doc, "filter", "max_ambiguous_fraction", c.filter.max_ambiguous_fraction, errs);
  read(doc, "filter", "min_class_size", c.filter.min_class_size, errs);
  collect(errs, [&] { c.filter.validate(); });

  read(doc, "split", "train", c.split.train, errs);
  read(doc, "split", "val", c.split.val, errs);
  read(doc, "split", "test", c.split.test, errs);
  if (!(c.split.train > 0 && c.split.val >= 0 && c.split.test >= 0))
    errs.push_back("split fractions must be non-negative with split.train > 0");
  if (std::abs(c.split.train + c.split.val + c.split.test - 1.0) > 1e-9) errs.push_back("split fractions must sum to 1");

  read(doc, "synth", "rank_fanouts", c.synth.rank_fanouts, errs);
  read(doc, "synth", "base_length", c.synth.base_length, errs);
  read(doc, "synth", "length_jitter", c.synth.length_jitter, errs);
  read(doc, "synth", "mutation_rate_per_rank", c.synth.mutation_rate_per_rank, errs);
  read(doc, "synth", "sample_mutation_rate", c.synth.sample_mutation_rate, errs);
  read(doc, "synth", "samples_per_species", c.synth.samples_per_species, errs);
  read(doc, "synth", "label_dropout_per_rank", c.synth.label_dropout_per_rank, errs);
  read(doc, "synth", "max_species", c.synth.max_species, errs);
  c.synth.seed = c.seed;
  collect(errs, [&] { c.synth.validate(); });

  std::string kind = "bpe";
  read(doc, "tokenizer", "kind", kind, errs);
  collect(errs, [&] { c.tokenizer.kind = tokenizer_kind_from_string(kind); });
  read(doc, "tokenizer", "k", c.tokenizer.k, errs);
  read(doc, "tokenizer", "vocab_size", c.tokenizer.vocab_size, errs);
  read(doc, "tokenizer", "max_len", c.tokenizer.max_len, errs);
  if (c.tokenizer.k < 1 || c.tokenizer.k > 10) errs.push_back("tokenizer.k must lie in [1, 10]");
  if (c.tokenizer.max_len < 1) errs.push_back("tokenizer.max_len must be >= 1");

  std::string method = "model", lift = "probability_sum";
  read(doc, "eval", "method", method, errs);
  read(doc, "eval", "k", c.eval.k, errs);
  read(doc, "eval", "batch_size", c.eval.batch_size, errs);
  read(doc, "eval", "lift", lift, errs);
  read(doc, "eval", "timing", c.eval.timing, errs);
  if (method != "model" && method != "besthit") errs.push_back("eval.method must be model or besthit");
  c.eval.method = method;
  collect(errs, [&] { c.eval.lift = lift_mode_from_string(lift); });
  if (c.eval.k < 1 || c.eval.k > 32) errs.push_back("eval.k must lie in [1, 32]");
  if (c.eval.batch_size < 1) errs.push_back("eval.batch_size must be >= 1");

  read(doc, "ttest", "a", c.ttest_a, errs);
  read(doc, "ttest", "b", c.ttest_b, errs);

  // Train and model sections are resolved per subcommand; validate them
  // here so every violation is reported up front.
  collect(errs, [&] {
    const std::string st = doc.at("train").at("stage").get<std::string>();
    if (st != "auto") stage_from_string(st);
    train_config_for(c, Stage::Pretrain).validate();
  });
  collect(errs, [&] { model_config_for(c, kNumSpecials + 4).validate(); });

  if (!errs.empty()) throw ConfigError("invalid config: " + join(errs));
  return c;
}

Stage configured_stage(const RunConfig& cfg, Stage fallback) {
  const std::string st = cfg.resolved.at("train").at("stage").get<std::string>();
  return st == "auto" ? fallback : stage_from_string(st);
}

TrainConfig train_config_for(const RunConfig& cfg, Stage stage) {
  const json& t = cfg.resolved.at("train");
  TrainConfig c = TrainConfig::defaults(stage);
  std::vector<std::string> errs;
  try {
    if (!t.at("lr").is_null()) c.lr = t.at("lr").get<double>();
    if (!t.at("max_epochs").is_null()) c.max_epochs = t.at("max_epochs").get<int>();
    c.weight_decay = t.at("weight_decay").get<double>();
    c.beta1 = t.at("beta1").get<double>();
    c.beta2 = t.at("beta2").get<double>();
    c.adam_eps = t.at("adam_eps").get<double>();
    c.patience = t.at("patience").get<int>();
    c.batch_size = t.at("batch_size").get<int>();
    c.epsilon = t.at("epsilon").get<double>();
    c.weighted_loss = t.at("weighted_loss").get<bool>();
    c.max_steps = t.at("max_steps").get<long>();
    if (!t.at("wall_clock_limit").is_null()) c.wall_clock_limit = t.at("wall_clock_limit").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  collect(errs, [&] { c.smoothing_mode = smoothing_mode_from_string(t.at("smoothing_mode").get<std::string>()); });
  collect(errs, [&] { c.head_mode = head_mode_from_string(t.at("head_mode").get<std::string>()); });
  collect(errs, [&] { c.validate(); });
  if (!errs.empty()) throw ConfigError(join(errs));
  c.seed = cfg.seed;
  return c;
}

ModelConfig model_config_for(const RunConfig& cfg, Index vocab_size) {
  const json& m = cfg.resolved.at("model");
  ModelConfig c;
  try {
    if (!m.at("preset").is_null()) {
      c = ModelConfig::preset(m.at("preset").get<std::string>(), vocab_size);
    } else {
      c.d_model = m.at("d_model").get<Index>();
      c.n_blocks = m.at("n_blocks").get<Index>();
      c.head_dim = m.at("head_dim").get<Index>();
      c.d_state = m.at("d_state").get<Index>();
    }
    c.expand = m.at("expand").get<Index>();
    c.conv_kernel = m.at("conv_kernel").get<Index>();
    c.groups = m.at("groups").get<Index>();
    c.mlp_ratio = m.at("mlp_ratio").get<Index>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  c.vocab_size = vocab_size;
  c.max_len = static_cast<Index>(cfg.tokenizer.max_len) + 2;
  return c;
}

}  // namespace bssm
