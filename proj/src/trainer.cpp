#include "bssm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "bssm/adamw.hpp"
#include "bssm/error.hpp"

namespace bssm {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Finetune: return "finetune";
    default: return "scratch";
  }
}

Stage stage_from_string(const std::string& s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "finetune") return Stage::Finetune;
  if (s == "scratch") return Stage::Scratch;
  throw ConfigError("unknown stage '" + s + "' (expected pretrain, finetune or scratch)");
}

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::Pretrain: c.lr = 8e-4, c.max_epochs = 15; break;
    case Stage::Finetune: c.lr = 8e-5, c.max_epochs = 12; break;
    case Stage::Scratch: c.lr = 8e-4, c.max_epochs = 7; break;
  }
  return c;
}

void TrainConfig::validate() const {
  std::string bad;
  auto need = [&](bool ok, const char* what) {
    if (!ok) bad += std::string(bad.empty() ? "" : "; ") + what;
  };
  need(lr > 0, "train.lr must be > 0");
  need(max_epochs >= 1, "train.max_epochs must be >= 1");
  need(weight_decay >= 0, "train.weight_decay must be >= 0");
  need(beta1 >= 0 && beta1 < 1, "train.beta1 must lie in [0,1)");
  need(beta2 >= 0 && beta2 < 1, "train.beta2 must lie in [0,1)");
  need(adam_eps > 0, "train.adam_eps must be > 0");
  need(patience >= 0, "train.patience must be >= 0");
  need(batch_size >= 1, "train.batch_size must be >= 1");
  need(epsilon >= 0 && epsilon < 1, "train.epsilon must lie in [0,1)");
  need(!wall_clock_limit || *wall_clock_limit > 0, "train.wall_clock_limit must be > 0");
  need(max_steps >= 0, "train.max_steps must be >= 0");
  if (!bad.empty()) throw ConfigError(bad);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"stage", to_string(c.stage)},
       {"lr", c.lr},
       {"max_epochs", c.max_epochs},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"patience", c.patience},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"smoothing_mode", to_string(c.smoothing_mode)},
       {"epsilon", c.epsilon},
       {"weighted_loss", c.weighted_loss},
       {"head_mode", to_string(c.head_mode)},
       {"wall_clock_limit", c.wall_clock_limit ? nlohmann::json(*c.wall_clock_limit) : nlohmann::json()},
       {"max_steps", c.max_steps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.stage = stage_from_string(j.at("stage").get<std::string>());
  c.lr = j.at("lr").get<double>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.patience = j.at("patience").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.smoothing_mode = smoothing_mode_from_string(j.at("smoothing_mode").get<std::string>());
  c.epsilon = j.at("epsilon").get<double>();
  c.weighted_loss = j.at("weighted_loss").get<bool>();
  c.head_mode = head_mode_from_string(j.at("head_mode").get<std::string>());
  const auto& w = j.at("wall_clock_limit");
  c.wall_clock_limit = w.is_null() ? std::nullopt : std::optional<double>(w.get<double>());
  c.max_steps = j.at("max_steps").get<long>();
}

namespace {

using Clock = std::chrono::steady_clock;

template <typename T>
std::vector<const T*> gather(const std::vector<T>& items, std::span<const std::size_t> idx) {
  std::vector<const T*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&items[i]);
  return out;
}

TokenBatch<float> batch_of(const std::vector<TokenSequence>& data, std::span<const std::size_t> idx) {
  const auto ptrs = gather(data, idx);
  return make_batch<float>(std::span<const TokenSequence* const>(ptrs));
}

/// Batch losses and validation for one training stage.
struct LoopSpec {
  std::vector<NamedParam<float>> optimized;
  std::size_t n_train = 0;
  std::function<Var<float>(std::span<const std::size_t>)> batch_loss;
  /// Returns at least {"loss": value}.
  std::function<nlohmann::json()> validate;
};

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

void log_line(std::ostream* out, int epoch, const char* split, double loss, double lr, double wall_ms,
              const nlohmann::json& extra = nlohmann::json::object()) {
  if (!out) return;
  nlohmann::json j = {{"epoch", epoch}, {"split", split}, {"loss", loss}, {"lr", lr}, {"wall_ms", wall_ms}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  *out << j.dump() << '\n';
  out->flush();
}

/// Shared epoch loop: seeded shuffling, AdamW, early stopping on validation
/// loss, per-epoch checkpoints. `ckpt` arrives with its static fields set.
void run_loop(ModelState<float>& model, const LoopSpec& spec, const TrainConfig& cfg, const TrainHooks& hooks,
              Checkpoint& ckpt, const Checkpoint* resume) {
  const auto all = model.parameters();
  AdamW<float> opt(spec.optimized, {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});
  std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle"));
  TrainProgress progress;

  if (resume) {
    restore(resume->params, all);
    progress = resume->progress;
    ckpt.best = resume->best;
    if (resume->adam_m.size() != spec.optimized.size() || resume->adam_v.size() != spec.optimized.size())
      throw CompatibilityError("resume checkpoint optimizer state does not match the model");
    for (std::size_t i = 0; i < spec.optimized.size(); ++i) {
      if (resume->adam_m[i].first != spec.optimized[i].name)
        throw CompatibilityError("resume checkpoint optimizer state out of order at '" + spec.optimized[i].name + "'");
      opt.first_moments()[i] = resume->adam_m[i].second;
      opt.second_moments()[i] = resume->adam_v[i].second;
    }
    opt.set_step_count(progress.step);
    std::istringstream s(progress.rng_state);
    s >> rng;
    if (!s) throw CompatibilityError("resume checkpoint has an unreadable RNG state");
  } else {
    ckpt.best = snapshot(all);
  }

  auto fill_state = [&] {
    ckpt.progress = progress;
    ckpt.progress.rng_state = rng_to_string(rng);
    ckpt.params = snapshot(all);
    ckpt.adam_m.clear();
    ckpt.adam_v.clear();
    for (std::size_t i = 0; i < spec.optimized.size(); ++i) {
      ckpt.adam_m.emplace_back(spec.optimized[i].name, opt.first_moments()[i]);
      ckpt.adam_v.emplace_back(spec.optimized[i].name, opt.second_moments()[i]);
    }
  };

  const auto start = Clock::now();
  const auto elapsed_ms = [&] { return std::chrono::duration<double, std::milli>(Clock::now() - start).count(); };
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  while (!progress.finished && progress.epoch < cfg.max_epochs) {
    const int epoch = progress.epoch + 1;
    std::vector<std::size_t> order(spec.n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    double train_sum = 0;
    std::size_t seen = 0;
    std::string halt;
    for (std::size_t s = 0; s < order.size(); s += bs) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(bs, order.size() - s));
      Var<float> loss = spec.batch_loss(idx);
      backward(loss);
      opt.step();
      opt.zero_grad();
      ++progress.step;
      train_sum += static_cast<double>(loss.value().item()) * static_cast<double>(idx.size());
      seen += idx.size();
      if (cfg.max_steps > 0 && progress.step >= cfg.max_steps) {
        halt = "max_steps";
        break;
      }
      if (cfg.wall_clock_limit && elapsed_ms() > *cfg.wall_clock_limit * 1000.0) {
        halt = "wall_clock";
        break;
      }
    }

    const double train_loss = train_sum / static_cast<double>(std::max<std::size_t>(seen, 1));
    nlohmann::json val = spec.validate();
    const double val_loss = val.at("loss").get<double>();
    nlohmann::json extra = val;
    extra.erase("loss");
    log_line(hooks.metrics_log, epoch, "train", train_loss, cfg.lr, elapsed_ms());
    log_line(hooks.metrics_log, epoch, "val", val_loss, cfg.lr, elapsed_ms(), extra);

    nlohmann::json record = {{"epoch", epoch}, {"step", progress.step}, {"train_loss", train_loss},
                             {"val_loss", val_loss}};
    for (auto it = extra.begin(); it != extra.end(); ++it) record["val_" + it.key()] = it.value();
    progress.history.push_back(record);
    progress.epoch = epoch;

    if (val_loss < progress.best_val_loss) {
      progress.best_val_loss = val_loss;
      progress.best_epoch = epoch;
      progress.bad_epochs = 0;
      ckpt.best = snapshot(all);
    } else {
      ++progress.bad_epochs;
      if (progress.bad_epochs >= cfg.patience) halt = halt.empty() ? "early_stopping" : halt;
    }
    if (halt.empty() && progress.epoch >= cfg.max_epochs) halt = "max_epochs";
    if (!halt.empty()) {
      progress.finished = true;
      progress.stop_reason = halt;
    }

    fill_state();
    if (hooks.checkpoint_dir) save_checkpoint(ckpt, *hooks.checkpoint_dir);
    if (!progress.finished && hooks.interrupt_after_epoch && hooks.interrupt_after_epoch(epoch)) break;
  }
  if (progress.finished && ckpt.params.empty()) fill_state();  // resumed an already finished run
  restore(ckpt.best, all);
}

double lm_loss_over(const ModelState<float>& model, const std::vector<TokenSequence>& data, int batch_size) {
  NoGradGuard guard;
  double total = 0;
  double count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < data.size(); s += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = s; i < std::min(data.size(), s + static_cast<std::size_t>(batch_size)); ++i) idx.push_back(i);
    const TokenBatch<float> batch = batch_of(data, idx);
    double n = 0;
    for (Index len : batch.lengths) n += static_cast<double>(std::max<Index>(len - 1, 0));
    if (n == 0) continue;
    const Var<float> hidden = model_forward(model, batch);
    total += static_cast<double>(lm_loss(model, hidden, batch).value().item()) * n;
    count += n;
  }
  if (count == 0) throw ContractError("lm loss: no next-token targets in dataset");
  return total / count;
}

std::vector<NamedParam<float>> without(std::vector<NamedParam<float>> params, const std::string& name) {
  std::erase_if(params, [&](const NamedParam<float>& p) { return p.name == name; });
  return params;
}

}  // namespace

double evaluate_lm_loss(const ModelState<float>& model, const std::vector<TokenSequence>& data, int batch_size) {
  return lm_loss_over(model, data, batch_size);
}

TrainResult pretrain(const std::vector<TokenSequence>& train, const std::vector<TokenSequence>& val,
                     const Vocab& vocab, const ModelConfig& model_cfg, const TrainConfig& cfg,
                     const TrainHooks& hooks, const Checkpoint* resume) {
  cfg.validate();
  if (cfg.stage != Stage::Pretrain) throw ConfigError("pretrain requires train.stage = pretrain");
  if (train.empty()) throw ConfigError("pretrain: empty training dataset");
  ModelConfig mc = model_cfg;
  mc.num_classes.fill(0);
  if (mc.vocab_size != static_cast<Index>(vocab.size()))
    throw ConfigError("model.vocab_size (" + std::to_string(mc.vocab_size) + ") differs from the tokenizer (" +
                      std::to_string(vocab.size()) + ")");

  TrainResult result;
  result.model = init_backbone<float>(mc, cfg.seed);
  const std::vector<TokenSequence>& val_set = val.empty() ? train : val;

  LoopSpec spec;
  spec.optimized = result.model.parameters();
  spec.n_train = train.size();
  spec.batch_loss = [&](std::span<const std::size_t> idx) {
    const TokenBatch<float> batch = batch_of(train, idx);
    return lm_loss(result.model, model_forward(result.model, batch), batch);
  };
  spec.validate = [&] { return nlohmann::json{{"loss", lm_loss_over(result.model, val_set, cfg.batch_size)}}; };

  Checkpoint& ck = result.checkpoint;
  ck.stage = to_string(Stage::Pretrain);
  ck.model = mc;
  ck.train_config = cfg;
  ck.vocab = vocab;
  run_loop(result.model, spec, cfg, hooks, ck, resume);
  return result;
}

ModelState<float> finetune_initial_model(const Vocab& vocab, const Taxonomy& taxonomy, const ModelConfig& model_cfg,
                                         const TrainConfig& cfg, const Checkpoint* pretrained) {
  ModelConfig mc = model_cfg;
  mc.head_mode = cfg.head_mode;
  const auto counts = taxonomy.class_counts();
  for (int r = 0; r < kNumRanks; ++r) mc.num_classes[r] = counts[r];
  if (mc.vocab_size != static_cast<Index>(vocab.size()))
    throw ConfigError("model.vocab_size (" + std::to_string(mc.vocab_size) + ") differs from the tokenizer (" +
                      std::to_string(vocab.size()) + ")");

  ModelState<float> st = init_backbone<float>(mc, cfg.seed);
  if (cfg.stage == Stage::Finetune) {
    if (!pretrained) throw ConfigError("finetune requires a pretrained checkpoint (stage scratch trains without one)");
    std::vector<std::string> mismatched;
    if (!(pretrained->vocab == vocab)) mismatched.push_back("tokenizer");
    for (auto& f : mc.backbone_mismatches(pretrained->model)) mismatched.push_back("model." + f);
    if (!mismatched.empty()) {
      std::string list;
      for (const auto& f : mismatched) list += (list.empty() ? "" : ", ") + f;
      throw CompatibilityError("pretrained checkpoint is incompatible; mismatched fields: " + list);
    }
    restore(pretrained->best.empty() ? pretrained->params : pretrained->best, st.backbone_parameters());
  }
  init_heads(st, cfg.seed);
  return st;
}

TrainResult finetune(const LabelledData& train, const LabelledData& val, const Vocab& vocab,
                     const Taxonomy& taxonomy, const ModelConfig& model_cfg, const TrainConfig& cfg,
                     const Checkpoint* pretrained, const TrainHooks& hooks, const Checkpoint* resume) {
  cfg.validate();
  if (cfg.stage == Stage::Pretrain) throw ConfigError("finetune requires train.stage = finetune or scratch");
  if (train.tokens.empty()) throw ConfigError("finetune: empty training dataset");
  if (train.tokens.size() != train.labels.size() || val.tokens.size() != val.labels.size())
    throw ContractError("finetune: tokens and labels are not aligned");

  bool any_species = false, any_label = false;
  for (const auto& l : train.labels) {
    any_species = any_species || l.labelled(kNumRanks - 1);
    any_label = any_label || l.labelled(0);
  }
  if (cfg.head_mode == HeadMode::SingleHead && !any_species)
    throw ConfigError("single-head training needs species labels, but no training record has one");
  if (!any_label) throw ConfigError("finetune: no training record carries any label");

  TrainResult result;
  // A resumed run restores every tensor, so the pretrained backbone is not needed.
  TrainConfig init_cfg = cfg;
  if (resume) init_cfg.stage = Stage::Scratch;
  result.model = finetune_initial_model(vocab, taxonomy, model_cfg, init_cfg, pretrained);
  ModelState<float>& model = result.model;

  auto targets_for = [&](const std::vector<TaxonomicLabel>& labels) {
    std::vector<TargetDistribution> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(smooth_target(taxonomy, known_prefix(taxonomy, l), cfg.smoothing_mode, cfg.epsilon));
    return out;
  };
  const auto train_targets = targets_for(train.labels);
  const bool use_val = !val.tokens.empty();
  const LabelledData& vset = use_val ? val : train;
  const auto val_targets = use_val ? targets_for(val.labels) : train_targets;
  const ClassWeights weights = class_weights(taxonomy);
  const ClassWeights* wptr = cfg.weighted_loss ? &weights : nullptr;
  const std::vector<int> ranks = model.head_ranks();

  LoopSpec spec;
  spec.optimized = without(model.parameters(), "lm_head");
  spec.n_train = train.tokens.size();
  spec.batch_loss = [&](std::span<const std::size_t> idx) {
    const TokenBatch<float> batch = batch_of(train.tokens, idx);
    const auto tptrs = gather(train_targets, idx);
    LossStats stats;
    Var<float> loss = weighted_cross_entropy(classify(model, model_forward(model, batch), batch), ranks,
                                             std::span<const TargetDistribution* const>(tptrs), wptr, &stats);
    result.all_masked_samples += stats.all_masked;
    return loss;
  };
  spec.validate = [&] {
    NoGradGuard guard;
    double total = 0;
    std::size_t correct = 0, labelled = 0;
    const int species_head = static_cast<int>(ranks.size()) - 1;
    std::vector<std::size_t> idx;
    const std::size_t n = vset.tokens.size(), bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t s = 0; s < n; s += bs) {
      idx.clear();
      for (std::size_t i = s; i < std::min(n, s + bs); ++i) idx.push_back(i);
      const TokenBatch<float> batch = batch_of(vset.tokens, idx);
      const auto tptrs = gather(val_targets, idx);
      const auto logits = classify(model, model_forward(model, batch), batch);
      total += static_cast<double>(weighted_cross_entropy(logits, ranks,
                                                          std::span<const TargetDistribution* const>(tptrs), wptr)
                                       .value()
                                       .item()) *
               static_cast<double>(idx.size());
      if (ranks.back() != kNumRanks - 1) continue;
      const auto lm = logits[static_cast<std::size_t>(species_head)].value().matrix();
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto truth = taxonomy.class_of(vset.labels[idx[b]], kNumRanks - 1);
        if (!truth) continue;
        Index arg = 0;
        lm.row(static_cast<Index>(b)).maxCoeff(&arg);
        ++labelled;
        correct += arg == *truth ? 1 : 0;
      }
    }
    nlohmann::json out = {{"loss", total / static_cast<double>(n)}};
    if (labelled > 0) out["species_acc"] = static_cast<double>(correct) / static_cast<double>(labelled);
    return out;
  };

  Checkpoint& ck = result.checkpoint;
  ck.stage = to_string(cfg.stage);
  ck.model = model.config;
  ck.train_config = cfg;
  ck.vocab = vocab;
  ck.taxonomy = taxonomy;
  run_loop(model, spec, cfg, hooks, ck, resume);
  return result;
}

}  // namespace bssm
