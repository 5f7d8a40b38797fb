#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "bssm/adamw.hpp"
#include "bssm/error.hpp"
#include "bssm/trainer.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace bssm;
namespace fs = std::filesystem;

namespace {

struct Corpus {
  std::vector<BarcodeRecord> records;
  Vocab vocab;
  std::vector<TokenSequence> tokens;
  LabelledData labelled;
};

Corpus make_corpus(std::uint64_t seed = 1, int samples = 8) {
  SynthConfig sc;
  sc.rank_fanouts = {1, 1, 1, 1, 2, 2, 2};
  sc.samples_per_species = samples;
  sc.base_length = 60;
  sc.length_jitter = 4;
  sc.seed = seed;
  Corpus c;
  c.records = synth_generate(sc);
  c.vocab = Vocab::make_char();
  for (const auto& r : c.records) {
    c.tokens.push_back(encode(c.vocab, r.sequence, 128));
    c.labelled.tokens.push_back(c.tokens.back());
    c.labelled.labels.push_back(r.label);
  }
  return c;
}

ModelConfig tiny_model(const Vocab& v) {
  ModelConfig m;
  m.vocab_size = static_cast<Index>(v.size());
  m.d_model = 16;
  m.n_blocks = 1;
  m.head_dim = 8;
  m.d_state = 8;
  m.max_len = 130;
  return m;
}

TrainConfig quick(Stage stage, int epochs = 3) {
  TrainConfig t = TrainConfig::defaults(stage);
  t.max_epochs = epochs;
  t.batch_size = 16;
  t.seed = 5;
  t.lr = 3e-3;
  return t;
}

bool same(const NamedTensors& a, const NamedTensors& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape() ||
        a[i].second.values() != b[i].second.values())
      return false;
  return true;
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("bssm_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("weighted cross-entropy examples") {
  const std::string h = "k__K;p__P;c__C;o__O;f__F;g__";
  std::vector<BarcodeRecord> rs = {bssm::testing::rec("a", "A", h + "a")};
  for (int i = 0; i < 4; ++i) rs.push_back(bssm::testing::rec("b", "A", h + "b"));
  const auto tax = Taxonomy::build(rs);
  const auto weights = class_weights(tax);
  const auto target = smooth_target(tax, rs[0].label, SmoothingMode::None, 0.0);
  const std::vector<int> ranks = {5};
  const std::vector<Var<double>> logits = {Var<double>::constant(Tensor<double>({1, 2}, {0, 0}))};
  CHECK(weighted_cross_entropy(logits, ranks, target, weights, false).value().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(weighted_cross_entropy(logits, ranks, target, weights, true).value().item() ==
        doctest::Approx(4.0 / 3.0 * std::log(2.0)).epsilon(1e-12));

  // Uniform logits over K classes give ln K at every rank.
  const auto toy = Taxonomy::build(bssm::testing::toy_taxonomy_records());
  const auto t3 = smooth_target(toy, toy.label_of(6, 1), SmoothingMode::None, 0.0);
  std::vector<Var<double>> seven;
  std::vector<int> all;
  double expect = 0;
  for (int r = 0; r < kNumRanks; ++r) {
    seven.push_back(Var<double>::constant(Tensor<double>::zeros({1, toy.num_classes(r)})));
    all.push_back(r);
    expect += std::log(static_cast<double>(toy.num_classes(r))) / kNumRanks;
  }
  CHECK(weighted_cross_entropy(seven, all, t3, class_weights(toy), false).value().item() ==
        doctest::Approx(expect).epsilon(1e-12));

  // Hierarchical with zero epsilon is the unsmoothed target.
  const auto hz = smooth_target(toy, toy.label_of(6, 1), SmoothingMode::Hierarchical, 0.0);
  std::mt19937_64 rng(1);
  for (auto& l : seven)
    for (Index i = 0; i < l.value().numel(); ++i) l.mutable_value()[i] = std::normal_distribution<double>()(rng);
  CHECK(weighted_cross_entropy(seven, all, hz, class_weights(toy), true).value().item() ==
        weighted_cross_entropy(seven, all, t3, class_weights(toy), true).value().item());
}

TEST_CASE("masked samples and batch means") {
  const auto toy = Taxonomy::build(bssm::testing::toy_taxonomy_records());
  std::vector<Var<double>> logits;
  std::mt19937_64 rng(2);
  for (int r = 0; r < kNumRanks; ++r) {
    Tensor<double> t({2, toy.num_classes(r)});
    for (Index i = 0; i < t.numel(); ++i) t[i] = std::normal_distribution<double>()(rng);
    logits.push_back(Var<double>::parameter(t));
  }
  const std::vector<int> ranks = {0, 1, 2, 3, 4, 5, 6};
  const auto a = smooth_target(toy, toy.label_of(6, 0), SmoothingMode::Standard, 0.1);
  const auto empty = smooth_target(toy, TaxonomicLabel{}, SmoothingMode::Standard, 0.1);
  const std::vector<const TargetDistribution*> both = {&a, &empty};
  const std::vector<const TargetDistribution*> only = {&a};
  LossStats stats;
  const double two = weighted_cross_entropy<double>(logits, ranks, both, nullptr, &stats).value().item();
  CHECK(stats.all_masked == 1);
  std::vector<Var<double>> first;
  for (const auto& l : logits) first.push_back(Var<double>::constant(Tensor<double>::from_matrix(l.value().matrix().topRows(1))));
  const double one = weighted_cross_entropy<double>(first, ranks, only, nullptr).value().item();
  CHECK(two == doctest::Approx(one / 2).epsilon(1e-12));
  CHECK(two >= 0.0);
}

TEST_CASE("class weighting only rescales each rank's gradient") {
  const auto toy = Taxonomy::build(bssm::testing::toy_taxonomy_records());
  auto rs = bssm::testing::toy_taxonomy_records();
  rs.push_back(rs[0]);
  rs.push_back(rs[0]);
  const auto tax = Taxonomy::build(rs);
  const auto w = class_weights(tax);
  std::mt19937_64 rng(3);
  for (int s = 0; s < tax.num_classes(6); ++s) {
    const auto target = smooth_target(tax, tax.label_of(6, s), SmoothingMode::Hierarchical, 0.1);
    std::vector<Var<double>> plain, weighted;
    std::vector<int> ranks;
    for (int r = 0; r < kNumRanks; ++r) {
      Tensor<double> t({1, tax.num_classes(r)});
      for (Index i = 0; i < t.numel(); ++i) t[i] = std::normal_distribution<double>()(rng);
      plain.push_back(Var<double>::parameter(t));
      weighted.push_back(Var<double>::parameter(t));
      ranks.push_back(r);
    }
    backward(weighted_cross_entropy(plain, ranks, target, w, false));
    backward(weighted_cross_entropy(weighted, ranks, target, w, true));
    for (int r = 0; r < kNumRanks; ++r) {
      const double factor = w.per_rank[r](target.true_class[r]);
      CHECK((weighted[r].grad().values() - factor * plain[r].grad().values()).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
}

TEST_CASE("adamw examples") {
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  Tensor<double> p({1}, {1.0}), g({1}, {1.0}), m({1}), v({1});
  adamw_step(p, g, m, v, 1, cfg, true);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));

  cfg.weight_decay = 0.1;
  Tensor<double> q({1}, {1.0}), zero({1}), m2({1}), v2({1});
  adamw_step(q, zero, m2, v2, 1, cfg, true);
  CHECK(q[0] == 1.0 * (1.0 - 0.1 * 0.1));
  Tensor<double> r({1}, {1.0}), m3({1}), v3({1});
  adamw_step(r, zero, m3, v3, 1, cfg, false);
  CHECK(r[0] == 1.0);
}

TEST_CASE("weight decay skips norms, biases and scan scalars") {
  const auto c = make_corpus();
  auto mc = tiny_model(c.vocab);
  const auto st = init_model<float>(mc, 1);
  for (const auto& p : st.parameters()) {
    const bool matrix = p.var.value().rank() == 2;
    CHECK_MESSAGE(p.decay == matrix, p.name);
  }
}

TEST_CASE("optimizer trajectories are deterministic") {
  const auto c = make_corpus();
  const auto mc = tiny_model(c.vocab);
  auto run = [&] {
    auto st = init_model<float>(mc, 3);
    AdamW<float> opt(st.parameters(), AdamWConfig{});
    const auto batch = make_batch<float>(std::span<const TokenSequence>(c.tokens.data(), 8));
    for (int i = 0; i < 5; ++i) {
      backward(lm_loss(st, model_forward(st, batch), batch));
      opt.step();
      opt.zero_grad();
    }
    return snapshot(st.parameters());
  };
  CHECK(same(run(), run()));
}

TEST_CASE("LM loss falls on a two-sequence corpus") {
  const auto c = make_corpus();
  const auto mc = tiny_model(c.vocab);
  auto st = init_model<float>(mc, 3);
  AdamW<float> opt(st.parameters(), AdamWConfig{1e-2, 0.9, 0.999, 1e-8, 0.0});
  const auto batch = make_batch<float>(std::span<const TokenSequence>(c.tokens.data(), 2));
  const float before = lm_loss(st, model_forward(st, batch), batch).value().item();
  for (int i = 0; i < 50; ++i) {
    backward(lm_loss(st, model_forward(st, batch), batch));
    opt.step();
    opt.zero_grad();
  }
  const float after = lm_loss(st, model_forward(st, batch), batch).value().item();
  CHECK(after < before);
}

TEST_CASE("pretraining beats the uniform predictor and keeps the best epoch") {
  const auto c = make_corpus();
  auto cfg = quick(Stage::Pretrain, 50);
  cfg.max_steps = 200;
  std::ostringstream log;
  TrainHooks hooks;
  hooks.metrics_log = &log;
  const std::vector<TokenSequence> val(c.tokens.begin(), c.tokens.begin() + 16);
  const auto res = pretrain(c.tokens, val, c.vocab, tiny_model(c.vocab), cfg, hooks);
  const auto& pr = res.checkpoint.progress;
  CHECK(pr.step <= 200);
  CHECK(pr.best_val_loss < std::log(static_cast<double>(c.vocab.size())));
  double best = 1e300;
  for (const auto& h : pr.history) best = std::min(best, h.at("val_loss").get<double>());
  CHECK(pr.best_val_loss == best);
  CHECK(evaluate_lm_loss(res.model, val, 16) == best);

  std::istringstream lines(log.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "split", "loss", "lr", "wall_ms"}) CHECK(j.contains(key));
    ++n;
  }
  CHECK(n == 2 * static_cast<int>(pr.history.size()));
}

TEST_CASE("patience zero stops at the first non-improving epoch") {
  const auto c = make_corpus();
  auto cfg = quick(Stage::Pretrain, 40);
  cfg.patience = 0;
  cfg.lr = 0.05;
  const auto res = pretrain(c.tokens, {}, c.vocab, tiny_model(c.vocab), cfg);
  const auto& h = res.checkpoint.progress.history;
  REQUIRE(res.checkpoint.progress.stop_reason == "early_stopping");
  double best = 1e300;
  for (std::size_t i = 0; i + 1 < h.size(); ++i) {
    CHECK(h[i].at("val_loss").get<double>() < best);
    best = h[i].at("val_loss").get<double>();
  }
  CHECK(h.back().at("val_loss").get<double>() >= best);
}

TEST_CASE("interrupted and resumed runs match the uninterrupted run bitwise") {
  const auto c = make_corpus();
  const auto mc = tiny_model(c.vocab);
  const auto cfg = quick(Stage::Pretrain, 4);
  const auto full = pretrain(c.tokens, {}, c.vocab, mc, cfg).checkpoint;

  TrainHooks stop;
  stop.checkpoint_dir = temp_dir("resume");
  stop.interrupt_after_epoch = [](int epoch) { return epoch == 2; };
  const auto partial = pretrain(c.tokens, {}, c.vocab, mc, cfg, stop).checkpoint;
  CHECK_FALSE(partial.progress.finished);
  CHECK(partial.progress.epoch == 2);

  const auto loaded = load_checkpoint(*stop.checkpoint_dir);
  const auto resumed = pretrain(c.tokens, {}, c.vocab, mc, cfg, {}, &loaded).checkpoint;
  CHECK(same(resumed.params, full.params));
  CHECK(same(resumed.best, full.best));
  CHECK(same(resumed.adam_m, full.adam_m));
  CHECK(same(resumed.adam_v, full.adam_v));
  CHECK(resumed.progress.history == full.progress.history);
  CHECK(resumed.progress.step == full.progress.step);
  fs::remove_all(*stop.checkpoint_dir);
}

TEST_CASE("checkpoint save and load round trip") {
  const auto c = make_corpus();
  const auto tax = Taxonomy::build(c.records);
  const auto res = finetune(c.labelled, {}, c.vocab, tax, tiny_model(c.vocab), quick(Stage::Scratch, 1));
  const auto dir = temp_dir("roundtrip");
  save_checkpoint(res.checkpoint, dir);
  save_checkpoint(res.checkpoint, dir);  // overwrite in place
  const auto back = load_checkpoint(dir);
  CHECK(back.stage == res.checkpoint.stage);
  CHECK(back.vocab == res.checkpoint.vocab);
  REQUIRE(back.taxonomy.has_value());
  CHECK(back.taxonomy->to_json() == tax.to_json());
  CHECK(same(back.params, res.checkpoint.params));
  CHECK(same(back.best, res.checkpoint.best));
  CHECK(same(back.adam_m, res.checkpoint.adam_m));
  CHECK(same(back.adam_v, res.checkpoint.adam_v));
  CHECK(back.progress.history == res.checkpoint.progress.history);
  CHECK(back.progress.rng_state == res.checkpoint.progress.rng_state);
  CHECK(back.model.backbone_mismatches(res.checkpoint.model).empty());
  CHECK(back.train_config == res.checkpoint.train_config);
  CHECK(same(snapshot(model_from_checkpoint(back).parameters()), back.best));
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("scratch and finetune start from the same heads") {
  const auto c = make_corpus();
  const auto tax = Taxonomy::build(c.records);
  const auto mc = tiny_model(c.vocab);
  auto pcfg = quick(Stage::Pretrain, 1);
  pcfg.seed = 99;
  const auto pre = pretrain(c.tokens, {}, c.vocab, mc, pcfg).checkpoint;

  const auto scratch = finetune_initial_model(c.vocab, tax, mc, quick(Stage::Scratch), nullptr);
  const auto tuned = finetune_initial_model(c.vocab, tax, mc, quick(Stage::Finetune), &pre);
  CHECK(same(snapshot(scratch.head_parameters()), snapshot(tuned.head_parameters())));
  const auto sb = snapshot(scratch.backbone_parameters());
  const auto tb = snapshot(tuned.backbone_parameters());
  int differing = 0;
  for (std::size_t i = 0; i < sb.size(); ++i) differing += sb[i].second.values() != tb[i].second.values() ? 1 : 0;
  CHECK(differing > 0);
  // The finetune backbone is the pretrained best epoch.
  for (const auto& [name, t] : tb) {
    const auto it = std::find_if(pre.best.begin(), pre.best.end(), [&](const auto& p) { return p.first == name; });
    REQUIRE(it != pre.best.end());
    CHECK(it->second.values() == t.values());
  }
}

TEST_CASE("finetune rejects incompatible checkpoints and untrainable labels") {
  const auto c = make_corpus();
  const auto tax = Taxonomy::build(c.records);
  auto mc = tiny_model(c.vocab);
  const auto pre = pretrain(c.tokens, {}, c.vocab, mc, quick(Stage::Pretrain, 1)).checkpoint;
  auto other = mc;
  other.d_state = 4;
  try {
    finetune(c.labelled, {}, c.vocab, tax, other, quick(Stage::Finetune, 1), &pre);
    FAIL("expected CompatibilityError");
  } catch (const CompatibilityError& e) {
    CHECK(std::string(e.what()).find("d_state") != std::string::npos);
  }
  CHECK_THROWS_AS(finetune(c.labelled, {}, c.vocab, tax, mc, quick(Stage::Finetune, 1), nullptr), ConfigError);

  LabelledData genus_only = c.labelled;
  for (auto& l : genus_only.labels) l[6].reset();
  auto single = quick(Stage::Scratch, 1);
  single.head_mode = HeadMode::SingleHead;
  CHECK_THROWS_AS(finetune(genus_only, {}, c.vocab, Taxonomy::build([&] {
                    auto rs = c.records;
                    for (auto& r : rs) r.label[6].reset();
                    return rs;
                  }()),
                           mc, single, nullptr),
                  ConfigError);
  CHECK_THROWS_AS(pretrain({}, {}, c.vocab, mc, quick(Stage::Pretrain, 1)), ConfigError);

  auto bad = quick(Stage::Scratch);
  bad.lr = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = quick(Stage::Scratch);
  bad.patience = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("stage defaults") {
  CHECK(TrainConfig::defaults(Stage::Pretrain).lr == 8e-4);
  CHECK(TrainConfig::defaults(Stage::Pretrain).max_epochs == 15);
  CHECK(TrainConfig::defaults(Stage::Finetune).lr == 8e-5);
  CHECK(TrainConfig::defaults(Stage::Finetune).max_epochs == 12);
  CHECK(TrainConfig::defaults(Stage::Scratch).lr == 8e-4);
  CHECK(TrainConfig::defaults(Stage::Scratch).max_epochs == 7);
  const auto d = TrainConfig::defaults(Stage::Finetune);
  CHECK(d.patience == 3);
  CHECK(d.beta1 == 0.9);
  CHECK(d.beta2 == 0.999);
  CHECK(d.weight_decay == 0.1);
  nlohmann::json j = d;
  CHECK(nlohmann::json(j.get<TrainConfig>()) == j);
}

TEST_CASE("finetuning is deterministic") {
  const auto c = make_corpus();
  const auto tax = Taxonomy::build(c.records);
  const auto mc = tiny_model(c.vocab);
  const auto a = finetune(c.labelled, {}, c.vocab, tax, mc, quick(Stage::Scratch, 2)).checkpoint;
  const auto b = finetune(c.labelled, {}, c.vocab, tax, mc, quick(Stage::Scratch, 2)).checkpoint;
  CHECK(same(a.params, b.params));
  CHECK(a.progress.history == b.progress.history);
  CHECK(a.progress.history[0].contains("val_species_acc"));
}
