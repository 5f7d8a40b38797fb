#include "bssm/commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "bssm/besthit.hpp"
#include "bssm/checkpoint.hpp"
#include "bssm/error.hpp"
#include "bssm/inference.hpp"
#include "bssm/metrics.hpp"
#include "bssm/run_config.hpp"
#include "bssm/stats.hpp"
#include "bssm/timing.hpp"
#include "bssm/trainer.hpp"

namespace bssm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Invocation {
  std::string command;
  std::optional<fs::path> config;
  std::vector<std::string> overrides;
  fs::path out = "out";
  std::optional<std::uint64_t> seed;
};

fs::path require(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("paths.") + key + " is required for this command");
  return value;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string truncated(const std::string& seq, std::size_t max_len) { return seq.substr(0, max_len); }

std::vector<TokenSequence> encode_all(const Vocab& vocab, const std::vector<BarcodeRecord>& records,
                                      std::size_t max_len) {
  std::vector<TokenSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode(vocab, truncated(r.sequence, max_len), max_len));
  return out;
}

LabelledData labelled(const Vocab& vocab, const std::vector<BarcodeRecord>& records, std::size_t max_len) {
  LabelledData d;
  d.tokens = encode_all(vocab, records, max_len);
  for (const auto& r : records) d.labels.push_back(r.label);
  return d;
}

std::vector<BarcodeRecord> optional_fasta(const std::string& path) {
  return path.empty() ? std::vector<BarcodeRecord>{} : parse_fasta(fs::path(path));
}

json cmd_synth(const RunConfig& cfg, const fs::path& out) {
  const auto records = synth_generate(cfg.synth);
  write_fasta(out / "synth.fasta", records);
  return {{"records", records.size()}, {"fasta", (out / "synth.fasta").string()}};
}

json cmd_preprocess(const RunConfig& cfg, const fs::path& out) {
  const auto records = parse_fasta(require(cfg.paths.input_fasta, "input_fasta"));
  auto [kept, stats] = filter_dataset(records, cfg.filter);
  const DatasetSplit split = split_dataset(kept, cfg.split, cfg.seed);
  write_fasta(out / "train.fasta", split.train);
  write_fasta(out / "val.fasta", split.val);
  write_fasta(out / "test.fasta", split.test);
  Taxonomy::build(split.train).save(out / "taxonomy.json");
  json summary = {{"filter", stats},
                  {"split", {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}}}};
  write_json(out / "preprocess_stats.json", summary);
  return summary;
}

json cmd_overlap(const RunConfig& cfg, const fs::path& out) {
  const auto train = parse_fasta(require(cfg.paths.train, "train"));
  const auto test = parse_fasta(require(cfg.paths.test, "test"));
  const json report = overlap_report(train, test);
  write_json(out / "overlap.json", report);
  return report;
}

json cmd_tok_train(const RunConfig& cfg, const fs::path& out) {
  const auto train = parse_fasta(require(cfg.paths.train, "train"));
  Vocab vocab;
  switch (cfg.tokenizer.kind) {
    case TokenizerKind::Char: vocab = Vocab::make_char(); break;
    case TokenizerKind::Kmer: vocab = Vocab::make_kmer(cfg.tokenizer.k); break;
    case TokenizerKind::Bpe: {
      std::vector<std::string> corpus;
      for (const auto& r : train) corpus.push_back(truncated(r.sequence, cfg.tokenizer.max_len));
      vocab = bpe_train(corpus, cfg.tokenizer.vocab_size);
      break;
    }
  }
  vocab.save(out / "vocab.txt");
  return {{"kind", to_string(vocab.kind())}, {"vocab_size", vocab.size()}, {"merges", vocab.merges().size()}};
}

json train_summary(const TrainResult& r) {
  const TrainProgress& p = r.checkpoint.progress;
  return {{"epochs", p.epoch},
          {"steps", p.step},
          {"best_epoch", p.best_epoch},
          {"best_val_loss", p.best_val_loss},
          {"stop_reason", p.stop_reason}};
}

json cmd_pretrain(const RunConfig& cfg, const fs::path& out) {
  const Stage stage = configured_stage(cfg, Stage::Pretrain);
  if (stage != Stage::Pretrain) throw ConfigError("train.stage must be auto or pretrain for the pretrain command");
  const Vocab vocab = Vocab::load(require(cfg.paths.vocab, "vocab"));
  const auto train = encode_all(vocab, parse_fasta(require(cfg.paths.train, "train")), cfg.tokenizer.max_len);
  const auto val = encode_all(vocab, optional_fasta(cfg.paths.val), cfg.tokenizer.max_len);
  const ModelConfig mc = model_config_for(cfg, static_cast<Index>(vocab.size()));
  const TrainConfig tc = train_config_for(cfg, stage);
  std::optional<Checkpoint> resume;
  if (!cfg.paths.resume.empty()) resume = load_checkpoint(cfg.paths.resume);

  std::ofstream log(out / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  TrainHooks hooks;
  hooks.metrics_log = &log;
  hooks.checkpoint_dir = out / "checkpoint";
  const TrainResult r = pretrain(train, val, vocab, mc, tc, hooks, resume ? &*resume : nullptr);
  json s = train_summary(r);
  s["parameters"] = parameter_count(mc);
  return s;
}

json cmd_finetune(const RunConfig& cfg, const fs::path& out) {
  const Stage stage = configured_stage(cfg, cfg.paths.pretrained.empty() ? Stage::Scratch : Stage::Finetune);
  if (stage == Stage::Pretrain) throw ConfigError("train.stage must be auto, finetune or scratch for finetune");
  const Vocab vocab = Vocab::load(require(cfg.paths.vocab, "vocab"));
  const auto train_records = parse_fasta(require(cfg.paths.train, "train"));
  const Taxonomy taxonomy =
      cfg.paths.taxonomy.empty() ? Taxonomy::build(train_records) : Taxonomy::load(cfg.paths.taxonomy);
  const LabelledData train = labelled(vocab, train_records, cfg.tokenizer.max_len);
  const LabelledData val = labelled(vocab, optional_fasta(cfg.paths.val), cfg.tokenizer.max_len);
  const ModelConfig mc = model_config_for(cfg, static_cast<Index>(vocab.size()));
  const TrainConfig tc = train_config_for(cfg, stage);

  std::optional<Checkpoint> pretrained, resume;
  if (stage == Stage::Finetune) pretrained = load_checkpoint(require(cfg.paths.pretrained, "pretrained"));
  if (!cfg.paths.resume.empty()) resume = load_checkpoint(cfg.paths.resume);

  std::ofstream log(out / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  TrainHooks hooks;
  hooks.metrics_log = &log;
  hooks.checkpoint_dir = out / "checkpoint";
  const TrainResult r = finetune(train, val, vocab, taxonomy, mc, tc, pretrained ? &*pretrained : nullptr, hooks,
                                 resume ? &*resume : nullptr);
  json s = train_summary(r);
  s["stage"] = to_string(stage);
  s["parameters"] = parameter_count(r.model.config);
  s["all_masked_samples"] = r.all_masked_samples;
  return s;
}

struct LoadedModel {
  Checkpoint ckpt;
  ModelState<float> model;
  Taxonomy taxonomy;
};

LoadedModel load_classifier(const RunConfig& cfg) {
  LoadedModel m;
  m.ckpt = load_checkpoint(require(cfg.paths.checkpoint, "checkpoint"));
  if (!m.ckpt.taxonomy || !m.ckpt.model.has_classifier())
    throw CompatibilityError("checkpoint " + cfg.paths.checkpoint + " has no classification heads");
  m.taxonomy = *m.ckpt.taxonomy;
  m.model = model_from_checkpoint(m.ckpt);
  return m;
}

std::array<std::vector<int>, kNumRanks> besthit_predictions(const BestHitIndex& index, const Taxonomy& taxonomy,
                                                            const std::vector<BarcodeRecord>& queries) {
  std::array<std::vector<int>, kNumRanks> preds;
  for (const auto& q : queries) {
    const BestHit hit = index.classify(q.sequence);
    for (int r = 0; r < kNumRanks; ++r) preds[r].push_back(taxonomy.class_of(hit.label, r).value_or(-1));
  }
  return preds;
}

json cmd_evaluate(const RunConfig& cfg, const fs::path& out) {
  const auto test = parse_fasta(require(cfg.paths.test, "test"));
  std::vector<TaxonomicLabel> labels;
  for (const auto& r : test) labels.push_back(r.label);
  MetricsReport report;
  double ms = 0;
  using Clock = std::chrono::steady_clock;

  if (cfg.eval.method == "besthit") {
    const auto train = parse_fasta(require(cfg.paths.train, "train"));
    const Taxonomy taxonomy = Taxonomy::build(train);
    const BestHitIndex index = BestHitIndex::build(train, cfg.eval.k);
    const auto start = Clock::now();
    report = evaluate(besthit_predictions(index, taxonomy, test), labels, taxonomy);
    ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count() /
         static_cast<double>(std::max<std::size_t>(test.size(), 1));
  } else {
    const LoadedModel m = load_classifier(cfg);
    const auto tokens = encode_all(m.ckpt.vocab, test, cfg.tokenizer.max_len);
    const RankPredictions preds = predict_ranks(m.model, m.taxonomy, tokens, cfg.eval.batch_size, cfg.eval.lift);
    report = evaluate(preds.classes, labels, m.taxonomy);
    if (cfg.eval.timing) ms = time_inference(m.model, tokens, cfg.eval.batch_size).ms_per_sample;
  }
  report.ms_per_sample = ms;
  // Timing lives in its own file so metrics.json stays reproducible.
  json metrics = report.to_json();
  metrics.erase("ms_per_sample");
  metrics["method"] = cfg.eval.method;
  write_json(out / "metrics.json", metrics);
  write_text(out / "metrics.tsv", report.to_tsv());
  write_json(out / "timing.json", {{"ms_per_sample", ms}, {"samples", test.size()}});
  return metrics;
}

std::string fixed(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

json cmd_predict(const RunConfig& cfg, const fs::path& out) {
  const auto queries = parse_fasta(require(cfg.paths.query, "query"));
  const LoadedModel m = load_classifier(cfg);
  const auto tokens = encode_all(m.ckpt.vocab, queries, cfg.tokenizer.max_len);
  const RankPredictions preds = predict_ranks(m.model, m.taxonomy, tokens, cfg.eval.batch_size, cfg.eval.lift);
  std::ostringstream tsv;
  tsv << "id";
  for (int r = 0; r < kNumRanks; ++r) tsv << "\tpred_" << kRankNames[r] << "\tconf_" << kRankNames[r];
  tsv << '\n';
  for (std::size_t i = 0; i < queries.size(); ++i) {
    tsv << queries[i].id;
    for (int r = 0; r < kNumRanks; ++r) {
      const int c = preds.classes[r][i];
      tsv << '\t' << (c < 0 ? std::string() : m.taxonomy.classes(r).name(c)) << '\t' << fixed(preds.confidence[r][i]);
    }
    tsv << '\n';
  }
  write_text(out / "predictions.tsv", tsv.str());
  return {{"predictions", queries.size()}, {"tsv", (out / "predictions.tsv").string()}};
}

json cmd_besthit(const RunConfig& cfg, const fs::path& out) {
  const auto train = parse_fasta(require(cfg.paths.train, "train"));
  const auto queries = parse_fasta(require(cfg.paths.query, "query"));
  const BestHitIndex index = BestHitIndex::build(train, cfg.eval.k);
  std::ostringstream tsv;
  tsv << "id\thit_id\tsimilarity\tlow_confidence\tlabel\n";
  std::size_t low = 0;
  for (const auto& q : queries) {
    const BestHit hit = index.classify(q.sequence);
    low += hit.low_confidence ? 1 : 0;
    tsv << q.id << '\t' << train[hit.index].id << '\t' << fixed(hit.similarity) << '\t'
        << (hit.low_confidence ? "true" : "false") << '\t' << hit.label.to_header() << '\n';
  }
  write_text(out / "besthit.tsv", tsv.str());
  return {{"queries", queries.size()}, {"low_confidence", low}};
}

json cmd_ttest(const RunConfig& cfg, const fs::path& out) {
  const json r = paired_t_test(cfg.ttest_a, cfg.ttest_b);
  write_json(out / "ttest.json", r);
  return r;
}

const std::map<std::string, json (*)(const RunConfig&, const fs::path&)>& commands() {
  static const std::map<std::string, json (*)(const RunConfig&, const fs::path&)> table = {
      {"synth", cmd_synth},       {"preprocess", cmd_preprocess}, {"overlap", cmd_overlap},
      {"tok-train", cmd_tok_train}, {"pretrain", cmd_pretrain},   {"finetune", cmd_finetune},
      {"evaluate", cmd_evaluate}, {"predict", cmd_predict},       {"besthit", cmd_besthit},
      {"ttest", cmd_ttest}};
  return table;
}

const char* describe(const std::string& name) {
  static const std::map<std::string, const char*> text = {
      {"synth", "generate a synthetic labelled FASTA"},
      {"preprocess", "filter and split a FASTA, build the training taxonomy"},
      {"overlap", "species and barcode overlap between train and test"},
      {"tok-train", "build a tokenizer vocabulary"},
      {"pretrain", "next-token pretraining"},
      {"finetune", "train classification heads (finetune or scratch)"},
      {"evaluate", "per-rank metrics on a labelled test FASTA"},
      {"predict", "per-rank predictions for a FASTA"},
      {"besthit", "k-mer best-hit classification"},
      {"ttest", "paired t-test on two samples"}};
  return text.at(name);
}

void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Barcode classification with a selective state-space model", "bssm"};
  app.require_subcommand(1);
  Invocation inv;
  for (const auto& [name, fn] : commands()) {
    CLI::App* sub = app.add_subcommand(name, describe(name));
    sub->add_option("--config", inv.config, "JSON run configuration");
    sub->add_option("--set", inv.overrides, "KEY=VALUE override (repeatable)")->take_all();
    sub->add_option("--out", inv.out, "output directory")->capture_default_str();
    sub->add_option("--seed", inv.seed, "global seed");
    sub->callback([&inv, n = name] { inv.command = n; });
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what());
    return 2;
  }

  try {
    const RunConfig cfg = load_run_config(inv.config, inv.overrides, inv.seed);
    fs::create_directories(inv.out);
    write_json(inv.out / "resolved_config.json", cfg.resolved);
    const json summary = commands().at(inv.command)(cfg, inv.out);
    out << json{{"command", inv.command}, {"result", summary}}.dump() << '\n';
    return 0;
  } catch (const Error& e) {
    print_error(err, e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    print_error(err, "io", e.what());
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what());
  }
  return 1;
}

}  // namespace bssm
