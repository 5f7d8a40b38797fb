#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bssm/commands.hpp"
#include "bssm/seqdata.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = bssm::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const std::string kToy = std::string(BSSM_SOURCE_DIR) + "/configs/toy.json";

Run step(const std::string& cmd, const fs::path& dir, std::vector<std::string> sets) {
  std::vector<std::string> args = {cmd, "--config", kToy, "--out", (dir / cmd).string()};
  for (auto& s : sets) {
    args.push_back("--set");
    args.push_back(std::move(s));
  }
  Run r = cli(args);
  INFO(cmd, ": ", r.err);
  REQUIRE(r.code == 0);
  return r;
}

// The whole toy pipeline into `dir`.
void pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  const std::string d = dir.string();
  step("synth", dir, {});
  step("preprocess", dir, {"paths.input_fasta=" + d + "/synth/synth.fasta"});
  const std::string pre = d + "/preprocess/";
  step("overlap", dir, {"paths.train=" + pre + "train.fasta", "paths.test=" + pre + "test.fasta"});
  step("tok-train", dir, {"paths.train=" + pre + "train.fasta"});
  const std::string vocab = "paths.vocab=" + d + "/tok-train/vocab.txt";
  step("pretrain", dir, {vocab, "paths.train=" + pre + "train.fasta", "paths.val=" + pre + "val.fasta"});
  step("finetune", dir,
       {vocab, "paths.train=" + pre + "train.fasta", "paths.val=" + pre + "val.fasta",
        "paths.taxonomy=" + pre + "taxonomy.json", "paths.pretrained=" + d + "/pretrain/checkpoint"});
  step("evaluate", dir, {"paths.checkpoint=" + d + "/finetune/checkpoint", "paths.test=" + pre + "test.fasta"});

  // Unlabelled queries: ids only.
  auto queries = bssm::parse_fasta(fs::path(pre + "test.fasta"));
  for (auto& q : queries) q.label = {};
  fs::create_directories(dir / "queries");
  bssm::write_fasta(dir / "queries" / "q.fasta", queries);
  step("predict", dir, {"paths.checkpoint=" + d + "/finetune/checkpoint", "paths.query=" + d + "/queries/q.fasta"});
  step("besthit", dir, {"paths.train=" + pre + "train.fasta", "paths.query=" + d + "/queries/q.fasta"});
  step("ttest", dir, {"ttest.a=[0.9,0.8,0.85]", "ttest.b=[0.7,0.75,0.6]"});
}

const std::vector<std::string> kPrimary = {
    "synth/synth.fasta",         "preprocess/train.fasta",           "preprocess/val.fasta",
    "preprocess/test.fasta",     "preprocess/taxonomy.json",         "preprocess/preprocess_stats.json",
    "overlap/overlap.json",      "tok-train/vocab.txt",              "pretrain/checkpoint/manifest.json",
    "finetune/checkpoint/manifest.json", "evaluate/metrics.json",    "evaluate/metrics.tsv",
    "predict/predictions.tsv",   "besthit/besthit.tsv",              "ttest/ttest.json"};

}  // namespace

TEST_CASE("toy pipeline runs end to end and is byte-reproducible") {
  const fs::path a = fs::temp_directory_path() / "bssm_cli_a";
  const fs::path b = fs::temp_directory_path() / "bssm_cli_b";
  pipeline(a);
  pipeline(b);
  for (const auto& f : kPrimary) {
    INFO(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  for (const auto& stage : {"pretrain", "finetune"})
    for (const auto& e : fs::recursive_directory_iterator(a / stage / "checkpoint"))
      if (e.is_regular_file()) CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));

  const auto metrics = json::parse(slurp(a / "evaluate/metrics.json"));
  CHECK(metrics.dump().find("species") != std::string::npos);
  CHECK(fs::exists(a / "evaluate/timing.json"));
  CHECK(fs::exists(a / "pretrain/metrics.jsonl"));

  std::istringstream pred(slurp(a / "predict/predictions.tsv"));
  std::string header;
  std::getline(pred, header);
  std::string expect = "id";
  for (const char* r : {"kingdom", "phylum", "class", "order", "family", "genus", "species"})
    expect += std::string("\tpred_") + r + "\tconf_" + r;
  CHECK(header == expect);
  std::string row;
  int rows = 0;
  while (std::getline(pred, row)) {
    CHECK(std::count(row.begin(), row.end(), '\t') == 14);
    ++rows;
  }
  CHECK(rows == static_cast<int>(bssm::parse_fasta(a / "queries/q.fasta").size()));

  const auto t = json::parse(slurp(a / "ttest/ttest.json"));
  CHECK(t.at("degrees_of_freedom") == 2);

  // The best-hit baseline reuses the evaluate command.
  const std::string pre = (a / "preprocess").string() + "/";
  step("evaluate", a / "bh",
                       {"eval.method=besthit", "paths.train=" + pre + "train.fasta", "paths.test=" + pre + "test.fasta"});
  CHECK(json::parse(slurp(a / "bh/evaluate/metrics.json")).at("method") == "besthit");
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("overrides are reflected in the resolved config") {
  const fs::path dir = fs::temp_directory_path() / "bssm_cli_override";
  fs::remove_all(dir);
  const auto r = cli({"synth", "--config", kToy, "--out", dir.string(), "--set", "train.lr=8e-5", "--set",
                      "synth.samples_per_species=3", "--seed", "11"});
  REQUIRE(r.code == 0);
  const auto resolved = json::parse(slurp(dir / "resolved_config.json"));
  CHECK(resolved.at("train").at("lr") == 8e-5);
  CHECK(resolved.at("synth").at("samples_per_species") == 3);
  CHECK(resolved.at("seed") == 11);
  CHECK(resolved.at("model").at("d_model") == 32);
  const auto summary = json::parse(r.out);
  CHECK(summary.at("command") == "synth");
  fs::remove_all(dir);
}

TEST_CASE("invalid configs list every violation") {
  const auto r = cli({"synth", "--config", kToy, "--out", (fs::temp_directory_path() / "bssm_cli_bad").string(),
                      "--set", "bogus.key=1", "--set", "train.lr=abc", "--set", "model.d_model=-4"});
  CHECK(r.code == 1);
  CHECK(r.out.empty());
  const auto e = json::parse(r.err);
  CHECK(e.at("error") == "config");
  const std::string msg = e.at("message");
  CHECK(msg.find("bogus") != std::string::npos);
  CHECK(msg.find("train.lr") != std::string::npos);
  CHECK(msg.find("model.d_model") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("errors are single machine-readable lines") {
  const auto missing = cli({"preprocess", "--out", (fs::temp_directory_path() / "bssm_cli_err").string()});
  CHECK(missing.code == 1);
  CHECK(json::parse(missing.err).at("error") == "config");
  const auto io = cli({"preprocess", "--out", (fs::temp_directory_path() / "bssm_cli_err").string(), "--set",
                       "paths.input_fasta=/nonexistent/x.fasta"});
  CHECK(io.code == 1);
  CHECK(json::parse(io.err).at("error") == "io");
  const auto usage = cli({"frobnicate"});
  CHECK(usage.code == 2);
  CHECK(json::parse(usage.err).at("error") == "usage");
  const auto degenerate = cli({"ttest", "--out", (fs::temp_directory_path() / "bssm_cli_err").string(), "--set",
                               "ttest.a=[1,2]", "--set", "ttest.b=[1,2]"});
  CHECK(json::parse(degenerate.err).at("error") == "degenerate_variance");
  fs::remove_all(fs::temp_directory_path() / "bssm_cli_err");
}

TEST_CASE("the installed binary reports exit status") {
  const std::string bin = BSSM_CLI_PATH;
  const auto out = fs::temp_directory_path() / "bssm_cli_bin";
  CHECK(std::system((bin + " ttest --out " + out.string() + " --set 'ttest.a=[1,2,4]' --set 'ttest.b=[0,1,2]' > /dev/null").c_str()) == 0);
  CHECK(json::parse(slurp(out / "ttest.json")).at("t_statistic") == 4.0);
  CHECK(std::system((bin + " ttest --out " + out.string() + " 2> /dev/null").c_str()) != 0);
  fs::remove_all(out);
}
