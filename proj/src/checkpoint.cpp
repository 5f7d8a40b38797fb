#include "bssm/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "bssm/error.hpp"

namespace bssm {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kGroups[] = {"params", "best", "adam_m", "adam_v"};

NamedTensors& group(Checkpoint& c, int g) {
  switch (g) {
    case 0: return c.params;
    case 1: return c.best;
    case 2: return c.adam_m;
    default: return c.adam_v;
  }
}

const NamedTensors& group(const Checkpoint& c, int g) { return group(const_cast<Checkpoint&>(c), g); }

nlohmann::json progress_json(const TrainProgress& p) {
  return {{"epoch", p.epoch},
          {"step", p.step},
          {"best_val_loss", std::isfinite(p.best_val_loss) ? nlohmann::json(p.best_val_loss) : nlohmann::json()},
          {"best_epoch", p.best_epoch},
          {"bad_epochs", p.bad_epochs},
          {"finished", p.finished},
          {"stop_reason", p.stop_reason},
          {"history", p.history},
          {"rng_state", p.rng_state}};
}

TrainProgress progress_from(const nlohmann::json& j) {
  TrainProgress p;
  p.epoch = j.at("epoch").get<int>();
  p.step = j.at("step").get<long>();
  p.best_val_loss = j.at("best_val_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                    : j.at("best_val_loss").get<double>();
  p.best_epoch = j.at("best_epoch").get<int>();
  p.bad_epochs = j.at("bad_epochs").get<int>();
  p.finished = j.at("finished").get<bool>();
  p.stop_reason = j.at("stop_reason").get<std::string>();
  p.history = j.at("history");
  p.rng_state = j.at("rng_state").get<std::string>();
  return p;
}

void write_tensor(const Tensor<float>& t, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  t.dump(out);
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor<float> read_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return Tensor<float>::load_dump(in);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  const fs::path target = fs::absolute(dir);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  const fs::path old = target.string() + ".old";
  fs::remove_all(tmp);
  fs::create_directories(tmp / "tensors");

  nlohmann::json manifest = {{"format_version", kFormatVersion},
                             {"stage", ckpt.stage},
                             {"model", ckpt.model},
                             {"train_config", ckpt.train_config},
                             {"vocab_file", "vocab.txt"},
                             {"taxonomy_file", ckpt.taxonomy ? nlohmann::json("taxonomy.json") : nlohmann::json()},
                             {"progress", progress_json(ckpt.progress)}};
  nlohmann::json tensors = nlohmann::json::object();
  for (int g = 0; g < 4; ++g) {
    const NamedTensors& ts = group(ckpt, g);
    nlohmann::json names = nlohmann::json::array();
    if (!ts.empty()) fs::create_directories(tmp / "tensors" / kGroups[g]);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      names.push_back(ts[i].first);
      write_tensor(ts[i].second, tmp / "tensors" / kGroups[g] / (std::to_string(i) + ".bin"));
    }
    tensors[kGroups[g]] = names;
  }
  manifest["tensors"] = tensors;

  {
    std::ofstream out(tmp / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("cannot write manifest in " + tmp.string());
  }
  ckpt.vocab.save(tmp / "vocab.txt");
  if (ckpt.taxonomy) ckpt.taxonomy->save(tmp / "taxonomy.json");

  fs::remove_all(old);
  if (fs::exists(target)) fs::rename(target, old);
  fs::rename(tmp, target);
  fs::remove_all(old);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw IoError("no checkpoint manifest at " + mpath.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt manifest " + mpath.string() + ": " + e.what());
  }
  if (m.value("format_version", 0) != kFormatVersion)
    throw CompatibilityError("unsupported checkpoint format in " + dir.string());

  Checkpoint c;
  c.stage = m.at("stage").get<std::string>();
  c.model = m.at("model").get<ModelConfig>();
  c.train_config = m.at("train_config");
  c.vocab = Vocab::load(dir / m.at("vocab_file").get<std::string>());
  if (!m.at("taxonomy_file").is_null()) c.taxonomy = Taxonomy::load(dir / m.at("taxonomy_file").get<std::string>());
  c.progress = progress_from(m.at("progress"));
  for (int g = 0; g < 4; ++g) {
    const auto& names = m.at("tensors").at(kGroups[g]);
    for (std::size_t i = 0; i < names.size(); ++i)
      group(c, g).emplace_back(names[i].get<std::string>(),
                               read_tensor(dir / "tensors" / kGroups[g] / (std::to_string(i) + ".bin")));
  }
  return c;
}

NamedTensors snapshot(const std::vector<NamedParam<float>>& params) {
  NamedTensors out;
  for (const auto& p : params) out.emplace_back(p.name, p.var.value());
  return out;
}

void restore(const NamedTensors& tensors, const std::vector<NamedParam<float>>& params) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CompatibilityError("checkpoint has no tensor '" + p.name + "'");
    if (it->second->shape() != p.var.shape())
      throw CompatibilityError("tensor '" + p.name + "' has shape " + shape_string(it->second->shape()) +
                               ", model expects " + shape_string(p.var.shape()));
    Var<float> v = p.var;
    v.mutable_value() = *it->second;
  }
}

ModelState<float> model_from_checkpoint(const Checkpoint& ckpt, bool best) {
  ModelState<float> st = init_model<float>(ckpt.model, 0);
  restore(best && !ckpt.best.empty() ? ckpt.best : ckpt.params, st.parameters());
  return st;
}

}  // namespace bssm
