#include "bssm/tokenize.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "bssm/error.hpp"

namespace bssm {

namespace {

constexpr std::array<const char*, kNumSpecials> kSpecialNames = {"<pad>", "<unk>", "<bos>", "<eos>"};
constexpr char kBases[] = {'A', 'C', 'G', 'T'};

bool all_acgt(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == 'A' || c == 'C' || c == 'G' || c == 'T'; });
}

TokenSequence frame(std::vector<int> body, std::size_t max_len) {
  if (body.size() > max_len) body.resize(max_len);
  TokenSequence out;
  out.ids.reserve(body.size() + 2);
  out.ids.push_back(kBos);
  out.ids.insert(out.ids.end(), body.begin(), body.end());
  out.ids.push_back(kEos);
  return out;
}

void apply_merge(std::vector<int>& symbols, int left, int right, int merged) {
  std::size_t w = 0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      symbols[w++] = merged;
      ++i;
    } else {
      symbols[w++] = symbols[i];
    }
  }
  symbols.resize(w);
}

}  // namespace

std::string to_string(TokenizerKind kind) {
  switch (kind) {
    case TokenizerKind::Char: return "char";
    case TokenizerKind::Kmer: return "kmer";
    case TokenizerKind::Bpe: return "bpe";
  }
  return "char";
}

TokenizerKind tokenizer_kind_from_string(const std::string& s) {
  if (s == "char") return TokenizerKind::Char;
  if (s == "kmer") return TokenizerKind::Kmer;
  if (s == "bpe") return TokenizerKind::Bpe;
  throw ConfigError("unknown tokenizer kind '" + s + "' (expected char, kmer or bpe)");
}

void Vocab::add(const std::string& token) {
  if (index_.count(token)) return;
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::make_char() {
  Vocab v;
  v.kind_ = TokenizerKind::Char;
  for (const char* s : kSpecialNames) v.add(s);
  for (char b : kBases) {
    v.add(std::string(1, b));
    v.alphabet_.emplace_back(1, b);
  }
  return v;
}

Vocab Vocab::make_kmer(int k) {
  if (k < 1) throw ConfigError("k-mer size must be >= 1");
  if (k > 10) throw ConfigError("k-mer size above 10 is not supported (4^k vocabulary)");
  Vocab v;
  v.kind_ = TokenizerKind::Kmer;
  v.k_ = k;
  for (const char* s : kSpecialNames) v.add(s);
  std::size_t total = 1;
  for (int i = 0; i < k; ++i) total *= 4;
  for (std::size_t code = 0; code < total; ++code) {
    std::string kmer(static_cast<std::size_t>(k), 'A');
    std::size_t c = code;
    for (int i = k - 1; i >= 0; --i) {
      kmer[static_cast<std::size_t>(i)] = kBases[c % 4];
      c /= 4;
    }
    v.add(kmer);
  }
  for (char b : kBases) v.alphabet_.emplace_back(1, b);
  return v;
}

Vocab Vocab::make_bpe(std::vector<std::string> alphabet, std::vector<std::pair<std::string, std::string>> merges) {
  Vocab v;
  v.kind_ = TokenizerKind::Bpe;
  for (const char* s : kSpecialNames) v.add(s);
  std::sort(alphabet.begin(), alphabet.end());
  for (const auto& a : alphabet) {
    if (a.size() != 1) throw ConfigError("BPE base token '" + a + "' is not a single character");
    v.add(a);
  }
  v.alphabet_ = std::move(alphabet);
  for (const auto& [l, r] : merges) {
    if (!v.contains(l) || !v.contains(r))
      throw ConfigError("BPE merge '" + l + " " + r + "' references an unknown token");
    v.add(l + r);
  }
  v.merges_ = std::move(merges);
  return v;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw LookupError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                      std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

void Vocab::save(std::ostream& out) const {
  out << "#VOCAB " << to_string(kind_);
  if (kind_ == TokenizerKind::Kmer) out << ' ' << k_;
  out << '\n';
  for (const char* s : kSpecialNames) out << s << '\n';
  if (kind_ == TokenizerKind::Bpe) {
    for (const auto& a : alphabet_) out << a << '\n';
  } else {
    for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  }
  out << "#MERGES\n";
  for (const auto& [l, r] : merges_) out << l << ' ' << r << '\n';
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  save(out);
}

Vocab Vocab::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("#VOCAB ", 0) != 0) throw ParseError(1, "missing #VOCAB header");
  std::istringstream head(line.substr(7));
  std::string kind_name;
  head >> kind_name;
  if (kind_name != "char" && kind_name != "kmer" && kind_name != "bpe")
    throw ParseError(1, "unknown vocabulary kind '" + kind_name + "'");
  const TokenizerKind kind = tokenizer_kind_from_string(kind_name);
  int k = 1;
  if (kind == TokenizerKind::Kmer && !(head >> k)) throw ParseError(1, "k-mer vocabulary without k");

  std::size_t line_no = 1;
  std::vector<std::string> base;
  std::vector<std::pair<std::string, std::string>> merges;
  bool in_merges = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "#MERGES") {
      in_merges = true;
      continue;
    }
    if (line_no <= 1 + kNumSpecials) {
      if (line != kSpecialNames[line_no - 2]) throw ParseError(line_no, "expected special token " +
                                                                            std::string(kSpecialNames[line_no - 2]));
      continue;
    }
    if (in_merges) {
      const auto sp = line.find(' ');
      if (sp == std::string::npos || sp == 0 || sp + 1 == line.size())
        throw ParseError(line_no, "malformed merge line");
      merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    } else {
      base.push_back(line);
    }
  }

  Vocab v;
  switch (kind) {
    case TokenizerKind::Char: v = make_char(); break;
    case TokenizerKind::Kmer: v = make_kmer(k); break;
    case TokenizerKind::Bpe: return make_bpe(std::move(base), std::move(merges));
  }
  if (std::vector<std::string>(v.tokens_.begin() + kNumSpecials, v.tokens_.end()) != base)
    throw ParseError(line_no, "token list does not match the " + kind_name + " vocabulary");
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return load(in);
}

TokenSequence char_encode(const Vocab& vocab, const std::string& sequence, std::size_t max_len) {
  if (vocab.kind() != TokenizerKind::Char) throw ContractError("char_encode requires a char vocabulary");
  std::vector<int> body;
  body.reserve(std::min(sequence.size(), max_len));
  for (std::size_t i = 0; i < sequence.size() && body.size() < max_len; ++i)
    body.push_back(vocab.id(std::string(1, sequence[i])));
  return frame(std::move(body), max_len);
}

TokenSequence kmer_encode(const Vocab& vocab, const std::string& sequence, int k, std::size_t max_len) {
  if (vocab.kind() != TokenizerKind::Kmer || vocab.k() != k)
    throw ContractError("kmer_encode requires a k-mer vocabulary with k = " + std::to_string(k));
  std::vector<int> body;
  const auto width = static_cast<std::size_t>(k);
  for (std::size_t i = 0; i + width <= sequence.size() && body.size() < max_len; i += width) {
    const std::string window = sequence.substr(i, width);
    body.push_back(all_acgt(window) ? vocab.id(window) : kUnk);
  }
  return frame(std::move(body), max_len);
}

TokenSequence bpe_encode(const Vocab& vocab, const std::string& sequence, std::size_t max_len) {
  if (vocab.kind() != TokenizerKind::Bpe) throw ContractError("bpe_encode requires a BPE vocabulary");
  std::vector<int> symbols;
  symbols.reserve(sequence.size());
  for (char c : sequence) symbols.push_back(vocab.id(std::string(1, c)));
  for (const auto& [l, r] : vocab.merges()) {
    const int left = vocab.id(l);
    const int right = vocab.id(r);
    apply_merge(symbols, left, right, vocab.id(l + r));
  }
  return frame(std::move(symbols), max_len);
}

TokenSequence encode(const Vocab& vocab, const std::string& sequence, std::size_t max_len) {
  switch (vocab.kind()) {
    case TokenizerKind::Char: return char_encode(vocab, sequence, max_len);
    case TokenizerKind::Kmer: return kmer_encode(vocab, sequence, vocab.k(), max_len);
    case TokenizerKind::Bpe: return bpe_encode(vocab, sequence, max_len);
  }
  return {};
}

Vocab bpe_train(std::span<const std::string> corpus, std::size_t vocab_size) {
  if (corpus.empty()) throw ConfigError("bpe_train: empty corpus");

  std::set<char> chars;
  for (const auto& s : corpus) chars.insert(s.begin(), s.end());
  if (vocab_size < kNumSpecials + chars.size())
    throw ConfigError("bpe_train: vocab_size " + std::to_string(vocab_size) + " is below specials + alphabet (" +
                      std::to_string(kNumSpecials + chars.size()) + ")");

  std::vector<std::string> tokens;  // working id -> surface string
  std::map<char, int> char_id;
  for (char c : chars) {
    char_id[c] = static_cast<int>(tokens.size());
    tokens.emplace_back(1, c);
  }

  // Identical sequences are trained once with a multiplicity.
  std::map<std::string, std::size_t> unique;
  for (const auto& s : corpus) ++unique[s];
  std::vector<std::vector<int>> words;
  std::vector<std::size_t> weight;
  for (const auto& [s, n] : unique) {
    std::vector<int> w;
    w.reserve(s.size());
    for (char c : s) w.push_back(char_id[c]);
    words.push_back(std::move(w));
    weight.push_back(n);
  }

  // Merges producing an existing string reuse its id, as replay does.
  std::map<std::string, int> surface;
  for (std::size_t i = 0; i < tokens.size(); ++i) surface[tokens[i]] = static_cast<int>(i);
  std::vector<std::pair<std::string, std::string>> merges;
  std::size_t vocab_count = kNumSpecials + tokens.size();

  while (vocab_count < vocab_size) {
    std::unordered_map<std::uint64_t, std::size_t> counts;
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& sym = words[w];
      for (std::size_t i = 0; i + 1 < sym.size(); ++i)
        counts[(static_cast<std::uint64_t>(sym[i]) << 32) | static_cast<std::uint32_t>(sym[i + 1])] += weight[w];
    }
    std::uint64_t best_key = 0;
    std::size_t best_count = 0;
    std::string best_concat;
    for (const auto& [key, n] : counts) {
      if (n < best_count) continue;
      const auto l = static_cast<int>(key >> 32);
      const auto r = static_cast<int>(key & 0xffffffffu);
      std::string concat = tokens[static_cast<std::size_t>(l)] + tokens[static_cast<std::size_t>(r)];
      const bool better =
          n > best_count || concat < best_concat ||
          (concat == best_concat && tokens[static_cast<std::size_t>(l)] <
                                        tokens[static_cast<std::size_t>(best_key >> 32)]);
      if (better) {
        best_key = key;
        best_count = n;
        best_concat = std::move(concat);
      }
    }
    if (best_count < 2) break;

    const auto l = static_cast<int>(best_key >> 32);
    const auto r = static_cast<int>(best_key & 0xffffffffu);
    merges.emplace_back(tokens[static_cast<std::size_t>(l)], tokens[static_cast<std::size_t>(r)]);
    auto [it, fresh] = surface.try_emplace(best_concat, static_cast<int>(tokens.size()));
    if (fresh) {
      tokens.push_back(best_concat);
      ++vocab_count;
    }
    const int merged = it->second;
    for (auto& w : words) apply_merge(w, l, r, merged);
  }

  std::vector<std::string> alphabet;
  for (char c : chars) alphabet.emplace_back(1, c);
  return Vocab::make_bpe(std::move(alphabet), std::move(merges));
}

std::string decode(const Vocab& vocab, std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (id == kUnk) {
      out += 'N';
    } else if (id >= kNumSpecials) {
      out += tok;
    }
  }
  return out;
}

}  // namespace bssm
