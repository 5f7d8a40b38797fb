#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace bssm {

enum class TokenizerKind { Char, Kmer, Bpe };

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kNumSpecials = 4;

/// Token ids with optional BOS/EOS framing.
struct TokenSequence {
  std::vector<int> ids;
  std::size_t length() const { return ids.size(); }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Immutable token registry. Ids are contiguous; specials take 0..3 for
/// every kind. For BPE, base characters follow the specials in sorted order
/// and each merge that produces a new string appends one id.
class Vocab {
 public:
  static Vocab make_char();
  static Vocab make_kmer(int k);
  /// Rebuilds token ids by replaying `merges` over `alphabet`.
  static Vocab make_bpe(std::vector<std::string> alphabet, std::vector<std::pair<std::string, std::string>> merges);

  TokenizerKind kind() const { return kind_; }
  int k() const { return k_; }
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  /// Id for `token`, or kUnk when absent.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  /// Base alphabet for BPE (tokens following the specials before any merge).
  const std::vector<std::string>& alphabet() const { return alphabet_; }

  /// Text format: `#VOCAB <kind> [k]`, one line per special, one per base
  /// token, then `#MERGES` and one `left right` pair per line.
  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static Vocab load(std::istream& in);
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.kind_ == b.kind_ && a.k_ == b.k_ && a.tokens_ == b.tokens_ && a.merges_ == b.merges_;
  }

 private:
  void add(const std::string& token);

  TokenizerKind kind_ = TokenizerKind::Char;
  int k_ = 1;
  std::vector<std::string> tokens_;
  std::vector<std::string> alphabet_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::pair<std::string, std::string>> merges_;
};

std::string to_string(TokenizerKind kind);
TokenizerKind tokenizer_kind_from_string(const std::string& s);

TokenSequence char_encode(const Vocab& vocab, const std::string& sequence, std::size_t max_len);
TokenSequence kmer_encode(const Vocab& vocab, const std::string& sequence, int k, std::size_t max_len);
TokenSequence bpe_encode(const Vocab& vocab, const std::string& sequence, std::size_t max_len);
/// Dispatches on vocab.kind().
TokenSequence encode(const Vocab& vocab, const std::string& sequence, std::size_t max_len);

/// Most-frequent adjacent pair merging; ties go to the lexicographically
/// smallest concatenation. Stops at `vocab_size` tokens or when no pair
/// occurs at least twice.
Vocab bpe_train(std::span<const std::string> corpus, std::size_t vocab_size);

/// Concatenated surface strings; specials skipped, UNK rendered as "N".
std::string decode(const Vocab& vocab, std::span<const int> ids);

}  // namespace bssm
