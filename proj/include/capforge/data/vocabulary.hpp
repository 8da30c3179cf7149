#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capforge/numerics/errors.hpp"

namespace capforge {

using TokenId = std::size_t;

/// Lowercase, drop the characters ".,!?;:" and split on whitespace. Training
/// and the caption metrics both go through this.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::string_view(".,!?;:").find(ch) != std::string_view::npos) continue;
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
      continue;
    }
    cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += toks[i];
  }
  return s;
}

/// Model-facing caption: BOS, word ids, EOS.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::size_t word_steps() const { return ids.empty() ? 0 : ids.size() - 1; }
};

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0, kBos = 1, kEos = 2, kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocabulary() : tokens_{"<pad>", "<bos>", "<eos>", "<unk>"} { reindex(); }

  /// Builds from raw captions: tokens seen at least `min_count` times, ordered by
  /// descending frequency then lexicographically. `max_size` caps the total
  /// size including the four reserved ids (0 = no cap).
  static Vocabulary build(const std::vector<std::string>& captions, std::size_t min_count = 1,
                          std::size_t max_size = 0) {
    if (captions.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
    require(min_count >= 1, "min_count must be >= 1");
    require(max_size == 0 || max_size >= kReserved, "max_size must leave room for reserved tokens");
    std::map<std::string, std::size_t> counts;
    for (const auto& c : captions)
      for (auto& t : tokenize(c)) ++counts[t];
    std::vector<std::pair<std::string, std::size_t>> items;
    for (auto& [tok, n] : counts)
      if (n >= min_count && !is_reserved_spelling(tok)) items.emplace_back(tok, n);
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    v.min_count_ = min_count;
    for (auto& [tok, n] : items) {
      if (max_size && v.tokens_.size() >= max_size) break;
      v.tokens_.push_back(tok);
    }
    v.reindex();
    return v;
  }

  /// Rebuilds from an explicit id-ordered token list (checkpoint load).
  static Vocabulary from_tokens(std::vector<std::string> tokens, std::size_t min_count = 1) {
    Vocabulary v;
    require(tokens.size() >= kReserved, "vocabulary token list lacks reserved tokens");
    for (std::size_t i = 0; i < kReserved; ++i)
      if (tokens[i] != v.tokens_[i]) throw DataError("vocabulary reserved token mismatch at id " + std::to_string(i));
    v.tokens_ = std::move(tokens);
    v.min_count_ = min_count;
    v.reindex();
    if (v.ids_.size() != v.tokens_.size()) throw DataError("vocabulary has duplicate tokens");
    return v;
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t min_count() const noexcept { return min_count_; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }

  TokenId id(const std::string& tok) const {
    auto it = ids_.find(tok);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& tok) const { return ids_.count(tok) > 0; }

  /// BOS + ids + EOS, keeping at most max_len ids overall with EOS last.
  TokenSequence encode(std::string_view text, std::size_t max_len) const {
    require(max_len >= 3, "encode: max_len must be >= 3");
    TokenSequence s;
    s.ids.push_back(kBos);
    for (auto& t : tokenize(text)) {
      if (s.ids.size() + 1 >= max_len) break;
      s.ids.push_back(id(t));
    }
    s.ids.push_back(kEos);
    return s;
  }

  /// Inverse of encode: drops BOS/PAD and stops at the first EOS.
  std::string decode(const std::vector<TokenId>& ids) const {
    std::vector<std::string> words;
    for (TokenId i : ids) {
      if (i == kEos) break;
      if (i == kBos || i == kPad) continue;
      words.push_back(token(i));
    }
    return join_tokens(words);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  static bool is_reserved_spelling(const std::string& t) {
    return t == "<pad>" || t == "<bos>" || t == "<eos>" || t == "<unk>";
  }
  void reindex() {
    ids_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], i);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::size_t min_count_ = 1;
};

}  // namespace capforge
