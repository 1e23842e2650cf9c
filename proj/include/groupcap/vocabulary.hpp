#pragma once

#include <algorithm>
#include <cstddef>
#include <istream>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "groupcap/errors.hpp"

namespace groupcap {

inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kBos = 1;
inline constexpr std::size_t kEos = 2;
inline constexpr std::size_t kUnk = 3;
inline constexpr std::size_t kReservedTokens = 4;

/// Word <-> id map. Ids 0..3 are PAD, BOS, EOS, UNK; content words follow
/// in sorted order.
class Vocabulary {
 public:
  Vocabulary() : words_{"<pad>", "<bos>", "<eos>", "<unk>"} { reindex(); }

  template <class Captions>
  static Vocabulary from_captions(const Captions& captions) {
    std::set<std::string> uniq;
    for (const auto& cap : captions)
      for (const auto& w : cap) uniq.insert(w);
    Vocabulary v;
    v.words_.insert(v.words_.end(), uniq.begin(), uniq.end());
    v.reindex();
    return v;
  }

  static Vocabulary from_words(std::vector<std::string> content_words) {
    Vocabulary v;
    for (auto& w : content_words) {
      if (w.empty() || w.front() == '<') throw VocabError("invalid vocabulary word '" + w + "'");
      v.words_.push_back(std::move(w));
    }
    v.reindex();
    if (v.index_.size() != v.words_.size()) throw VocabError("duplicate vocabulary word");
    return v;
  }

  std::size_t size() const { return words_.size(); }

  std::size_t id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  const std::string& word(std::size_t id) const {
    if (id >= words_.size()) throw VocabError("token id " + std::to_string(id) + " out of vocabulary");
    return words_[id];
  }

  /// BOS, word ids..., EOS.
  std::vector<std::size_t> encode(std::span<const std::string> caption) const {
    std::vector<std::size_t> out{kBos};
    for (const auto& w : caption) out.push_back(id(w));
    out.push_back(kEos);
    return out;
  }

  /// Surface words; specials other than UNK are dropped, UNK renders "<unk>".
  std::vector<std::string> decode(std::span<const std::size_t> ids) const {
    std::vector<std::string> out;
    for (std::size_t id : ids) {
      if (id == kPad || id == kBos || id == kEos) continue;
      out.push_back(word(id));
    }
    return out;
  }

  std::vector<std::string> content_words() const { return {words_.begin() + kReservedTokens, words_.end()}; }

  /// One content word per line; line i holds id i + 4.
  void write(std::ostream& out) const {
    for (std::size_t i = kReservedTokens; i < words_.size(); ++i) out << words_[i] << '\n';
  }
  static Vocabulary read(std::istream& in) {
    std::vector<std::string> ws;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) ws.push_back(line);
    }
    return from_words(std::move(ws));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace groupcap
