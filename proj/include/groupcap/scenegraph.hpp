#pragma once

// Template-grammar scene-graph parser for short group captions, the flattener
// that turns a graph back into a caption, and the graph matching predicates
// used to assemble target and reference groups.

#include <algorithm>
#include <array>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "groupcap/errors.hpp"

namespace groupcap {

enum class WordClass { noun, adj, rel };

inline std::string_view to_string(WordClass c) {
  switch (c) {
    case WordClass::noun: return "noun";
    case WordClass::adj: return "adj";
    case WordClass::rel: return "rel";
  }
  return "?";
}

inline WordClass word_class_from_string(std::string_view s) {
  if (s == "noun") return WordClass::noun;
  if (s == "adj") return WordClass::adj;
  if (s == "rel") return WordClass::rel;
  throw LexiconError("unknown word class '" + std::string(s) + "'");
}

/// Closed word list with pairwise-disjoint noun / adjective / relation sets.
class Lexicon {
 public:
  Lexicon() = default;

  void add(const std::string& word, WordClass cls) {
    if (word.empty()) throw LexiconError("empty lexicon word");
    for (char ch : word) {
      if (ch >= 'A' && ch <= 'Z') throw LexiconError("lexicon word not lowercase: " + word);
    }
    auto [it, inserted] = classes_.emplace(word, cls);
    if (!inserted) {
      if (it->second == cls) return;
      throw LexiconError("word '" + word + "' listed as both " + std::string(to_string(it->second)) + " and " +
                         std::string(to_string(cls)));
    }
    words_of(cls).push_back(word);
  }

  std::optional<WordClass> classify(std::string_view word) const {
    auto it = classes_.find(std::string(word));
    if (it == classes_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view word) const { return classify(word).has_value(); }

  const std::vector<std::string>& nouns() const { return nouns_; }
  const std::vector<std::string>& adjectives() const { return adjectives_; }
  const std::vector<std::string>& relations() const { return relations_; }

  /// Every word in file order within class: nouns, adjectives, relations.
  std::vector<std::string> all_words() const {
    std::vector<std::string> out = nouns_;
    out.insert(out.end(), adjectives_.begin(), adjectives_.end());
    out.insert(out.end(), relations_.begin(), relations_.end());
    return out;
  }

  void validate() const {
    if (nouns_.empty() || adjectives_.empty() || relations_.empty()) {
      throw LexiconError("lexicon needs at least one noun, adjective and relation");
    }
  }

  /// `word<TAB>class` per line; blank lines and '#' comments ignored.
  static Lexicon from_tsv(std::istream& in) {
    Lexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw LexiconError("lexicon line " + std::to_string(lineno) + ": expected word<TAB>class");
      }
      lex.add(line.substr(0, tab), word_class_from_string(line.substr(tab + 1)));
    }
    lex.validate();
    return lex;
  }

  void to_tsv(std::ostream& out) const {
    for (const auto& w : nouns_) out << w << "\tnoun\n";
    for (const auto& w : adjectives_) out << w << "\tadj\n";
    for (const auto& w : relations_) out << w << "\trel\n";
  }

  /// 16 nouns, 12 adjectives, 6 relations.
  static Lexicon default_lexicon() {
    static constexpr std::array nouns = {"woman", "man",   "girl", "dog",        "cat",    "bag",
                                         "hat",   "chair", "beach", "table",     "team",   "globe",
                                         "background", "cowboy", "business", "red"};
    static constexpr std::array adjs = {"young", "old",   "colorful", "white",  "black",       "happy",
                                        "small", "big",   "wooden",   "straw",  "terrestrial", "smiling"};
    static constexpr std::array rels = {"in", "on", "with", "holding", "wearing", "near"};
    Lexicon lex;
    for (const char* w : nouns) lex.add(w, WordClass::noun);
    for (const char* w : adjs) lex.add(w, WordClass::adj);
    for (const char* w : rels) lex.add(w, WordClass::rel);
    return lex;
  }

 private:
  std::vector<std::string>& words_of(WordClass c) {
    switch (c) {
      case WordClass::noun: return nouns_;
      case WordClass::adj: return adjectives_;
      case WordClass::rel: return relations_;
    }
    return nouns_;
  }

  std::map<std::string, WordClass, std::less<>> classes_;
  std::vector<std::string> nouns_, adjectives_, relations_;
};

/// (attributes) subject [relation (attributes) object]
struct SceneGraph {
  std::string subject;
  std::vector<std::string> subject_attrs;
  std::optional<std::string> relation;
  std::optional<std::string> object;
  std::vector<std::string> object_attrs;

  bool has_object() const { return object.has_value(); }

  /// Every word of the graph, subject side first.
  std::vector<std::string> words() const {
    std::vector<std::string> out = subject_attrs;
    out.push_back(subject);
    if (relation) out.push_back(*relation);
    out.insert(out.end(), object_attrs.begin(), object_attrs.end());
    if (object) out.push_back(*object);
    return out;
  }

  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

enum class CaptionTemplate { SubRelObj, AdjObj, NNObj, AttSubRelObj, SubRelAttObj, AttSubRelAttObj };

inline constexpr std::array<CaptionTemplate, 6> kAllTemplates = {
    CaptionTemplate::SubRelObj,    CaptionTemplate::AdjObj,       CaptionTemplate::NNObj,
    CaptionTemplate::AttSubRelObj, CaptionTemplate::SubRelAttObj, CaptionTemplate::AttSubRelAttObj};

inline std::string_view to_string(CaptionTemplate t) {
  switch (t) {
    case CaptionTemplate::SubRelObj: return "SubRelObj";
    case CaptionTemplate::AdjObj: return "AdjObj";
    case CaptionTemplate::NNObj: return "NNObj";
    case CaptionTemplate::AttSubRelObj: return "AttSubRelObj";
    case CaptionTemplate::SubRelAttObj: return "SubRelAttObj";
    case CaptionTemplate::AttSubRelAttObj: return "AttSubRelAttObj";
  }
  return "?";
}

inline CaptionTemplate template_from_string(std::string_view s) {
  for (auto t : kAllTemplates)
    if (to_string(t) == s) return t;
  throw ParseError("unknown caption template '" + std::string(s) + "'");
}

struct ParsedCaption {
  SceneGraph graph;
  CaptionTemplate tmpl;
};

namespace detail {

// Slot kinds of a template pattern.
enum class Slot { noun, adj, attr, rel };  // attr = adjective or noun modifier

struct Pattern {
  CaptionTemplate tmpl;
  std::vector<Slot> slots;
};

// Most specific first; equal-rank templates can never match the same input.
inline const std::vector<Pattern>& patterns() {
  using enum Slot;
  static const std::vector<Pattern> ps = {
      {CaptionTemplate::AttSubRelAttObj, {attr, noun, rel, attr, noun}},
      {CaptionTemplate::AttSubRelObj, {attr, noun, rel, noun}},
      {CaptionTemplate::SubRelAttObj, {noun, rel, attr, noun}},
      {CaptionTemplate::SubRelObj, {noun, rel, noun}},
      {CaptionTemplate::AdjObj, {adj, noun}},
      {CaptionTemplate::NNObj, {noun, noun}},
  };
  return ps;
}

inline bool slot_accepts(Slot s, WordClass c) {
  switch (s) {
    case Slot::noun: return c == WordClass::noun;
    case Slot::adj: return c == WordClass::adj;
    case Slot::attr: return c == WordClass::adj || c == WordClass::noun;
    case Slot::rel: return c == WordClass::rel;
  }
  return false;
}

inline std::string join(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace detail

/// Matches the whole caption against the six templates, most specific first.
inline ParsedCaption parse(std::span<const std::string> caption, const Lexicon& lexicon) {
  if (caption.empty()) throw UnparseableCaption("empty caption");
  std::vector<WordClass> classes;
  for (const auto& w : caption) {
    auto c = lexicon.classify(w);
    if (!c) throw UnparseableCaption("word '" + w + "' not in lexicon: \"" + detail::join(caption) + "\"");
    classes.push_back(*c);
  }
  for (const auto& p : detail::patterns()) {
    if (p.slots.size() != caption.size()) continue;
    bool ok = true;
    for (std::size_t i = 0; i < p.slots.size() && ok; ++i) ok = detail::slot_accepts(p.slots[i], classes[i]);
    if (!ok) continue;

    SceneGraph g;
    std::size_t i = 0;
    const auto& s = p.slots;
    if (s[i] == detail::Slot::attr || s[i] == detail::Slot::adj ||
        (p.tmpl == CaptionTemplate::NNObj && i == 0)) {
      g.subject_attrs.push_back(caption[i++]);
    }
    g.subject = caption[i++];
    if (i < s.size()) {
      g.relation = caption[i++];
      if (s[i] == detail::Slot::attr) g.object_attrs.push_back(caption[i++]);
      g.object = caption[i++];
    }
    return {std::move(g), p.tmpl};
  }
  throw UnparseableCaption("no caption template matches \"" + detail::join(caption) + "\"");
}

inline ParsedCaption parse(std::string_view caption, const Lexicon& lexicon) {
  std::vector<std::string> words;
  std::istringstream is{std::string(caption)};
  for (std::string w; is >> w;) words.push_back(w);
  return parse(std::span<const std::string>(words), lexicon);
}

/// Canonical surface form: sorted attributes, subject, then relation,
/// sorted object attributes and object.
inline std::vector<std::string> flatten(const SceneGraph& g) {
  std::vector<std::string> out;
  auto sa = g.subject_attrs;
  std::sort(sa.begin(), sa.end());
  out.insert(out.end(), sa.begin(), sa.end());
  out.push_back(g.subject);
  if (g.relation && g.object) {
    out.push_back(*g.relation);
    auto oa = g.object_attrs;
    std::sort(oa.begin(), oa.end());
    out.insert(out.end(), oa.begin(), oa.end());
    out.push_back(*g.object);
  }
  return out;
}

inline std::string flatten_text(const SceneGraph& g) {
  auto words = flatten(g);
  return detail::join(words);
}

/// Template a graph flattens into, if any.
inline std::optional<CaptionTemplate> template_of(const SceneGraph& g, const Lexicon& lexicon) {
  auto words = flatten(g);
  try {
    return parse(std::span<const std::string>(words), lexicon).tmpl;
  } catch (const UnparseableCaption&) {
    return std::nullopt;
  }
}

namespace detail {
inline std::multiset<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }
}  // namespace detail

inline bool matches_fully(const SceneGraph& a, const SceneGraph& b) {
  return a.subject == b.subject && a.relation == b.relation && a.object == b.object &&
         detail::as_set(a.subject_attrs) == detail::as_set(b.subject_attrs) &&
         detail::as_set(a.object_attrs) == detail::as_set(b.object_attrs);
}

/// Same subject head, but not the same graph.
inline bool matches_partially(const SceneGraph& a, const SceneGraph& b) {
  return a.subject == b.subject && !matches_fully(a, b);
}

}  // namespace groupcap
