#pragma once

// Synthetic group-captioning corpus. Each synthetic "image" is one feature
// vector: the sum of fixed unit-norm word prototypes of its scene graph plus
// isotropic Gaussian noise. Target groups share one graph; reference groups
// are drawn from distinct graphs with the same subject head.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "groupcap/errors.hpp"
#include "groupcap/matrix.hpp"
#include "groupcap/scenegraph.hpp"
#include "groupcap/vocabulary.hpp"
#include "json.hpp"

namespace groupcap {

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ParseError("unknown split '" + std::string(s) + "'");
}

struct SplitFractions {
  double train = 2000.0 / 2400.0;
  double val = 200.0 / 2400.0;
  double test = 200.0 / 2400.0;

  void validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
      throw ConfigError("split fractions must be nonnegative and sum to 1");
    }
  }
};

struct GenConfig {
  std::uint64_t seed = 17;
  std::size_t d = 32;
  std::size_t n_samples = 2400;
  std::size_t n_t = 5;
  std::size_t n_r = 15;
  double noise_sigma = 0.3;
  std::string lexicon_path;  // empty: built-in lexicon
  SplitFractions fractions;
  // SubRelObj, AdjObj, NNObj, AttSubRelObj, SubRelAttObj, AttSubRelAttObj
  std::array<double, 6> template_weights = {46810, 24890, 18466, 55124, 30944, 23208};

  void validate() const {
    if (d < 8) throw ConfigError("feature dimension d must be >= 8");
    if (n_samples == 0) throw ConfigError("n_samples must be positive");
    if (n_t == 0 || n_r == 0) throw ConfigError("generated groups need n_t >= 1 and n_r >= 1");
    if (!(noise_sigma >= 0)) throw ConfigError("noise_sigma must be >= 0");
    fractions.validate();
    if (std::accumulate(template_weights.begin(), template_weights.end(), 0.0) <= 0) {
      throw ConfigError("template weights must not all be zero");
    }
  }
};

struct GroupSample {
  std::string id;
  std::vector<std::string> caption;
  std::vector<std::size_t> tokens;
  Matrix target_features;     // n_t x d
  Matrix reference_features;  // n_r x d
  SceneGraph graph;
  Split split = Split::train;
  // Graph each feature row was synthesized from.
  std::vector<SceneGraph> target_sources;
  std::vector<SceneGraph> reference_sources;

  friend bool operator==(const GroupSample&, const GroupSample&) = default;
};

/// 64-bit mix used to derive independent per-sample generator streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(seed ^ stream));
}

// Stream ids outside the sample-index range.
inline constexpr std::uint64_t kPrototypeStream = 0xFFFF'0000'0000'0001ULL;
inline constexpr std::uint64_t kSplitStream = 0xFFFF'0000'0000'0002ULL;

/// One fixed unit-norm d-vector per lexicon word.
class Prototypes {
 public:
  Prototypes() = default;

  static Prototypes generate(const Lexicon& lexicon, std::size_t d, std::uint64_t seed) {
    auto rng = stream_rng(seed, kPrototypeStream);
    std::normal_distribution<double> normal(0.0, 1.0);
    Prototypes p;
    p.d_ = d;
    for (const auto& w : lexicon.all_words()) {
      Matrix v(1, d);
      double norm = 0.0;
      for (auto& x : v.values()) {
        x = normal(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (auto& x : v.values()) x /= norm;
      p.vectors_.emplace(w, std::move(v));
    }
    return p;
  }

  std::size_t dim() const { return d_; }
  const Matrix& at(const std::string& word) const {
    auto it = vectors_.find(word);
    if (it == vectors_.end()) throw LexiconError("no prototype for word '" + word + "'");
    return it->second;
  }
  bool contains(const std::string& word) const { return vectors_.count(word) != 0; }

 private:
  std::size_t d_ = 0;
  std::map<std::string, Matrix> vectors_;
};

/// Sum of the graph's word prototypes plus N(0, sigma^2) per coordinate.
inline Matrix synthesize_feature(const SceneGraph& graph, const Prototypes& prototypes, double noise_sigma,
                                 std::mt19937_64& rng) {
  Matrix f(1, prototypes.dim());
  for (const auto& w : graph.words()) f += prototypes.at(w);
  if (noise_sigma > 0) {
    std::normal_distribution<double> normal(0.0, noise_sigma);
    for (auto& x : f.values()) x += normal(rng);
  }
  return f;
}

/// Draws template-conforming graphs from a lexicon.
class GraphSampler {
 public:
  GraphSampler(const Lexicon& lexicon, std::array<double, 6> template_weights)
      : lexicon_(&lexicon), weights_(template_weights) {}

  CaptionTemplate draw_template(std::mt19937_64& rng) const {
    std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
    return kAllTemplates[pick(rng)];
  }

  /// Graph of template `t`, all words distinct, subject forced if given.
  SceneGraph draw(CaptionTemplate t, std::mt19937_64& rng, const std::string* subject = nullptr) const {
    SceneGraph g;
    std::set<std::string> used;
    if (subject) {
      g.subject = *subject;
    } else {
      g.subject = pick_from(lexicon_->nouns(), used, rng);
    }
    used.insert(g.subject);
    switch (t) {
      case CaptionTemplate::SubRelObj:
        add_relation(g, used, rng, false);
        break;
      case CaptionTemplate::AdjObj:
        g.subject_attrs.push_back(pick_from(lexicon_->adjectives(), used, rng));
        break;
      case CaptionTemplate::NNObj:
        g.subject_attrs.push_back(pick_from(lexicon_->nouns(), used, rng));
        break;
      case CaptionTemplate::AttSubRelObj:
        g.subject_attrs.push_back(pick_attribute(used, rng));
        add_relation(g, used, rng, false);
        break;
      case CaptionTemplate::SubRelAttObj:
        add_relation(g, used, rng, true);
        break;
      case CaptionTemplate::AttSubRelAttObj:
        g.subject_attrs.push_back(pick_attribute(used, rng));
        add_relation(g, used, rng, true);
        break;
    }
    return g;
  }

  /// A graph with the target's subject that is not the target graph.
  /// One in seven draws is the bare subject.
  SceneGraph draw_partial(const SceneGraph& target, std::mt19937_64& rng) const {
    std::uniform_int_distribution<int> shape(0, 6);
    const int s = shape(rng);
    if (s == 6) {
      SceneGraph g;
      g.subject = target.subject;
      return g;
    }
    return draw(kAllTemplates[static_cast<std::size_t>(s)], rng, &target.subject);
  }

  /// A template graph whose subject differs from the target's.
  SceneGraph draw_unrelated(const SceneGraph& target, std::mt19937_64& rng) const {
    for (;;) {
      SceneGraph g = draw(draw_template(rng), rng);
      if (g.subject != target.subject) return g;
    }
  }

 private:
  std::string pick_from(const std::vector<std::string>& pool, std::set<std::string>& used,
                        std::mt19937_64& rng) const {
    std::vector<const std::string*> free;
    for (const auto& w : pool)
      if (!used.count(w)) free.push_back(&w);
    if (free.empty()) throw GenerationError("lexicon too small to draw distinct graph words");
    std::uniform_int_distribution<std::size_t> u(0, free.size() - 1);
    const std::string& w = *free[u(rng)];
    used.insert(w);
    return w;
  }

  // Adjective three times out of four, otherwise a noun modifier.
  std::string pick_attribute(std::set<std::string>& used, std::mt19937_64& rng) const {
    std::uniform_int_distribution<int> coin(0, 3);
    return coin(rng) == 0 ? pick_from(lexicon_->nouns(), used, rng) : pick_from(lexicon_->adjectives(), used, rng);
  }

  void add_relation(SceneGraph& g, std::set<std::string>& used, std::mt19937_64& rng, bool object_attr) const {
    g.relation = pick_from(lexicon_->relations(), used, rng);
    if (object_attr) g.object_attrs.push_back(pick_attribute(used, rng));
    g.object = pick_from(lexicon_->nouns(), used, rng);
  }

  const Lexicon* lexicon_;
  std::array<double, 6> weights_;
};

struct Corpus {
  std::vector<GroupSample> samples;
  Vocabulary vocab;
  Prototypes prototypes;
  Lexicon lexicon;

  std::vector<const GroupSample*> of_split(Split s) const {
    std::vector<const GroupSample*> out;
    for (const auto& x : samples)
      if (x.split == s) out.push_back(&x);
    return out;
  }
};

inline std::string sample_id(std::size_t index) {
  std::string digits = std::to_string(index);
  return "s" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

/// Assigns split labels by caption string: test captions never occur in
/// train; val is drawn from the remaining samples and may share captions with train.
inline void assign_splits(std::vector<GroupSample>& samples, const SplitFractions& fractions, std::mt19937_64& rng) {
  fractions.validate();
  const std::size_t n = samples.size();
  const auto want_test = static_cast<std::size_t>(std::llround(fractions.test * static_cast<double>(n)));
  const auto want_val = static_cast<std::size_t>(std::llround(fractions.val * static_cast<double>(n)));

  std::vector<std::string> captions;
  std::map<std::string, std::vector<std::size_t>> by_caption;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string key = detail::join(samples[i].caption);
    auto [it, inserted] = by_caption.try_emplace(key);
    if (inserted) captions.push_back(key);
    it->second.push_back(i);
  }
  std::shuffle(captions.begin(), captions.end(), rng);

  std::vector<Split> label(n, Split::train);
  std::size_t test_count = 0;
  std::size_t test_captions = 0;
  for (const auto& c : captions) {
    if (test_count == want_test) break;
    const auto& members = by_caption[c];
    if (test_count + members.size() > want_test) continue;
    for (std::size_t i : members) label[i] = Split::test;
    test_count += members.size();
    ++test_captions;
  }
  if (test_count != want_test || (want_test > 0 && test_captions == captions.size() && fractions.train > 0)) {
    throw SplitError("cannot place " + std::to_string(want_test) + " test samples on captions disjoint from train (" +
                     std::to_string(captions.size()) + " distinct captions)");
  }

  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i)
    if (label[i] != Split::test) rest.push_back(i);
  if (want_val > rest.size()) throw SplitError("not enough non-test samples for the validation split");
  std::shuffle(rest.begin(), rest.end(), rng);
  for (std::size_t j = 0; j < want_val; ++j) label[rest[j]] = Split::val;
  for (std::size_t i = 0; i < n; ++i) samples[i].split = label[i];
}

inline Corpus generate_corpus(const GenConfig& config, const Lexicon& lexicon) {
  config.validate();
  lexicon.validate();
  Corpus corpus;
  corpus.lexicon = lexicon;
  corpus.prototypes = Prototypes::generate(lexicon, config.d, config.seed);
  const GraphSampler sampler(corpus.lexicon, config.template_weights);

  corpus.samples.reserve(config.n_samples);
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    auto rng = stream_rng(config.seed, i);
    GroupSample s;
    s.id = sample_id(i);
    s.graph = sampler.draw(sampler.draw_template(rng), rng);
    s.caption = flatten(s.graph);

    s.target_features = Matrix(config.n_t, config.d);
    for (std::size_t r = 0; r < config.n_t; ++r) {
      Matrix f = synthesize_feature(s.graph, corpus.prototypes, config.noise_sigma, rng);
      std::copy(f.values().begin(), f.values().end(), s.target_features.row(r).begin());
      s.target_sources.push_back(s.graph);
    }

    s.reference_features = Matrix(config.n_r, config.d);
    std::size_t attempts = 0;
    while (s.reference_sources.size() < config.n_r) {
      if (++attempts > 200 * config.n_r) {
        throw GenerationError("could not draw " + std::to_string(config.n_r) + " distinct partial matches for \"" +
                              flatten_text(s.graph) + "\"");
      }
      SceneGraph g = sampler.draw_partial(s.graph, rng);
      if (!matches_partially(g, s.graph)) continue;
      bool dup = false;
      for (const auto& prev : s.reference_sources) dup = dup || matches_fully(prev, g);
      if (dup) continue;
      Matrix f = synthesize_feature(g, corpus.prototypes, config.noise_sigma, rng);
      std::copy(f.values().begin(), f.values().end(),
                s.reference_features.row(s.reference_sources.size()).begin());
      s.reference_sources.push_back(std::move(g));
    }
    corpus.samples.push_back(std::move(s));
  }

  std::vector<std::vector<std::string>> caps;
  for (const auto& s : corpus.samples) caps.push_back(s.caption);
  corpus.vocab = Vocabulary::from_captions(caps);
  for (auto& s : corpus.samples) s.tokens = corpus.vocab.encode(s.caption);

  auto split_rng = stream_rng(config.seed, kSplitStream);
  assign_splits(corpus.samples, config.fractions, split_rng);
  return corpus;
}

/// Replaces `k` randomly chosen target features with features of graphs whose
/// subject differs from the sample's graph. The caption is unchanged.
inline GroupSample inject_noise_images(const GroupSample& sample, std::size_t k, const GraphSampler& unrelated_pool,
                                       const Prototypes& prototypes, double noise_sigma, std::mt19937_64& rng) {
  const std::size_t n_t = sample.target_features.rows();
  if (k > n_t) {
    throw ContractError("inject_noise_images: k=" + std::to_string(k) + " exceeds n_t=" + std::to_string(n_t));
  }
  GroupSample out = sample;
  if (k == 0) return out;
  std::vector<std::size_t> rows(n_t);
  std::iota(rows.begin(), rows.end(), 0);
  std::shuffle(rows.begin(), rows.end(), rng);
  for (std::size_t j = 0; j < k; ++j) {
    SceneGraph g = unrelated_pool.draw_unrelated(sample.graph, rng);
    Matrix f = synthesize_feature(g, prototypes, noise_sigma, rng);
    std::copy(f.values().begin(), f.values().end(), out.target_features.row(rows[j]).begin());
    out.target_sources[rows[j]] = std::move(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL

inline nlohmann::ordered_json graph_to_json(const SceneGraph& g) {
  nlohmann::ordered_json j;
  j["subject"] = g.subject;
  j["subject_attrs"] = g.subject_attrs;
  j["relation"] = g.relation ? nlohmann::ordered_json(*g.relation) : nlohmann::ordered_json(nullptr);
  j["object"] = g.object ? nlohmann::ordered_json(*g.object) : nlohmann::ordered_json(nullptr);
  j["object_attrs"] = g.object_attrs;
  return j;
}

template <class Json>
SceneGraph graph_from_json(const Json& j) {
  SceneGraph g;
  g.subject = j.at("subject").template get<std::string>();
  g.subject_attrs = j.at("subject_attrs").template get<std::vector<std::string>>();
  if (!j.at("relation").is_null()) g.relation = j.at("relation").template get<std::string>();
  if (!j.at("object").is_null()) g.object = j.at("object").template get<std::string>();
  g.object_attrs = j.at("object_attrs").template get<std::vector<std::string>>();
  return g;
}

inline nlohmann::ordered_json matrix_to_json(const Matrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  }
  return rows;
}

template <class Json>
Matrix matrix_from_json(const Json& j) {
  const std::size_t rows = j.size();
  if (rows == 0) throw ParseError("empty feature matrix");
  const std::size_t cols = j[0].size();
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) throw ParseError("ragged feature matrix");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].template get<double>();
  }
  return m;
}

inline nlohmann::ordered_json sample_to_json(const GroupSample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["caption"] = detail::join(s.caption);
  j["tokens"] = s.tokens;
  j["target_features"] = matrix_to_json(s.target_features);
  j["reference_features"] = matrix_to_json(s.reference_features);
  j["graph"] = graph_to_json(s.graph);
  j["split"] = std::string(to_string(s.split));
  auto ts = nlohmann::ordered_json::array();
  for (const auto& g : s.target_sources) ts.push_back(graph_to_json(g));
  auto rs = nlohmann::ordered_json::array();
  for (const auto& g : s.reference_sources) rs.push_back(graph_to_json(g));
  j["target_sources"] = std::move(ts);
  j["reference_sources"] = std::move(rs);
  return j;
}

inline GroupSample sample_from_json(const nlohmann::json& j) {
  GroupSample s;
  s.id = j.at("id").get<std::string>();
  std::istringstream cap(j.at("caption").get<std::string>());
  for (std::string w; cap >> w;) s.caption.push_back(w);
  s.tokens = j.at("tokens").get<std::vector<std::size_t>>();
  s.target_features = matrix_from_json(j.at("target_features"));
  s.reference_features = matrix_from_json(j.at("reference_features"));
  s.graph = graph_from_json(j.at("graph"));
  s.split = split_from_string(j.at("split").get<std::string>());
  if (j.contains("target_sources"))
    for (const auto& g : j.at("target_sources")) s.target_sources.push_back(graph_from_json(g));
  if (j.contains("reference_sources"))
    for (const auto& g : j.at("reference_sources")) s.reference_sources.push_back(graph_from_json(g));
  return s;
}

inline void write_jsonl(const std::vector<GroupSample>& samples, std::ostream& out) {
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

inline std::vector<GroupSample> read_jsonl(std::istream& in) {
  std::vector<GroupSample> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_jsonl(const std::vector<GroupSample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_jsonl(samples, out);
}

inline std::vector<GroupSample> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_jsonl(in);
}

}  // namespace groupcap
