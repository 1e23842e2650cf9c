#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "groupcap/datagen.hpp"
#include "support/corpus.hpp"
#include "support/dataset_checks.hpp"

using namespace groupcap;

namespace {

const Corpus& small() {
  static const Corpus c = check::tiny_corpus(300, 16, 7);
  return c;
}

double dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Prototypes, UnitNormAndDeterministic) {
  const Lexicon lex = Lexicon::default_lexicon();
  const auto a = Prototypes::generate(lex, 32, 17), b = Prototypes::generate(lex, 32, 17);
  for (const auto& w : lex.all_words()) {
    EXPECT_NEAR(std::sqrt(dot(a.at(w), a.at(w))), 1.0, 1e-12) << w;
    EXPECT_EQ(a.at(w), b.at(w));
  }
  EXPECT_THROW(a.at("astronaut"), LexiconError);
}

TEST(Synthesize, NoiselessFeaturesAreLinear) {
  const Lexicon lex = Lexicon::default_lexicon();
  const auto protos = Prototypes::generate(lex, 32, 17);
  std::mt19937_64 rng(1);
  const SceneGraph full = parse("woman in chair", lex).graph;
  SceneGraph bare;
  bare.subject = "woman";
  const Matrix f1 = synthesize_feature(full, protos, 0.0, rng), f2 = synthesize_feature(full, protos, 0.0, rng);
  EXPECT_EQ(f1, f2);
  const Matrix f0 = synthesize_feature(bare, protos, 0.0, rng);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(f1[j] - f0[j], protos.at("in")[j] + protos.at("chair")[j], 1e-14);
}

TEST(Synthesize, SameGraphSeparatesFromOtherSubjects) {
  const Lexicon lex = Lexicon::default_lexicon();
  const auto protos = Prototypes::generate(lex, 32, 17);
  const GraphSampler sampler(lex, GenConfig{}.template_weights);
  std::mt19937_64 rng(23);
  const double sigma = 0.3;
  std::vector<double> same, other;
  for (int i = 0; i < 1000; ++i) {
    const SceneGraph g = sampler.draw(sampler.draw_template(rng), rng);
    const SceneGraph u = sampler.draw_unrelated(g, rng);
    const Matrix a = synthesize_feature(g, protos, sigma, rng);
    same.push_back(dot(a, synthesize_feature(g, protos, sigma, rng)));
    other.push_back(dot(a, synthesize_feature(u, protos, sigma, rng)));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  double var = 0.0;
  for (std::size_t i = 0; i < same.size(); ++i) var += std::pow(same[i] - other[i] - (mean(same) - mean(other)), 2);
  const double sd = std::sqrt(var / static_cast<double>(same.size() - 1));
  EXPECT_GT(mean(same) - mean(other), 3.0 * sd / std::sqrt(static_cast<double>(same.size())));
  EXPECT_GT(mean(same) - mean(other), 3.0 * sigma);
}

TEST(Generate, SampleInvariants) {
  const Corpus& c = small();
  ASSERT_EQ(c.samples.size(), 300u);
  for (const auto& s : c.samples) {
    EXPECT_EQ(s.target_features.rows(), 5u);
    EXPECT_EQ(s.reference_features.rows(), 15u);
    EXPECT_EQ(s.caption, flatten(s.graph));
    EXPECT_EQ(c.vocab.decode(s.tokens), s.caption);
    EXPECT_EQ(s.tokens.front(), kBos);
    EXPECT_EQ(s.tokens.back(), kEos);
    for (const auto& g : s.target_sources) EXPECT_TRUE(matches_fully(g, s.graph));
    for (std::size_t i = 0; i < s.reference_sources.size(); ++i) {
      EXPECT_TRUE(matches_partially(s.reference_sources[i], s.graph));
      for (std::size_t j = 0; j < i; ++j) EXPECT_FALSE(matches_fully(s.reference_sources[i], s.reference_sources[j]));
    }
  }
}

TEST(Generate, SplitSizesAndDisjointness) {
  const Corpus& c = small();
  std::map<Split, std::size_t> n;
  for (const auto& s : c.samples) ++n[s.split];
  EXPECT_EQ(n[Split::test], 30u);
  EXPECT_EQ(n[Split::val], 30u);
  EXPECT_EQ(n[Split::train], 240u);
  EXPECT_EQ(check::train_test_overlap(c.samples), 0u);

  const Corpus def = generate_corpus(GenConfig{}, Lexicon::default_lexicon());
  EXPECT_EQ(def.of_split(Split::train).size(), 2000u);
  EXPECT_EQ(def.of_split(Split::test).size(), 200u);
  EXPECT_EQ(check::train_test_overlap(def.samples), 0u);
}

TEST(Generate, TemplateHistogram) {
  GenConfig g;
  g.n_samples = 10000;
  g.n_r = 1;
  g.n_t = 1;
  g.d = 8;
  const Corpus c = generate_corpus(g, Lexicon::default_lexicon());
  std::map<CaptionTemplate, double> count;
  for (const auto& s : c.samples) ++count[parse(std::span<const std::string>(s.caption), c.lexicon).tmpl];
  double total_w = 0;
  for (double w : g.template_weights) total_w += w;
  for (std::size_t k = 0; k < 6; ++k) {
    const double expect = g.template_weights[k] / total_w * 10000.0;
    EXPECT_NEAR(count[kAllTemplates[k]], expect, 0.2 * expect) << to_string(kAllTemplates[k]);
  }
}

TEST(Generate, DeterministicJsonl) {
  const Corpus a = check::tiny_corpus(50, 8, 9), b = check::tiny_corpus(50, 8, 9);
  std::stringstream sa, sb;
  write_jsonl(a.samples, sa);
  write_jsonl(b.samples, sb);
  EXPECT_EQ(sa.str(), sb.str());
  const Corpus other = check::tiny_corpus(50, 8, 10);
  std::stringstream so;
  write_jsonl(other.samples, so);
  EXPECT_NE(sa.str(), so.str());
}

TEST(Jsonl, RoundTrip) {
  EXPECT_TRUE(check::jsonl_round_trip(small().samples));
  std::stringstream bad("{\"id\": 3}\n");
  EXPECT_THROW(read_jsonl(bad), ParseError);
}

TEST(Vocabulary, FileRoundTripAndReservedIds) {
  const Vocabulary& v = small().vocab;
  EXPECT_EQ(v.word(kPad), "<pad>");
  EXPECT_EQ(v.word(kUnk), "<unk>");
  std::stringstream out;
  v.write(out);
  std::stringstream in(out.str());
  const Vocabulary back = Vocabulary::read(in);
  ASSERT_EQ(back.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(back.word(i), v.word(i));
  EXPECT_EQ(v.id("astronaut"), kUnk);
  EXPECT_THROW(v.word(v.size()), VocabError);
}

TEST(Split, TooFewCaptions) {
  GenConfig g;
  g.n_samples = 40;
  g.d = 8;
  g.fractions = {0.0, 0.0, 1.0};
  EXPECT_NO_THROW(generate_corpus(g, Lexicon::default_lexicon()));
  std::vector<GroupSample> same(10);
  for (auto& s : same) s.caption = {"young", "girl"};
  std::mt19937_64 rng(1);
  EXPECT_THROW(assign_splits(same, SplitFractions{0.5, 0.0, 0.5}, rng), SplitError);
}

TEST(Generate, LexiconTooSmall) {
  std::stringstream tiny("girl\tnoun\nyoung\tadj\nin\trel\n");
  GenConfig g;
  g.n_samples = 5;
  g.d = 8;
  EXPECT_THROW(generate_corpus(g, Lexicon::from_tsv(tiny)), GenerationError);
}

TEST(Noise, InjectionProvenance) {
  const Corpus& c = small();
  const GraphSampler pool(c.lexicon, GenConfig{}.template_weights);
  std::mt19937_64 rng(4);
  const GroupSample& s = c.samples[0];
  EXPECT_EQ(inject_noise_images(s, 0, pool, c.prototypes, 0.3, rng), s);
  for (std::size_t k = 1; k <= 5; ++k) {
    const GroupSample n = inject_noise_images(s, k, pool, c.prototypes, 0.3, rng);
    EXPECT_EQ(n.caption, s.caption);
    std::size_t foreign = 0, changed = 0;
    for (std::size_t r = 0; r < 5; ++r) {
      foreign += !matches_fully(n.target_sources[r], s.graph);
      if (!matches_fully(n.target_sources[r], s.graph)) {
        EXPECT_NE(n.target_sources[r].subject, s.graph.subject);
      }
      bool same_row = true;
      for (std::size_t j = 0; j < s.target_features.cols(); ++j)
        same_row &= n.target_features(r, j) == s.target_features(r, j);
      changed += !same_row;
    }
    EXPECT_EQ(foreign, k);
    EXPECT_EQ(changed, k);
  }
  EXPECT_THROW(inject_noise_images(s, 6, pool, c.prototypes, 0.3, rng), ContractError);
}

TEST(GenConfig, Validation) {
  GenConfig g;
  g.d = 4;
  EXPECT_THROW(g.validate(), ConfigError);
  g = GenConfig{};
  g.fractions = {0.5, 0.5, 0.5};
  EXPECT_THROW(g.validate(), ConfigError);
  g = GenConfig{};
  g.noise_sigma = -1;
  EXPECT_THROW(g.validate(), ConfigError);
}
