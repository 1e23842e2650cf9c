// Upper bound on test WordAcc for any captioner that sees only summed word
// prototypes. Grants perfect recovery of the caption's word bag and subject,
// then picks the most probable template-conforming arrangement of the bag
// under the generator's own prior. Ties are scored by their mean WordAcc.

#include <algorithm>
#include <iostream>
#include <set>

#include "groupcap/datagen.hpp"
#include "groupcap/metrics.hpp"

using namespace groupcap;

namespace {

struct Candidate {
  double prior;
  SceneGraph graph;
};

/// Arrangements of `rest` (the bag minus the subject) that fit template `t`,
/// with their generator probability up to a factor shared by all candidates.
void arrange(const Lexicon& lex, const GenConfig& gen, const std::string& subject, const std::vector<std::string>& rest,
             std::vector<Candidate>& out) {
  const double n_nouns = static_cast<double>(lex.nouns().size());
  const double n_adjs = static_cast<double>(lex.adjectives().size());
  for (std::size_t ti = 0; ti < kAllTemplates.size(); ++ti) {
    SceneGraph h;
    h.subject = subject;
    std::size_t k = 0;
    double p = gen.template_weights[ti];
    auto is = [&](WordClass c) { return k < rest.size() && lex.classify(rest[k]) == c; };
    auto attr = [&](std::vector<std::string>& slot) {
      if (is(WordClass::adj)) {
        p *= 0.75 / n_adjs;
      } else if (is(WordClass::noun)) {
        p *= 0.25 / n_nouns;
      } else {
        return false;
      }
      slot.push_back(rest[k++]);
      return true;
    };
    auto object = [&] {
      if (!is(WordClass::noun)) return false;
      h.object = rest[k++];
      return true;
    };
    auto relation = [&] {
      if (!is(WordClass::rel)) return false;
      h.relation = rest[k++];
      return true;
    };
    bool ok = false;
    switch (kAllTemplates[ti]) {
      case CaptionTemplate::SubRelObj: ok = relation() && object(); break;
      case CaptionTemplate::AdjObj:
        ok = is(WordClass::adj);
        if (ok) h.subject_attrs.push_back(rest[k++]);
        break;
      case CaptionTemplate::NNObj:
        ok = is(WordClass::noun);
        if (ok) h.subject_attrs.push_back(rest[k++]);
        break;
      case CaptionTemplate::AttSubRelObj: ok = attr(h.subject_attrs) && relation() && object(); break;
      case CaptionTemplate::SubRelAttObj: ok = relation() && attr(h.object_attrs) && object(); break;
      case CaptionTemplate::AttSubRelAttObj:
        ok = attr(h.subject_attrs) && relation() && attr(h.object_attrs) && object();
        break;
    }
    if (ok && k == rest.size()) out.push_back({p, std::move(h)});
  }
}

}  // namespace

int main() {
  const GenConfig gen;
  const Corpus corpus = generate_corpus(gen, Lexicon::default_lexicon());
  double total = 0.0;
  std::size_t n = 0, ambiguous = 0;
  for (const GroupSample* s : corpus.of_split(Split::test)) {
    const SceneGraph& g = s->graph;
    std::vector<std::string> rest = g.words();
    rest.erase(std::find(rest.begin(), rest.end(), g.subject));
    std::sort(rest.begin(), rest.end());
    std::vector<Candidate> cands;
    do {
      arrange(corpus.lexicon, gen, g.subject, rest, cands);
    } while (std::next_permutation(rest.begin(), rest.end()));
    double best = 0.0;
    for (const auto& c : cands) best = std::max(best, c.prior);
    std::set<std::string> modes;
    double acc = 0.0;
    for (const auto& c : cands) {
      if (c.prior < best * (1 - 1e-12)) continue;
      const std::string text = flatten_text(c.graph);
      if (modes.insert(text).second) acc += metrics::word_acc(metrics::make_pair(text, flatten_text(g)));
    }
    total += acc / static_cast<double>(modes.size());
    ambiguous += modes.size() > 1 || *modes.begin() != flatten_text(g);
    ++n;
  }
  std::cout << "test samples: " << n << "\n"
            << "samples whose most probable arrangement is not unique or not the gold caption: " << ambiguous << "\n"
            << "WordAcc ceiling: " << 100.0 * total / static_cast<double>(n) << "\n";
  return 0;
}
