#pragma once

// Caption metrics: position-wise word accuracy, WER, corpus BLEU-1/2,
// ROUGE-L, exact-match METEOR and single-reference CIDEr.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "groupcap/errors.hpp"

namespace groupcap::metrics {

using Words = std::vector<std::string>;

struct TokenizedPair {
  Words prediction;
  Words reference;
};

/// Lowercases, strips ,.!?;: and splits on whitespace runs.
inline Words tokenize(std::string_view text) {
  Words out;
  std::string cur;
  for (char ch : text) {
    if (ch == ',' || ch == '.' || ch == '!' || ch == '?' || ch == ';' || ch == ':') continue;
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      continue;
    }
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    cur.push_back(ch);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline TokenizedPair make_pair(std::string_view prediction, std::string_view reference) {
  return {tokenize(prediction), tokenize(reference)};
}

/// Matching positions over max(|prediction|, |reference|).
inline double word_acc(const TokenizedPair& p) {
  const std::size_t denom = std::max(p.prediction.size(), p.reference.size());
  if (denom == 0) return 1.0;
  const std::size_t n = std::min(p.prediction.size(), p.reference.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += p.prediction[i] == p.reference[i];
  return static_cast<double>(hits) / static_cast<double>(denom);
}

/// Word-level Levenshtein distance with unit costs.
inline std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double wer(const TokenizedPair& p) {
  if (p.reference.empty()) throw ContractError("wer: empty reference");
  return static_cast<double>(edit_distance(p.prediction, p.reference)) / static_cast<double>(p.reference.size());
}

using NgramCounts = std::map<Words, std::size_t>;

inline NgramCounts ngrams(std::span<const std::string> words, std::size_t n) {
  NgramCounts out;
  if (words.size() < n) return out;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    ++out[Words(words.begin() + static_cast<std::ptrdiff_t>(i), words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

/// Corpus BLEU over orders 1..n with clipped counts, uniform weights, brevity
/// penalty, no smoothing.
inline double bleu_n(std::span<const TokenizedPair> pairs, std::size_t n) {
  if (n != 1 && n != 2) throw ContractError("bleu_n: only n in {1, 2} is supported");
  std::size_t cand_len = 0, ref_len = 0;
  std::vector<std::size_t> matched(n + 1, 0), total(n + 1, 0);
  for (const auto& p : pairs) {
    cand_len += p.prediction.size();
    ref_len += p.reference.size();
    for (std::size_t k = 1; k <= n; ++k) {
      const auto pc = ngrams(p.prediction, k);
      const auto rc = ngrams(p.reference, k);
      for (const auto& [g, c] : pc) {
        total[k] += c;
        auto it = rc.find(g);
        if (it != rc.end()) matched[k] += std::min(c, it->second);
      }
    }
  }
  if (cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    if (matched[k] == 0 || total[k] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[k]) / static_cast<double>(total[k]));
  }
  const double bp =
      cand_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len)) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(n));
}

inline std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kRougeBetaSquared = 1.2;

/// LCS F-measure, (1 + b2) P R / (R + b2 P).
inline double rouge_l(const TokenizedPair& p) {
  if (p.prediction.empty() || p.reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(p.prediction, p.reference));
  if (lcs == 0) return 0.0;
  const double prec = lcs / static_cast<double>(p.prediction.size());
  const double rec = lcs / static_cast<double>(p.reference.size());
  return (1.0 + kRougeBetaSquared) * prec * rec / (rec + kRougeBetaSquared * prec);
}

struct MeteorParams {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
};

/// Exact-match METEOR: each prediction word, left to right, aligns to the
/// leftmost unused identical reference word.
inline double meteor_lite(const TokenizedPair& p, MeteorParams mp = {}) {
  const auto& hyp = p.prediction;
  const auto& ref = p.reference;
  std::vector<bool> used(ref.size(), false);
  std::vector<std::ptrdiff_t> align(hyp.size(), -1);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && ref[j] == hyp[i]) {
        used[j] = true;
        align[i] = static_cast<std::ptrdiff_t>(j);
        ++matches;
        break;
      }
    }
  }
  if (matches == 0) return 0.0;
  std::size_t chunks = 0;
  std::ptrdiff_t prev_ref = -2;
  bool prev_matched = false;
  for (std::size_t i = 0; i < hyp.size(); ++i) {
    if (align[i] < 0) {
      prev_matched = false;
      continue;
    }
    if (!prev_matched || align[i] != prev_ref + 1) ++chunks;
    prev_ref = align[i];
    prev_matched = true;
  }
  const double m = static_cast<double>(matches);
  const double prec = m / static_cast<double>(hyp.size());
  const double rec = m / static_cast<double>(ref.size());
  const double fmean = prec * rec / (mp.alpha * prec + (1.0 - mp.alpha) * rec);
  const double penalty = mp.gamma * std::pow(static_cast<double>(chunks) / m, mp.beta);
  return fmean * (1.0 - penalty);
}

/// Per-pair CIDEr scores (n = 1..4, uniform weights, x10), document
/// frequencies taken from the references of `pairs`.
inline std::vector<double> cider_per_pair(std::span<const TokenizedPair> pairs) {
  constexpr std::size_t kMaxN = 4;
  std::vector<double> scores(pairs.size(), 0.0);
  if (pairs.empty()) return scores;
  std::map<Words, std::size_t> df;
  std::vector<std::array<NgramCounts, kMaxN + 1>> ref_counts(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      ref_counts[i][n] = ngrams(pairs[i].reference, n);
      for (const auto& [g, c] : ref_counts[i][n]) ++df[g];
    }
  }
  const double log_n = std::log(static_cast<double>(pairs.size()));
  auto idf = [&](const Words& g) {
    auto it = df.find(g);
    const double f = it == df.end() ? 1.0 : static_cast<double>(it->second);
    return log_n - std::log(std::max(1.0, f));
  };
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double total = 0.0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const auto hc = ngrams(pairs[i].prediction, n);
      const auto& rc = ref_counts[i][n];
      std::map<Words, double> hv, rv;
      double hn = 0.0, rn = 0.0;
      for (const auto& [g, c] : hc) {
        const double w = static_cast<double>(c) * idf(g);
        hv[g] = w;
        hn += w * w;
      }
      for (const auto& [g, c] : rc) {
        const double w = static_cast<double>(c) * idf(g);
        rv[g] = w;
        rn += w * w;
      }
      double dot = 0.0;
      for (const auto& [g, w] : hv) {
        auto it = rv.find(g);
        if (it != rv.end()) dot += w * it->second;
      }
      if (hn > 0 && rn > 0) total += dot / (std::sqrt(hn) * std::sqrt(rn));
    }
    scores[i] = 10.0 * total / static_cast<double>(kMaxN);
  }
  return scores;
}

inline double cider(std::span<const TokenizedPair> pairs) {
  const auto s = cider_per_pair(pairs);
  if (s.empty()) return 0.0;
  double t = 0.0;
  for (double v : s) t += v;
  return t / static_cast<double>(s.size());
}

struct MetricReport {
  double word_acc = 0;  // percent
  double wer = 0;
  double bleu1 = 0;
  double bleu2 = 0;
  double meteor = 0;
  double rouge_l = 0;
  double cider = 0;
  std::size_t n_samples = 0;
};

inline MetricReport evaluate_corpus(std::span<const TokenizedPair> pairs) {
  MetricReport r;
  r.n_samples = pairs.size();
  if (pairs.empty()) return r;
  for (const auto& p : pairs) {
    r.word_acc += word_acc(p);
    r.wer += wer(p);
    r.meteor += meteor_lite(p);
    r.rouge_l += rouge_l(p);
  }
  const double n = static_cast<double>(pairs.size());
  r.word_acc = 100.0 * r.word_acc / n;
  r.wer /= n;
  r.meteor /= n;
  r.rouge_l /= n;
  r.bleu1 = bleu_n(pairs, 1);
  r.bleu2 = bleu_n(pairs, 2);
  r.cider = cider(pairs);
  return r;
}

}  // namespace groupcap::metrics
