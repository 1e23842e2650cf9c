#pragma once

// Attention invariants shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "groupcap/attention.hpp"
#include "groupcap/contrast.hpp"
#include "support/grad_cases.hpp"

namespace groupcap::check {

inline Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy(m.row(perm[i]).begin(), m.row(perm[i]).end(), out.row(i).begin());
  return out;
}

inline constexpr AggregationKind kAttentionKinds[] = {AggregationKind::sa, AggregationKind::attenall,
                                                      AggregationKind::ca, AggregationKind::nca};
inline constexpr AggregationKind kAllAggregations[] = {AggregationKind::average, AggregationKind::sa,
                                                       AggregationKind::attenall, AggregationKind::ca,
                                                       AggregationKind::nca};

/// Largest |row sum - 1| over every attention record of every variant
/// (plus the joint-context block) on random groups.
inline double max_row_sum_error(std::size_t trials = 20) {
  std::mt19937_64 rng(99);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    for (AggregationKind kind : kAttentionKinds) {
      ParamStore store;
      Aggregator agg = Aggregator::create(kind, store, 8, 16, rng);
      auto fa = TransformerBlockParams::create(store, "ctx.fa", 8, 16, rng);
      Tape t;
      Var pt = t.constant(gaussian(5, 8, rng, 2.0));
      Var pr = t.constant(gaussian(15, 8, rng, 2.0));
      auto out = agg(pt, pr);
      AttentionRecord joint;
      joint_context(pt, pr, fa, &joint);
      out.records.push_back(joint);
      for (const auto& rec : out.records) {
        for (std::size_t r = 0; r < rec.weights.rows(); ++r) {
          double total = 0.0;
          for (double w : rec.weights.row(r)) total += w;
          worst = std::max(worst, std::abs(total - 1.0));
        }
      }
    }
  }
  return worst;
}

/// Largest |weight| on an intra-group cell of a CA/NCA cross record.
inline double max_intra_group_cross_weight(std::size_t trials = 20) {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    for (AggregationKind kind : {AggregationKind::ca, AggregationKind::nca}) {
      ParamStore store;
      Aggregator agg = Aggregator::create(kind, store, 8, 16, rng);
      const std::size_t n_t = 1 + trial % 5, n_r = 1 + (trial * 7) % 15;
      Tape t;
      auto out = agg(t.constant(gaussian(n_t, 8, rng)), t.constant(gaussian(n_r, 8, rng)));
      for (const auto& rec : out.records) {
        if (rec.label.rfind("cross", 0) != 0) continue;
        for (std::size_t i = 0; i < rec.weights.rows(); ++i)
          for (std::size_t j = 0; j < rec.weights.cols(); ++j)
            if ((i < n_t) == (j < n_t)) worst = std::max(worst, std::abs(rec.weights(i, j)));
      }
    }
  }
  return worst;
}

/// Largest deviation of the pooled group vectors under independent random
/// permutations of the target rows and of the reference rows.
inline double max_permutation_deviation(AggregationKind kind, std::size_t permutations = 100) {
  std::mt19937_64 rng(314 + static_cast<std::uint64_t>(kind));
  ParamStore store;
  Aggregator agg = Aggregator::create(kind, store, 8, 16, rng);
  const Matrix phi_t = gaussian(5, 8, rng, 1.5);
  const Matrix phi_r = gaussian(15, 8, rng, 1.5);
  Tape base_tape;
  auto base = agg(base_tape.constant(phi_t), base_tape.constant(phi_r));
  const Matrix bt = base.target.value();
  const Matrix br = base.reference.value();
  std::vector<std::size_t> pt(5), pr(15);
  std::iota(pt.begin(), pt.end(), 0);
  std::iota(pr.begin(), pr.end(), 0);
  double worst = 0.0;
  for (std::size_t k = 0; k < permutations; ++k) {
    std::shuffle(pt.begin(), pt.end(), rng);
    std::shuffle(pr.begin(), pr.end(), rng);
    Tape t;
    auto out = agg(t.constant(permute_rows(phi_t, pt)), t.constant(permute_rows(phi_r, pr)));
    for (std::size_t i = 0; i < bt.size(); ++i) {
      worst = std::max(worst, std::abs(out.target.value()[i] - bt[i]));
      worst = std::max(worst, std::abs(out.reference.value()[i] - br[i]));
    }
  }
  return worst;
}

}  // namespace groupcap::check
