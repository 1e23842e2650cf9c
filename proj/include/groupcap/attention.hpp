#pragma once

// Single-head transformer block and the group aggregation strategies built on
// it: plain averaging, shared self-attention (SA), attention over the union
// of both groups (AttenAll), masked cross attention (CA) and negative cross
// attention (NCA).

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "groupcap/autograd.hpp"

namespace groupcap {

struct TransformerBlockParams {
  Parameter* wq = nullptr;
  Parameter* bq = nullptr;
  Parameter* wk = nullptr;
  Parameter* bk = nullptr;
  Parameter* wv = nullptr;
  Parameter* bv = nullptr;
  Parameter* w1 = nullptr;
  Parameter* b1 = nullptr;
  Parameter* w2 = nullptr;
  Parameter* b2 = nullptr;

  std::size_t dim() const { return wq->value.rows(); }
  std::size_t ffn_dim() const { return w1->value.cols(); }

  static TransformerBlockParams create(ParamStore& store, const std::string& prefix, std::size_t d, std::size_t d_ff,
                                       std::mt19937_64& rng) {
    TransformerBlockParams p;
    p.wq = &store.add(prefix + ".wq", uniform_init(d, d, d, rng));
    p.bq = &store.add(prefix + ".bq", uniform_init(1, d, d, rng));
    p.wk = &store.add(prefix + ".wk", uniform_init(d, d, d, rng));
    p.bk = &store.add(prefix + ".bk", uniform_init(1, d, d, rng));
    p.wv = &store.add(prefix + ".wv", uniform_init(d, d, d, rng));
    p.bv = &store.add(prefix + ".bv", uniform_init(1, d, d, rng));
    p.w1 = &store.add(prefix + ".w1", uniform_init(d, d_ff, d, rng));
    p.b1 = &store.add(prefix + ".b1", uniform_init(1, d_ff, d, rng));
    p.w2 = &store.add(prefix + ".w2", uniform_init(d_ff, d, d_ff, rng));
    p.b2 = &store.add(prefix + ".b2", uniform_init(1, d, d_ff, rng));
    return p;
  }
};

/// Row-stochastic attention weights captured from one forward pass.
struct AttentionRecord {
  std::string label;
  Matrix weights;
};

struct BlockOutput {
  Var features;  // n x d
  AttentionRecord record;
};

/// Scaled attention logits (phi Wq + bq)(phi Wk + bk)^T / sqrt(d).
inline Var attention_logits(Var phi, const TransformerBlockParams& p) {
  Tape& t = *phi.tape();
  Var q = affine(phi, t.param(*p.wq), t.param(*p.bq));
  Var k = affine(phi, t.param(*p.wk), t.param(*p.bk));
  return scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(p.dim())));
}

/// V' = V + softmax(Q K^T / sqrt(d)) V, output = V' + relu(V' W1 + b1) W2 + b2.
inline BlockOutput transformer_forward(Var phi, const TransformerBlockParams& p, const Mask* mask = nullptr,
                                       std::string label = "self") {
  if (phi.cols() != p.dim()) {
    throw DimensionError("transformer_forward: features " + phi.value().shape() + " vs block dim " +
                         std::to_string(p.dim()));
  }
  Tape& t = *phi.tape();
  Var weights = row_softmax(attention_logits(phi, p), mask);
  Var v = affine(phi, t.param(*p.wv), t.param(*p.bv));
  Var v_res = add(v, matmul(weights, v));
  Var hidden = relu(affine(v_res, t.param(*p.w1), t.param(*p.b1)));
  Var out = add(v_res, affine(hidden, t.param(*p.w2), t.param(*p.b2)));
  return {out, AttentionRecord{std::move(label), weights.value()}};
}

/// Mask over the stacked [targets; references] rows that keeps only
/// target->reference and reference->target cells.
inline Mask cross_group_mask(std::size_t n_t, std::size_t n_r) {
  const std::size_t n = n_t + n_r;
  Mask m(n, n, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m.set(i, j, (i < n_t) != (j < n_t));
  return m;
}

enum class AggregationKind { average, sa, attenall, ca, nca };

inline std::string_view to_string(AggregationKind k) {
  switch (k) {
    case AggregationKind::average: return "average";
    case AggregationKind::sa: return "sa";
    case AggregationKind::attenall: return "attenall";
    case AggregationKind::ca: return "ca";
    case AggregationKind::nca: return "nca";
  }
  return "?";
}

inline AggregationKind aggregation_from_string(std::string_view s) {
  for (auto k : {AggregationKind::average, AggregationKind::sa, AggregationKind::attenall, AggregationKind::ca,
                 AggregationKind::nca})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown aggregation '" + std::string(s) + "' (average|sa|attenall|ca|nca)");
}

struct GroupAggregate {
  Var target;     // 1 x d
  Var reference;  // 1 x d
  std::vector<AttentionRecord> records;
};

inline Var aggregate_average(Var phi) { return mean_rows(phi); }

inline GroupAggregate aggregate_self_attention(Var phi_t, Var phi_r, const TransformerBlockParams& shared) {
  auto t = transformer_forward(phi_t, shared, nullptr, "target_self");
  auto r = transformer_forward(phi_r, shared, nullptr, "reference_self");
  return {mean_rows(t.features), mean_rows(r.features), {std::move(t.record), std::move(r.record)}};
}

struct AttenAllParams {
  Parameter* proj_t_w = nullptr;
  Parameter* proj_t_b = nullptr;
  Parameter* proj_r_w = nullptr;
  Parameter* proj_r_b = nullptr;
  TransformerBlockParams block;
};

inline GroupAggregate aggregate_atten_all(Var phi_t, Var phi_r, const AttenAllParams& p) {
  Tape& t = *phi_t.tape();
  const std::size_t n_t = phi_t.rows();
  const std::size_t n_r = phi_r.rows();
  Var pt = affine(phi_t, t.param(*p.proj_t_w), t.param(*p.proj_t_b));
  Var pr = affine(phi_r, t.param(*p.proj_r_w), t.param(*p.proj_r_b));
  auto all = transformer_forward(concat_rows({pt, pr}), p.block, nullptr, "all");
  return {mean_rows(slice_rows(all.features, 0, n_t)), mean_rows(slice_rows(all.features, n_t, n_r)),
          {std::move(all.record)}};
}

struct CrossParams {
  TransformerBlockParams shared;
  TransformerBlockParams cross;
};

inline GroupAggregate aggregate_cross(Var phi_t, Var phi_r, const CrossParams& p) {
  const std::size_t n_t = phi_t.rows();
  const std::size_t n_r = phi_r.rows();
  auto st = transformer_forward(phi_t, p.shared, nullptr, "target_self");
  auto sr = transformer_forward(phi_r, p.shared, nullptr, "reference_self");
  const Mask mask = cross_group_mask(n_t, n_r);
  auto cx = transformer_forward(concat_rows({st.features, sr.features}), p.cross, &mask, "cross");
  return {mean_rows(slice_rows(cx.features, 0, n_t)), mean_rows(slice_rows(cx.features, n_t, n_r)),
          {std::move(st.record), std::move(sr.record), std::move(cx.record)}};
}

struct NegCrossParams {
  TransformerBlockParams shared;
  TransformerBlockParams cross_t;
  TransformerBlockParams cross_r;
};

/// Like aggregate_cross, with the reference rows negated before the cross
/// stage and separate cross blocks producing the target and reference sets.
inline GroupAggregate aggregate_neg_cross(Var phi_t, Var phi_r, const NegCrossParams& p) {
  const std::size_t n_t = phi_t.rows();
  const std::size_t n_r = phi_r.rows();
  auto st = transformer_forward(phi_t, p.shared, nullptr, "target_self");
  auto sr = transformer_forward(phi_r, p.shared, nullptr, "reference_self");
  const Mask mask = cross_group_mask(n_t, n_r);
  Var stacked = concat_rows({st.features, neg(sr.features)});
  auto ct = transformer_forward(stacked, p.cross_t, &mask, "cross_t");
  auto cr = transformer_forward(stacked, p.cross_r, &mask, "cross_r");
  return {mean_rows(slice_rows(ct.features, 0, n_t)), mean_rows(slice_rows(cr.features, n_t, n_r)),
          {std::move(st.record), std::move(sr.record), std::move(ct.record), std::move(cr.record)}};
}

/// Parameter handles for one aggregation variant. Only the groups the
/// variant uses are created.
class Aggregator {
 public:
  Aggregator() = default;

  static Aggregator create(AggregationKind kind, ParamStore& store, std::size_t d, std::size_t d_ff,
                           std::mt19937_64& rng) {
    Aggregator a;
    a.kind_ = kind;
    switch (kind) {
      case AggregationKind::average:
        break;
      case AggregationKind::sa:
        a.shared_ = TransformerBlockParams::create(store, "agg.shared", d, d_ff, rng);
        break;
      case AggregationKind::attenall: {
        AttenAllParams p;
        p.proj_t_w = &store.add("agg.proj_t.w", uniform_init(d, d, d, rng));
        p.proj_t_b = &store.add("agg.proj_t.b", uniform_init(1, d, d, rng));
        p.proj_r_w = &store.add("agg.proj_r.w", uniform_init(d, d, d, rng));
        p.proj_r_b = &store.add("agg.proj_r.b", uniform_init(1, d, d, rng));
        p.block = TransformerBlockParams::create(store, "agg.all", d, d_ff, rng);
        a.atten_all_ = p;
        break;
      }
      case AggregationKind::ca:
        a.cross_ = CrossParams{TransformerBlockParams::create(store, "agg.shared", d, d_ff, rng),
                               TransformerBlockParams::create(store, "agg.cross", d, d_ff, rng)};
        break;
      case AggregationKind::nca:
        a.neg_cross_ = NegCrossParams{TransformerBlockParams::create(store, "agg.shared", d, d_ff, rng),
                                      TransformerBlockParams::create(store, "agg.cross_t", d, d_ff, rng),
                                      TransformerBlockParams::create(store, "agg.cross_r", d, d_ff, rng)};
        break;
    }
    return a;
  }

  AggregationKind kind() const { return kind_; }
  bool has_attention() const { return kind_ != AggregationKind::average; }

  GroupAggregate operator()(Var phi_t, Var phi_r) const {
    if (phi_t.cols() != phi_r.cols()) {
      throw DimensionError("aggregate: target " + phi_t.value().shape() + " vs reference " + phi_r.value().shape());
    }
    switch (kind_) {
      case AggregationKind::average:
        return {aggregate_average(phi_t), aggregate_average(phi_r), {}};
      case AggregationKind::sa:
        return aggregate_self_attention(phi_t, phi_r, *shared_);
      case AggregationKind::attenall:
        return aggregate_atten_all(phi_t, phi_r, *atten_all_);
      case AggregationKind::ca:
        return aggregate_cross(phi_t, phi_r, *cross_);
      case AggregationKind::nca:
        return aggregate_neg_cross(phi_t, phi_r, *neg_cross_);
    }
    throw ContractError("aggregate: unknown variant");
  }

 private:
  AggregationKind kind_ = AggregationKind::average;
  std::optional<TransformerBlockParams> shared_;
  std::optional<AttenAllParams> atten_all_;
  std::optional<CrossParams> cross_;
  std::optional<NegCrossParams> neg_cross_;
};

}  // namespace groupcap
