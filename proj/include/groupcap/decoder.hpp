#pragma once

// LSTM caption decoder. Training runs on the autograd tape (batched teacher
// forcing); generation runs on plain matrices through the StepModel
// interface shared by greedy and beam search:
//
//   State                                         copyable decoder state
//   std::pair<State, std::vector<double>> advance(const State&, std::size_t token) const
//       feeds `token`, returns the next state and log-probabilities over the vocabulary.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "groupcap/autograd.hpp"
#include "groupcap/vocabulary.hpp"

namespace groupcap {

struct DecodeConfig {
  std::size_t max_len = 8;
  std::size_t beam_width = 3;
  bool length_normalize = false;

  void validate() const {
    if (beam_width < 1) throw ConfigError("beam_width must be >= 1");
    if (max_len < 2) throw ConfigError("max_len must be >= 2");
  }
};

/// Gate order in the packed 4h blocks is i, f, g, o.
struct LstmParams {
  Parameter* embed = nullptr;     // V x e
  Parameter* w_ih = nullptr;      // e x 4h
  Parameter* w_hh = nullptr;      // h x 4h
  Parameter* b = nullptr;         // 1 x 4h
  Parameter* w_init_h = nullptr;  // m x h
  Parameter* b_init_h = nullptr;
  Parameter* w_init_c = nullptr;  // m x h
  Parameter* b_init_c = nullptr;
  Parameter* w_out = nullptr;  // h x V
  Parameter* b_out = nullptr;  // 1 x V

  std::size_t vocab_size() const { return embed->value.rows(); }
  std::size_t embed_dim() const { return embed->value.cols(); }
  std::size_t hidden() const { return w_hh->value.rows(); }
  std::size_t input_dim() const { return w_init_h->value.rows(); }

  static LstmParams create(ParamStore& store, const std::string& prefix, std::size_t vocab, std::size_t e,
                           std::size_t h, std::size_t m, std::mt19937_64& rng) {
    if (vocab < kReservedTokens) throw ConfigError("vocabulary must hold the 4 reserved tokens");
    if (e == 0 || h == 0 || m == 0) throw ConfigError("decoder dimensions must be positive");
    LstmParams p;
    p.embed = &store.add(prefix + ".embed", uniform_init(vocab, e, e, rng));
    p.w_ih = &store.add(prefix + ".w_ih", uniform_init(e, 4 * h, h, rng));
    p.w_hh = &store.add(prefix + ".w_hh", uniform_init(h, 4 * h, h, rng));
    p.b = &store.add(prefix + ".b", uniform_init(1, 4 * h, h, rng));
    p.w_init_h = &store.add(prefix + ".init_h.w", uniform_init(m, h, m, rng));
    p.b_init_h = &store.add(prefix + ".init_h.b", uniform_init(1, h, m, rng));
    p.w_init_c = &store.add(prefix + ".init_c.w", uniform_init(m, h, m, rng));
    p.b_init_c = &store.add(prefix + ".init_c.b", uniform_init(1, h, m, rng));
    p.w_out = &store.add(prefix + ".out.w", uniform_init(h, vocab, h, rng));
    p.b_out = &store.add(prefix + ".out.b", uniform_init(1, vocab, h, rng));
    return p;
  }
};

// ---------------------------------------------------------------------------
// Tape path

struct LstmVars {
  Var h;
  Var c;
};

/// h0 = tanh(z Wh + bh), c0 = tanh(z Wc + bc); z is B x m.
inline LstmVars init_state(Var z, const LstmParams& p) {
  if (z.cols() != p.input_dim()) {
    throw DimensionError("init_state: decoder input " + z.value().shape() + " vs expected width " +
                         std::to_string(p.input_dim()));
  }
  Tape& t = *z.tape();
  return {tanh(affine(z, t.param(*p.w_init_h), t.param(*p.b_init_h))),
          tanh(affine(z, t.param(*p.w_init_c), t.param(*p.b_init_c)))};
}

struct LstmStepVars {
  Var h;
  Var c;
  Var logits;  // B x V
};

inline LstmStepVars lstm_step(Var h, Var c, const std::vector<std::size_t>& tokens, const LstmParams& p) {
  Tape& t = *h.tape();
  const std::size_t hid = p.hidden();
  for (std::size_t tok : tokens) {
    if (tok >= p.vocab_size()) {
      throw VocabError("lstm_step: token " + std::to_string(tok) + " >= vocabulary " +
                       std::to_string(p.vocab_size()));
    }
  }
  Var x = gather_rows(t.param(*p.embed), tokens);
  Var gates = broadcast_add_rowvec(add(matmul(x, t.param(*p.w_ih)), matmul(h, t.param(*p.w_hh))), t.param(*p.b));
  Var i = sigmoid(slice_cols(gates, 0, hid));
  Var f = sigmoid(slice_cols(gates, hid, hid));
  Var g = tanh(slice_cols(gates, 2 * hid, hid));
  Var o = sigmoid(slice_cols(gates, 3 * hid, hid));
  Var c_next = add(mul(f, c), mul(i, g));
  Var h_next = mul(o, tanh(c_next));
  Var logits = affine(h_next, t.param(*p.w_out), t.param(*p.b_out));
  return {h_next, c_next, logits};
}

inline void check_gold_sequence(const std::vector<std::size_t>& seq, std::size_t vocab, std::size_t max_len) {
  if (seq.size() < 2 || seq.front() != kBos || seq.back() != kEos) {
    throw ContractError("teacher_forced_loss: sequence must start with BOS and end with EOS");
  }
  if (max_len && seq.size() - 1 > max_len) {
    throw ContractError("teacher_forced_loss: sequence longer than max_len " + std::to_string(max_len));
  }
  for (std::size_t i = 1; i + 1 < seq.size(); ++i) {
    if (seq[i] == kPad || seq[i] == kBos || seq[i] == kEos) {
      throw ContractError("teacher_forced_loss: special token inside sequence");
    }
    if (seq[i] >= vocab) throw VocabError("teacher_forced_loss: token " + std::to_string(seq[i]) + " out of range");
  }
}

/// Mean NLL over every predicted position of every sequence (tokens[1..]),
/// feeding gold tokens. Row b of `z` initializes sequence b.
inline Var teacher_forced_loss(Var z, const std::vector<std::vector<std::size_t>>& sequences, const LstmParams& p,
                               std::size_t max_len = 0) {
  const std::size_t batch = sequences.size();
  if (batch == 0 || z.rows() != batch) {
    throw DimensionError("teacher_forced_loss: " + std::to_string(batch) + " sequences for decoder input " +
                         z.value().shape());
  }
  std::size_t steps = 0;
  for (const auto& s : sequences) {
    check_gold_sequence(s, p.vocab_size(), max_len);
    steps = std::max(steps, s.size() - 1);
  }
  auto state = init_state(z, p);
  std::vector<Var> logits;
  std::vector<std::size_t> targets;
  std::vector<bool> ignore;
  logits.reserve(steps);
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<std::size_t> inputs(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& s = sequences[b];
      inputs[b] = step + 1 < s.size() ? s[step] : kPad;
    }
    auto out = lstm_step(state.h, state.c, inputs, p);
    state = {out.h, out.c};
    logits.push_back(out.logits);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& s = sequences[b];
      const bool active = step + 1 < s.size();
      targets.push_back(active ? s[step + 1] : kPad);
      ignore.push_back(!active);
    }
  }
  return cross_entropy_from_logits(concat_rows(std::span<const Var>(logits)), targets, ignore);
}

// ---------------------------------------------------------------------------
// Inference path

struct LstmState {
  Matrix h;  // 1 x hidden
  Matrix c;
};

/// Frozen-parameter LSTM on plain matrices; models the StepModel interface.
class LstmRunner {
 public:
  using State = LstmState;

  explicit LstmRunner(const LstmParams& p) : p_(&p) {}

  State start(const Matrix& z) const {
    if (z.rows() != 1 || z.cols() != p_->input_dim()) {
      throw DimensionError("init_state: decoder input " + z.shape() + " vs 1x" + std::to_string(p_->input_dim()));
    }
    State s{kernels::matmul(z, p_->w_init_h->value), kernels::matmul(z, p_->w_init_c->value)};
    kernels::add_rowvec_inplace(s.h, p_->b_init_h->value);
    kernels::add_rowvec_inplace(s.c, p_->b_init_c->value);
    for (auto& v : s.h.values()) v = std::tanh(v);
    for (auto& v : s.c.values()) v = std::tanh(v);
    return s;
  }

  /// One cell update; returns the next state and the 1 x V logits.
  std::pair<State, Matrix> step(const State& s, std::size_t token) const {
    if (token >= p_->vocab_size()) {
      throw VocabError("lstm_step: token " + std::to_string(token) + " >= vocabulary " +
                       std::to_string(p_->vocab_size()));
    }
    const std::size_t hid = p_->hidden();
    const Matrix& emb = p_->embed->value;
    Matrix x(1, emb.cols(), std::vector<double>(emb.row(token).begin(), emb.row(token).end()));
    Matrix gates = p_->b->value;
    kernels::gemm_acc(x, false, p_->w_ih->value, false, gates);
    kernels::gemm_acc(s.h, false, p_->w_hh->value, false, gates);
    State next{Matrix(1, hid), Matrix(1, hid)};
    for (std::size_t j = 0; j < hid; ++j) {
      const double i = kernels::sigmoid(gates[j]);
      const double f = kernels::sigmoid(gates[hid + j]);
      const double g = std::tanh(gates[2 * hid + j]);
      const double o = kernels::sigmoid(gates[3 * hid + j]);
      next.c[j] = f * s.c[j] + i * g;
      next.h[j] = o * std::tanh(next.c[j]);
    }
    Matrix logits = p_->b_out->value;
    kernels::gemm_acc(next.h, false, p_->w_out->value, false, logits);
    return {std::move(next), std::move(logits)};
  }

  std::pair<State, std::vector<double>> advance(const State& s, std::size_t token) const {
    auto [next, logits] = step(s, token);
    std::vector<double> lp(logits.size());
    kernels::log_softmax_row(logits.values(), lp);
    return {std::move(next), std::move(lp)};
  }

 private:
  const LstmParams* p_;
};

struct DecodeResult {
  std::vector<std::size_t> tokens;  // surface tokens, no BOS/EOS
  double log_prob = 0.0;            // includes the EOS step when emitted
  bool finished = false;            // ended with EOS
};

inline bool emittable(std::size_t token) { return token != kPad && token != kBos; }

/// Highest cumulative log-probability token at each step, ties to the lowest id.
template <class StepModel>
DecodeResult greedy_decode(const StepModel& model, typename StepModel::State state, const DecodeConfig& config) {
  config.validate();
  DecodeResult out;
  std::size_t prev = kBos;
  for (std::size_t step = 0; step < config.max_len; ++step) {
    auto [next, lp] = model.advance(state, prev);
    std::size_t best = lp.size();
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t tok = 0; tok < lp.size(); ++tok) {
      if (!emittable(tok)) continue;
      const double s = out.log_prob + lp[tok];
      if (best == lp.size() || s > best_score) {
        best = tok;
        best_score = s;
      }
    }
    out.log_prob = best_score;
    if (best == kEos) {
      out.finished = true;
      return out;
    }
    out.tokens.push_back(best);
    state = std::move(next);
    prev = best;
  }
  return out;
}

/// Beam search over cumulative log-probability. Hypotheses that emit EOS are
/// retired and do not occupy beam slots; ties are broken by lexicographic
/// token order.
template <class StepModel>
DecodeResult beam_search_decode(const StepModel& model, typename StepModel::State state, const DecodeConfig& config) {
  config.validate();
  struct Hyp {
    std::vector<std::size_t> tokens;
    double score = 0.0;
    typename StepModel::State state;
  };
  struct Candidate {
    std::size_t parent;
    std::size_t token;
    double score;
  };

  auto norm = [&](double score, std::size_t n_tokens) {
    return config.length_normalize && n_tokens > 0 ? score / static_cast<double>(n_tokens) : score;
  };

  std::vector<Hyp> alive{Hyp{{}, 0.0, std::move(state)}};
  std::vector<DecodeResult> done;
  auto done_key = [&](const DecodeResult& r) { return norm(r.log_prob, r.tokens.size() + (r.finished ? 1 : 0)); };
  auto better = [&](const DecodeResult& a, const DecodeResult& b) {
    const double ka = done_key(a), kb = done_key(b);
    if (ka != kb) return ka > kb;
    return a.tokens < b.tokens;
  };

  for (std::size_t step = 0; step < config.max_len && !alive.empty(); ++step) {
    std::vector<Candidate> cands;
    std::vector<typename StepModel::State> next_states;
    next_states.reserve(alive.size());
    for (std::size_t hi = 0; hi < alive.size(); ++hi) {
      const Hyp& h = alive[hi];
      auto [next, lp] = model.advance(h.state, h.tokens.empty() ? kBos : h.tokens.back());
      next_states.push_back(std::move(next));
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        if (emittable(tok)) cands.push_back({hi, tok, h.score + lp[tok]});
      }
    }
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& ta = alive[a.parent].tokens;
      const auto& tb = alive[b.parent].tokens;
      if (a.parent != b.parent && ta != tb) return ta < tb;
      return a.token < b.token;
    });

    std::vector<Hyp> next_alive;
    for (const auto& c : cands) {
      if (next_alive.size() == config.beam_width) break;
      const Hyp& parent = alive[c.parent];
      if (c.token == kEos) {
        done.push_back({parent.tokens, c.score, true});
        continue;
      }
      Hyp h{parent.tokens, c.score, next_states[c.parent]};
      h.tokens.push_back(c.token);
      next_alive.push_back(std::move(h));
    }
    alive = std::move(next_alive);

    if (!config.length_normalize && !done.empty() && !alive.empty()) {
      double best_done = -std::numeric_limits<double>::infinity();
      for (const auto& r : done) best_done = std::max(best_done, r.log_prob);
      double best_alive = -std::numeric_limits<double>::infinity();
      for (const auto& h : alive) best_alive = std::max(best_alive, h.score);
      // further steps can only lower an alive score
      if (best_done >= best_alive) break;
    }
    if (step + 1 == config.max_len) {
      for (auto& h : alive) done.push_back({std::move(h.tokens), h.score, false});
      alive.clear();
    }
  }
  return *std::min_element(done.begin(), done.end(), better);
}

/// Log-probability the model assigns to `tokens` followed by EOS.
template <class StepModel>
double sequence_log_prob(const StepModel& model, typename StepModel::State state,
                         const std::vector<std::size_t>& tokens, bool with_eos = true) {
  double total = 0.0;
  std::size_t prev = kBos;
  std::vector<std::size_t> seq = tokens;
  if (with_eos) seq.push_back(kEos);
  for (std::size_t tok : seq) {
    auto [next, lp] = model.advance(state, prev);
    total += lp.at(tok);
    state = std::move(next);
    prev = tok;
  }
  return total;
}

}  // namespace groupcap
