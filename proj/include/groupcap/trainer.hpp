#pragma once

// Mini-batch Adam training and corpus evaluation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "groupcap/metrics.hpp"
#include "groupcap/model.hpp"

namespace groupcap {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t t = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// One Adam update over every parameter; gradients are zeroed afterwards.
inline void adam_step(std::span<Parameter* const> params, AdamState& s) {
  if (s.m.size() != params.size()) {
    s.m.clear();
    s.v.clear();
    for (const Parameter* p : params) {
      s.m.emplace_back(p->value.rows(), p->value.cols());
      s.v.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Matrix::require_same_shape(p.value, s.m[i], "adam_step");
    double* w = p.value.data();
    double* g = p.grad.data();
    double* m = s.m[i].data();
    double* v = s.v[i].data();
    for (std::size_t k = 0, n = p.value.size(); k < n; ++k) {
      m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
      v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
      g[k] = 0.0;
    }
  }
}

/// Global L2 norm over all gradients.
inline double gradient_norm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.values()) sq += g * g;
  return std::sqrt(sq);
}

inline void clip_gradients(std::span<Parameter* const> params, double max_norm) {
  const double norm = gradient_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const double f = max_norm / norm;
  for (Parameter* p : params)
    for (double& g : p->grad.values()) g *= f;
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  bool shuffle = true;
  std::size_t eval_every = 0;  // 0 disables validation
  std::optional<double> grad_clip;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_wordacc;
  double wall_ms = 0.0;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  std::vector<double> batch_losses;

  void write_csv(std::ostream& out) const {
    out << "epoch,mean_loss,val_wordacc,wall_ms\n";
    for (const auto& e : epochs) {
      out << e.epoch << ',' << format_double(e.mean_loss) << ',';
      if (e.val_wordacc) out << format_double(*e.val_wordacc);
      out << ',' << static_cast<long long>(std::llround(e.wall_ms)) << '\n';
    }
  }

  static std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
  }
};

inline std::vector<metrics::TokenizedPair> predict_pairs(const Model& model,
                                                          std::span<const GroupSample* const> samples,
                                                          const DecodeConfig& decode) {
  std::vector<metrics::TokenizedPair> pairs;
  pairs.reserve(samples.size());
  for (const GroupSample* s : samples) {
    pairs.push_back({model.caption(*s, decode), s->caption});
  }
  return pairs;
}

/// Decodes every sample and scores it against its gold caption.
inline metrics::MetricReport evaluate(const Model& model, std::span<const GroupSample* const> samples,
                                      const DecodeConfig& decode) {
  decode.validate();
  const auto pairs = predict_pairs(model, samples, decode);
  return metrics::evaluate_corpus(pairs);
}

/// Called after every epoch with the freshly appended log entry.
using EpochCallback = std::function<void(const EpochLog&)>;

inline TrainingLog train(Model& model, std::span<const GroupSample* const> train_set,
                         std::span<const GroupSample* const> val_set, const TrainConfig& config,
                         const DecodeConfig& val_decode = DecodeConfig{.beam_width = 1},
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  for (const GroupSample* s : train_set) check_gold_sequence(s->tokens, model.vocab().size(), 0);

  auto params = model.params().all();
  model.params().zero_grad();
  AdamState adam;
  adam.lr = config.lr;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainingLog log;
  const auto start = std::chrono::steady_clock::now();
  std::vector<const GroupSample*> batch;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      batch.clear();
      for (std::size_t i = b0; i < b1; ++i) batch.push_back(train_set[order[i]]);
      Tape tape;
      Var loss = model.forward_loss(tape, batch);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(n_batches));
      }
      tape.backward(loss);
      if (config.grad_clip) clip_gradients(params, *config.grad_clip);
      adam_step(params, adam);
      loss_sum += value;
      log.batch_losses.push_back(value);
      ++n_batches;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / static_cast<double>(n_batches);
    if (config.eval_every > 0 && !val_set.empty() && epoch % config.eval_every == 0) {
      entry.val_wordacc = evaluate(model, val_set, val_decode).word_acc;
    }
    entry.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log.epochs.push_back(entry);
    model.meta = {epoch, config.seed, entry.mean_loss};
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

}  // namespace groupcap
