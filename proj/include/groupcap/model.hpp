#pragma once

// Full captioner: group aggregation -> contrastive decoder input -> LSTM.
// Also the text checkpoint format:
//
//   GROUPCAP-CKPT v1
//   config            key value lines, closed by `end`
//   vocab <n>         n content words, one per line
//   meta              key value lines, closed by `end`
//   params <n>        per parameter: `name rows cols`, then one line of values per row

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "groupcap/attention.hpp"
#include "groupcap/contrast.hpp"
#include "groupcap/datagen.hpp"
#include "groupcap/decoder.hpp"
#include "groupcap/vocabulary.hpp"

namespace groupcap {

struct ModelConfig {
  std::size_t d = 32;
  std::size_t d_ff = 64;
  std::size_t hidden = 64;
  std::size_t embed = 32;
  AggregationKind agg = AggregationKind::sa;
  ContrastKind contrast = ContrastKind::contrast;
  std::uint64_t seed = 1;
  std::size_t n_t = 5;
  std::size_t n_r = 15;
  bool plain_mean_context = false;

  void validate() const {
    if (d == 0 || d_ff == 0 || hidden == 0 || embed == 0) throw ConfigError("model dimensions must be positive");
    if (n_t + n_r == 0) throw ConfigError("n_t + n_r must be >= 1");
  }
};

struct TrainingMeta {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
};

/// First `n` rows of a stored group; n = 0 yields a single all-zero row.
inline Matrix select_group(const Matrix& features, std::size_t n) {
  if (n == 0) return Matrix(1, features.cols());
  if (n > features.rows()) {
    throw DimensionError("group has " + std::to_string(features.rows()) + " rows, model expects " + std::to_string(n));
  }
  if (n == features.rows()) return features;
  return Matrix(n, features.cols(),
                std::vector<double>(features.data(), features.data() + n * features.cols()));
}

class Model {
 public:
  struct Encoding {
    Var z;  // 1 x m decoder input
    Var target;
    Var reference;
    Var context;  // invalid when the contrast variant does not use it
    std::vector<AttentionRecord> records;
  };

  static Model build(const ModelConfig& config, Vocabulary vocab) {
    config.validate();
    Model m;
    m.config_ = config;
    m.vocab_ = std::move(vocab);
    std::mt19937_64 rng(config.seed);
    m.aggregator_ = Aggregator::create(config.agg, m.params_, config.d, config.d_ff, rng);
    if (uses_joint_context(config.contrast) && !config.plain_mean_context) {
      m.joint_ = TransformerBlockParams::create(m.params_, "ctx.fa", config.d, config.d_ff, rng);
    }
    m.decoder_ = LstmParams::create(m.params_, "dec", m.vocab_.size(), config.embed, config.hidden,
                                    decoder_input_dim(config.contrast, config.d), rng);
    return m;
  }

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const LstmParams& decoder() const { return decoder_; }
  const Aggregator& aggregator() const { return aggregator_; }

  /// Aggregation and contrast for one sample (features already sub-sampled).
  Encoding encode_groups(Tape& tape, const Matrix& phi_t, const Matrix& phi_r) const {
    if (phi_t.cols() != config_.d || phi_r.cols() != config_.d) {
      throw DimensionError("encode: feature width " + std::to_string(phi_t.cols()) + "/" +
                           std::to_string(phi_r.cols()) + " vs model d " + std::to_string(config_.d));
    }
    Var t = tape.constant(phi_t);
    Var r = tape.constant(phi_r);
    auto agg = aggregator_(t, r);
    Encoding enc{Var(), agg.target, agg.reference, Var(), std::move(agg.records)};
    if (uses_joint_context(config_.contrast)) {
      if (config_.plain_mean_context) {
        enc.context = plain_mean_context(t, r);
      } else {
        AttentionRecord rec;
        enc.context = joint_context(t, r, *joint_, &rec);
        enc.records.push_back(std::move(rec));
      }
    }
    enc.z = contrastive_features(enc.target, enc.reference, enc.context, config_.contrast);
    return enc;
  }

  /// Encoding of a stored sample after n_t / n_r sub-sampling.
  Encoding encode(Tape& tape, const GroupSample& s) const {
    return encode_groups(tape, select_group(s.target_features, config_.n_t),
                         select_group(s.reference_features, config_.n_r));
  }

  /// Mean per-token NLL of the gold captions of `batch`.
  Var forward_loss(Tape& tape, std::span<const GroupSample* const> batch) const {
    std::vector<Var> zs;
    std::vector<std::vector<std::size_t>> seqs;
    zs.reserve(batch.size());
    for (const GroupSample* s : batch) {
      zs.push_back(encode(tape, *s).z);
      seqs.push_back(s->tokens);
    }
    return teacher_forced_loss(concat_rows(std::span<const Var>(zs)), seqs, decoder_);
  }
  Var forward_loss(Tape& tape, const GroupSample& s) const {
    const GroupSample* one[] = {&s};
    return forward_loss(tape, std::span<const GroupSample* const>(one));
  }

  Matrix decoder_input(const GroupSample& s) const {
    Tape tape;
    return encode(tape, s).z.value();
  }
  Matrix decoder_input(const Matrix& phi_t, const Matrix& phi_r) const {
    Tape tape;
    return encode_groups(tape, phi_t, phi_r).z.value();
  }

  DecodeResult decode_input(const Matrix& z, const DecodeConfig& config) const {
    LstmRunner runner(decoder_);
    if (config.beam_width == 1) return greedy_decode(runner, runner.start(z), config);
    return beam_search_decode(runner, runner.start(z), config);
  }

  /// Caption words for raw (already sub-sampled) target / reference features.
  std::vector<std::string> caption(const Matrix& phi_t, const Matrix& phi_r, const DecodeConfig& config) const {
    return vocab_.decode(decode_input(decoder_input(phi_t, phi_r), config).tokens);
  }
  std::vector<std::string> caption(const GroupSample& s, const DecodeConfig& config) const {
    return vocab_.decode(decode_input(decoder_input(s), config).tokens);
  }

  std::vector<AttentionRecord> dump_attention(const GroupSample& s) const {
    if (!aggregator_.has_attention()) {
      throw NoAttentionError("dump_attention: the average aggregator has no attention weights");
    }
    Tape tape;
    return encode(tape, s).records;
  }

  TrainingMeta meta;

  // -- checkpoints ---------------------------------------------------------

  void save(std::ostream& out) const {
    out << "GROUPCAP-CKPT v1\n";
    out << "config\n";
    out << "d " << config_.d << "\n";
    out << "d_ff " << config_.d_ff << "\n";
    out << "hidden " << config_.hidden << "\n";
    out << "embed " << config_.embed << "\n";
    out << "agg " << to_string(config_.agg) << "\n";
    out << "contrast " << to_string(config_.contrast) << "\n";
    out << "seed " << config_.seed << "\n";
    out << "n_t " << config_.n_t << "\n";
    out << "n_r " << config_.n_r << "\n";
    out << "plain_mean_context " << (config_.plain_mean_context ? 1 : 0) << "\n";
    out << "end\n";
    const auto words = vocab_.content_words();
    out << "vocab " << words.size() << "\n";
    for (const auto& w : words) out << w << "\n";
    out << "meta\n";
    out << std::setprecision(17);
    out << "epoch " << meta.epoch << "\n";
    out << "seed " << meta.seed << "\n";
    out << "final_loss " << meta.final_loss << "\n";
    out << "end\n";
    out << "params " << params_.size() << "\n";
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Parameter& p = params_[i];
      out << p.name << " " << p.value.rows() << " " << p.value.cols() << "\n";
      for (std::size_t r = 0; r < p.value.rows(); ++r) {
        for (std::size_t c = 0; c < p.value.cols(); ++c) out << (c ? " " : "") << p.value(r, c);
        out << "\n";
      }
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    save(out);
  }

  static Model load(std::istream& in) {
    std::string line;
    auto next_line = [&](const char* what) {
      if (!std::getline(in, line)) throw ParseError(std::string("checkpoint truncated before ") + what);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    };
    if (next_line("header") != "GROUPCAP-CKPT v1") {
      throw ParseError("unsupported checkpoint header '" + line + "' (expected GROUPCAP-CKPT v1)");
    }
    if (next_line("config") != "config") throw ParseError("checkpoint: expected 'config' block");
    std::map<std::string, std::string> kv;
    while (next_line("config end") != "end") {
      std::istringstream is(line);
      std::string k, v;
      is >> k >> v;
      kv[k] = v;
    }
    auto get = [&](const char* k) {
      auto it = kv.find(k);
      if (it == kv.end()) throw ParseError(std::string("checkpoint config missing '") + k + "'");
      return it->second;
    };
    ModelConfig cfg;
    try {
      cfg.d = std::stoull(get("d"));
      cfg.d_ff = std::stoull(get("d_ff"));
      cfg.hidden = std::stoull(get("hidden"));
      cfg.embed = std::stoull(get("embed"));
      cfg.agg = aggregation_from_string(get("agg"));
      cfg.contrast = contrast_from_string(get("contrast"));
      cfg.seed = std::stoull(get("seed"));
      cfg.n_t = std::stoull(get("n_t"));
      cfg.n_r = std::stoull(get("n_r"));
      cfg.plain_mean_context = get("plain_mean_context") == "1";
    } catch (const std::logic_error& e) {
      throw ParseError(std::string("checkpoint config: ") + e.what());
    }

    {
      std::istringstream is(next_line("vocab"));
      std::string tag;
      std::size_t n = 0;
      if (!(is >> tag >> n) || tag != "vocab") throw ParseError("checkpoint: expected 'vocab <n>'");
      std::vector<std::string> words;
      for (std::size_t i = 0; i < n; ++i) words.push_back(next_line("vocabulary word"));
      Model m = build(cfg, Vocabulary::from_words(std::move(words)));

      if (next_line("meta") != "meta") throw ParseError("checkpoint: expected 'meta' block");
      while (next_line("meta end") != "end") {
        std::istringstream ms(line);
        std::string k, v;
        ms >> k >> v;
        try {
          if (k == "epoch") m.meta.epoch = std::stoull(v);
          if (k == "seed") m.meta.seed = std::stoull(v);
          if (k == "final_loss") m.meta.final_loss = std::stod(v);
        } catch (const std::logic_error&) {
          throw ParseError("checkpoint meta: bad value for '" + k + "'");
        }
      }

      std::istringstream ps(next_line("params"));
      std::size_t count = 0;
      if (!(ps >> tag >> count) || tag != "params") throw ParseError("checkpoint: expected 'params <n>'");
      std::set<std::string> seen;
      for (std::size_t i = 0; i < count; ++i) {
        std::istringstream hs(next_line("parameter header"));
        std::string name;
        std::size_t rows = 0, cols = 0;
        if (!(hs >> name >> rows >> cols)) throw ParseError("checkpoint: malformed parameter header '" + line + "'");
        Parameter* p = m.params_.find(name);
        if (!p) throw ParseError("checkpoint: unexpected parameter '" + name + "'");
        if (!seen.insert(name).second) throw ParseError("checkpoint: duplicate parameter '" + name + "'");
        if (p->value.rows() != rows || p->value.cols() != cols) {
          throw ParseError("checkpoint: parameter '" + name + "' is " + Matrix::shape_string(rows, cols) +
                           ", model expects " + p->value.shape());
        }
        for (std::size_t r = 0; r < rows; ++r) {
          const std::string row = next_line(name.c_str());
          const char* cur = row.c_str();
          for (std::size_t c = 0; c < cols; ++c) {
            char* end = nullptr;
            const double v = std::strtod(cur, &end);
            if (end == cur || !std::isfinite(v)) {
              throw ParseError("checkpoint: bad value in parameter '" + name + "' row " + std::to_string(r));
            }
            p->value(r, c) = v;
            cur = end;
          }
          while (*cur == ' ' || *cur == '\t') ++cur;
          if (*cur != '\0') throw ParseError("checkpoint: extra values in parameter '" + name + "'");
        }
      }
      if (seen.size() != m.params_.size()) {
        for (std::size_t i = 0; i < m.params_.size(); ++i) {
          if (!seen.count(m.params_[i].name)) {
            throw ParseError("checkpoint: missing parameter '" + m.params_[i].name + "'");
          }
        }
      }
      return m;
    }
  }

  static Model load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path);
    return load(in);
  }

 private:
  Model() = default;

  ModelConfig config_;
  Vocabulary vocab_;
  ParamStore params_;
  Aggregator aggregator_;
  std::optional<TransformerBlockParams> joint_;
  LstmParams decoder_;
};

}  // namespace groupcap
