#pragma once

// Run configuration: one flat key=value namespace covering generation, model,
// training and decoding settings. Unknown keys are errors.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "groupcap/datagen.hpp"
#include "groupcap/decoder.hpp"
#include "groupcap/model.hpp"
#include "groupcap/trainer.hpp"

namespace groupcap {

struct RunConfig {
  GenConfig gen;
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;

  /// Sets one key from its textual value.
  void set(std::string_view key, std::string_view value) {
    const auto& table = setters();
    auto it = table.find(std::string(key));
    if (it == table.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    try {
      it->second(*this, std::string(value));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("bad value '" + std::string(value) + "' for key '" + std::string(key) + "'");
    }
  }

  /// Applies `key=value` lines; blank lines and `#` comments are skipped.
  void merge(std::istream& in, const std::string& origin = "<config>") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto text = trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      }
      try {
        set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    merge(in, path);
  }

  /// `key=value` override as given on the command line.
  void apply_override(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(kv) + "' is not key=value");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  /// Canonical dump, one key per line in sorted key order.
  std::string to_text() const {
    std::ostringstream out;
    for (const auto& [key, get] : getters()) out << key << "=" << get(*this) << "\n";
    return out.str();
  }

  void validate() const {
    gen.validate();
    model.validate();
    train.validate();
    decode.validate();
  }

  static std::vector<std::string> keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : setters()) out.push_back(k);
    return out;
  }

 private:
  using Setter = std::function<void(RunConfig&, const std::string&)>;
  using Getter = std::function<std::string(const RunConfig&)>;

  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::size_t to_size(const std::string& v) {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw ConfigError("expected a nonnegative integer, got '" + v + "'");
    const auto x = std::stoull(v, &pos);
    if (pos != v.size()) throw ConfigError("expected an integer, got '" + v + "'");
    return static_cast<std::size_t>(x);
  }
  static double to_real(const std::string& v) {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw ConfigError("expected a number, got '" + v + "'");
    return x;
  }
  static bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("expected a boolean, got '" + v + "'");
  }
  static std::string real_text(double x) { return TrainingLog::format_double(x); }

  static const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"gen.seed", [](RunConfig& c, const std::string& v) { c.gen.seed = to_size(v); }},
        {"gen.d", [](RunConfig& c, const std::string& v) { c.gen.d = c.model.d = to_size(v); }},
        {"gen.n_samples", [](RunConfig& c, const std::string& v) { c.gen.n_samples = to_size(v); }},
        {"gen.n_t", [](RunConfig& c, const std::string& v) { c.gen.n_t = to_size(v); }},
        {"gen.n_r", [](RunConfig& c, const std::string& v) { c.gen.n_r = to_size(v); }},
        {"gen.noise_sigma", [](RunConfig& c, const std::string& v) { c.gen.noise_sigma = to_real(v); }},
        {"gen.lexicon", [](RunConfig& c, const std::string& v) { c.gen.lexicon_path = v; }},
        {"gen.train_frac", [](RunConfig& c, const std::string& v) { c.gen.fractions.train = to_real(v); }},
        {"gen.val_frac", [](RunConfig& c, const std::string& v) { c.gen.fractions.val = to_real(v); }},
        {"gen.test_frac", [](RunConfig& c, const std::string& v) { c.gen.fractions.test = to_real(v); }},
        {"model.d_ff", [](RunConfig& c, const std::string& v) { c.model.d_ff = to_size(v); }},
        {"model.hidden", [](RunConfig& c, const std::string& v) { c.model.hidden = to_size(v); }},
        {"model.embed", [](RunConfig& c, const std::string& v) { c.model.embed = to_size(v); }},
        {"model.agg", [](RunConfig& c, const std::string& v) { c.model.agg = aggregation_from_string(v); }},
        {"model.contrast", [](RunConfig& c, const std::string& v) { c.model.contrast = contrast_from_string(v); }},
        {"model.n_t", [](RunConfig& c, const std::string& v) { c.model.n_t = to_size(v); }},
        {"model.n_r", [](RunConfig& c, const std::string& v) { c.model.n_r = to_size(v); }},
        {"model.plain_mean_context",
         [](RunConfig& c, const std::string& v) { c.model.plain_mean_context = to_bool(v); }},
        {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_size(v); }},
        {"train.batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_size(v); }},
        {"train.lr", [](RunConfig& c, const std::string& v) { c.train.lr = to_real(v); }},
        {"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = c.model.seed = to_size(v); }},
        {"train.shuffle", [](RunConfig& c, const std::string& v) { c.train.shuffle = to_bool(v); }},
        {"train.eval_every", [](RunConfig& c, const std::string& v) { c.train.eval_every = to_size(v); }},
        {"train.grad_clip",
         [](RunConfig& c, const std::string& v) {
           if (v == "off" || v == "none" || v.empty()) {
             c.train.grad_clip.reset();
           } else {
             c.train.grad_clip = to_real(v);
           }
         }},
        {"decode.max_len", [](RunConfig& c, const std::string& v) { c.decode.max_len = to_size(v); }},
        {"decode.beam_width", [](RunConfig& c, const std::string& v) { c.decode.beam_width = to_size(v); }},
        {"decode.length_normalize",
         [](RunConfig& c, const std::string& v) { c.decode.length_normalize = to_bool(v); }},
    };
    return table;
  }

  static const std::map<std::string, Getter>& getters() {
    static const std::map<std::string, Getter> table = {
        {"gen.seed", [](const RunConfig& c) { return std::to_string(c.gen.seed); }},
        {"gen.d", [](const RunConfig& c) { return std::to_string(c.gen.d); }},
        {"gen.n_samples", [](const RunConfig& c) { return std::to_string(c.gen.n_samples); }},
        {"gen.n_t", [](const RunConfig& c) { return std::to_string(c.gen.n_t); }},
        {"gen.n_r", [](const RunConfig& c) { return std::to_string(c.gen.n_r); }},
        {"gen.noise_sigma", [](const RunConfig& c) { return real_text(c.gen.noise_sigma); }},
        {"gen.lexicon", [](const RunConfig& c) { return c.gen.lexicon_path; }},
        {"gen.train_frac", [](const RunConfig& c) { return real_text(c.gen.fractions.train); }},
        {"gen.val_frac", [](const RunConfig& c) { return real_text(c.gen.fractions.val); }},
        {"gen.test_frac", [](const RunConfig& c) { return real_text(c.gen.fractions.test); }},
        {"model.d_ff", [](const RunConfig& c) { return std::to_string(c.model.d_ff); }},
        {"model.hidden", [](const RunConfig& c) { return std::to_string(c.model.hidden); }},
        {"model.embed", [](const RunConfig& c) { return std::to_string(c.model.embed); }},
        {"model.agg", [](const RunConfig& c) { return std::string(to_string(c.model.agg)); }},
        {"model.contrast", [](const RunConfig& c) { return std::string(to_string(c.model.contrast)); }},
        {"model.n_t", [](const RunConfig& c) { return std::to_string(c.model.n_t); }},
        {"model.n_r", [](const RunConfig& c) { return std::to_string(c.model.n_r); }},
        {"model.plain_mean_context",
         [](const RunConfig& c) { return std::string(c.model.plain_mean_context ? "true" : "false"); }},
        {"train.epochs", [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
        {"train.batch_size", [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
        {"train.lr", [](const RunConfig& c) { return real_text(c.train.lr); }},
        {"train.seed", [](const RunConfig& c) { return std::to_string(c.train.seed); }},
        {"train.shuffle", [](const RunConfig& c) { return std::string(c.train.shuffle ? "true" : "false"); }},
        {"train.eval_every", [](const RunConfig& c) { return std::to_string(c.train.eval_every); }},
        {"train.grad_clip",
         [](const RunConfig& c) { return c.train.grad_clip ? real_text(*c.train.grad_clip) : std::string("off"); }},
        {"decode.max_len", [](const RunConfig& c) { return std::to_string(c.decode.max_len); }},
        {"decode.beam_width", [](const RunConfig& c) { return std::to_string(c.decode.beam_width); }},
        {"decode.length_normalize",
         [](const RunConfig& c) { return std::string(c.decode.length_normalize ? "true" : "false"); }},
    };
    return table;
  }
};

}  // namespace groupcap
