// groupcap: generate, train, evaluate and inspect group captioning models.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "groupcap/config.hpp"
#include "groupcap/experiments.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace groupcap;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "groupcap 1.0.0";

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Provenance record written next to every command's outputs.
void write_run_record(const fs::path& dir, const std::string& command, const RunConfig& cfg, std::uint64_t seed,
                      const ordered_json& extra = ordered_json::object()) {
  ordered_json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["config_hash"] = hex64(fnv1a(cfg.to_text()));
  j["seed"] = seed;
  j["config"] = cfg.to_text();
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text(dir / "run.json", j.dump(2) + "\n");
}

/// Options every config-driven command accepts.
struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string agg;
  std::string contrast;

  void attach(CLI::App* app, bool variants) {
    app->add_option("-c,--config", config_path, "key=value config file");
    app->add_option("--set", overrides, "override one key (key=value), repeatable");
    app->add_option("--seed", seed, "seed (falls back to $GROUPCAP_SEED)");
    if (variants) {
      app->add_option("--agg", agg, "aggregation: average|sa|attenall|ca|nca");
      app->add_option("--contrast", contrast, "contrast: none|contrast|contrast1|contrast2");
    }
  }

  std::optional<std::uint64_t> effective_seed() const {
    if (seed) return seed;
    if (const char* env = std::getenv("GROUPCAP_SEED"); env && *env) {
      try {
        return std::stoull(env);
      } catch (const std::exception&) {
        throw ConfigError(std::string("GROUPCAP_SEED is not an integer: ") + env);
      }
    }
    return std::nullopt;
  }

  /// Data-dir config first, then the file, then --set, then flags.
  RunConfig load(const std::optional<fs::path>& data_dir, bool seed_is_training) const {
    RunConfig cfg;
    if (data_dir && fs::exists(*data_dir / "config.txt")) {
      std::istringstream in(read_text(*data_dir / "config.txt"));
      cfg.merge(in, (*data_dir / "config.txt").string());
    }
    if (!config_path.empty()) cfg.merge_file(config_path);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    if (auto s = effective_seed()) {
      if (seed_is_training) {
        cfg.set("train.seed", std::to_string(*s));
      } else {
        cfg.set("gen.seed", std::to_string(*s));
      }
    }
    if (!agg.empty()) cfg.set("model.agg", agg);
    if (!contrast.empty()) cfg.set("model.contrast", contrast);
    cfg.validate();
    return cfg;
  }
};

struct Dataset {
  std::vector<GroupSample> samples;
  Vocabulary vocab;
  Lexicon lexicon;
};

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.samples = read_jsonl((dir / "dataset.jsonl").string());
  std::istringstream vin(read_text(dir / "vocab.txt"));
  d.vocab = Vocabulary::read(vin);
  std::istringstream lin(read_text(dir / "lexicon.tsv"));
  d.lexicon = Lexicon::from_tsv(lin);
  return d;
}

Lexicon load_lexicon(const GenConfig& gen) {
  if (gen.lexicon_path.empty()) return Lexicon::default_lexicon();
  std::ifstream in(gen.lexicon_path);
  if (!in) throw ConfigError("cannot read lexicon " + gen.lexicon_path);
  return Lexicon::from_tsv(in);
}

const GroupSample& select_sample(const Dataset& d, const std::string& id, std::optional<std::size_t> index) {
  if (index) {
    if (*index >= d.samples.size()) {
      throw IndexError("sample index " + std::to_string(*index) + " out of range (" +
                       std::to_string(d.samples.size()) + " samples)");
    }
    return d.samples[*index];
  }
  for (const auto& s : d.samples)
    if (s.id == id) return s;
  throw IndexError("no sample with id '" + id + "'");
}

double round_sig(double x, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return std::strtod(buf, nullptr);
}

ordered_json report_json(const metrics::MetricReport& r) {
  ordered_json j;
  j["n_samples"] = r.n_samples;
  j["word_acc"] = r.word_acc;
  j["wer"] = r.wer;
  j["bleu1"] = r.bleu1;
  j["bleu2"] = r.bleu2;
  j["meteor"] = r.meteor;
  j["rouge_l"] = r.rouge_l;
  j["cider"] = r.cider;
  return j;
}

std::string report_table(const metrics::MetricReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(10) << "metric" << std::right << std::setw(12) << "value" << "\n";
  auto row = [&](const char* name, double v) {
    out << std::left << std::setw(10) << name << std::right << std::setw(12) << std::fixed << std::setprecision(4) << v
        << "\n";
  };
  row("WordAcc", r.word_acc);
  row("WER", r.wer);
  row("BLEU1", r.bleu1);
  row("BLEU2", r.bleu2);
  row("METEOR", r.meteor);
  row("ROUGE-L", r.rouge_l);
  row("CIDEr", r.cider);
  out << std::left << std::setw(10) << "samples" << std::right << std::setw(12) << r.n_samples << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------

int cmd_datagen(const CommonOptions& opt, const fs::path& out_dir) {
  RunConfig cfg = opt.load(std::nullopt, false);
  const Lexicon lexicon = load_lexicon(cfg.gen);
  Corpus corpus = generate_corpus(cfg.gen, lexicon);
  fs::create_directories(out_dir);
  write_jsonl(corpus.samples, (out_dir / "dataset.jsonl").string());
  {
    std::ostringstream v;
    corpus.vocab.write(v);
    write_text(out_dir / "vocab.txt", v.str());
    std::ostringstream l;
    corpus.lexicon.to_tsv(l);
    write_text(out_dir / "lexicon.tsv", l.str());
  }
  write_text(out_dir / "config.txt", cfg.to_text());

  ordered_json report;
  report["n_samples"] = corpus.samples.size();
  report["vocab_size"] = corpus.vocab.size();
  for (Split s : {Split::train, Split::val, Split::test})
    report["split"][std::string(to_string(s))] = corpus.of_split(s).size();
  std::map<std::string, std::size_t> hist;
  for (const auto& s : corpus.samples) hist[std::string(to_string(*template_of(s.graph, corpus.lexicon)))]++;
  for (const auto& [k, v] : hist) report["templates"][k] = v;
  write_text(out_dir / "report.json", report.dump(2) + "\n");
  write_run_record(out_dir, "datagen", cfg, cfg.gen.seed);
  std::cout << "wrote " << corpus.samples.size() << " samples (vocab " << corpus.vocab.size() << ") to "
            << out_dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& opt, const fs::path& data_dir, const fs::path& out_dir, bool quiet) {
  RunConfig cfg = opt.load(data_dir, true);
  const Dataset data = load_dataset(data_dir);
  cfg.model.d = data.samples.front().target_features.cols();
  Model model = Model::build(cfg.model, data.vocab);
  const auto train_set = samples_of(data.samples, Split::train);
  const auto val_set = samples_of(data.samples, Split::val);
  auto log = train(model, train_set, val_set, cfg.train, DecodeConfig{.max_len = cfg.decode.max_len, .beam_width = 1},
                   [&](const EpochLog& e) {
                     if (quiet) return;
                     std::cout << "epoch " << e.epoch << " loss " << std::fixed << std::setprecision(5) << e.mean_loss;
                     if (e.val_wordacc) std::cout << " val_wordacc " << std::setprecision(2) << *e.val_wordacc;
                     std::cout << "\n" << std::flush;
                   });
  fs::create_directories(out_dir);
  model.save((out_dir / "model.ckpt").string());
  std::ostringstream csv;
  log.write_csv(csv);
  write_text(out_dir / "train_log.csv", csv.str());
  std::ostringstream losses;
  for (double l : log.batch_losses) losses << TrainingLog::format_double(l) << "\n";
  write_text(out_dir / "batch_losses.txt", losses.str());
  write_text(out_dir / "config.txt", cfg.to_text());
  write_run_record(out_dir, "train", cfg, cfg.train.seed, {{"data", data_dir.string()}});
  std::cout << "saved " << (out_dir / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& opt, const fs::path& data_dir, const std::string& ckpt, const std::string& split_name,
             const std::string& predictions_path, const fs::path& out_dir) {
  RunConfig cfg = opt.load(data_dir, true);
  const Dataset data = load_dataset(data_dir);
  const auto set = samples_of(data.samples, split_from_string(split_name));
  std::vector<metrics::TokenizedPair> pairs;
  std::vector<std::string> predicted;
  if (!predictions_path.empty()) {
    std::istringstream in(read_text(predictions_path));
    std::string line;
    while (std::getline(in, line)) predicted.push_back(line);
    if (predicted.size() != set.size()) {
      throw ConfigError("predictions file has " + std::to_string(predicted.size()) + " lines, split '" +
                        split_name + "' has " + std::to_string(set.size()) + " samples");
    }
  } else {
    if (ckpt.empty()) throw ConfigError("eval needs --ckpt or --predictions");
    const Model model = Model::load(ckpt);
    for (const GroupSample* s : set) predicted.push_back(detail::join(model.caption(*s, cfg.decode)));
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    pairs.push_back(metrics::make_pair(predicted[i], detail::join(set[i]->caption)));
  }
  const auto report = metrics::evaluate_corpus(pairs);
  std::cout << report_table(report);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(out_dir / "metrics.json", report_json(report).dump(2) + "\n");
    std::ostringstream p;
    for (const auto& line : predicted) p << line << "\n";
    write_text(out_dir / "predictions.txt", p.str());
    write_run_record(out_dir, "eval", cfg, cfg.train.seed,
                     {{"data", data_dir.string()}, {"ckpt", ckpt}, {"split", split_name}});
  }
  return 0;
}

int cmd_caption(const fs::path& data_dir, const std::string& ckpt, const std::string& id,
                std::optional<std::size_t> index, std::size_t beam, std::size_t max_len) {
  const Dataset data = load_dataset(data_dir);
  const Model model = Model::load(ckpt);
  const GroupSample& s = select_sample(data, id, index);
  DecodeConfig dc{.max_len = max_len, .beam_width = beam};
  dc.validate();
  std::cout << detail::join(model.caption(s, dc)) << "\n";
  return 0;
}

int cmd_attention(const fs::path& data_dir, const std::string& ckpt, const std::string& id,
                  std::optional<std::size_t> index, const std::string& out_path) {
  const Dataset data = load_dataset(data_dir);
  const Model model = Model::load(ckpt);
  const GroupSample& s = select_sample(data, id, index);
  ordered_json j;
  j["sample"] = s.id;
  j["agg"] = std::string(to_string(model.config().agg));
  j["contrast"] = std::string(to_string(model.config().contrast));
  j["records"] = ordered_json::array();
  for (const auto& rec : model.dump_attention(s)) {
    ordered_json r;
    r["label"] = rec.label;
    r["rows"] = rec.weights.rows();
    r["cols"] = rec.weights.cols();
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < rec.weights.rows(); ++i) {
      ordered_json row = ordered_json::array();
      for (double w : rec.weights.row(i)) row.push_back(round_sig(w, 6));
      rows.push_back(std::move(row));
    }
    r["weights"] = std::move(rows);
    j["records"].push_back(std::move(r));
  }
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text(out_path, text);
  }
  return 0;
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  return out;
}

int cmd_ablate(const CommonOptions& opt, const fs::path& data_dir, const fs::path& ckpt_dir,
               const std::string& targets, const std::string& refs) {
  RunConfig cfg = opt.load(data_dir, true);
  const Dataset data = load_dataset(data_dir);
  cfg.model.d = data.samples.front().target_features.cols();
  const auto test_set = samples_of(data.samples, Split::test);
  const auto tlist = parse_list(targets);
  const auto rlist = parse_list(refs);
  fs::create_directories(ckpt_dir);

  ordered_json cells = ordered_json::array();
  std::ostringstream table;
  table << std::setw(6) << "n_t" << std::setw(6) << "n_r" << std::setw(10) << "WordAcc" << std::setw(8) << "WER"
        << std::setw(8) << "BLEU1" << std::setw(8) << "CIDEr" << "\n";
  for (std::size_t nt : tlist) {
    for (std::size_t nr : rlist) {
      if (nt + nr == 0) continue;
      ModelConfig mc = cfg.model;
      mc.n_t = nt;
      mc.n_r = nr;
      const fs::path ckpt = ckpt_dir / ("tgt" + std::to_string(nt) + "_ref" + std::to_string(nr) + ".ckpt");
      std::optional<Model> model;
      if (fs::exists(ckpt)) {
        model.emplace(Model::load(ckpt.string()));
      } else {
        model.emplace(Model::build(mc, data.vocab));
        train(*model, samples_of(data.samples, Split::train), {}, cfg.train);
        model->save(ckpt.string());
      }
      const auto r = evaluate(*model, test_set, cfg.decode);
      ordered_json c = report_json(r);
      c["n_t"] = nt;
      c["n_r"] = nr;
      cells.push_back(c);
      table << std::setw(6) << nt << std::setw(6) << nr << std::fixed << std::setprecision(2) << std::setw(10)
            << r.word_acc << std::setprecision(3) << std::setw(8) << r.wer << std::setw(8) << r.bleu1
            << std::setw(8) << r.cider << "\n";
      std::cout << "tgt" << nt << "+ref" << nr << " word_acc " << std::fixed << std::setprecision(2) << r.word_acc
                << "\n"
                << std::flush;
    }
  }
  std::cout << table.str();
  write_text(ckpt_dir / "ablation.json", cells.dump(2) + "\n");
  write_text(ckpt_dir / "ablation.txt", table.str());
  write_run_record(ckpt_dir, "ablate", cfg, cfg.train.seed, {{"data", data_dir.string()}});
  return 0;
}

int cmd_noise(const CommonOptions& opt, const fs::path& data_dir, const fs::path& ckpt_dir,
              const std::string& k_train_list, const std::string& k_test_list) {
  RunConfig cfg = opt.load(data_dir, true);
  const Dataset data = load_dataset(data_dir);
  cfg.model.d = data.samples.front().target_features.cols();
  const Prototypes prototypes = Prototypes::generate(data.lexicon, cfg.gen.d, cfg.gen.seed);
  const auto ktrain = parse_list(k_train_list);
  const auto ktest = parse_list(k_test_list);
  for (std::size_t k : ktrain)
    if (k > 4) throw ConfigError("k_train must be in 0..4");
  for (std::size_t k : ktest)
    if (k > 4) throw ConfigError("k_test must be in 0..4");
  fs::create_directories(ckpt_dir);

  ordered_json cells = ordered_json::array();
  std::ostringstream table;
  table << std::setw(8) << "k_train";
  for (std::size_t kt : ktest) table << std::setw(10) << ("test" + std::to_string(kt));
  table << "\n";
  for (std::size_t ktr : ktrain) {
    const fs::path ckpt = ckpt_dir / ("noise_train" + std::to_string(ktr) + ".ckpt");
    std::optional<Model> model;
    if (fs::exists(ckpt)) {
      model.emplace(Model::load(ckpt.string()));
    } else {
      const auto corpus = noise_grid_corpus(data.samples, ktr, 0, data.lexicon, prototypes, cfg.gen);
      model.emplace(Model::build(cfg.model, data.vocab));
      train(*model, samples_of(corpus, Split::train), {}, cfg.train);
      model->save(ckpt.string());
    }
    table << std::setw(8) << ktr;
    for (std::size_t kte : ktest) {
      const auto corpus = noise_grid_corpus(data.samples, 0, kte, data.lexicon, prototypes, cfg.gen);
      const auto r = evaluate(*model, samples_of(corpus, Split::test), cfg.decode);
      ordered_json c = report_json(r);
      c["k_train"] = ktr;
      c["k_test"] = kte;
      cells.push_back(c);
      table << std::setw(10) << std::fixed << std::setprecision(2) << r.word_acc;
      std::cout << "train" << ktr << " test" << kte << " word_acc " << std::fixed << std::setprecision(2)
                << r.word_acc << "\n"
                << std::flush;
    }
    table << "\n";
  }
  std::cout << table.str();
  write_text(ckpt_dir / "noise.json", cells.dump(2) + "\n");
  write_text(ckpt_dir / "noise.txt", table.str());
  write_run_record(ckpt_dir, "noise", cfg, cfg.train.seed, {{"data", data_dir.string()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware group captioning on synthetic feature groups"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  CommonOptions common;
  std::string data_dir, out_dir, ckpt, ckpt_dir, split = "test", predictions, sample_id, attention_out;
  std::string targets = "0,1,3,5", refs = "0,5,10,15", k_train = "0,1,2,3,4", k_test = "0,1,2,3,4";
  std::optional<std::size_t> sample_index;
  std::size_t beam = 3, max_len = 8;
  bool quiet = false;

  auto* datagen = app.add_subcommand("datagen", "generate a synthetic corpus");
  common.attach(datagen, false);
  datagen->add_option("-o,--out", out_dir, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a captioner");
  common.attach(train_cmd, true);
  train_cmd->add_option("-d,--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("-o,--out", out_dir, "output directory")->required();
  train_cmd->add_flag("-q,--quiet", quiet, "no per-epoch output");

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint or a predictions file");
  common.attach(eval_cmd, false);
  eval_cmd->add_option("-d,--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint");
  eval_cmd->add_option("--split", split, "train|val|test");
  eval_cmd->add_option("--predictions", predictions, "one caption per line, in dataset order");
  eval_cmd->add_option("-o,--out", out_dir, "write metrics.json and predictions.txt here");

  auto* caption_cmd = app.add_subcommand("caption", "caption one sample");
  caption_cmd->add_option("-d,--data", data_dir, "dataset directory")->required();
  caption_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  auto* by_id = caption_cmd->add_option("--sample", sample_id, "sample id");
  auto* by_index = caption_cmd->add_option("--index", sample_index, "sample index");
  by_id->excludes(by_index);
  caption_cmd->add_option("--beam", beam, "beam width");
  caption_cmd->add_option("--max-len", max_len, "maximum caption length");

  auto* attention_cmd = app.add_subcommand("attention", "dump attention matrices as JSON");
  attention_cmd->add_option("-d,--data", data_dir, "dataset directory")->required();
  attention_cmd->add_option("--ckpt", ckpt, "checkpoint")->required();
  auto* at_id = attention_cmd->add_option("--sample", sample_id, "sample id");
  auto* at_index = attention_cmd->add_option("--index", sample_index, "sample index");
  at_id->excludes(at_index);
  attention_cmd->add_option("-o,--out", attention_out, "output file (default stdout)");

  auto* ablate_cmd = app.add_subcommand("ablate", "target/reference count ablation grid");
  common.attach(ablate_cmd, true);
  ablate_cmd->add_option("-d,--data", data_dir, "dataset directory")->required();
  ablate_cmd->add_option("--ckpt-dir", ckpt_dir, "checkpoint directory (reused when present)")->required();
  ablate_cmd->add_option("--targets", targets, "comma-separated n_t values");
  ablate_cmd->add_option("--refs", refs, "comma-separated n_r values");

  auto* noise_cmd = app.add_subcommand("noise", "noise-image robustness grid");
  common.attach(noise_cmd, true);
  noise_cmd->add_option("-d,--data", data_dir, "dataset directory")->required();
  noise_cmd->add_option("--ckpt-dir", ckpt_dir, "checkpoint directory (reused when present)")->required();
  noise_cmd->add_option("--k-train", k_train, "comma-separated noise counts for training");
  noise_cmd->add_option("--k-test", k_test, "comma-separated noise counts for testing");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*datagen) return cmd_datagen(common, out_dir);
    if (*train_cmd) return cmd_train(common, data_dir, out_dir, quiet);
    if (*eval_cmd) return cmd_eval(common, data_dir, ckpt, split, predictions, out_dir);
    if (*caption_cmd || *attention_cmd) {
      if (sample_id.empty() && !sample_index) throw ConfigError("select a sample with --sample or --index");
      if (*caption_cmd) return cmd_caption(data_dir, ckpt, sample_id, sample_index, beam, max_len);
      return cmd_attention(data_dir, ckpt, sample_id, sample_index, attention_out);
    }
    if (*ablate_cmd) return cmd_ablate(common, data_dir, ckpt_dir, targets, refs);
    if (*noise_cmd) return cmd_noise(common, data_dir, ckpt_dir, k_train, k_test);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
