#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "groupcap/datagen.hpp"
#include "support/cli_runner.hpp"

using namespace groupcap::check;

namespace {

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new ScratchDir("cli");
    std::ofstream(dir_->path / "tiny.cfg") << kTinyConfig;
    const auto gen = run_cli("datagen -c " + dir_->str("tiny.cfg") + " -o " + dir_->str("data"));
    ASSERT_EQ(gen.status, 0) << gen.out;
    const auto tr = run_cli("train -q -d " + dir_->str("data") + " -o " + dir_->str("run") + " --seed 3");
    ASSERT_EQ(tr.status, 0) << tr.out;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string data() { return dir_->str("data"); }
  static std::string ckpt() { return dir_->str("run/model.ckpt"); }
  static ScratchDir* dir_;
};

ScratchDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, DatagenWritesArtifactsDeterministically) {
  for (const char* f : {"dataset.jsonl", "vocab.txt", "lexicon.tsv", "config.txt", "report.json", "run.json"})
    EXPECT_TRUE(fs::exists(fs::path(data()) / f)) << f;
  ScratchDir again("cli-again");
  ASSERT_EQ(run_cli("datagen -c " + dir_->str("tiny.cfg") + " -o " + again.str()).status, 0);
  for (const char* f : {"dataset.jsonl", "vocab.txt", "lexicon.tsv", "config.txt", "report.json", "run.json"})
    EXPECT_EQ(slurp(fs::path(data()) / f), slurp(again.path / f)) << f;
  const auto run = nlohmann::json::parse(slurp(fs::path(data()) / "run.json"));
  EXPECT_EQ(run["command"], "datagen");
  EXPECT_EQ(run["seed"], 17);
  EXPECT_TRUE(run.contains("config_hash"));
}

TEST_F(Cli, SeedFlagAndEnvironmentFallback) {
  ScratchDir a("cli-seed-a"), b("cli-seed-b");
  ASSERT_EQ(run_cli("datagen -c " + dir_->str("tiny.cfg") + " --seed 5 -o " + a.str()).status, 0);
  ASSERT_EQ(run_cli("datagen -c " + dir_->str("tiny.cfg") + " -o " + b.str(), "GROUPCAP_SEED=5").status, 0);
  EXPECT_EQ(slurp(a.path / "dataset.jsonl"), slurp(b.path / "dataset.jsonl"));
  EXPECT_NE(slurp(a.path / "dataset.jsonl"), slurp(fs::path(data()) / "dataset.jsonl"));
}

TEST_F(Cli, TrainIsDeterministic) {
  for (const char* f : {"model.ckpt", "train_log.csv", "batch_losses.txt", "config.txt", "run.json"})
    EXPECT_TRUE(fs::exists(dir_->path / "run" / f)) << f;
  ScratchDir again("cli-train");
  ASSERT_EQ(run_cli("train -q -d " + data() + " -o " + again.str() + " --seed 3").status, 0);
  EXPECT_EQ(slurp(dir_->path / "run" / "model.ckpt"), slurp(again.path / "model.ckpt"));
  EXPECT_EQ(slurp(dir_->path / "run" / "batch_losses.txt"), slurp(again.path / "batch_losses.txt"));
  EXPECT_EQ(slurp(dir_->path / "run" / "run.json"), slurp(again.path / "run.json"));
}

TEST_F(Cli, EvalOnGoldCaptionsIsPerfect) {
  const auto samples = groupcap::read_jsonl(data() + "/dataset.jsonl");
  std::ofstream gold(dir_->path / "gold.txt");
  for (const auto& s : samples)
    if (s.split == groupcap::Split::test) gold << groupcap::detail::join(s.caption) << "\n";
  gold.close();
  const auto r = run_cli("eval -d " + data() + " --predictions " + dir_->str("gold.txt") + " -o " + dir_->str("gold"));
  ASSERT_EQ(r.status, 0) << r.out;
  const auto m = nlohmann::json::parse(slurp(dir_->path / "gold" / "metrics.json"));
  EXPECT_EQ(m["word_acc"].get<double>(), 100.0);
  EXPECT_EQ(m["wer"].get<double>(), 0.0);
}

TEST_F(Cli, EvalCaptionAndAttentionOnACheckpoint) {
  const auto e = run_cli("eval -d " + data() + " --ckpt " + ckpt() + " -o " + dir_->str("eval"));
  ASSERT_EQ(e.status, 0) << e.out;
  EXPECT_NE(e.out.find("WordAcc"), std::string::npos) << e.out;
  EXPECT_TRUE(fs::exists(dir_->path / "eval" / "predictions.txt"));

  const auto c = run_cli("caption -d " + data() + " --ckpt " + ckpt() + " --index 0 --beam 2");
  EXPECT_EQ(c.status, 0) << c.out;
  EXPECT_FALSE(c.out.empty());

  const auto a = run_cli("attention -d " + data() + " --ckpt " + ckpt() + " --index 0");
  ASSERT_EQ(a.status, 0) << a.out;
  const auto j = nlohmann::json::parse(a.out);
  ASSERT_FALSE(j["records"].empty());
  EXPECT_EQ(j["records"][0]["label"], "target_self");
  EXPECT_EQ(j["records"][0]["rows"], 5);
}

TEST_F(Cli, AblationAndNoiseGrids) {
  const auto ab = run_cli("ablate -d " + data() + " --ckpt-dir " + dir_->str("ablate") +
                          " --targets 0,5 --refs 15 --set train.epochs=1");
  ASSERT_EQ(ab.status, 0) << ab.out;
  EXPECT_TRUE(fs::exists(dir_->path / "ablate" / "tgt0_ref15.ckpt"));
  const auto cells = nlohmann::json::parse(slurp(dir_->path / "ablate" / "ablation.json"));
  EXPECT_EQ(cells.size(), 2u);

  const auto nz = run_cli("noise -d " + data() + " --ckpt-dir " + dir_->str("noise") +
                          " --k-train 0 --k-test 0,2 --set train.epochs=1");
  ASSERT_EQ(nz.status, 0) << nz.out;
  EXPECT_TRUE(fs::exists(dir_->path / "noise" / "noise.json"));
  EXPECT_EQ(nlohmann::json::parse(slurp(dir_->path / "noise" / "noise.json")).size(), 2u);
}

TEST_F(Cli, ConfigErrorsFailTheCommand) {
  ScratchDir d("cli-bad");
  const auto unknown = run_cli("datagen --set gen.colour=red -o " + d.str());
  EXPECT_NE(unknown.status, 0);
  EXPECT_NE(unknown.out.find("gen.colour"), std::string::npos) << unknown.out;
  EXPECT_NE(run_cli("train -d " + data() + " -o " + d.str() + " --agg max").status, 0);
  EXPECT_NE(run_cli("eval -d " + data()).status, 0);
  EXPECT_NE(run_cli("caption -d " + data() + " --ckpt " + ckpt()).status, 0);
  EXPECT_NE(run_cli("bogus").status, 0);
}
