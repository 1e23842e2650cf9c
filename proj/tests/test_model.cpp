#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "groupcap/trainer.hpp"
#include "support/corpus.hpp"
#include "support/grad_cases.hpp"

using namespace groupcap;

namespace {

const Corpus& corpus() {
  static const Corpus c = check::tiny_corpus();
  return c;
}

std::vector<const GroupSample*> first(std::size_t n) {
  std::vector<const GroupSample*> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(&corpus().samples[i]);
  return out;
}

Matrix mean_rows_of(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(0, c) += m(r, c) / static_cast<double>(m.rows());
  return out;
}

}  // namespace

TEST(SelectGroup, PrefixZeroRowAndOverflow) {
  const Matrix m{{1, 2}, {3, 4}, {5, 6}};
  EXPECT_EQ(select_group(m, 3), m);
  EXPECT_EQ(select_group(m, 2), (Matrix{{1, 2}, {3, 4}}));
  EXPECT_EQ(select_group(m, 0), Matrix(1, 2));
  EXPECT_THROW(select_group(m, 4), DimensionError);
}

TEST(Model, AverageWithoutContrastIsTheBaseline) {
  ModelConfig cfg = check::tiny_model_config();
  cfg.agg = AggregationKind::average;
  cfg.contrast = ContrastKind::none;
  const Model model = Model::build(cfg, corpus().vocab);
  const GroupSample& s = corpus().samples[0];
  const Matrix z = model.decoder_input(s);
  const Matrix mt = mean_rows_of(s.target_features), mr = mean_rows_of(s.reference_features);
  ASSERT_EQ(z.cols(), 2 * cfg.d);
  for (std::size_t j = 0; j < cfg.d; ++j) {
    EXPECT_NEAR(z(0, j), mt(0, j), 1e-12);
    EXPECT_NEAR(z(0, cfg.d + j), mr(0, j), 1e-12);
  }
}

TEST(Model, InitialLossIsNearLogV) {
  const Model model = Model::build(check::tiny_model_config(), corpus().vocab);
  Tape t;
  const double loss = model.forward_loss(t, first(32)).value()(0, 0);
  const double log_v = std::log(static_cast<double>(corpus().vocab.size()));
  EXPECT_NEAR(loss, log_v, 0.1 * log_v);
}

TEST(Model, FullGraphGradientCheck) {
  std::size_t kinks = 0;
  EXPECT_LT(check::full_model_grad_error(AggregationKind::sa, ContrastKind::contrast, &kinks), 1e-4);
  EXPECT_LT(kinks, 10u);
}

TEST(Model, EveryVariantCombinationTrainsOneStep) {
  for (AggregationKind agg : {AggregationKind::average, AggregationKind::sa, AggregationKind::attenall,
                              AggregationKind::ca, AggregationKind::nca}) {
    for (ContrastKind con :
         {ContrastKind::none, ContrastKind::contrast, ContrastKind::contrast1, ContrastKind::contrast2}) {
      ModelConfig cfg = check::tiny_model_config();
      cfg.agg = agg;
      cfg.contrast = con;
      Model model = Model::build(cfg, corpus().vocab);
      TrainConfig tc;
      tc.epochs = 1;
      tc.batch_size = 8;
      const auto batch = first(8);
      const auto log = train(model, batch, {}, tc);
      ASSERT_EQ(log.batch_losses.size(), 1u) << to_string(agg) << "+" << to_string(con);
      EXPECT_TRUE(std::isfinite(log.batch_losses[0]));
      Tape t;
      EXPECT_TRUE(std::isfinite(model.forward_loss(t, batch).value()(0, 0)));
    }
  }
}

TEST(Model, BuildIsSeedDeterministic) {
  ModelConfig cfg = check::tiny_model_config();
  const Model a = Model::build(cfg, corpus().vocab);
  const Model b = Model::build(cfg, corpus().vocab);
  cfg.seed = 2;
  const Model c = Model::build(cfg, corpus().vocab);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].value, b.params()[i].value) << a.params()[i].name;
    any_diff |= a.params()[i].value != c.params()[i].value;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, InitialisationIsBounded) {
  const Model m = Model::build(check::tiny_model_config(), corpus().vocab);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const Parameter& p = m.params()[i];
    for (double v : p.value.values()) EXPECT_LE(std::abs(v), 1.0) << p.name;
  }
}

TEST(Model, CheckpointRoundTrip) {
  ModelConfig cfg = check::tiny_model_config();
  cfg.agg = AggregationKind::ca;
  Model model = Model::build(cfg, corpus().vocab);
  TrainConfig tc;
  tc.epochs = 1;
  train(model, first(16), {}, tc);
  std::stringstream buf;
  model.save(buf);
  const Model back = Model::load(buf);
  EXPECT_EQ(back.config().agg, AggregationKind::ca);
  EXPECT_EQ(back.meta.epoch, 1u);
  EXPECT_EQ(back.meta.final_loss, model.meta.final_loss);
  ASSERT_EQ(back.params().size(), model.params().size());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& a = model.params()[i].value;
    const auto& b = back.params()[i].value;
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
  }
  Tape t1, t2;
  EXPECT_NEAR(model.forward_loss(t1, corpus().samples[3]).value()(0, 0),
              back.forward_loss(t2, corpus().samples[3]).value()(0, 0), 1e-10);
  std::stringstream again;
  back.save(again);
  EXPECT_EQ(again.str(), buf.str());
}

TEST(Model, CheckpointErrors) {
  const Model model = Model::build(check::tiny_model_config(), corpus().vocab);
  std::stringstream buf;
  model.save(buf);
  const std::string text = buf.str();

  std::stringstream wrong_version(std::string("GROUPCAP-CKPT v2") + text.substr(text.find('\n')));
  EXPECT_THROW(Model::load(wrong_version), ParseError);

  std::string corrupt = text;
  const auto at = corrupt.find("dec.out.b ");
  ASSERT_NE(at, std::string::npos);
  const auto line = corrupt.find('\n', at) + 1;
  corrupt.replace(line, 3, "zz ");
  std::stringstream bad(corrupt);
  try {
    Model::load(bad);
    FAIL() << "corrupt value accepted";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("dec.out.b"), std::string::npos) << e.what();
  }

  std::stringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(Model::load(truncated), ParseError);
}

TEST(Model, DumpAttention) {
  const Model sa = Model::build(check::tiny_model_config(), corpus().vocab);
  const auto records = sa.dump_attention(corpus().samples[0]);
  ASSERT_FALSE(records.empty());
  EXPECT_EQ(records[0].label, "target_self");
  const Matrix& w = records[0].weights;
  ASSERT_EQ(w.rows(), 5u);
  ASSERT_EQ(w.cols(), 5u);
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) sum += w(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }

  GroupSample same = corpus().samples[0];
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t c = 0; c < same.target_features.cols(); ++c) same.target_features(r, c) = same.target_features(0, c);
  const auto same_records = sa.dump_attention(same);
  const Matrix& u = same_records[0].weights;
  for (double v : u.values()) EXPECT_NEAR(v, 0.2, 1e-12);

  ModelConfig avg = check::tiny_model_config();
  avg.agg = AggregationKind::average;
  EXPECT_THROW(Model::build(avg, corpus().vocab).dump_attention(corpus().samples[0]), NoAttentionError);
}

TEST(Model, CaptionUsesVocabularyWords) {
  const Model model = Model::build(check::tiny_model_config(), corpus().vocab);
  const auto words = model.caption(corpus().samples[0], DecodeConfig{});
  EXPECT_LE(words.size(), DecodeConfig{}.max_len);
  for (const auto& w : words) EXPECT_NE(w, "<pad>");
  EXPECT_THROW(model.decoder_input(Matrix(5, 7), Matrix(15, 8)), DimensionError);
}

TEST(Model, SubsampledGroups) {
  ModelConfig cfg = check::tiny_model_config();
  cfg.n_t = 0;
  cfg.n_r = 15;
  const Model model = Model::build(cfg, corpus().vocab);
  Tape t;
  EXPECT_TRUE(std::isfinite(model.forward_loss(t, corpus().samples[0]).value()(0, 0)));
  cfg.n_t = 6;
  const Model too_many = Model::build(cfg, corpus().vocab);
  Tape t2;
  EXPECT_THROW(too_many.forward_loss(t2, corpus().samples[0]), DimensionError);
}
