#pragma once

// Helpers shared by the CLI and the acceptance suite: one train+test run,
// noise-image corpora, and the ablation grids.

#include <cstdint>
#include <optional>
#include <vector>

#include "groupcap/datagen.hpp"
#include "groupcap/metrics.hpp"
#include "groupcap/model.hpp"
#include "groupcap/trainer.hpp"

namespace groupcap {

inline std::vector<const GroupSample*> samples_of(const std::vector<GroupSample>& samples, Split split) {
  std::vector<const GroupSample*> out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back(&s);
  return out;
}

struct RunResult {
  metrics::MetricReport test;
  TrainingLog log;
  double wall_ms = 0.0;
};

/// Builds a model, trains it on the train split and scores the test split.
inline RunResult train_and_evaluate(const std::vector<GroupSample>& samples, const Vocabulary& vocab,
                                    const ModelConfig& model_config, const TrainConfig& train_config,
                                    const DecodeConfig& decode, std::optional<Model>* keep = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  Model model = Model::build(model_config, vocab);
  const auto train_set = samples_of(samples, Split::train);
  const auto val_set = samples_of(samples, Split::val);
  const auto test_set = samples_of(samples, Split::test);
  RunResult r;
  r.log = train(model, train_set, val_set, train_config);
  r.test = evaluate(model, test_set, decode);
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (keep) keep->emplace(std::move(model));
  return r;
}

/// Copy of `samples` with `k` target features of every sample replaced by
/// unrelated images. Each sample gets its own stream so results do not
/// depend on corpus order.
inline std::vector<GroupSample> with_noise_images(const std::vector<GroupSample>& samples, std::size_t k,
                                                  const Lexicon& lexicon, const Prototypes& prototypes,
                                                  const GenConfig& gen, std::uint64_t stream_salt) {
  const GraphSampler sampler(lexicon, gen.template_weights);
  std::vector<GroupSample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto rng = stream_rng(gen.seed ^ splitmix64(stream_salt + k), i);
    out.push_back(inject_noise_images(samples[i], k, sampler, prototypes, gen.noise_sigma, rng));
  }
  return out;
}

/// Noise-image corpus for training (train/val rows get k_train images) and
/// testing (test rows get k_test images).
inline std::vector<GroupSample> noise_grid_corpus(const std::vector<GroupSample>& samples, std::size_t k_train,
                                                  std::size_t k_test, const Lexicon& lexicon,
                                                  const Prototypes& prototypes, const GenConfig& gen) {
  constexpr std::uint64_t kTrainSalt = 0x6e6f697365747261ULL;
  constexpr std::uint64_t kTestSalt = 0x6e6f69736574657ULL;
  auto train_side = with_noise_images(samples, k_train, lexicon, prototypes, gen, kTrainSalt);
  auto test_side = with_noise_images(samples, k_test, lexicon, prototypes, gen, kTestSalt);
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == Split::test) train_side[i] = std::move(test_side[i]);
  return train_side;
}

inline constexpr std::array<std::size_t, 4> kAblationTargets = {0, 1, 3, 5};
inline constexpr std::array<std::size_t, 4> kAblationReferences = {0, 5, 10, 15};

}  // namespace groupcap
