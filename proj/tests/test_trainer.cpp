#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "support.hpp"

using namespace remir;
using namespace remir::testing;

namespace {

TrainConfig tiny_config() { return tiny_run().train; }

struct GradFixture {
  Corpus corpus = small_corpus(1);
  std::vector<std::string> types = collect_types({&corpus});
  Vocab vocab = Vocab::build({&corpus}, types, kDefaultMaxEntityId);
};

Corpus synthetic(std::size_t docs, std::uint64_t seed) {
  SynthConfig s;
  s.num_docs = docs;
  s.seed = seed;
  s.max_entities = 5;
  return generate_synthetic(s);
}

}  // namespace

class GradCheckEveryAblation : public ::testing::TestWithParam<AblationMode> {};

TEST_P(GradCheckEveryAblation, AnalyticMatchesCentralDifferences) {
  GradFixture f;
  TrainConfig tc = tiny_config();
  tc.ablation = GetParam();
  if (tc.ablation == AblationMode::no_inference_module) tc.inference_depth = 0;
  const ModelConfig mc = model_config(tc, f.vocab.size(), f.corpus.relations.size());
  const auto params = init_params<double>(mc, 5);
  const PreparedDoc doc = prepare(f.corpus.documents[0], 0, f.vocab, f.types, mc);
  ASSERT_EQ(doc.n(), 4u);
  const auto coarse = grad_check(params, doc, mc, tc, 1e-5, 160, 11);
  const auto fine = grad_check(params, doc, mc, tc, 5e-6, 160, 11);
  EXPECT_LE(coarse.max_error, 1e-4) << coarse.worst;
  EXPECT_LE(fine.max_error, 1e-4) << fine.worst;
  EXPECT_EQ(coarse.coordinates, 160u);
}

INSTANTIATE_TEST_SUITE_P(Modes, GradCheckEveryAblation,
                         ::testing::Values(AblationMode::full, AblationMode::no_imsa_plain_msa, AblationMode::no_mir,
                                           AblationMode::no_inference_module, AblationMode::only_mask_path,
                                           AblationMode::masked_cells_only_recon),
                         [](const auto& info) { return to_string(info.param); });

TEST(Schedule, WarmupThenLinearDecay) {
  EXPECT_DOUBLE_EQ(schedule_factor(0, 100, 0.06), 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(schedule_factor(5, 100, 0.06), 1.0);
  EXPECT_DOUBLE_EQ(schedule_factor(6, 100, 0.06), 1.0);
  EXPECT_DOUBLE_EQ(schedule_factor(53, 100, 0.06), 47.0 / 94.0);
  EXPECT_DOUBLE_EQ(schedule_factor(99, 100, 0.06), 1.0 / 94.0);
  EXPECT_DOUBLE_EQ(schedule_factor(100, 100, 0.06), 0.0);
  EXPECT_DOUBLE_EQ(schedule_factor(0, 10, 0.0), 1.0);
}

TEST(AdamW, DecaysMatricesOnlyAndTakesUnitFirstStep) {
  ModelParams<double> p;
  p.add("enc.w", Mat(2, 2, std::vector<double>{1, 2, 3, 4}));
  p.add("cls.b", Mat(1, 2, std::vector<double>{1, 1}));
  AdamW<double> opt(p);
  auto g = p.zeros_like();
  opt.update(p, g, 0.1, 0.1, 0.5);
  EXPECT_DOUBLE_EQ(p.at("enc.w")(1, 1), 4 * 0.95);
  EXPECT_DOUBLE_EQ(p.at("cls.b")(0, 0), 1.0);

  AdamW<double> fresh(p);
  g.at("cls.b")(0, 0) = 3.0;
  g.at("cls.b")(0, 1) = -0.5;
  fresh.update(p, g, 0.0, 0.01, 0.5);
  EXPECT_NEAR(p.at("cls.b")(0, 0), 1.0 - 0.01, 1e-8);
  EXPECT_NEAR(p.at("cls.b")(0, 1), 1.0 + 0.01, 1e-8);
  EXPECT_DOUBLE_EQ(p.at("enc.w")(1, 1), 4 * 0.95);
}

TEST(Train, SmokeEpochIsDeterministic) {
  const Corpus train = synthetic(10, 1), dev = synthetic(5, 2);
  TrainConfig tc = tiny_config();
  tc.epochs = 1;
  const auto a = remir::train(train, dev, tc);
  const auto b = remir::train(train, dev, tc);
  ASSERT_EQ(a.history.size(), 1u);
  EXPECT_TRUE(std::isfinite(a.history[0].train_loss));
  EXPECT_GT(a.history[0].reconstruction, 0.0);
  EXPECT_EQ(a.history[0].train_loss, b.history[0].train_loss);
  EXPECT_EQ(a.last.params, b.last.params);
  EXPECT_EQ(a.last.epoch, 1u);
}

TEST(Train, WorkerCountDoesNotChangeResults) {
  const Corpus train = synthetic(9, 3), dev = synthetic(4, 4);
  TrainConfig tc = tiny_config();
  tc.epochs = 1;
  ::setenv("REMIR_THREADS", "1", 1);
  const auto a = remir::train(train, dev, tc);
  ::setenv("REMIR_THREADS", "3", 1);
  const auto b = remir::train(train, dev, tc);
  ::unsetenv("REMIR_THREADS");
  EXPECT_EQ(a.last.params, b.last.params);
  EXPECT_EQ(a.history[0].dev_f1, b.history[0].dev_f1);
}

TEST(Train, NoMirHasNoReconstructionTerm) {
  const Corpus train = synthetic(6, 5), dev = synthetic(3, 6);
  TrainConfig tc = tiny_config();
  tc.ablation = AblationMode::no_mir;
  const auto out = remir::train(train, dev, tc);
  for (const auto& h : out.history) {
    EXPECT_EQ(h.reconstruction, 0.0);
    EXPECT_DOUBLE_EQ(h.train_loss, h.classification);
  }
}

TEST(Train, SinglePrecisionRuns) {
  TrainConfig tc = tiny_config();
  tc.precision = 32;
  const auto out = remir::train(synthetic(4, 7), synthetic(2, 8), tc);
  ASSERT_EQ(out.history.size(), 2u);
  EXPECT_TRUE(std::isfinite(out.history.back().train_loss));
}

TEST(Train, ResumeMatchesContinuousRun) {
  const Corpus train = synthetic(8, 9), dev = synthetic(4, 10);
  TrainConfig tc = tiny_config();
  tc.epochs = 3;
  std::optional<Checkpoint> after_first;
  const auto full = remir::train(train, dev, tc, nullptr, [&](const HistoryRecord& h, const Checkpoint& last, bool) {
    if (h.epoch == 1) after_first = last;
  });
  ASSERT_TRUE(after_first);
  const auto path = std::filesystem::temp_directory_path() / "remir_resume.ckpt.json";
  save_checkpoint(*after_first, path.string());
  const Checkpoint loaded = load_checkpoint(path.string());
  std::filesystem::remove(path);
  const auto resumed = remir::train(train, dev, tc, &loaded);
  EXPECT_EQ(resumed.last.params, full.last.params);
  EXPECT_EQ(resumed.last.adam_step, full.last.adam_step);
  ASSERT_EQ(resumed.history.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(resumed.history[i].train_loss, full.history[i].train_loss);
}

TEST(Checkpoint, JsonRoundTripIsExact) {
  TrainConfig tc = tiny_config();
  tc.epochs = 1;
  const auto out = remir::train(synthetic(4, 11), synthetic(2, 12), tc);
  const auto path = std::filesystem::temp_directory_path() / "remir_roundtrip.ckpt.json";
  save_checkpoint(out.last, path.string());
  const Checkpoint back = load_checkpoint(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.params, out.last.params);
  EXPECT_EQ(back.adam_v, out.last.adam_v);
  EXPECT_EQ(to_json(back), to_json(out.last));

  auto j = to_json(out.last);
  j["format_version"] = 99;
  EXPECT_THROW(checkpoint_from_json(j), ParseError);
}

TEST(Evaluate, TinyRateMasksNothingAndEqualsUnmasked) {
  TrainConfig tc = tiny_config();
  tc.epochs = 1;
  const Corpus dev = synthetic(6, 14);
  const auto out = remir::train(synthetic(6, 13), dev, tc);
  const auto a = evaluate(out.last, dev, 0.0);
  const auto b = evaluate(out.last, dev, 1e-4);
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_THROW(evaluate(out.last, dev, 1.5), ConfigError);
}

TEST(Config, RejectsInvalidValues) {
  TrainConfig tc = tiny_config();
  tc.inference_depth = 0;
  EXPECT_THROW(check(tc), ConfigError);
  tc = tiny_config();
  tc.matrix_width = 18;
  EXPECT_THROW(check(tc), ConfigError);
  tc = tiny_config();
  tc.mask_rate = 1.5;
  EXPECT_THROW(check(tc), ConfigError);
  EXPECT_EQ(train_config_from_json(to_json(tiny_config())).matrix_width, 16u);
}

TEST(ForwardStep, SkipsDocumentsWithFewerThanTwoEntities) {
  GradFixture f;
  Document d = f.corpus.documents[0];
  d.entities.resize(1);
  d.triples.clear();
  const TrainConfig tc = tiny_config();
  const ModelConfig mc = model_config(tc, f.vocab.size(), 3);
  const auto params = init_params<double>(mc, 1);
  Rng rng(1);
  std::size_t skipped = 0;
  const auto r = forward_step(prepare(d, 0, f.vocab, f.types, mc), params, mc, tc, rng, &skipped);
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(skipped, 1u);
}
