#include <gtest/gtest.h>

#include "psrd/data_gen.hpp"
#include "psrd/pipeline.hpp"

using namespace psrd;

namespace {

const Vocabulary& V() {
  static const Vocabulary v;
  return v;
}

const Generator& G() {
  static const Generator g(V(), GeneratorCalibration{});
  return g;
}

SceneGraph dog_and_tree(int id) {
  SceneGraph s;
  s.scene_id = id;
  s.objects = {{0, V().id("dog"), {}}, {1, V().id("tree"), {}}};
  return s;
}

RawCaption caption(int scene_id, const char* text) { return {scene_id, false, 0.0, PromptMode::standard, V().parse(text)}; }

TripletBuildConfig exact(std::size_t cap = 20) {
  TripletBuildConfig c;
  c.reliability = 1.0;
  c.pair_cap = cap;
  return c;
}

}  // namespace

TEST(Elicit, FourCaptionsPerScene) {
  const auto scenes = sample_scenes({10, 3, 6, 2, 2}, V(), 1);
  const auto caps = elicit(scenes, ElicitationConfig{}, G(), 64);
  ASSERT_EQ(caps.size(), 40u);
  int noisy = 0, inducing = 0;
  for (const auto& c : caps) {
    noisy += c.noisy;
    inducing += c.prompt_mode == PromptMode::hallucination_inducing;
    if (c.noisy) {
      EXPECT_GE(c.noise_sigma, 0.2);
      EXPECT_LE(c.noise_sigma, 0.6);
    } else {
      EXPECT_EQ(c.noise_sigma, 0.0);
    }
  }
  EXPECT_EQ(noisy, 20);
  EXPECT_EQ(inducing, 20);
}

TEST(Elicit, Deterministic) {
  const auto scenes = sample_scenes({5, 3, 6, 2, 2}, V(), 2);
  const auto a = elicit(scenes, ElicitationConfig{}, G(), 64);
  const auto b = elicit(scenes, ElicitationConfig{}, G(), 64);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tokens, b[i].tokens);
}

TEST(Elicit, NoisyCaptionsHallucinateMore) {
  const auto scenes = sample_scenes({100, 3, 6, 2, 2}, V(), 3);
  const auto caps = elicit(scenes, ElicitationConfig{}, G(), 64);
  std::size_t bad[2] = {0, 0}, total[2] = {0, 0};
  for (const auto& c : caps) {
    const auto& scene = scenes[static_cast<std::size_t>(c.scene_id)];
    for (const auto& p : segment(c.tokens, V())) {
      bad[c.noisy] += !grounding_oracle(scene, p.tokens, V()).grounded;
      total[c.noisy] += 1;
    }
  }
  EXPECT_GT(static_cast<double>(bad[1]) / total[1], static_cast<double>(bad[0]) / total[0]);
}

TEST(Elicit, Validation) {
  ElicitationConfig c;
  c.noise_sigma_low = 0.7;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  const std::vector<SceneGraph> none;
  EXPECT_THROW(elicit(none, ElicitationConfig{}, G(), 64), std::invalid_argument);
}

TEST(BuildTriplets, CrossProductAndNegativePairs) {
  const std::vector<SceneGraph> scenes{dog_and_tree(0)};
  const std::vector<RawCaption> caps{caption(0, "a dog , a tree , a cat , a car , a cup .")};
  const auto d = build_triplets(caps, scenes, V(), exact());
  EXPECT_EQ(d.labeled.size(), 5u);
  EXPECT_EQ(d.triplets.size(), 6u);
  EXPECT_EQ(d.pairs.size(), 3u);
  for (const auto& t : d.triplets) {
    EXPECT_TRUE(grounding_oracle(scenes[0], t.s_plus, V()).grounded);
    EXPECT_FALSE(grounding_oracle(scenes[0], t.s_minus, V()).grounded);
  }
  for (const auto& p : d.pairs) EXPECT_EQ(p.scene_id_a, p.scene_id_b);
  EXPECT_EQ(d.report.metrics.accuracy, 1.0);
  EXPECT_EQ(d.report.metrics.precision, 1.0);
  EXPECT_EQ(d.report.metrics.recall, 1.0);
  EXPECT_EQ(d.report.metrics.f1, 1.0);
}

TEST(BuildTriplets, PairCap) {
  const std::vector<SceneGraph> scenes{dog_and_tree(0)};
  const std::vector<RawCaption> caps{caption(0, "a dog , a tree , a cat , a car , a cup .")};
  const auto d = build_triplets(caps, scenes, V(), exact(2));
  EXPECT_EQ(d.triplets.size(), 2u);
  EXPECT_EQ(d.pairs.size(), 2u);
}

TEST(BuildTriplets, OneSidedSceneIsSkipped) {
  const std::vector<SceneGraph> scenes{dog_and_tree(0), dog_and_tree(1)};
  const std::vector<RawCaption> caps{caption(0, "a dog , a tree ."), caption(1, "a dog , a cat .")};
  const auto d = build_triplets(caps, scenes, V(), exact());
  EXPECT_EQ(d.report.scenes_skipped, 1u);
  ASSERT_EQ(d.triplets.size(), 1u);
  EXPECT_EQ(d.triplets[0].scene_id, 1);
}

TEST(BuildTriplets, TerminalPhaseIgnored) {
  const std::vector<SceneGraph> scenes{dog_and_tree(0)};
  const std::vector<RawCaption> caps{caption(0, "a dog . <eos>")};
  EXPECT_EQ(build_triplets(caps, scenes, V(), exact()).labeled.size(), 1u);
}

TEST(BuildTriplets, UnknownSceneThrows) {
  const std::vector<SceneGraph> scenes{dog_and_tree(0)};
  const std::vector<RawCaption> caps{caption(4, "a dog .")};
  EXPECT_THROW(build_triplets(caps, scenes, V(), exact()), std::invalid_argument);
}

TEST(BuildTriplets, CalibratedReliability) {
  const auto scenes = sample_scenes({300, 3, 6, 2, 2}, V(), 4);
  const auto caps = elicit(scenes, ElicitationConfig{}, G(), 64);
  const auto d = build_triplets(caps, scenes, V(), TripletBuildConfig{});
  ASSERT_GE(d.report.phases, 3000u);
  EXPECT_GE(d.report.metrics.accuracy, 0.854);
  EXPECT_LE(d.report.metrics.accuracy, 0.894);
  for (const auto& t : d.triplets) {
    EXPECT_GT(t.w_plus, 0.5);
    EXPECT_GT(t.w_minus, 0.5);
  }
}

// Expected to fail with the default generator: noisy and inducing captions
// hallucinate about as often as they ground (ratio near 0.9).
TEST(ElicitedCorpus, GroundedToHallucinatedRatio) {
  Experiment ex(ExperimentConfig{});
  const auto scenes = ex.train_scenes();
  const auto d = ex.build_dataset(ex.elicit(scenes), scenes);
  const double ratio = static_cast<double>(d.report.oracle_grounded) / static_cast<double>(d.report.oracle_hallucinated);
  EXPECT_GE(ratio, 5.0);
  EXPECT_LE(ratio, 20.0);
}
