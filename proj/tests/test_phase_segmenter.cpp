#include <gtest/gtest.h>

#include "psrd/generator.hpp"
#include "psrd/phase_segmenter.hpp"

using namespace psrd;

namespace {

const Vocabulary& V() {
  static const Vocabulary v;
  return v;
}

TokenSeq random_tokens(Rng& rng, std::size_t n) {
  TokenSeq t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(static_cast<TokenId>(rng.uniform_int(0, static_cast<std::int64_t>(V().size()) - 1)));
  return t;
}

}  // namespace

TEST(Segment, DelimiterExample) {
  const auto phases = segment(V().parse("a red car , near a tree ."), V());
  ASSERT_EQ(phases.size(), 2u);
  EXPECT_EQ(V().render(phases[0].tokens), "a red car ,");
  EXPECT_EQ(V().render(phases[1].tokens), "near a tree .");
  EXPECT_EQ(phases[1].start_index, 4u);
  EXPECT_EQ(phases[1].phase_index, 1u);
}

TEST(Segment, NoBoundaryGivesOnePhase) {
  const auto t = V().parse("a red car near a tree");
  const auto phases = segment(t, V());
  ASSERT_EQ(phases.size(), 1u);
  EXPECT_EQ(phases[0].tokens, t);
}

TEST(Segment, EmptyInput) { EXPECT_TRUE(segment(TokenSeq{}, V()).empty()); }

TEST(Segment, ConjunctionOpensNewPhase) {
  const auto phases = segment(V().parse("a dog and a cat ."), V());
  ASSERT_EQ(phases.size(), 2u);
  EXPECT_EQ(V().render(phases[1].tokens), "and a cat .");
}

TEST(Segment, ReconstructionAndIdempotence) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto t = random_tokens(rng, static_cast<std::size_t>(rng.uniform_int(0, 30)));
    const auto phases = segment(t, V());
    EXPECT_EQ(concatenate(phases), t);
    for (const auto& p : phases) {
      const auto again = segment(p.tokens, V());
      ASSERT_EQ(again.size(), 1u);
      EXPECT_EQ(again[0].tokens, p.tokens);
    }
  }
}

TEST(EntropySegment, ConstantEntropyIsOnePhase) {
  const auto t = V().parse("a red car , near a tree .");
  const std::vector<double> h(t.size(), 2.0);
  EXPECT_EQ(entropy_segment(t, h, 1.0).size(), 1u);
}

TEST(EntropySegment, JumpExample) {
  const auto t = V().parse("a red car near tree");
  const std::vector<double> h{1, 1, 1, 5, 1};
  const auto phases = entropy_segment(t, h, 2.0);
  ASSERT_EQ(phases.size(), 2u);
  EXPECT_EQ(phases[1].start_index, 3u);
}

TEST(EntropySegment, LengthMismatch) {
  const auto t = V().parse("a red car");
  EXPECT_THROW(entropy_segment(t, std::vector<double>{1, 2}, 1.0), std::invalid_argument);
}

TEST(EntropySegment, Reconstruction) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto t = random_tokens(rng, static_cast<std::size_t>(rng.uniform_int(0, 25)));
    std::vector<double> h;
    for (std::size_t j = 0; j < t.size(); ++j) h.push_back(rng.uniform(0, 4));
    EXPECT_EQ(concatenate(entropy_segment(t, h, 1.0)), t);
  }
}

// On generated captions the entropy rule should find roughly as many
// boundaries as there are delimiters.
TEST(EntropySegment, AgreesWithDelimitersOnGeneratedText) {
  Generator gen(V(), GeneratorCalibration{});
  SceneGraph scene;
  scene.objects = {{0, V().id("dog"), {V().id("red")}}, {1, V().id("tree"), {V().id("old")}}, {2, V().id("cup"), {}}};
  std::size_t delim = 0, entropy_phases = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto ctx = gen.make_context(render_embedding(scene, V(), 64, 0.0, s), PromptMode::standard, s);
    const auto base = ctx;
    for (int p = 0; p < 6; ++p) {
      auto phase = gen.generate_phase(ctx, 0, 0.0, 8);
      if (phase.size() == 1 && phase[0] == V().eos()) break;
    }
    const auto& tokens = ctx.prefix;
    delim += segment(tokens, V()).size();
    entropy_phases += entropy_segment(tokens, gen.stepwise_entropies(base, tokens)).size();
  }
  const double ratio = static_cast<double>(entropy_phases) / static_cast<double>(delim);
  EXPECT_GE(ratio, 0.5);
  EXPECT_LE(ratio, 1.5);
}
