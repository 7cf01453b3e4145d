#include <gtest/gtest.h>

#include <cmath>

#include "psrd/generator.hpp"

using namespace psrd;

namespace {

const Vocabulary& V() {
  static const Vocabulary v;
  return v;
}

SceneGraph scene() {
  SceneGraph s;
  s.scene_id = 1;
  s.objects = {{0, V().id("dog"), {V().id("red")}}, {1, V().id("tree"), {V().id("old")}}, {2, V().id("cup"), {}}};
  return s;
}

GenerationContext context(const Generator& g, std::uint64_t seed, double sigma = 0.0) {
  auto ctx = g.make_context(render_embedding(scene(), V(), 64, sigma, seed), PromptMode::standard, seed);
  ctx.contrast_embedding = corrupt_embedding(ctx.scene_embedding, 1.0, seed + 1);
  return ctx;
}

}  // namespace

TEST(ContrastiveLogits, Examples) {
  const std::vector<double> a{1, 2}, b{2, 1};
  EXPECT_EQ(contrastive_logits(a, b, 1.0), (std::vector<double>{0, 3}));
  EXPECT_EQ(contrastive_logits(a, b, 0.0), a);
  for (double alpha : {0.0, 0.3, 2.5}) EXPECT_EQ(contrastive_logits(a, a, alpha), a);
}

TEST(ContrastiveLogits, AffineInAlpha) {
  const std::vector<double> a{0.3, -1.2, 4.0}, b{1.1, 0.5, -2.0};
  const auto o1 = contrastive_logits(a, b, 0.7);
  const auto o2 = contrastive_logits(a, b, 1.9);
  const auto o0 = contrastive_logits(a, b, 0.0);
  const auto o12 = contrastive_logits(a, b, 2.6);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(o1[i] + o2[i] - o0[i], o12[i], 1e-12);
}

TEST(ContrastiveLogits, Errors) {
  EXPECT_THROW(contrastive_logits(std::vector<double>{1}, std::vector<double>{1, 2}, 1.0), std::invalid_argument);
  EXPECT_THROW(contrastive_logits(std::vector<double>{1}, std::vector<double>{1}, -0.1), std::invalid_argument);
}

TEST(OnsetBoost, GeometricDecay) {
  Generator g(V(), GeneratorCalibration{});
  auto ctx = context(g, 1);
  ctx.onset_decay = 0.5;
  EXPECT_DOUBLE_EQ(g.onset_boost(ctx, 5, 0) / g.onset_boost(ctx, 0, 0), 1.0 / 32.0);
}

TEST(OnsetBoost, InducingModeMultiplies) {
  GeneratorCalibration c;
  Generator g(V(), c);
  auto ctx = context(g, 1);
  const double standard = g.onset_boost(ctx, 0, 0);
  ctx.prompt_mode = PromptMode::hallucination_inducing;
  EXPECT_DOUBLE_EQ(g.onset_boost(ctx, 0, 0), c.inducing_factor * standard);
}

TEST(OnsetBoost, ZeroBiasLeavesLogitsAtBase) {
  GeneratorCalibration c;
  c.onset_bias = 0.0;
  Generator g(V(), c);
  auto ctx = context(g, 2);
  ctx.onset_bias = 0.0;
  const auto at_onset = g.base_logits(ctx, ctx.scene_embedding);
  ctx.prefix = {V().id("a")};
  const auto after_article = g.base_logits(ctx, ctx.scene_embedding);
  for (int i = 0; i < V().sizes().categories; ++i) {
    const auto t = V().category(i);
    const double base = c.category_base * g.prior(t) + g.grounded_boost(ctx.scene_embedding, t);
    EXPECT_DOUBLE_EQ(at_onset[static_cast<std::size_t>(t)], base);
    EXPECT_DOUBLE_EQ(after_article[static_cast<std::size_t>(t)], base);
  }
}

TEST(GroundedBoost, NeverGrowsWithNoise) {
  Generator g(V(), GeneratorCalibration{});
  double prev = g.grounded_factor(0.0);
  for (double s = 0.05; s <= 1.5; s += 0.05) {
    EXPECT_LE(g.grounded_factor(s), prev);
    prev = g.grounded_factor(s);
  }
}

TEST(GeneratePhase, RankZeroAlphaZeroIsGreedy) {
  Generator g(V(), GeneratorCalibration{});
  auto a = context(g, 3);
  auto b = a;
  const auto phase = g.generate_phase(a, 0, 0.0, 8);
  TokenSeq greedy;
  for (int i = 0; i < 8; ++i) {
    const auto l = g.next_logits(b);
    const auto t = static_cast<TokenId>(std::max_element(l.begin(), l.end()) - l.begin());
    greedy.push_back(t);
    b.prefix.push_back(t);
    if (V().is_delimiter(t)) break;
  }
  EXPECT_EQ(phase, greedy);
}

TEST(GeneratePhase, Deterministic) {
  Generator g(V(), GeneratorCalibration{});
  auto a = context(g, 4);
  auto b = a;
  EXPECT_EQ(g.generate_phase(a, 2, 1.5, 8), g.generate_phase(b, 2, 1.5, 8));
}

TEST(GeneratePhase, InitRankPicksRankedToken) {
  Generator g(V(), GeneratorCalibration{});
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto ctx = context(g, seed);
    auto probe = ctx;
    const auto logits = g.adjusted_logits(probe, 0.0);
    const auto order = rank_tokens(logits);
    auto c0 = ctx, c1 = ctx;
    const auto p0 = g.generate_phase(c0, 0, 0.0, 8);
    const auto p1 = g.generate_phase(c1, 1, 0.0, 8);
    EXPECT_EQ(p0[0], order[0]);
    EXPECT_EQ(p1[0], order[1]);
    if (logits[static_cast<std::size_t>(order[0])] != logits[static_cast<std::size_t>(order[1])]) {
      EXPECT_NE(p0[0], p1[0]);
    }
  }
}

TEST(GeneratePhase, EndsInDelimiterUnlessTruncated) {
  Generator g(V(), GeneratorCalibration{});
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto ctx = context(g, seed, 0.3);
    for (int p = 0; p < 6; ++p) {
      const std::size_t cap = 3 + seed % 6;
      const auto phase = g.generate_phase(ctx, seed % 3, 0.5 * (seed % 4), cap);
      ASSERT_FALSE(phase.empty());
      EXPECT_TRUE(V().is_delimiter(phase.back()) || phase.size() == cap);
      for (std::size_t i = 0; i + 1 < phase.size(); ++i) EXPECT_FALSE(V().is_delimiter(phase[i]));
      if (phase.back() == V().eos()) break;
    }
  }
}

TEST(GeneratePhase, Errors) {
  Generator g(V(), GeneratorCalibration{});
  auto ctx = context(g, 1);
  EXPECT_THROW(g.generate_phase(ctx, V().size(), 0.0, 8), std::invalid_argument);
  EXPECT_THROW(g.generate_phase(ctx, 0, 0.0, 0), std::invalid_argument);
  auto bare = g.make_context(render_embedding(scene(), V(), 64, 0.0, 1), PromptMode::standard, 1);
  EXPECT_THROW(g.generate_phase(bare, 0, 1.0, 8), std::invalid_argument);
}

TEST(Generator, NoisyViewHallucinatesMore) {
  Generator g(V(), GeneratorCalibration{});
  auto rate = [&](double sigma) {
    int bad = 0, total = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
      auto ctx = context(g, s, sigma);
      for (int p = 0; p < 4; ++p) {
        const auto phase = g.generate_phase(ctx, 0, 0.0, 8);
        if (phase.size() == 1 && phase[0] == V().eos()) break;
        bad += !grounding_oracle(scene(), phase, V()).grounded;
        ++total;
      }
    }
    return static_cast<double>(bad) / total;
  };
  EXPECT_GT(rate(0.5), rate(0.0));
}

TEST(CleanNll, PositiveAndFinite) {
  Generator g(V(), GeneratorCalibration{});
  auto ctx = context(g, 9);
  const auto base = ctx;
  const auto phase = g.generate_phase(ctx, 0, 0.0, 8);
  const double nll = g.clean_nll(base, phase);
  EXPECT_GT(nll, 0.0);
  EXPECT_TRUE(std::isfinite(nll));
}

TEST(SelfEvaluate, PerfectReliabilityAgreesWithOracle) {
  const auto s = scene();
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    TokenSeq phrase{V().category(static_cast<int>(rng.uniform_int(0, 11))), V().period()};
    const auto e = self_evaluate(s, phrase, V(), 1.0, static_cast<std::uint64_t>(i));
    EXPECT_DOUBLE_EQ(e.p_plus + e.p_minus, 1.0);
    EXPECT_EQ(e.p_plus > e.p_minus, grounding_oracle(s, phrase, V()).grounded);
    EXPECT_GE(std::max(e.p_plus, e.p_minus), 0.6);
    EXPECT_LE(std::max(e.p_plus, e.p_minus), 0.99);
  }
}

TEST(SelfEvaluate, CalibratedAgreement) {
  const auto s = scene();
  Rng rng(2);
  int agree = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    TokenSeq phrase{V().attribute(static_cast<int>(rng.uniform_int(0, 7))),
                    V().category(static_cast<int>(rng.uniform_int(0, 11))), V().period()};
    const auto e = self_evaluate(s, phrase, V(), 0.8739, static_cast<std::uint64_t>(i));
    agree += (e.p_plus > e.p_minus) == grounding_oracle(s, phrase, V()).grounded;
  }
  const double acc = static_cast<double>(agree) / n;
  EXPECT_GE(acc, 0.8539);
  EXPECT_LE(acc, 0.8939);
}

TEST(SelfEvaluate, RejectsBadReliability) {
  EXPECT_THROW(self_evaluate(scene(), V().parse("a dog ."), V(), 0.4, 1), std::invalid_argument);
  EXPECT_THROW(self_evaluate(scene(), V().parse("a dog ."), V(), 1.1, 1), std::invalid_argument);
}
