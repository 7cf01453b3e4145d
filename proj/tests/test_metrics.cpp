#include <gtest/gtest.h>

#include "psrd/metrics.hpp"

using namespace psrd;

namespace {

const Vocabulary& V() {
  static const Vocabulary v;
  return v;
}

SceneGraph scene_with(std::initializer_list<const char*> cats) {
  SceneGraph s;
  int id = 0;
  for (auto c : cats) s.objects.push_back({id++, V().id(c), {}});
  return s;
}

}  // namespace

TEST(WordRate, AllClean) {
  std::vector<AnnotatedCaption> s{from_flags({{false, false, false}}), from_flags({{false, false}})};
  for (double r : word_rate(s, 0, 10)) EXPECT_EQ(r, 0.0);
}

TEST(WordRate, DirectCount) {
  std::vector<AnnotatedCaption> s{from_flags({{true, false, false}}), from_flags({{true, false}}),
                                  from_flags({{false, false, true}}), from_flags({{false, false, false}})};
  const auto r = word_rate(s, 0, 10);
  EXPECT_EQ(r[0], 0.5);
  EXPECT_EQ(r[9], 0.25);
}

TEST(WordRate, InsufficientSamples) {
  std::vector<AnnotatedCaption> s{from_flags({{false}})};
  try {
    word_rate(s, 1, 10);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "insufficient samples");
  }
  EXPECT_THROW(phase_rate(s, 3), std::invalid_argument);
}

TEST(PositionBin, LeftClosedTenBins) {
  EXPECT_EQ(position_bin(0, 11, 10), 0u);
  EXPECT_EQ(position_bin(5, 11, 10), 5u);   // j = 0.5 opens bin 5
  EXPECT_EQ(position_bin(10, 11, 10), 9u);  // j = 1 lands in the last bin
  EXPECT_EQ(position_bin(0, 1, 10), 0u);
}

TEST(PhaseRate, Examples) {
  std::vector<AnnotatedCaption> clean{from_flags({{false}, {false}}), from_flags({{false}})};
  EXPECT_EQ(phase_rate(clean, 0), 0.0);
  std::vector<AnnotatedCaption> s{from_flags({{true}}), from_flags({{false, true}}), from_flags({{false}}),
                                  from_flags({{false}})};
  EXPECT_EQ(phase_rate(s, 0), 0.5);
}

TEST(Chair, CaptionLevelFraction) {
  const auto scene = scene_with({"dog", "car"});
  const auto cap = annotate(scene, V().parse("a dog , a cat , a car ."), V());
  std::vector<AnnotatedCaption> caps{cap};
  std::vector<SceneGraph> scenes{scene};
  const auto c = chair_scores(caps, scenes, V());
  EXPECT_DOUBLE_EQ(c.chair_i, 1.0 / 3.0);
  EXPECT_EQ(c.chair_s, 1.0);
  EXPECT_EQ(c.cover, 1.0);
}

TEST(Chair, AllPresentIsZero) {
  const auto scene = scene_with({"dog", "car", "tree"});
  std::vector<AnnotatedCaption> caps{annotate(scene, V().parse("a dog , a car ."), V())};
  std::vector<SceneGraph> scenes{scene};
  const auto c = chair_scores(caps, scenes, V());
  EXPECT_EQ(c.chair_i, 0.0);
  EXPECT_EQ(c.chair_s, 0.0);
  EXPECT_EQ(c.hal, 0.0);
  EXPECT_DOUBLE_EQ(c.cover, 2.0 / 3.0);
}

TEST(Chair, SentenceLevelAndPooling) {
  const auto a = scene_with({"dog"});
  const auto b = scene_with({"cat"});
  std::vector<SceneGraph> scenes{a, b};
  // caption 1 clean with 1 mention; caption 2: 3 mentions, 1 bad
  std::vector<AnnotatedCaption> caps{annotate(a, V().parse("a dog ."), V()),
                                     annotate(b, V().parse("a cat , a cat , a car ."), V())};
  const auto c = chair_scores(caps, scenes, V());
  EXPECT_EQ(c.chair_s, 0.5);
  // pooled 1 / 4; the repeated "cat" is a quantity error, not an absent object
  EXPECT_DOUBLE_EQ(c.chair_i, 1.0 / 4.0);
  EXPECT_EQ(c.mentions, 4u);
  EXPECT_EQ(c.hal, 0.5);
}

TEST(AccumulationRate, Examples) {
  EXPECT_DOUBLE_EQ(accumulation_rate(std::vector<double>{2.0, 2.5, 3.5}), 0.75);
  EXPECT_EQ(accumulation_rate(std::vector<double>{1, 1, 1, 1}), 0.0);
  EXPECT_LT(accumulation_rate(std::vector<double>{3, 1}), 0.0);
  EXPECT_THROW(accumulation_rate(std::vector<double>{1}), std::invalid_argument);
}

TEST(AccumulationRate, Telescopes) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> v(static_cast<std::size_t>(rng.uniform_int(2, 9)));
    for (double& x : v) x = rng.uniform();
    double sum = 0;
    for (std::size_t k = 1; k < v.size(); ++k) sum += v[k] - v[k - 1];
    EXPECT_NEAR(accumulation_rate(v), sum / static_cast<double>(v.size() - 1), 1e-12);
  }
}

TEST(PerPhaseChair, SkipsTerminalPhase) {
  const auto scene = scene_with({"dog"});
  const auto cap = annotate(scene, V().parse("a dog , a cat . <eos>"), V());
  EXPECT_EQ(per_phase_chair(cap, scene, V()), (std::vector<double>{0.0, 1.0}));
  std::vector<AnnotatedCaption> caps{cap};
  std::vector<SceneGraph> scenes{scene};
  EXPECT_DOUBLE_EQ(corpus_accumulation_rate(caps, scenes, V()), 1.0);
}

TEST(Rates, StayInUnitInterval) {
  Rng rng(9);
  std::vector<AnnotatedCaption> caps;
  for (int c = 0; c < 50; ++c) {
    std::vector<std::vector<bool>> f(static_cast<std::size_t>(rng.uniform_int(1, 5)));
    for (auto& p : f) {
      p.resize(static_cast<std::size_t>(rng.uniform_int(1, 8)));
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = rng.bernoulli(0.4);
    }
    caps.push_back(from_flags(f));
  }
  for (std::size_t k = 0; k < 3; ++k) {
    for (double r : word_rate(caps, k, 10)) EXPECT_TRUE(r >= 0 && r <= 1);
    const double p = phase_rate(caps, k);
    EXPECT_TRUE(p >= 0 && p <= 1);
  }
}
