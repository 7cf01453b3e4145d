#include <gtest/gtest.h>

#include "psrd/decoding_controller.hpp"
#include "psrd/phase_segmenter.hpp"

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

const RewardParams& P() {
  static const RewardParams p = init_params(16, 64, V().size(), 5);
  return p;
}

std::vector<SceneGraph> scenes(int n) { return sample_scenes({n, 3, 6, 2, 2}, V(), 77); }

DecodeSettings settings(DecodeMode mode, double tau) {
  DecodeSettings s;
  s.mode = mode;
  s.search.tau = tau;
  s.seed = 11;
  s.delay_seed = 3;
  return s;
}

DecodeOutput run(const SceneGraph& scene, const DecodeSettings& s) {
  return decode(DecodeEnvironment::make(G(), P(), scene, 64, s.seed), s);
}

bool is_eos_phase(const TokenSeq& t) { return t.size() == 1 && t[0] == V().eos(); }

}  // namespace

TEST(Decode, UnreachableLowTauIsGreedy) {
  for (const auto& scene : scenes(20)) {
    const auto base = run(scene, settings(DecodeMode::baseline, 30));
    const auto low = run(scene, settings(DecodeMode::psrd, -100));
    EXPECT_EQ(low.tokens, base.tokens);
    EXPECT_EQ(low.trace.total_evals, static_cast<int>(low.trace.phases.size()));
    for (const auto& r : low.trace.phases) EXPECT_FALSE(r.intervened);
  }
}

TEST(Decode, BaselineNeverIntervenes) {
  for (const auto& scene : scenes(10)) {
    const auto out = run(scene, settings(DecodeMode::baseline, 1000));
    for (const auto& r : out.trace.phases) {
      EXPECT_FALSE(r.intervened);
      EXPECT_EQ(r.evaluator_calls, 0);
    }
  }
}

TEST(Decode, UnreachableHighTauIntervenesEverywhere) {
  for (const auto& scene : scenes(10)) {
    const auto out = run(scene, settings(DecodeMode::psrd, 100));
    for (const auto& r : out.trace.phases) {
      if (is_eos_phase(r.tokens) && !r.intervened) continue;
      EXPECT_TRUE(r.intervened);
      EXPECT_FALSE(r.accepted);
      EXPECT_GT(r.evaluator_calls, 0);
    }
  }
}

TEST(Decode, DelayedAtZeroMatchesPsrd) {
  for (const auto& scene : scenes(15)) {
    auto d = settings(DecodeMode::delayed, 30);
    d.fixed_delay = 0;
    const auto a = run(scene, settings(DecodeMode::psrd, 30));
    const auto b = run(scene, d);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.trace.total_evals, b.trace.total_evals);
  }
}

TEST(Decode, DelayedKeepsPhaseHead) {
  for (const auto& scene : scenes(15)) {
    const auto out = run(scene, settings(DecodeMode::delayed, 30));
    const auto greedy = run(scene, settings(DecodeMode::baseline, 30));
    for (const auto& r : out.trace.phases) {
      if (!r.intervened) continue;
      EXPECT_LE(r.delay_position, r.tokens.size());
    }
    // the first phase shares the greedy prefix, so its head is the greedy head
    if (!out.trace.phases.empty() && out.trace.phases[0].intervened) {
      const auto& r = out.trace.phases[0];
      const auto& g = greedy.trace.phases[0].tokens;
      for (std::size_t i = 0; i < r.delay_position; ++i) EXPECT_EQ(r.tokens[i], g[i]);
    }
  }
}

TEST(DelayPosition, Range) {
  EXPECT_EQ(delay_position(1, 1, 1, 0), 0u);
  EXPECT_EQ(delay_position(0, 1, 1, 0), 0u);
  for (std::size_t len = 2; len < 12; ++len)
    for (std::uint64_t s = 0; s < 50; ++s) {
      const auto p = delay_position(len, s, 3, 2);
      EXPECT_GE(p, 1u);
      EXPECT_LE(p, std::max<std::size_t>(1, len / 2));
      EXPECT_LT(p, len);
    }
}

TEST(Decode, EvaluationAccounting) {
  for (const auto& scene : scenes(15)) {
    const auto out = run(scene, settings(DecodeMode::psrd, 30));
    int calls = 0;
    for (const auto& r : out.trace.phases) {
      calls += r.evaluator_calls;
      EXPECT_EQ(r.trajectory.size(), static_cast<std::size_t>(r.evaluator_calls));
    }
    EXPECT_EQ(out.trace.total_evals, calls + static_cast<int>(out.trace.phases.size()));
  }
}

TEST(Decode, CommittedTokensAreTheConcatenatedPhases) {
  for (const auto& scene : scenes(15)) {
    const auto out = run(scene, settings(DecodeMode::psrd, 30));
    TokenSeq joined;
    for (const auto& r : out.trace.phases) {
      ASSERT_FALSE(r.tokens.empty());
      joined.insert(joined.end(), r.tokens.begin(), r.tokens.end());
    }
    EXPECT_EQ(joined, out.tokens);
    EXPECT_LE(out.trace.phases.size(), 8u);
  }
}

TEST(Decode, Deterministic) {
  for (const auto& scene : scenes(5)) {
    const auto a = run(scene, settings(DecodeMode::delayed, 30));
    const auto b = run(scene, settings(DecodeMode::delayed, 30));
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.trace.total_evals, b.trace.total_evals);
  }
}

TEST(Decode, OracleRewardAcceptsOnlyGroundedPhases) {
  int accepted = 0;
  for (const auto& scene : scenes(40)) {
    auto s = settings(DecodeMode::psrd, 50);
    auto env = DecodeEnvironment::make(G(), P(), scene, 64, s.seed);
    env.scorer = [&](const TokenSeq& phrase) { return grounding_oracle(scene, phrase, V()).grounded ? 100.0 : 0.0; };
    const auto out = decode(env, s);
    for (const auto& r : out.trace.phases) {
      if (is_eos_phase(r.tokens)) continue;
      if (!r.intervened || r.accepted) {
        EXPECT_TRUE(grounding_oracle(scene, r.tokens, V()).grounded) << V().render(r.tokens);
        accepted += r.intervened;
      }
    }
  }
  EXPECT_GT(accepted, 0);
}

TEST(Decode, RejectsIncompleteEnvironment) {
  DecodeEnvironment env;
  EXPECT_THROW(decode(env, settings(DecodeMode::psrd, 30)), std::invalid_argument);
  EXPECT_THROW(parse_decode_mode("beam"), std::invalid_argument);
}
