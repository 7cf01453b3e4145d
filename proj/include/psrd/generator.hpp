#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "psrd/rng.hpp"
#include "psrd/scene_world.hpp"
#include "psrd/vocabulary.hpp"

namespace psrd {

enum class PromptMode : std::uint8_t { standard, hallucination_inducing };

using LogitVector = std::vector<double>;

// Logit assigned to tokens the phase grammar forbids. Finite so that every
// logit vector stays finite under contrastive mixing.
inline constexpr double kMaskedLogit = -1.0e4;

struct GeneratorCalibration {
  double grounded_boost = 12.0;   // scale on category evidence read from the embedding
  double attribute_boost = 8.0;   // scale on attribute-slot evidence
  double noise_shrink = 1.0;      // grounded boost factor is max(0, 1 - noise_shrink * sigma)
  double grounding_decay = 0.0;   // grounded boost is divided by 1 + grounding_decay * phase_index
  double onset_bias = 8.0;
  double onset_decay = 0.5;
  double inducing_factor = 2.0;   // multiplies onset_bias in hallucination_inducing mode
  double onset_anchor = 3.0;      // onset boost is divided by 1 + onset_anchor * phase_index
  double onset_category_weight = 1.0;  // share of the onset boost that reaches category tokens
  double prior_decay = 0.15;      // token prior pi_i = exp(-prior_decay * i) within its group
  double category_base = 1.0;
  double attribute_base = 0.5;
  double repeat_penalty = 4.0;
  double attribute_repeat_penalty = 1.0;
  double predicate_logit = -1.0;
  double comma_logit = 1.0;
  double period_logit = 0.0;
  double eos_base = -3.0;
  double eos_growth = 1.0;
  double eos_satiety = 0.0;       // added to <eos> times the share of category evidence already mentioned
  double jitter_sd = 0.5;
  double contrast_sigma = 1.0;    // noise level of the corrupted view used for contrastive decoding
};

struct GenerationContext {
  SceneEmbedding scene_embedding;
  std::optional<SceneEmbedding> contrast_embedding;
  PromptMode prompt_mode = PromptMode::standard;
  TokenSeq prefix;
  Rng rng{0};
  double onset_bias = 8.0;
  double onset_decay = 0.5;
};

// Result of contrastive mixing: (1 + alpha) * clean - alpha * corrupt.
inline LogitVector contrastive_logits(std::span<const double> clean, std::span<const double> corrupt, double alpha) {
  if (clean.size() != corrupt.size()) throw std::invalid_argument("contrastive_logits: length mismatch");
  if (alpha < 0.0) throw std::invalid_argument("contrastive_logits: alpha must be non-negative");
  LogitVector out(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) out[i] = (1.0 + alpha) * clean[i] - alpha * corrupt[i];
  return out;
}

// Tokens ordered by descending logit; ties broken by lower token id.
inline std::vector<TokenId> rank_tokens(std::span<const double> logits) {
  std::vector<TokenId> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
  });
  return order;
}

inline LogitVector log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lz = mx + std::log(z);
  LogitVector out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

inline double entropy(std::span<const double> logits) {
  auto lp = log_softmax(logits);
  double h = 0.0;
  for (double x : lp) h -= std::exp(x) * x;
  return h;
}

// Where the decoder sits inside the current phase.
struct PhaseState {
  std::size_t tokens_since_delimiter = 0;
  std::size_t phase_index = 0;
  std::optional<TokenId> last;
  bool has_predicate = false;
};

inline PhaseState phase_state(std::span<const TokenId> prefix, const Vocabulary& vocab) {
  PhaseState st;
  for (auto t : prefix) {
    if (vocab.is_delimiter(t)) {
      st.tokens_since_delimiter = 0;
      st.has_predicate = false;
      ++st.phase_index;
      st.last.reset();
      continue;
    }
    ++st.tokens_since_delimiter;
    if (vocab.is_predicate(t)) st.has_predicate = true;
    st.last = t;
  }
  return st;
}

// Seeded mock captioner. Holds the immutable vocabulary and calibration; all
// mutable decoding state lives in GenerationContext.
class Generator {
 public:
  Generator(const Vocabulary& vocab, GeneratorCalibration calib) : vocab_(&vocab), calib_(calib) {}

  const Vocabulary& vocab() const { return *vocab_; }
  const GeneratorCalibration& calibration() const { return calib_; }

  GenerationContext make_context(SceneEmbedding clean, PromptMode mode, std::uint64_t seed) const {
    GenerationContext ctx;
    ctx.scene_embedding = std::move(clean);
    ctx.prompt_mode = mode;
    ctx.rng = Rng(seed);
    ctx.onset_bias = calib_.onset_bias;
    ctx.onset_decay = calib_.onset_decay;
    return ctx;
  }

  double prior(TokenId t) const {
    const auto& v = *vocab_;
    int index = 0;
    if (v.is_category(t)) index = v.category_index(t);
    else if (v.is_attribute(t)) index = v.attribute_index(t);
    return std::exp(-calib_.prior_decay * index);
  }

  double grounded_factor(double noise_sigma) const {
    return std::max(0.0, 1.0 - calib_.noise_shrink * noise_sigma);
  }

  // Evidence-driven boost of a content token under a given embedding view.
  double grounded_boost(const SceneEmbedding& emb, TokenId t, std::size_t phase_index = 0) const {
    const auto& v = *vocab_;
    const double g = grounded_factor(emb.noise_sigma) /
                     (1.0 + calib_.grounding_decay * static_cast<double>(phase_index));
    const int dim = static_cast<int>(emb.values.size());
    if (v.is_category(t)) return g * calib_.grounded_boost * emb.values[static_cast<std::size_t>(v.category_index(t))];
    if (v.is_attribute(t)) return g * calib_.attribute_boost * emb.values[attribute_slot(v, t, dim)];
    return 0.0;
  }

  // Hallucination-propensity boost for a unit-prior token at distance d from
  // the last delimiter.
  double onset_boost(const GenerationContext& ctx, std::size_t d, std::size_t phase_index) const {
    double bias = ctx.onset_bias;
    if (ctx.prompt_mode == PromptMode::hallucination_inducing) bias *= calib_.inducing_factor;
    return bias * std::pow(ctx.onset_decay, static_cast<double>(d)) /
           (1.0 + calib_.onset_anchor * static_cast<double>(phase_index));
  }

  // Deterministic part of the next-token logits under one embedding view.
  LogitVector base_logits(const GenerationContext& ctx, const SceneEmbedding& view) const {
    const auto& v = *vocab_;
    const auto st = phase_state(ctx.prefix, v);
    LogitVector logits(v.size(), kMaskedLogit);

    std::vector<int> uses(v.size(), 0);
    for (auto t : ctx.prefix) ++uses[static_cast<std::size_t>(t)];

    const bool at_onset = !st.last.has_value();
    const bool after_lead_in = st.last && (v.kind(*st.last) == TokenKind::function_word ||
                                           v.kind(*st.last) == TokenKind::conjunction);
    const bool after_attribute = st.last && v.is_attribute(*st.last);
    const bool after_category = st.last && v.is_category(*st.last);
    const bool after_predicate = st.last && v.is_predicate(*st.last);

    const double prone = onset_boost(ctx, st.tokens_since_delimiter, st.phase_index);

    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto t = static_cast<TokenId>(i);
      switch (v.kind(t)) {
        case TokenKind::category:
          if (at_onset || after_lead_in || after_attribute || after_predicate)
            logits[i] = calib_.category_base * prior(t) + grounded_boost(view, t, st.phase_index) +
                        calib_.onset_category_weight * prone * prior(t) -
                        calib_.repeat_penalty * uses[i];
          break;
        case TokenKind::attribute:
          if (at_onset || after_lead_in)
            logits[i] = calib_.attribute_base * prior(t) + grounded_boost(view, t, st.phase_index) + prone * prior(t) -
                        calib_.attribute_repeat_penalty * uses[i];
          break;
        case TokenKind::predicate:
          if (after_category && !st.has_predicate) logits[i] = calib_.predicate_logit;
          break;
        case TokenKind::delimiter:
          if (after_category) logits[i] = t == v.comma() ? calib_.comma_logit : calib_.period_logit;
          break;
        case TokenKind::end_of_sequence:
          if (at_onset)
            logits[i] = calib_.eos_base + calib_.eos_growth * static_cast<double>(st.phase_index) +
                        calib_.eos_satiety * mentioned_share(view, uses);
          break;
        default:
          break;
      }
    }
    return logits;
  }

  // Share of the (positive) category evidence in `view` whose category has
  // already been mentioned.
  double mentioned_share(const SceneEmbedding& view, const std::vector<int>& uses) const {
    const auto& v = *vocab_;
    double total = 0.0, said = 0.0;
    for (int c = 0; c < v.sizes().categories; ++c) {
      const double e = std::max(0.0, view.values[static_cast<std::size_t>(c)]);
      total += e;
      if (uses[static_cast<std::size_t>(v.category(c))] > 0) said += e;
    }
    return total > 0.0 ? said / total : 0.0;
  }

  // Clean-view logits with the context's sampling jitter; advances ctx.rng.
  LogitVector next_logits(GenerationContext& ctx) const {
    auto logits = base_logits(ctx, ctx.scene_embedding);
    add_jitter(ctx, logits);
    return logits;
  }

  LogitVector adjusted_logits(GenerationContext& ctx, double alpha) const {
    if (alpha < 0.0) throw std::invalid_argument("alpha must be non-negative");
    auto logits = base_logits(ctx, ctx.scene_embedding);
    if (alpha > 0.0) {
      if (!ctx.contrast_embedding) throw std::invalid_argument("contrastive decoding needs a corrupted view");
      logits = contrastive_logits(logits, base_logits(ctx, *ctx.contrast_embedding), alpha);
    }
    add_jitter(ctx, logits);
    return logits;
  }

  // Emits one phase: the first token is the rank-`init_rank` token of the
  // adjusted distribution, the rest are greedy, up to and including the first
  // delimiter. Tokens are appended to ctx.prefix.
  TokenSeq generate_phase(GenerationContext& ctx, std::size_t init_rank, double alpha, std::size_t max_tokens) const {
    if (init_rank >= vocab_->size()) throw std::invalid_argument("init_rank out of range");
    if (max_tokens < 1) throw std::invalid_argument("max_tokens must be at least 1");
    TokenSeq phase;
    for (std::size_t step = 0; step < max_tokens; ++step) {
      const auto logits = adjusted_logits(ctx, alpha);
      TokenId next;
      if (step == 0 && init_rank > 0) {
        // Ranks past the grammatical tokens fall back to the last grammatical one.
        const auto allowed = static_cast<std::size_t>(
            std::count_if(logits.begin(), logits.end(), [](double l) { return l > kMaskedLogit / 2; }));
        next = rank_tokens(logits)[std::min(init_rank, std::max<std::size_t>(allowed, 1) - 1)];
      } else next = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      phase.push_back(next);
      ctx.prefix.push_back(next);
      if (vocab_->is_delimiter(next)) break;
    }
    return phase;
  }

  // Mean negative log-probability of `tokens` under the clean, unjittered
  // distribution when appended to `prefix`.
  double clean_nll(const GenerationContext& base, std::span<const TokenId> tokens) const {
    if (tokens.empty()) return 0.0;
    GenerationContext ctx = base;
    double total = 0.0;
    for (auto t : tokens) {
      const auto lp = log_softmax(base_logits(ctx, ctx.scene_embedding));
      total -= lp[static_cast<std::size_t>(t)];
      ctx.prefix.push_back(t);
    }
    return total / static_cast<double>(tokens.size());
  }

  // Entropy of the clean distribution at each position of `tokens`.
  std::vector<double> stepwise_entropies(const GenerationContext& base, std::span<const TokenId> tokens) const {
    GenerationContext ctx = base;
    std::vector<double> out;
    out.reserve(tokens.size());
    for (auto t : tokens) {
      out.push_back(entropy(base_logits(ctx, ctx.scene_embedding)));
      ctx.prefix.push_back(t);
    }
    return out;
  }

 private:
  void add_jitter(GenerationContext& ctx, LogitVector& logits) const {
    if (calib_.jitter_sd <= 0.0) return;
    for (double& l : logits) l += calib_.jitter_sd * ctx.rng.normal();
  }

  const Vocabulary* vocab_;
  GeneratorCalibration calib_;
};

// ---------------------------------------------------------------------------
// Self-evaluation stand-in
// ---------------------------------------------------------------------------

struct SelfEvaluation {
  double p_plus = 0.5;
  double p_minus = 0.5;
};

inline std::uint64_t hash_tokens(std::span<const TokenId> tokens) {
  std::uint64_t h = 0x51ed270b2f5e3a1dULL;
  for (auto t : tokens) h = splitmix64(h ^ static_cast<std::uint64_t>(t));
  return h;
}

// Simulated LVLM self-check. With probability `reliability` the larger of
// (p_plus, p_minus) sides with the grounding oracle; the winning side's
// probability is uniform on [0.6, 0.99].
inline SelfEvaluation self_evaluate(const SceneGraph& scene, std::span<const TokenId> phrase, const Vocabulary& vocab,
                                    double reliability, std::uint64_t seed) {
  if (!(reliability >= 0.5 && reliability <= 1.0))
    throw std::invalid_argument("reliability must lie in [0.5, 1]");
  Rng rng(mix_seed({seed, hash_tokens(phrase), static_cast<std::uint64_t>(scene.scene_id)}));
  const bool agree = rng.uniform() < reliability;
  const double confidence = rng.uniform(0.6, 0.99);
  const bool grounded = grounding_oracle(scene, phrase, vocab).grounded;
  const bool says_grounded = agree ? grounded : !grounded;
  const double p_plus = says_grounded ? confidence : 1.0 - confidence;
  return {p_plus, 1.0 - p_plus};
}

}  // namespace psrd
