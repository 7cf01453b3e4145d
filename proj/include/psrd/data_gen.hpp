#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "psrd/generator.hpp"
#include "psrd/phase_segmenter.hpp"
#include "psrd/reward_model.hpp"
#include "psrd/scene_world.hpp"

namespace psrd {

struct ElicitationConfig {
  double noise_sigma_low = 0.2;
  double noise_sigma_high = 0.6;
  int captions_per_scene_per_config = 1;
  std::size_t max_phases = 8;
  std::size_t max_tokens_per_phase = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(noise_sigma_low >= 0.0 && noise_sigma_low <= noise_sigma_high))
      throw std::invalid_argument("elicitation: need 0 <= noise_sigma_low <= noise_sigma_high");
    if (captions_per_scene_per_config < 1) throw std::invalid_argument("elicitation: captions per config must be >= 1");
  }
};

struct RawCaption {
  int scene_id = 0;
  bool noisy = false;
  double noise_sigma = 0.0;
  PromptMode prompt_mode = PromptMode::standard;
  TokenSeq tokens;
};

// Greedy caption until <eos> or max_phases, with one rng stream per caption.
inline TokenSeq greedy_caption(const Generator& gen, GenerationContext ctx, std::size_t max_phases,
                               std::size_t max_tokens_per_phase) {
  for (std::size_t p = 0; p < max_phases; ++p) {
    auto phase = gen.generate_phase(ctx, 0, 0.0, max_tokens_per_phase);
    if (phase.size() == 1 && phase[0] == gen.vocab().eos()) break;
  }
  return ctx.prefix;
}

// Captions under the four (clean | noisy) x (standard | inducing) settings.
inline std::vector<RawCaption> elicit(std::span<const SceneGraph> scenes, const ElicitationConfig& cfg,
                                      const Generator& gen, int dim) {
  cfg.validate();
  if (scenes.empty()) throw std::invalid_argument("elicit: no scenes");
  std::vector<RawCaption> out;
  out.reserve(scenes.size() * 4 * static_cast<std::size_t>(cfg.captions_per_scene_per_config));
  for (const auto& scene : scenes) {
    for (int setting = 0; setting < 4; ++setting) {
      const bool noisy = setting >= 2;
      const PromptMode mode = setting % 2 == 0 ? PromptMode::standard : PromptMode::hallucination_inducing;
      for (int c = 0; c < cfg.captions_per_scene_per_config; ++c) {
        const auto seed = mix_seed({cfg.seed, static_cast<std::uint64_t>(scene.scene_id),
                                    static_cast<std::uint64_t>(setting), static_cast<std::uint64_t>(c)});
        Rng rng(seed);
        const double sigma = noisy ? rng.uniform(cfg.noise_sigma_low, cfg.noise_sigma_high) : 0.0;
        auto emb = render_embedding(scene, gen.vocab(), dim, sigma, seed);
        auto ctx = gen.make_context(std::move(emb), mode, mix_seed({seed, 0x63617074ULL}));
        out.push_back({scene.scene_id, noisy, sigma, mode,
                       greedy_caption(gen, std::move(ctx), cfg.max_phases, cfg.max_tokens_per_phase)});
      }
    }
  }
  return out;
}

struct LabeledPhase {
  int scene_id = 0;
  Phase phase;
  double p_plus = 0.5;
  double p_minus = 0.5;
  Label oracle_label = Label::grounded;  // reporting only, never used for training

  Label pseudo_label() const { return p_plus > p_minus ? Label::grounded : Label::hallucinated; }
};

struct ReliabilityReport {
  BinaryMetrics metrics;  // pseudo-label vs oracle, positive class = grounded
  std::size_t phases = 0;
  std::size_t oracle_grounded = 0;
  std::size_t oracle_hallucinated = 0;
  std::size_t scenes_skipped = 0;
};

struct TripletDataset {
  std::vector<Triplet> triplets;
  std::vector<NegativePair> pairs;
  std::vector<LabeledPhase> labeled;
  ReliabilityReport report;
};

struct TripletBuildConfig {
  double reliability = 0.8739;
  std::size_t pair_cap = 20;
  std::uint64_t seed = 0;
  int dim = 64;
};

namespace detail {

template <typename T>
void cap_with_seeded_subsample(std::vector<T>& items, std::size_t cap, std::uint64_t seed) {
  if (items.size() <= cap) return;
  Rng rng(seed);
  rng.shuffle(items);
  items.resize(cap);
}

}  // namespace detail

// Self-labels every phase, then pairs pseudo-positives with pseudo-negatives
// per scene (capped, seeded subsample) and enumerates pseudo-negative pairs
// for the consistency loss. Scenes lacking either side contribute nothing.
inline TripletDataset build_triplets(std::span<const RawCaption> captions, std::span<const SceneGraph> scenes,
                                     const Vocabulary& vocab, const TripletBuildConfig& cfg) {
  std::map<int, const SceneGraph*> by_id;
  for (const auto& s : scenes) by_id[s.scene_id] = &s;

  TripletDataset out;
  std::map<int, std::vector<std::size_t>> positives, negatives;
  for (std::size_t c = 0; c < captions.size(); ++c) {
    auto it = by_id.find(captions[c].scene_id);
    if (it == by_id.end()) throw std::invalid_argument("build_triplets: caption for unknown scene");
    const SceneGraph& scene = *it->second;
    for (auto& phase : segment(captions[c].tokens, vocab)) {
      if (phase.tokens.size() == 1 && phase.tokens[0] == vocab.eos()) continue;  // nothing to ground
      const auto eval = self_evaluate(scene, phase.tokens, vocab, cfg.reliability,
                                      mix_seed({cfg.seed, static_cast<std::uint64_t>(c), phase.phase_index}));
      LabeledPhase lp{scene.scene_id, std::move(phase), eval.p_plus, eval.p_minus, Label::grounded};
      lp.oracle_label = grounding_oracle(scene, lp.phase.tokens, vocab).grounded ? Label::grounded : Label::hallucinated;
      (lp.pseudo_label() == Label::grounded ? positives : negatives)[scene.scene_id].push_back(out.labeled.size());
      out.labeled.push_back(std::move(lp));
    }
  }

  for (const auto& [scene_id, scene] : by_id) {
    const auto& pos = positives[scene_id];
    const auto& neg = negatives[scene_id];
    if (pos.empty() || neg.empty()) {
      out.report.scenes_skipped += 1;
      continue;
    }
    const auto emb = clean_features(*scene, vocab, cfg.dim);
    std::vector<std::pair<std::size_t, std::size_t>> combos;
    for (auto p : pos)
      for (auto n : neg) combos.emplace_back(p, n);
    detail::cap_with_seeded_subsample(combos, cfg.pair_cap, mix_seed({cfg.seed, static_cast<std::uint64_t>(scene_id), 1}));
    for (auto [p, n] : combos) {
      const auto& lp = out.labeled[p];
      const auto& ln = out.labeled[n];
      out.triplets.push_back({scene_id, emb, lp.phase.tokens, ln.phase.tokens, lp.p_plus, ln.p_minus});
    }
    std::vector<std::pair<std::size_t, std::size_t>> neg_pairs;
    for (std::size_t i = 0; i < neg.size(); ++i)
      for (std::size_t j = i + 1; j < neg.size(); ++j) neg_pairs.emplace_back(neg[i], neg[j]);
    detail::cap_with_seeded_subsample(neg_pairs, cfg.pair_cap, mix_seed({cfg.seed, static_cast<std::uint64_t>(scene_id), 2}));
    for (auto [a, b] : neg_pairs) {
      const auto& la = out.labeled[a];
      const auto& lb = out.labeled[b];
      out.pairs.push_back({scene_id, scene_id, la.phase.tokens, lb.phase.tokens, la.p_minus, lb.p_minus});
    }
  }

  std::vector<Label> predicted, actual;
  for (const auto& lp : out.labeled) {
    predicted.push_back(lp.pseudo_label());
    actual.push_back(lp.oracle_label);
    (lp.oracle_label == Label::grounded ? out.report.oracle_grounded : out.report.oracle_hallucinated) += 1;
  }
  out.report.phases = out.labeled.size();
  out.report.metrics = binary_metrics(predicted, actual, Label::grounded);
  return out;
}

inline nlohmann::json to_json(const Triplet& t) {
  return {{"scene_id", t.scene_id}, {"s_plus_tokens", t.s_plus}, {"s_minus_tokens", t.s_minus},
          {"w_plus", t.w_plus}, {"w_minus", t.w_minus}};
}

inline nlohmann::json to_json(const ReliabilityReport& r) {
  return {{"accuracy", r.metrics.accuracy}, {"precision", r.metrics.precision}, {"recall", r.metrics.recall},
          {"f1", r.metrics.f1}, {"phases", r.phases}, {"oracle_grounded", r.oracle_grounded},
          {"oracle_hallucinated", r.oracle_hallucinated}, {"scenes_skipped", r.scenes_skipped},
          {"positive_class", "grounded"}};
}

}  // namespace psrd
