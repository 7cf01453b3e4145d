#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "psrd/phase_segmenter.hpp"
#include "psrd/scene_world.hpp"
#include "psrd/vocabulary.hpp"

namespace psrd {

struct AnnotatedCaption {
  std::vector<Phase> phases;
  std::vector<std::vector<bool>> word_flags;  // [phase][position]
  std::vector<bool> phase_flags;              // OR of the phase's word flags
};

// Segments a caption and flags each token with the grounding oracle applied
// phase by phase.
inline AnnotatedCaption annotate(const SceneGraph& scene, std::span<const TokenId> caption, const Vocabulary& vocab) {
  AnnotatedCaption out;
  out.phases = segment(caption, vocab);
  for (const auto& p : out.phases) {
    auto flags = word_flags(scene, p.tokens, vocab);
    out.phase_flags.push_back(std::find(flags.begin(), flags.end(), true) != flags.end());
    out.word_flags.push_back(std::move(flags));
  }
  return out;
}

inline AnnotatedCaption from_flags(std::vector<std::vector<bool>> flags) {
  AnnotatedCaption out;
  std::size_t start = 0;
  for (std::size_t k = 0; k < flags.size(); ++k) {
    Phase p;
    p.tokens.assign(flags[k].size(), 0);
    p.start_index = start;
    p.phase_index = k;
    start += flags[k].size();
    out.phases.push_back(std::move(p));
    out.phase_flags.push_back(std::find(flags[k].begin(), flags[k].end(), true) != flags[k].end());
  }
  out.word_flags = std::move(flags);
  return out;
}

inline std::size_t position_bin(std::size_t position, std::size_t phase_length, int bins) {
  if (phase_length <= 1) return 0;
  const double j = static_cast<double>(position) / static_cast<double>(phase_length - 1);
  const auto b = static_cast<std::size_t>(std::floor(j * bins));
  return std::min(b, static_cast<std::size_t>(bins - 1));
}

// R_word(k, bin): fraction of the samples reaching phase k that carry a
// hallucinated word in that normalized-position bin. Positions are
// j = pos / (len - 1); single-token phases map to bin 0.
inline std::vector<double> word_rate(std::span<const AnnotatedCaption> samples, std::size_t k, int bins = 10) {
  if (bins < 1) throw std::invalid_argument("word_rate: bins must be positive");
  std::vector<double> hits(static_cast<std::size_t>(bins), 0.0);
  std::size_t m = 0;
  for (const auto& s : samples) {
    if (k >= s.phases.size()) continue;
    ++m;
    const auto& flags = s.word_flags[k];
    std::vector<bool> bin_hit(static_cast<std::size_t>(bins), false);
    for (std::size_t p = 0; p < flags.size(); ++p)
      if (flags[p]) bin_hit[position_bin(p, flags.size(), bins)] = true;
    for (std::size_t b = 0; b < bin_hit.size(); ++b) hits[b] += bin_hit[b] ? 1.0 : 0.0;
  }
  if (m == 0) throw std::invalid_argument("insufficient samples");
  for (double& h : hits) h /= static_cast<double>(m);
  return hits;
}

// R_sent(k): fraction of the samples reaching phase k whose phase k holds a
// hallucinated word.
inline double phase_rate(std::span<const AnnotatedCaption> samples, std::size_t k) {
  std::size_t m = 0, hits = 0;
  for (const auto& s : samples) {
    if (k >= s.phases.size()) continue;
    ++m;
    hits += s.phase_flags[k] ? 1 : 0;
  }
  if (m == 0) throw std::invalid_argument("insufficient samples");
  return static_cast<double>(hits) / static_cast<double>(m);
}

struct ChairScores {
  double chair_i = 0.0;  // hallucinated object mentions / all object mentions, pooled
  double chair_s = 0.0;  // captions with >= 1 hallucinated object
  double cover = 0.0;    // mean fraction of scene categories mentioned
  double hal = 0.0;      // captions with >= 1 hallucinated word of any kind
  std::size_t mentions = 0;
  std::size_t hallucinated_mentions = 0;
};

inline bool is_terminal_phase(const Phase& p, const Vocabulary& vocab) {
  return p.tokens.size() == 1 && p.tokens[0] == vocab.eos();
}

inline ChairScores chair_scores(std::span<const AnnotatedCaption> samples, std::span<const SceneGraph> scenes,
                                const Vocabulary& vocab) {
  if (samples.size() != scenes.size()) throw std::invalid_argument("chair_scores: caption/scene count mismatch");
  ChairScores out;
  if (samples.empty()) return out;
  std::size_t captions_with_object_hallucination = 0;
  std::size_t captions_with_any_hallucination = 0;
  double cover_sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto present = scenes[i].categories();
    std::set<TokenId> covered;
    bool object_hallucination = false;
    for (const auto& p : samples[i].phases) {
      for (auto t : p.tokens) {
        if (!vocab.is_category(t)) continue;
        ++out.mentions;
        if (present.contains(t)) covered.insert(t);
        else {
          ++out.hallucinated_mentions;
          object_hallucination = true;
        }
      }
    }
    const bool any = std::find(samples[i].phase_flags.begin(), samples[i].phase_flags.end(), true) !=
                     samples[i].phase_flags.end();
    captions_with_object_hallucination += object_hallucination ? 1 : 0;
    captions_with_any_hallucination += any ? 1 : 0;
    cover_sum += static_cast<double>(covered.size()) / static_cast<double>(present.size());
  }
  const auto n = static_cast<double>(samples.size());
  out.chair_i = out.mentions ? static_cast<double>(out.hallucinated_mentions) / static_cast<double>(out.mentions) : 0.0;
  out.chair_s = static_cast<double>(captions_with_object_hallucination) / n;
  out.hal = static_cast<double>(captions_with_any_hallucination) / n;
  out.cover = cover_sum / n;
  return out;
}

// R_acc over a per-phase CHAIR sequence: mean consecutive increase, which
// telescopes to (last - first) / (N - 1).
inline double accumulation_rate(std::span<const double> per_phase_chair) {
  if (per_phase_chair.size() < 2) throw std::invalid_argument("accumulation_rate: need at least two phases");
  return (per_phase_chair.back() - per_phase_chair.front()) / static_cast<double>(per_phase_chair.size() - 1);
}

// CHAIR_i of each non-terminal phase of one caption (0 for phases without
// object mentions).
inline std::vector<double> per_phase_chair(const AnnotatedCaption& caption, const SceneGraph& scene,
                                           const Vocabulary& vocab) {
  const auto present = scene.categories();
  std::vector<double> out;
  for (const auto& p : caption.phases) {
    if (is_terminal_phase(p, vocab)) continue;
    std::size_t mentions = 0, hallucinated = 0;
    for (auto t : p.tokens) {
      if (!vocab.is_category(t)) continue;
      ++mentions;
      hallucinated += present.contains(t) ? 0 : 1;
    }
    out.push_back(mentions ? static_cast<double>(hallucinated) / static_cast<double>(mentions) : 0.0);
  }
  return out;
}

// Corpus R_acc: mean of the per-caption accumulation rates over captions
// with at least two content phases. Returns 0 when no caption qualifies.
inline double corpus_accumulation_rate(std::span<const AnnotatedCaption> samples, std::span<const SceneGraph> scenes,
                                       const Vocabulary& vocab) {
  if (samples.size() != scenes.size()) throw std::invalid_argument("corpus_accumulation_rate: count mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto seq = per_phase_chair(samples[i], scenes[i], vocab);
    if (seq.size() < 2) continue;
    sum += accumulation_rate(seq);
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace psrd
