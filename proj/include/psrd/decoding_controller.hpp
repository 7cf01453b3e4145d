#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "psrd/generator.hpp"
#include "psrd/intervention_search.hpp"
#include "psrd/reward_model.hpp"
#include "psrd/scene_world.hpp"

namespace psrd {

enum class DecodeMode : std::uint8_t { baseline, psrd, delayed };

inline const char* to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::baseline: return "baseline";
    case DecodeMode::psrd: return "psrd";
    case DecodeMode::delayed: return "delayed";
  }
  return "?";
}

inline DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "baseline") return DecodeMode::baseline;
  if (s == "psrd") return DecodeMode::psrd;
  if (s == "delayed") return DecodeMode::delayed;
  throw std::invalid_argument("unknown decode mode: " + s);
}

struct PhaseRecord {
  std::size_t phase_index = 0;
  double initial_score = 0.0;
  bool intervened = false;
  bool accepted = true;
  int k = 0;
  double alpha = 0.0;
  double score = 0.0;
  int evaluator_calls = 0;
  std::size_t delay_position = 0;
  TokenSeq tokens;
  std::vector<SearchPoint> trajectory;
};

struct DecodeTrace {
  int scene_id = 0;
  std::vector<PhaseRecord> phases;
  int total_evals = 0;
  double wall_time = 0.0;  // seconds; not written to files
};

struct DecodeOutput {
  TokenSeq tokens;
  DecodeTrace trace;
};

struct DecodeSettings {
  DecodeMode mode = DecodeMode::psrd;
  SearchConfig search;
  std::size_t max_phases = 8;
  std::size_t max_tokens_per_phase = 8;
  std::uint64_t seed = 0;
  std::uint64_t delay_seed = 0;
  // Overrides the random delay position in delayed mode (tests use 0).
  std::optional<std::size_t> fixed_delay;
};

// Everything one decode needs about its scene: the clean view the reward
// model scores against and the corrupted view used for contrastive logits.
struct DecodeEnvironment {
  const Generator* generator = nullptr;
  const RewardParams* params = nullptr;
  const SceneGraph* scene = nullptr;
  SceneEmbedding clean;
  SceneEmbedding corrupted;
  // Replaces the reward model when set (oracle-reward experiments).
  std::function<double(const TokenSeq&)> scorer;

  static DecodeEnvironment make(const Generator& gen, const RewardParams& params, const SceneGraph& scene, int dim,
                                std::uint64_t seed) {
    DecodeEnvironment env{&gen, &params, &scene, {}, {}, {}};
    env.clean = render_embedding(scene, gen.vocab(), dim, 0.0, seed);
    env.corrupted = corrupt_embedding(env.clean, gen.calibration().contrast_sigma,
                                      mix_seed({seed, static_cast<std::uint64_t>(scene.scene_id), 0x636f6e7472ULL}));
    return env;
  }
};

// Regenerates the current phase for a given (k, alpha) from a fixed
// committed prefix plus an optional kept head of the phase. Each (k, alpha)
// gets its own rng stream so R(k, alpha) is a deterministic function.
class PhaseEvaluator {
 public:
  PhaseEvaluator(const DecodeEnvironment& env, const DecodeSettings& s, const TokenSeq& committed, TokenSeq kept,
                 std::size_t phase_index)
      : env_(&env), settings_(&s), committed_(&committed), kept_(std::move(kept)), phase_index_(phase_index) {}

  TokenSeq generate(int k, double alpha) const {
    GenerationContext ctx = env_->generator->make_context(env_->clean, PromptMode::standard, 0);
    ctx.contrast_embedding = env_->corrupted;
    ctx.prefix = *committed_;
    ctx.prefix.insert(ctx.prefix.end(), kept_.begin(), kept_.end());
    std::uint64_t stream = mix_seed({settings_->seed, static_cast<std::uint64_t>(env_->scene->scene_id),
                                     static_cast<std::uint64_t>(phase_index_), static_cast<std::uint64_t>(k),
                                     hash_double(alpha)});
    if (!kept_.empty()) stream = mix_seed({stream, kept_.size()});
    ctx.rng = Rng(stream);
    TokenSeq phase = kept_;
    const std::size_t budget = settings_->max_tokens_per_phase - kept_.size();
    auto tail = env_->generator->generate_phase(ctx, static_cast<std::size_t>(k), alpha, budget);
    phase.insert(phase.end(), tail.begin(), tail.end());
    return phase;
  }

  double score(const TokenSeq& phase) const {
    if (env_->scorer) return env_->scorer(phase);
    return reward(*env_->params, env_->clean.values, phase);
  }

  double operator()(int k, double alpha) {
    ++calls_;
    return score(generate(k, alpha));
  }

  int calls() const { return calls_; }

 private:
  const DecodeEnvironment* env_;
  const DecodeSettings* settings_;
  const TokenSeq* committed_;
  TokenSeq kept_;
  std::size_t phase_index_;
  int calls_ = 0;
};

// Random delay in [1, len / 2] (capped at len - 1); 0 for single-token phases.
inline std::size_t delay_position(std::size_t phase_length, std::uint64_t delay_seed, int scene_id,
                                  std::size_t phase_index) {
  if (phase_length <= 1) return 0;
  const std::size_t mid = std::max<std::size_t>(1, phase_length / 2);
  Rng rng(mix_seed({delay_seed, static_cast<std::uint64_t>(scene_id), phase_index, 0x64656c6179ULL}));
  const auto pos = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(mid)));
  return std::min(pos, phase_length - 1);
}

// Phase-by-phase decoding. Each phase is first generated greedily and
// scored; in psrd/delayed mode a phase at or below tau triggers the
// Scout-and-Project search and the accepted (or fallback) regeneration is
// committed. Committed tokens are never revisited.
inline DecodeOutput decode(const DecodeEnvironment& env, const DecodeSettings& settings) {
  if (!env.generator || !env.params || !env.scene) throw std::invalid_argument("decode: incomplete environment");
  if (settings.max_tokens_per_phase < 1) throw std::invalid_argument("decode: max_tokens_per_phase must be >= 1");
  settings.search.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto& vocab = env.generator->vocab();

  DecodeOutput out;
  out.trace.scene_id = env.scene->scene_id;
  TokenSeq& committed = out.tokens;

  for (std::size_t phase_index = 0; phase_index < settings.max_phases; ++phase_index) {
    PhaseRecord rec;
    rec.phase_index = phase_index;
    try {
      PhaseEvaluator greedy(env, settings, committed, {}, phase_index);
      TokenSeq phase = greedy.generate(0, 0.0);
      rec.initial_score = greedy.score(phase);
      rec.score = rec.initial_score;

      const bool ends_caption = phase.size() == 1 && phase[0] == vocab.eos();
      if (settings.mode != DecodeMode::baseline && !ends_caption && !(rec.initial_score > settings.search.tau)) {
        rec.intervened = true;
        TokenSeq kept;
        if (settings.mode == DecodeMode::delayed) {
          rec.delay_position = settings.fixed_delay
                                   ? std::min(*settings.fixed_delay, phase.empty() ? 0 : phase.size() - 1)
                                   : delay_position(phase.size(), settings.delay_seed, env.scene->scene_id, phase_index);
          kept.assign(phase.begin(), phase.begin() + static_cast<std::ptrdiff_t>(rec.delay_position));
        }
        PhaseEvaluator evaluator(env, settings, committed, kept, phase_index);
        auto result = search(evaluator, settings.search);
        rec.k = result.k_star;
        rec.alpha = result.alpha_star;
        rec.score = result.score;
        rec.accepted = result.accepted;
        rec.evaluator_calls = evaluator.calls();
        rec.trajectory = std::move(result.trajectory);
        phase = evaluator.generate(rec.k, rec.alpha);
      }
      rec.tokens = phase;
    } catch (const std::exception& e) {
      throw std::runtime_error("phase " + std::to_string(phase_index) + ": " + e.what());
    }

    committed.insert(committed.end(), rec.tokens.begin(), rec.tokens.end());
    out.trace.total_evals += 1 + rec.evaluator_calls;
    const bool terminal = rec.tokens.size() == 1 && rec.tokens[0] == vocab.eos();
    out.trace.phases.push_back(std::move(rec));
    if (terminal) break;
  }
  out.trace.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

inline nlohmann::json to_json(const PhaseRecord& r, const Vocabulary& vocab) {
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& p : r.trajectory) traj.push_back({p.k, p.alpha, p.score});
  return {{"phase_index", r.phase_index},   {"initial_score", r.initial_score},
          {"intervened", r.intervened},     {"accepted", r.accepted},
          {"k", r.k},                       {"alpha", r.alpha},
          {"score", r.score},               {"evaluator_calls", r.evaluator_calls},
          {"delay_position", r.delay_position}, {"tokens", r.tokens},
          {"text", vocab.render(r.tokens)}, {"trajectory", traj}};
}

}  // namespace psrd
