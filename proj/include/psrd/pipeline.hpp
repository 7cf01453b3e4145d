#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <tuple>
#include <span>
#include <vector>

#include "psrd/config.hpp"
#include "psrd/data_gen.hpp"
#include "psrd/decoding_controller.hpp"
#include "psrd/generator.hpp"
#include "psrd/metrics.hpp"
#include "psrd/reward_model.hpp"
#include "psrd/scene_world.hpp"

namespace psrd {

inline constexpr int kEvalSceneIdOffset = 1'000'000;

struct CorpusSummary {
  ChairScores chair;
  double r_acc = 0.0;
  double mean_evals = 0.0;            // evaluator calls per caption, initial scoring included
  double mean_phases = 0.0;
  double intervened_fraction = 0.0;   // share of phases that triggered the search
  double accepted_fraction = 0.0;     // share of intervened phases that reached tau
  std::size_t captions = 0;
};

struct DynamicsReport {
  std::vector<std::vector<double>> word_rate;  // [phase k][bin]
  std::vector<double> phase_rate;              // R_sent(k)
  std::vector<std::size_t> samples;            // captions reaching phase k
};

struct SegmentationComparison {
  std::size_t captions = 0;
  std::size_t delimiter_phases = 0;
  std::size_t entropy_phases = 0;
  double theta = 0.0;

  double ratio() const {
    return delimiter_phases ? static_cast<double>(entropy_phases) / static_cast<double>(delimiter_phases) : 0.0;
  }
};

struct ScoredPhrase {
  std::vector<double> scene_embedding;
  TokenSeq phrase;
  Label label = Label::grounded;
};

// Linearly separable toy set: single-object scenes, grounded phrase names
// the object, negatives name two distinct absent categories. Each scene
// yields two triplets and one negative pair; held-out phrases come from
// fresh scenes.
struct SeparableSet {
  std::vector<Triplet> triplets;
  std::vector<NegativePair> pairs;
  std::vector<ScoredPhrase> held_out;
};

inline SeparableSet separable_set(const Vocabulary& vocab, int dim, std::size_t num_triplets, std::size_t held_out_scenes,
                                  std::uint64_t seed) {
  const int nc = vocab.sizes().categories;
  if (nc < 3) throw std::invalid_argument("separable_set: need at least three categories");
  Rng rng(mix_seed({seed, 0x7365706172ULL}));
  auto draw = [&](int id) {
    SceneGraph scene;
    scene.scene_id = id;
    const int c = static_cast<int>(rng.uniform_int(0, nc - 1));
    int a = static_cast<int>(rng.uniform_int(0, nc - 2));
    if (a >= c) ++a;
    int b = static_cast<int>(rng.uniform_int(0, nc - 3));
    for (int x : {std::min(a, c), std::max(a, c)})
      if (b >= x) ++b;
    scene.objects.push_back({0, vocab.category(c), {}});
    const TokenSeq pos{vocab.category(c), vocab.period()};
    const TokenSeq n1{vocab.category(a), vocab.period()};
    const TokenSeq n2{vocab.category(b), vocab.period()};
    return std::tuple{clean_features(scene, vocab, dim), pos, n1, n2};
  };
  SeparableSet out;
  for (int id = 0; out.triplets.size() < num_triplets; ++id) {
    auto [emb, pos, n1, n2] = draw(id);
    out.triplets.push_back({id, emb, pos, n1, 1.0, 1.0});
    if (out.triplets.size() < num_triplets) out.triplets.push_back({id, emb, pos, n2, 1.0, 1.0});
    out.pairs.push_back({id, id, n1, n2, 1.0, 1.0});
  }
  for (std::size_t i = 0; i < held_out_scenes; ++i) {
    auto [emb, pos, n1, n2] = draw(kEvalSceneIdOffset + static_cast<int>(i));
    out.held_out.push_back({emb, pos, Label::grounded});
    out.held_out.push_back({emb, n1, Label::hallucinated});
    out.held_out.push_back({emb, n2, Label::hallucinated});
  }
  return out;
}

struct ClassifierReport {
  BinaryMetrics metrics;  // positive class = hallucinated
  double overlap = 1.0;
  std::vector<double> grounded_scores;
  std::vector<double> hallucinated_scores;
};

inline ClassifierReport evaluate_classifier(const RewardParams& params, std::span<const ScoredPhrase> samples,
                                            double tau_cls, int bins) {
  ClassifierReport r;
  std::vector<Label> predicted, actual;
  for (const auto& s : samples) {
    const double score = reward(params, s.scene_embedding, s.phrase);
    predicted.push_back(score > tau_cls ? Label::grounded : Label::hallucinated);
    actual.push_back(s.label);
    (s.label == Label::grounded ? r.grounded_scores : r.hallucinated_scores).push_back(score);
  }
  r.metrics = binary_metrics(predicted, actual, Label::hallucinated);
  if (!r.grounded_scores.empty() && !r.hallucinated_scores.empty())
    r.overlap = overlap_ratio(r.grounded_scores, r.hallucinated_scores, bins);
  return r;
}

// Wires one experiment configuration to the modules: scene corpora,
// elicitation, reward training and corpus-level decoding.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg)
      : cfg_(std::move(cfg)), vocab_(cfg_.world.vocab), generator_(vocab_, cfg_.generator) {
    validate(cfg_);
  }

  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  const ExperimentConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Generator& generator() const { return generator_; }
  int dim() const { return cfg_.world.embedding_dim; }

  std::vector<SceneGraph> train_scenes() const {
    return sample_scenes(cfg_.world.train_scenes, vocab_, mix_seed({cfg_.seed, 0x747261696eULL}));
  }

  std::vector<SceneGraph> eval_scenes() const {
    auto scenes = sample_scenes(cfg_.world.eval_scenes, vocab_, mix_seed({cfg_.seed, 0x6576616cULL}));
    for (auto& s : scenes) s.scene_id += kEvalSceneIdOffset;
    return scenes;
  }

  std::vector<RawCaption> elicit(std::span<const SceneGraph> scenes) const {
    auto ec = cfg_.data.elicitation;
    ec.seed = mix_seed({cfg_.seed, 0x656c69636974ULL});
    return psrd::elicit(scenes, ec, generator_, dim());
  }

  TripletDataset build_dataset(std::span<const RawCaption> captions, std::span<const SceneGraph> scenes) const {
    TripletBuildConfig tb{cfg_.data.reliability, cfg_.data.pair_cap, mix_seed({cfg_.seed, 0x7472697073ULL}), dim()};
    return build_triplets(captions, scenes, vocab_, tb);
  }

  RewardParams initial_params() const {
    return init_params(static_cast<std::size_t>(cfg_.world.reward_dim), static_cast<std::size_t>(dim()), vocab_.size(),
                       mix_seed({cfg_.seed, 0x696e6974ULL}));
  }

  SgdConfig sgd() const {
    SgdConfig s = cfg_.sgd;
    s.seed = mix_seed({cfg_.seed, 0x73676473ULL});
    return s;
  }

  TrainResult train_reward(const TripletDataset& data, std::optional<LossWeights> weights = {}) const {
    return train(initial_params(), data.triplets, data.pairs, weights.value_or(cfg_.loss), sgd());
  }

  // Full pipeline: scenes -> captions -> weak labels -> trained reward model.
  TrainResult train_from_scratch() const {
    const auto scenes = train_scenes();
    const auto captions = elicit(scenes);
    return train_reward(build_dataset(captions, scenes));
  }

  DecodeSettings decode_settings(DecodeMode mode, std::optional<double> tau = {}) const {
    DecodeSettings s;
    s.mode = mode;
    s.search = cfg_.search;
    if (tau) s.search.tau = *tau;
    s.max_phases = cfg_.decode.max_phases;
    s.max_tokens_per_phase = cfg_.decode.max_tokens_per_phase;
    s.seed = mix_seed({cfg_.seed, 0x6465636f6465ULL});
    s.delay_seed = cfg_.decode.delay_seed;
    return s;
  }

  DecodeOutput decode_scene(const SceneGraph& scene, const RewardParams& params, const DecodeSettings& s) const {
    auto env = DecodeEnvironment::make(generator_, params, scene, dim(), s.seed);
    return decode(env, s);
  }

  std::vector<DecodeOutput> decode_corpus(std::span<const SceneGraph> scenes, const RewardParams& params,
                                          const DecodeSettings& s) const {
    std::vector<DecodeOutput> out;
    out.reserve(scenes.size());
    for (const auto& scene : scenes) out.push_back(decode_scene(scene, params, s));
    return out;
  }

  std::vector<AnnotatedCaption> annotate_all(std::span<const DecodeOutput> outputs,
                                             std::span<const SceneGraph> scenes) const {
    std::vector<AnnotatedCaption> out;
    out.reserve(outputs.size());
    for (std::size_t i = 0; i < outputs.size(); ++i) out.push_back(annotate(scenes[i], outputs[i].tokens, vocab_));
    return out;
  }

  CorpusSummary summarize(std::span<const DecodeOutput> outputs, std::span<const SceneGraph> scenes) const {
    CorpusSummary s;
    const auto annotated = annotate_all(outputs, scenes);
    s.chair = chair_scores(annotated, scenes, vocab_);
    s.r_acc = corpus_accumulation_rate(annotated, scenes, vocab_);
    s.captions = outputs.size();
    std::size_t phases = 0, intervened = 0, accepted = 0;
    double evals = 0.0;
    for (const auto& o : outputs) {
      evals += o.trace.total_evals;
      phases += o.trace.phases.size();
      for (const auto& r : o.trace.phases) {
        intervened += r.intervened ? 1 : 0;
        accepted += r.intervened && r.accepted ? 1 : 0;
      }
    }
    if (!outputs.empty()) {
      s.mean_evals = evals / static_cast<double>(outputs.size());
      s.mean_phases = static_cast<double>(phases) / static_cast<double>(outputs.size());
    }
    s.intervened_fraction = phases ? static_cast<double>(intervened) / static_cast<double>(phases) : 0.0;
    s.accepted_fraction = intervened ? static_cast<double>(accepted) / static_cast<double>(intervened) : 0.0;
    return s;
  }

  // Greedy captions for the positional analysis: caption i describes scene
  // i mod |scenes| with its own seed.
  std::vector<std::pair<const SceneGraph*, TokenSeq>> greedy_captions(std::span<const SceneGraph> scenes,
                                                                      int count) const {
    std::vector<std::pair<const SceneGraph*, TokenSeq>> out;
    for (int i = 0; i < count; ++i) {
      const auto& scene = scenes[static_cast<std::size_t>(i) % scenes.size()];
      out.emplace_back(&scene, greedy_caption(generator_, greedy_context(scene, i), cfg_.decode.max_phases,
                                              cfg_.decode.max_tokens_per_phase));
    }
    return out;
  }

  // Phase counts of the delimiter and entropy segmenters on the same captions.
  SegmentationComparison compare_segmenters(std::span<const SceneGraph> scenes, int count) const {
    SegmentationComparison c;
    c.theta = cfg_.analysis.entropy_theta;
    const auto caps = greedy_captions(scenes, count);
    for (int i = 0; i < count; ++i) {
      const auto& [scene, tokens] = caps[static_cast<std::size_t>(i)];
      const auto h = generator_.stepwise_entropies(greedy_context(*scene, i), tokens);
      c.delimiter_phases += segment(tokens, vocab_).size();
      c.entropy_phases += entropy_segment(tokens, h, c.theta).size();
      c.captions += 1;
    }
    return c;
  }

  DynamicsReport dynamics(std::span<const SceneGraph> scenes, int count, std::size_t max_phase_index) const {
    std::vector<AnnotatedCaption> annotated;
    for (const auto& [scene, tokens] : greedy_captions(scenes, count)) {
      auto a = annotate(*scene, tokens, vocab_);
      // The terminal <eos> phase carries no content; drop it from positional stats.
      if (!a.phases.empty() && is_terminal_phase(a.phases.back(), vocab_)) {
        a.phases.pop_back();
        a.word_flags.pop_back();
        a.phase_flags.pop_back();
      }
      annotated.push_back(std::move(a));
    }
    DynamicsReport r;
    for (std::size_t k = 0; k <= max_phase_index; ++k) {
      std::size_t m = 0;
      for (const auto& a : annotated) m += k < a.phases.size() ? 1 : 0;
      if (m == 0) break;
      r.samples.push_back(m);
      r.word_rate.push_back(word_rate(annotated, k, cfg_.analysis.position_bins));
      r.phase_rate.push_back(phase_rate(annotated, k));
    }
    return r;
  }

 private:
  GenerationContext greedy_context(const SceneGraph& scene, int i) const {
    const auto seed = mix_seed({cfg_.seed, 0x64796e616dULL, static_cast<std::uint64_t>(i)});
    return generator_.make_context(render_embedding(scene, vocab_, dim(), 0.0, seed), PromptMode::standard, seed);
  }

  ExperimentConfig cfg_;
  Vocabulary vocab_;
  Generator generator_;
};

}  // namespace psrd
