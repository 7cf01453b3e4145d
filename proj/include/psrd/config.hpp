#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "psrd/data_gen.hpp"
#include "psrd/decoding_controller.hpp"
#include "psrd/generator.hpp"
#include "psrd/intervention_search.hpp"
#include "psrd/reward_model.hpp"
#include "psrd/scene_world.hpp"
#include "psrd/vocabulary.hpp"

namespace psrd {

inline constexpr int kConfigSchemaVersion = 1;

// Raised for malformed or invalid configuration; the CLI maps it to exit 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WorldConfig {
  VocabularySizes vocab;
  SceneSamplerConfig train_scenes{300, 3, 6, 2, 2};
  SceneSamplerConfig eval_scenes{200, 3, 6, 2, 2};
  int embedding_dim = 64;
  int reward_dim = 32;
};

struct DataConfig {
  ElicitationConfig elicitation;
  double reliability = 0.8739;
  std::size_t pair_cap = 20;
};

struct DecodeConfig {
  std::size_t max_phases = 8;
  std::size_t max_tokens_per_phase = 8;
  std::uint64_t delay_seed = 17;
};

struct AnalysisConfig {
  int position_bins = 10;
  int overlap_bins = 20;
  double tau_cls = 30.0;
  int dynamics_captions = 500;
  std::vector<double> tau_list{30.0, 25.0, 20.0};
  std::vector<double> alpha_list{0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  double entropy_theta = 0.5;
};

struct ExperimentConfig {
  std::uint64_t seed = 20240601;
  WorldConfig world;
  GeneratorCalibration generator;
  DataConfig data;
  LossWeights loss;
  SgdConfig sgd;
  SearchConfig search;
  DecodeConfig decode;
  AnalysisConfig analysis;
};

namespace detail {

// Reads the keys of `j` into fields via `visit`, rejecting unknown keys.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void field(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  template <typename F>
  void object(const char* key, F&& read) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    StrictObject sub(j_.at(key), path_ + "." + key);
    read(sub);
    sub.finish();
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.contains(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Visitor>
void visit_sampler(Visitor& o, SceneSamplerConfig& s) {
  o.field("num_scenes", s.num_scenes);
  o.field("min_objects", s.min_objects);
  o.field("max_objects", s.max_objects);
  o.field("max_attributes", s.max_attributes);
  o.field("max_relations", s.max_relations);
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.world.vocab.categories >= 2 && c.world.vocab.attributes >= 1 && c.world.vocab.predicates >= 1,
          "world.vocab: sizes too small");
  require(c.world.embedding_dim > c.world.vocab.categories, "world.embedding_dim must exceed the category count");
  require(c.world.reward_dim >= 1, "world.reward_dim must be >= 1");
  for (const auto* s : {&c.world.train_scenes, &c.world.eval_scenes})
    require(s->num_scenes >= 1 && s->min_objects >= 1 && s->max_objects >= s->min_objects && s->max_attributes >= 1 &&
                s->max_relations >= 0,
            "world: invalid scene sampler settings");
  require(c.generator.onset_bias >= 0.0, "generator.onset_bias must be >= 0");
  require(c.generator.onset_decay > 0.0 && c.generator.onset_decay <= 1.0, "generator.onset_decay must be in (0, 1]");
  require(c.generator.noise_shrink >= 0.0 && c.generator.contrast_sigma >= 0.0 && c.generator.jitter_sd >= 0.0,
          "generator: negative scale");
  try {
    c.data.elicitation.validate();
    c.search.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(c.data.reliability >= 0.5 && c.data.reliability <= 1.0, "data.reliability must be in [0.5, 1]");
  require(c.data.pair_cap >= 1, "data.pair_cap must be >= 1");
  require(c.loss.lambda1 >= 0 && c.loss.lambda2 >= 0 && c.loss.lambda3 >= 0 && c.loss.margin_delta >= 0,
          "loss: weights must be non-negative");
  require(c.loss.logit_scale > 0, "loss.logit_scale must be > 0");
  require(c.sgd.lr >= 0 && c.sgd.batch_size >= 1 && c.sgd.epochs >= 0, "sgd: invalid settings");
  require(c.decode.max_phases >= 1 && c.decode.max_tokens_per_phase >= 1, "decode: invalid limits");
  require(c.analysis.position_bins >= 1 && c.analysis.overlap_bins >= 2, "analysis: invalid bin counts");
  require(c.analysis.dynamics_captions >= 1, "analysis.dynamics_captions must be >= 1");
  require(c.analysis.entropy_theta > 0, "analysis.entropy_theta must be > 0");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::StrictObject root(j, "config");
  int version = kConfigSchemaVersion;
  root.field("schema_version", version);
  if (version != kConfigSchemaVersion)
    throw ConfigError("config.schema_version: unsupported version " + std::to_string(version));
  root.field("seed", c.seed);
  root.object("world", [&](auto& o) {
    o.object("vocab", [&](auto& v) {
      v.field("categories", c.world.vocab.categories);
      v.field("attributes", c.world.vocab.attributes);
      v.field("predicates", c.world.vocab.predicates);
    });
    o.object("train_scenes", [&](auto& s) { detail::visit_sampler(s, c.world.train_scenes); });
    o.object("eval_scenes", [&](auto& s) { detail::visit_sampler(s, c.world.eval_scenes); });
    o.field("embedding_dim", c.world.embedding_dim);
    o.field("reward_dim", c.world.reward_dim);
  });
  root.object("generator", [&](auto& o) {
    auto& g = c.generator;
    o.field("grounded_boost", g.grounded_boost);
    o.field("attribute_boost", g.attribute_boost);
    o.field("noise_shrink", g.noise_shrink);
    o.field("grounding_decay", g.grounding_decay);
    o.field("onset_bias", g.onset_bias);
    o.field("onset_decay", g.onset_decay);
    o.field("inducing_factor", g.inducing_factor);
    o.field("onset_anchor", g.onset_anchor);
    o.field("onset_category_weight", g.onset_category_weight);
    o.field("prior_decay", g.prior_decay);
    o.field("category_base", g.category_base);
    o.field("attribute_base", g.attribute_base);
    o.field("repeat_penalty", g.repeat_penalty);
    o.field("attribute_repeat_penalty", g.attribute_repeat_penalty);
    o.field("predicate_logit", g.predicate_logit);
    o.field("comma_logit", g.comma_logit);
    o.field("period_logit", g.period_logit);
    o.field("eos_base", g.eos_base);
    o.field("eos_growth", g.eos_growth);
    o.field("eos_satiety", g.eos_satiety);
    o.field("jitter_sd", g.jitter_sd);
    o.field("contrast_sigma", g.contrast_sigma);
  });
  root.object("data", [&](auto& o) {
    auto& e = c.data.elicitation;
    o.field("noise_sigma_low", e.noise_sigma_low);
    o.field("noise_sigma_high", e.noise_sigma_high);
    o.field("captions_per_scene_per_config", e.captions_per_scene_per_config);
    o.field("reliability", c.data.reliability);
    o.field("pair_cap", c.data.pair_cap);
  });
  root.object("loss", [&](auto& o) {
    o.field("lambda1", c.loss.lambda1);
    o.field("lambda2", c.loss.lambda2);
    o.field("lambda3", c.loss.lambda3);
    o.field("margin_delta", c.loss.margin_delta);
    o.field("logit_scale", c.loss.logit_scale);
  });
  root.object("sgd", [&](auto& o) {
    o.field("lr", c.sgd.lr);
    o.field("batch_size", c.sgd.batch_size);
    o.field("epochs", c.sgd.epochs);
  });
  root.object("search", [&](auto& o) {
    o.field("K", c.search.K);
    o.field("probe_step", c.search.probe_step);
    o.field("alpha_max", c.search.alpha_max);
    o.field("tau", c.search.tau);
    o.field("eta", c.search.eta);
    std::string fallback = to_string(c.search.fallback);
    o.field("fallback", fallback);
    try {
      c.search.fallback = parse_fallback(fallback);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.search.fallback: ") + e.what());
    }
  });
  root.object("decode", [&](auto& o) {
    o.field("max_phases", c.decode.max_phases);
    o.field("max_tokens_per_phase", c.decode.max_tokens_per_phase);
    o.field("delay_seed", c.decode.delay_seed);
  });
  root.object("analysis", [&](auto& o) {
    o.field("position_bins", c.analysis.position_bins);
    o.field("overlap_bins", c.analysis.overlap_bins);
    o.field("tau_cls", c.analysis.tau_cls);
    o.field("dynamics_captions", c.analysis.dynamics_captions);
    o.field("tau_list", c.analysis.tau_list);
    o.field("alpha_list", c.analysis.alpha_list);
    o.field("entropy_theta", c.analysis.entropy_theta);
  });
  root.finish();
  c.data.elicitation.max_phases = c.decode.max_phases;
  c.data.elicitation.max_tokens_per_phase = c.decode.max_tokens_per_phase;
  validate(c);
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  auto sampler = [](const SceneSamplerConfig& s) {
    return nlohmann::json{{"num_scenes", s.num_scenes},         {"min_objects", s.min_objects},
                          {"max_objects", s.max_objects},       {"max_attributes", s.max_attributes},
                          {"max_relations", s.max_relations}};
  };
  const auto& g = c.generator;
  return {
      {"schema_version", kConfigSchemaVersion},
      {"seed", c.seed},
      {"world",
       {{"vocab",
         {{"categories", c.world.vocab.categories},
          {"attributes", c.world.vocab.attributes},
          {"predicates", c.world.vocab.predicates}}},
        {"train_scenes", sampler(c.world.train_scenes)},
        {"eval_scenes", sampler(c.world.eval_scenes)},
        {"embedding_dim", c.world.embedding_dim},
        {"reward_dim", c.world.reward_dim}}},
      {"generator",
       {{"grounded_boost", g.grounded_boost},   {"attribute_boost", g.attribute_boost},
        {"noise_shrink", g.noise_shrink},       {"grounding_decay", g.grounding_decay},
        {"onset_bias", g.onset_bias},
        {"onset_decay", g.onset_decay},         {"inducing_factor", g.inducing_factor},
        {"onset_anchor", g.onset_anchor},       {"onset_category_weight", g.onset_category_weight},
        {"prior_decay", g.prior_decay},
        {"category_base", g.category_base},     {"attribute_base", g.attribute_base},
        {"repeat_penalty", g.repeat_penalty},   {"attribute_repeat_penalty", g.attribute_repeat_penalty},
        {"predicate_logit", g.predicate_logit}, {"comma_logit", g.comma_logit},
        {"period_logit", g.period_logit},       {"eos_base", g.eos_base},
        {"eos_growth", g.eos_growth},           {"eos_satiety", g.eos_satiety},
        {"jitter_sd", g.jitter_sd},
        {"contrast_sigma", g.contrast_sigma}}},
      {"data",
       {{"noise_sigma_low", c.data.elicitation.noise_sigma_low},
        {"noise_sigma_high", c.data.elicitation.noise_sigma_high},
        {"captions_per_scene_per_config", c.data.elicitation.captions_per_scene_per_config},
        {"reliability", c.data.reliability},
        {"pair_cap", c.data.pair_cap}}},
      {"loss", to_json(c.loss)},
      {"sgd", {{"lr", c.sgd.lr}, {"batch_size", c.sgd.batch_size}, {"epochs", c.sgd.epochs}}},
      {"search",
       {{"K", c.search.K},
        {"probe_step", c.search.probe_step},
        {"alpha_max", c.search.alpha_max},
        {"tau", c.search.tau},
        {"eta", c.search.eta},
        {"fallback", to_string(c.search.fallback)}}},
      {"decode",
       {{"max_phases", c.decode.max_phases},
        {"max_tokens_per_phase", c.decode.max_tokens_per_phase},
        {"delay_seed", c.decode.delay_seed}}},
      {"analysis",
       {{"position_bins", c.analysis.position_bins},
        {"overlap_bins", c.analysis.overlap_bins},
        {"tau_cls", c.analysis.tau_cls},
        {"dynamics_captions", c.analysis.dynamics_captions},
        {"tau_list", c.analysis.tau_list},
        {"alpha_list", c.analysis.alpha_list},
        {"entropy_theta", c.analysis.entropy_theta}}},
  };
}

// Stable hex digest of the canonical (sorted-key) JSON form.
inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace psrd
