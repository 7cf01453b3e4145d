#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "psrd/rng.hpp"
#include "psrd/vocabulary.hpp"

namespace psrd {

struct ObjectInstance {
  int id = 0;
  TokenId category = 0;
  std::set<TokenId> attributes;

  bool operator==(const ObjectInstance&) const = default;
};

struct Relation {
  int subject_id = 0;
  TokenId predicate = 0;
  int object_id = 0;

  bool operator==(const Relation&) const = default;
};

struct SceneGraph {
  int scene_id = 0;
  std::vector<ObjectInstance> objects;
  std::vector<Relation> relations;

  bool operator==(const SceneGraph&) const = default;

  const ObjectInstance* find(int object_id) const {
    for (const auto& o : objects)
      if (o.id == object_id) return &o;
    return nullptr;
  }

  int count(TokenId category) const {
    return static_cast<int>(std::count_if(objects.begin(), objects.end(),
                                          [&](const ObjectInstance& o) { return o.category == category; }));
  }

  std::set<TokenId> categories() const {
    std::set<TokenId> out;
    for (const auto& o : objects) out.insert(o.category);
    return out;
  }
};

// Throws std::invalid_argument when a scene breaks the structural invariants.
inline void validate(const SceneGraph& scene, const Vocabulary& vocab) {
  if (scene.objects.empty()) throw std::invalid_argument("empty scene");
  std::unordered_set<int> ids;
  for (const auto& o : scene.objects) {
    if (!ids.insert(o.id).second)
      throw std::invalid_argument("scene " + std::to_string(scene.scene_id) + ": duplicate object id " +
                                  std::to_string(o.id));
    if (!vocab.contains(o.category) || !vocab.is_category(o.category))
      throw std::invalid_argument("scene " + std::to_string(scene.scene_id) + ": bad category token");
    for (auto a : o.attributes)
      if (!vocab.contains(a) || !vocab.is_attribute(a))
        throw std::invalid_argument("scene " + std::to_string(scene.scene_id) + ": bad attribute token");
  }
  for (const auto& r : scene.relations) {
    if (!ids.contains(r.subject_id) || !ids.contains(r.object_id))
      throw std::invalid_argument("scene " + std::to_string(scene.scene_id) + ": dangling relation endpoint");
    if (!vocab.contains(r.predicate) || !vocab.is_predicate(r.predicate))
      throw std::invalid_argument("scene " + std::to_string(scene.scene_id) + ": bad predicate token");
  }
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

struct SceneEmbedding {
  std::vector<double> values;
  double noise_sigma = 0.0;
};

// Clean feature map: the first C coordinates hold category counts, the
// remaining D - C hold attribute indicators at slot C + (token % (D - C)).
// The whole vector is L2-normalized.
inline std::vector<double> clean_features(const SceneGraph& scene, const Vocabulary& vocab, int dim) {
  if (scene.objects.empty()) throw std::invalid_argument("empty scene");
  const int num_categories = vocab.sizes().categories;
  if (dim <= num_categories) throw std::invalid_argument("embedding dimension must exceed category count");
  std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
  const int attr_slots = dim - num_categories;
  for (const auto& o : scene.objects) {
    v[static_cast<std::size_t>(vocab.category_index(o.category))] += 1.0;
    for (auto a : o.attributes) v[static_cast<std::size_t>(num_categories + a % attr_slots)] = 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

inline std::size_t attribute_slot(const Vocabulary& vocab, TokenId attribute, int dim) {
  const int c = vocab.sizes().categories;
  return static_cast<std::size_t>(c + attribute % (dim - c));
}

// Adds zero-mean Gaussian noise after normalization; the result is not
// re-normalized.
inline SceneEmbedding corrupt_embedding(const SceneEmbedding& clean, double noise_sigma, std::uint64_t seed) {
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be non-negative");
  SceneEmbedding out{clean.values, clean.noise_sigma + noise_sigma};
  if (noise_sigma == 0.0) return out;
  Rng rng(mix_seed({seed, 0x6e6f697365ULL}));
  for (double& x : out.values) x += noise_sigma * rng.normal();
  return out;
}

inline SceneEmbedding render_embedding(const SceneGraph& scene, const Vocabulary& vocab, int dim,
                                       double noise_sigma, std::uint64_t seed) {
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be non-negative");
  SceneEmbedding clean{clean_features(scene, vocab, dim), 0.0};
  return corrupt_embedding(clean, noise_sigma, mix_seed({seed, static_cast<std::uint64_t>(scene.scene_id)}));
}

// ---------------------------------------------------------------------------
// Grounding oracle
// ---------------------------------------------------------------------------

enum class MentionKind : std::uint8_t { object, quantity, attribute, relation };

inline const char* to_string(MentionKind k) {
  switch (k) {
    case MentionKind::object: return "object";
    case MentionKind::quantity: return "quantity";
    case MentionKind::attribute: return "attribute";
    case MentionKind::relation: return "relation";
  }
  return "?";
}

struct UnsupportedMention {
  MentionKind kind = MentionKind::object;
  TokenSeq tokens;                 // e.g. {car} or {dog, on, table}
  std::vector<std::size_t> span;   // phrase positions the mention covers

  bool operator==(const UnsupportedMention&) const = default;
};

struct GroundingVerdict {
  bool grounded = true;
  std::vector<UnsupportedMention> unsupported;
};

namespace detail {

struct ObjectMention {
  TokenId category;
  std::size_t position;
  std::vector<std::pair<TokenId, std::size_t>> attributes;
};

}  // namespace detail

// Exact ground-truth check of a phrase against a scene: absent objects,
// over-counted objects, attributes no instance carries, and relations the
// scene does not contain. A phrase without scene-content tokens is grounded.
inline GroundingVerdict grounding_oracle(const SceneGraph& scene, std::span<const TokenId> phrase,
                                         const Vocabulary& vocab) {
  GroundingVerdict verdict;
  std::vector<detail::ObjectMention> mentions;
  std::vector<std::pair<TokenId, std::size_t>> pending_attrs;
  struct PendingRelation {
    std::size_t subject_mention;
    TokenId predicate;
    std::size_t position;
  };
  std::vector<std::tuple<std::size_t, TokenId, std::size_t, std::size_t>> relations;  // subj, pred, pos, obj
  std::optional<PendingRelation> pending_rel;

  auto flush_dangling_attributes = [&] {
    for (auto [attr, pos] : pending_attrs) {
      bool carried = std::any_of(scene.objects.begin(), scene.objects.end(),
                                 [&](const ObjectInstance& o) { return o.attributes.contains(attr); });
      if (!carried) verdict.unsupported.push_back({MentionKind::attribute, {attr}, {pos}});
    }
    pending_attrs.clear();
  };

  for (std::size_t i = 0; i < phrase.size(); ++i) {
    const TokenId t = phrase[i];
    switch (vocab.kind(t)) {
      case TokenKind::attribute:
        pending_attrs.emplace_back(t, i);
        break;
      case TokenKind::category: {
        mentions.push_back({t, i, std::move(pending_attrs)});
        pending_attrs.clear();
        if (pending_rel) {
          relations.emplace_back(pending_rel->subject_mention, pending_rel->predicate, pending_rel->position,
                                 mentions.size() - 1);
          pending_rel.reset();
        }
        break;
      }
      case TokenKind::predicate:
        flush_dangling_attributes();
        if (!mentions.empty()) pending_rel = PendingRelation{mentions.size() - 1, t, i};
        break;
      case TokenKind::function_word:
        flush_dangling_attributes();
        break;
      default:
        flush_dangling_attributes();
        pending_rel.reset();
        break;
    }
  }
  flush_dangling_attributes();

  std::vector<bool> mention_ok(mentions.size(), true);
  std::map<TokenId, int> seen;
  for (std::size_t m = 0; m < mentions.size(); ++m) {
    const auto& mention = mentions[m];
    const int available = scene.count(mention.category);
    std::vector<std::size_t> span;
    for (auto [a, p] : mention.attributes) span.push_back(p);
    span.push_back(mention.position);
    if (available == 0) {
      verdict.unsupported.push_back({MentionKind::object, {mention.category}, span});
      mention_ok[m] = false;
      continue;
    }
    if (++seen[mention.category] > available) {
      verdict.unsupported.push_back({MentionKind::quantity, {mention.category}, span});
      mention_ok[m] = false;
      continue;
    }
    for (auto [attr, pos] : mention.attributes) {
      bool carried = std::any_of(scene.objects.begin(), scene.objects.end(), [&](const ObjectInstance& o) {
        return o.category == mention.category && o.attributes.contains(attr);
      });
      if (!carried) verdict.unsupported.push_back({MentionKind::attribute, {attr, mention.category}, {pos}});
    }
  }

  for (auto [subj, pred, pos, obj] : relations) {
    if (!mention_ok[subj] || !mention_ok[obj]) continue;
    const TokenId subj_cat = mentions[subj].category;
    const TokenId obj_cat = mentions[obj].category;
    bool found = std::any_of(scene.relations.begin(), scene.relations.end(), [&](const Relation& r) {
      const auto* s = scene.find(r.subject_id);
      const auto* o = scene.find(r.object_id);
      return r.predicate == pred && s && o && s->category == subj_cat && o->category == obj_cat;
    });
    if (!found) verdict.unsupported.push_back({MentionKind::relation, {subj_cat, pred, obj_cat}, {pos}});
  }

  verdict.grounded = verdict.unsupported.empty();
  return verdict;
}

// Per-token hallucination flags derived from the oracle's unsupported spans.
inline std::vector<bool> word_flags(const SceneGraph& scene, std::span<const TokenId> phrase,
                                    const Vocabulary& vocab) {
  std::vector<bool> flags(phrase.size(), false);
  for (const auto& u : grounding_oracle(scene, phrase, vocab).unsupported)
    for (auto p : u.span) flags[p] = true;
  return flags;
}

// ---------------------------------------------------------------------------
// Scene sampling and JSON-lines corpus
// ---------------------------------------------------------------------------

struct SceneSamplerConfig {
  int num_scenes = 200;
  int min_objects = 2;
  int max_objects = 5;
  int max_attributes = 2;
  int max_relations = 2;
};

inline SceneGraph sample_scene(int scene_id, const SceneSamplerConfig& cfg, const Vocabulary& vocab, Rng& rng) {
  const auto& sizes = vocab.sizes();
  SceneGraph scene;
  scene.scene_id = scene_id;
  const int n = static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));
  for (int i = 0; i < n; ++i) {
    ObjectInstance o;
    o.id = i;
    o.category = vocab.category(static_cast<int>(rng.uniform_int(0, sizes.categories - 1)));
    const int na = static_cast<int>(rng.uniform_int(1, std::max(1, cfg.max_attributes)));
    for (int a = 0; a < na; ++a)
      o.attributes.insert(vocab.attribute(static_cast<int>(rng.uniform_int(0, sizes.attributes - 1))));
    scene.objects.push_back(std::move(o));
  }
  if (n >= 2) {
    const int nr = static_cast<int>(rng.uniform_int(0, cfg.max_relations));
    for (int r = 0; r < nr; ++r) {
      int s = static_cast<int>(rng.uniform_int(0, n - 1));
      int o = static_cast<int>(rng.uniform_int(0, n - 2));
      if (o >= s) ++o;
      scene.relations.push_back(
          {s, vocab.predicate(static_cast<int>(rng.uniform_int(0, sizes.predicates - 1))), o});
    }
  }
  return scene;
}

inline std::vector<SceneGraph> sample_scenes(const SceneSamplerConfig& cfg, const Vocabulary& vocab,
                                             std::uint64_t seed) {
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects)
    throw std::invalid_argument("scene sampler: bad object count range");
  Rng rng(mix_seed({seed, 0x7363656e65ULL}));
  std::vector<SceneGraph> scenes;
  scenes.reserve(static_cast<std::size_t>(cfg.num_scenes));
  for (int i = 0; i < cfg.num_scenes; ++i) scenes.push_back(sample_scene(i, cfg, vocab, rng));
  return scenes;
}

inline nlohmann::json to_json(const SceneGraph& scene) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : scene.objects)
    objects.push_back({{"id", o.id}, {"category", o.category}, {"attributes", o.attributes}});
  nlohmann::json relations = nlohmann::json::array();
  for (const auto& r : scene.relations) relations.push_back({r.subject_id, r.predicate, r.object_id});
  return {{"scene_id", scene.scene_id}, {"objects", objects}, {"relations", relations}};
}

inline SceneGraph scene_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  SceneGraph scene;
  scene.scene_id = j.at("scene_id").get<int>();
  for (const auto& o : j.at("objects")) {
    ObjectInstance obj;
    obj.id = o.at("id").get<int>();
    obj.category = o.at("category").get<TokenId>();
    for (const auto& a : o.at("attributes")) obj.attributes.insert(a.get<TokenId>());
    scene.objects.push_back(std::move(obj));
  }
  for (const auto& r : j.at("relations")) {
    if (!r.is_array() || r.size() != 3) throw std::invalid_argument("relation must be [s, p, o]");
    scene.relations.push_back({r[0].get<int>(), r[1].get<TokenId>(), r[2].get<int>()});
  }
  validate(scene, vocab);
  return scene;
}

inline void write_scenes_jsonl(std::ostream& out, std::span<const SceneGraph> scenes) {
  for (const auto& s : scenes) out << to_json(s).dump() << '\n';
}

inline std::vector<SceneGraph> read_scenes_jsonl(std::istream& in, const Vocabulary& vocab) {
  std::vector<SceneGraph> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    scenes.push_back(scene_from_json(nlohmann::json::parse(line), vocab));
  }
  return scenes;
}

}  // namespace psrd
