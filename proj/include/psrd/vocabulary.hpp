#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace psrd {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

enum class TokenKind : std::uint8_t {
  category,
  attribute,
  predicate,
  function_word,
  conjunction,
  delimiter,
  end_of_sequence,
};

struct VocabularySizes {
  int categories = 12;
  int attributes = 8;
  int predicates = 4;
};

// Dense token table. Layout is grouped by kind:
//   [categories][attributes][predicates][function words][conjunctions]
//   [comma, period][<eos>]
// The delimiter set holds comma, period and <eos>; conjunctions are boundary
// cues for the segmenter but are not delimiters.
class Vocabulary {
 public:
  explicit Vocabulary(VocabularySizes sizes = {}) : sizes_(sizes) {
    if (sizes.categories < 1 || sizes.attributes < 1 || sizes.predicates < 1)
      throw std::invalid_argument("vocabulary: every content group needs at least one token");
    static constexpr std::string_view kCategories[] = {
        "dog", "cat", "car", "tree", "table", "person", "bike", "cup",
        "chair", "bird", "boat", "lamp", "horse", "bench", "clock", "kite"};
    static constexpr std::string_view kAttributes[] = {
        "red", "blue", "green", "small", "large", "wooden", "old", "white",
        "black", "shiny", "striped", "tall"};
    static constexpr std::string_view kPredicates[] = {
        "on", "near", "under", "beside", "behind", "above"};

    auto name_from = [](auto const& pool, int i, std::string_view fallback) {
      const auto n = static_cast<int>(std::size(pool));
      return i < n ? std::string(pool[i]) : std::string(fallback) + std::to_string(i);
    };
    for (int i = 0; i < sizes.categories; ++i) add(name_from(kCategories, i, "object"), TokenKind::category);
    for (int i = 0; i < sizes.attributes; ++i) add(name_from(kAttributes, i, "attr"), TokenKind::attribute);
    for (int i = 0; i < sizes.predicates; ++i) add(name_from(kPredicates, i, "rel"), TokenKind::predicate);
    for (std::string_view w : {"a", "the", "is", "with"}) add(std::string(w), TokenKind::function_word);
    for (std::string_view w : {"and", "while"}) add(std::string(w), TokenKind::conjunction);
    comma_ = add(",", TokenKind::delimiter);
    period_ = add(".", TokenKind::delimiter);
    eos_ = add("<eos>", TokenKind::end_of_sequence);
  }

  std::size_t size() const { return names_.size(); }
  const VocabularySizes& sizes() const { return sizes_; }

  TokenKind kind(TokenId t) const { return kinds_.at(static_cast<std::size_t>(t)); }
  const std::string& name(TokenId t) const { return names_.at(static_cast<std::size_t>(t)); }

  TokenId id(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown token: " + std::string(name));
    return it->second;
  }

  bool contains(TokenId t) const { return t >= 0 && static_cast<std::size_t>(t) < names_.size(); }

  bool is_category(TokenId t) const { return kind(t) == TokenKind::category; }
  bool is_attribute(TokenId t) const { return kind(t) == TokenKind::attribute; }
  bool is_predicate(TokenId t) const { return kind(t) == TokenKind::predicate; }
  bool is_conjunction(TokenId t) const { return kind(t) == TokenKind::conjunction; }
  bool is_delimiter(TokenId t) const {
    auto k = kind(t);
    return k == TokenKind::delimiter || k == TokenKind::end_of_sequence;
  }
  bool is_content(TokenId t) const {
    auto k = kind(t);
    return k == TokenKind::category || k == TokenKind::attribute || k == TokenKind::predicate;
  }

  TokenId comma() const { return comma_; }
  TokenId period() const { return period_; }
  TokenId eos() const { return eos_; }

  TokenId category(int i) const { return i; }
  TokenId attribute(int i) const { return sizes_.categories + i; }
  TokenId predicate(int i) const { return sizes_.categories + sizes_.attributes + i; }
  int category_index(TokenId t) const { return t; }
  int attribute_index(TokenId t) const { return t - sizes_.categories; }

  std::vector<TokenId> delimiter_set() const { return {comma_, period_, eos_}; }

  TokenSeq parse(std::string_view text) const {
    TokenSeq out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      while (pos < text.size() && text[pos] == ' ') ++pos;
      auto end = text.find(' ', pos);
      if (end == std::string_view::npos) end = text.size();
      if (end > pos) out.push_back(id(text.substr(pos, end - pos)));
      pos = end;
    }
    return out;
  }

  std::string render(std::span<const TokenId> tokens) const {
    std::string out;
    for (auto t : tokens) {
      if (!out.empty()) out += ' ';
      out += name(t);
    }
    return out;
  }

 private:
  TokenId add(std::string name, TokenKind kind) {
    const auto id = static_cast<TokenId>(names_.size());
    if (!index_.emplace(name, id).second) throw std::invalid_argument("duplicate token: " + name);
    names_.push_back(std::move(name));
    kinds_.push_back(kind);
    return id;
  }

  VocabularySizes sizes_;
  std::vector<std::string> names_;
  std::vector<TokenKind> kinds_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId comma_ = -1;
  TokenId period_ = -1;
  TokenId eos_ = -1;
};

}  // namespace psrd
