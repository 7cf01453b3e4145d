#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "psrd/vocabulary.hpp"

namespace psrd {

struct Phase {
  TokenSeq tokens;
  std::size_t start_index = 0;
  std::size_t phase_index = 0;

  bool operator==(const Phase&) const = default;
};

namespace detail {

inline void close_phase(std::vector<Phase>& out, TokenSeq& current, std::size_t start) {
  if (current.empty()) return;
  out.push_back({std::move(current), start, out.size()});
  current.clear();
}

}  // namespace detail

// Splits after every delimiter and before every conjunction, so a
// conjunction opens the phase it introduces.
inline std::vector<Phase> segment(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::vector<Phase> out;
  TokenSeq current;
  std::size_t start = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId t = tokens[i];
    if (vocab.is_conjunction(t) && !current.empty()) {
      detail::close_phase(out, current, start);
      start = i;
    }
    if (current.empty()) start = i;
    current.push_back(t);
    if (vocab.is_delimiter(t)) detail::close_phase(out, current, start);
  }
  detail::close_phase(out, current, start);
  return out;
}

// Entropy-jump boundaries: a phase starts at t > 0 when entropy[t] exceeds
// the mean of entropy[0, t) by more than theta.
inline std::vector<Phase> entropy_segment(std::span<const TokenId> tokens, std::span<const double> entropies,
                                          double theta = 0.5) {
  if (tokens.size() != entropies.size()) throw std::invalid_argument("entropy_segment: length mismatch");
  if (!(theta > 0.0)) throw std::invalid_argument("entropy_segment: theta must be positive");
  std::vector<Phase> out;
  TokenSeq current;
  std::size_t start = 0;
  double running_sum = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (t > 0 && entropies[t] - running_sum / static_cast<double>(t) > theta) {
      detail::close_phase(out, current, start);
      start = t;
    }
    current.push_back(tokens[t]);
    running_sum += entropies[t];
  }
  detail::close_phase(out, current, start);
  return out;
}

inline TokenSeq concatenate(std::span<const Phase> phases) {
  TokenSeq out;
  for (const auto& p : phases) out.insert(out.end(), p.tokens.begin(), p.tokens.end());
  return out;
}

}  // namespace psrd
