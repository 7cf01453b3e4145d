#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace psrd {

enum class FallbackPolicy : std::uint8_t {
  best_observed,       // best (k, alpha, score) over every evaluation made
  algorithm1_literal,  // best scouting candidate at alpha = 0
};

struct SearchConfig {
  int K = 5;
  double probe_step = 0.5;
  double alpha_max = 3.0;
  double tau = 30.0;
  double eta = 1.1;
  FallbackPolicy fallback = FallbackPolicy::best_observed;

  void validate() const {
    if (K < 1) throw std::invalid_argument("search config: K must be >= 1");
    if (!(probe_step > 0.0)) throw std::invalid_argument("search config: probe_step must be > 0");
    if (!(alpha_max > 0.0)) throw std::invalid_argument("search config: alpha_max must be > 0");
    if (probe_step > alpha_max) throw std::invalid_argument("search config: probe_step must not exceed alpha_max");
    if (!(eta >= 1.0)) throw std::invalid_argument("search config: eta must be >= 1");
  }

  // Projection steps allowed after the probe in one branch.
  int max_projection_steps() const { return static_cast<int>(std::ceil(alpha_max / probe_step - 1e-12)); }

  // Worst-case evaluator calls for one search.
  int evaluation_budget() const { return K + K * (1 + max_projection_steps()); }
};

struct SearchPoint {
  int k = 0;
  double alpha = 0.0;
  double score = 0.0;

  bool operator==(const SearchPoint&) const = default;
};

struct SearchResult {
  int k_star = 0;
  double alpha_star = 0.0;
  double score = 0.0;
  bool accepted = false;
  int evaluations = 0;
  std::vector<SearchPoint> trajectory;
};

template <typename F>
concept RewardEvaluator = std::invocable<F&, int, double> &&
                          std::convertible_to<std::invoke_result_t<F&, int, double>, double>;

// Wraps an evaluator and records every call in order.
template <RewardEvaluator F>
class RecordingEvaluator {
 public:
  RecordingEvaluator(F& f, std::vector<SearchPoint>& log) : f_(&f), log_(&log) {}

  double operator()(int k, double alpha) {
    const double s = static_cast<double>((*f_)(k, alpha));
    log_->push_back({k, alpha, s});
    return s;
  }

 private:
  F* f_;
  std::vector<SearchPoint>* log_;
};

struct ScoutResult {
  std::optional<SearchPoint> early_accept;
  std::vector<std::pair<int, double>> ranked;  // (k, s_k), descending by score
  int evaluations = 0;
};

// Stage 1: evaluate k = 0..K-1 at alpha = 0, returning at the first score
// above tau; otherwise rank candidates by score (ties keep the lower k first).
template <RewardEvaluator F>
ScoutResult scout(F&& evaluator, const SearchConfig& cfg) {
  cfg.validate();
  ScoutResult out;
  for (int k = 0; k < cfg.K; ++k) {
    const double s = static_cast<double>(evaluator(k, 0.0));
    ++out.evaluations;
    if (s > cfg.tau) {
      out.early_accept = SearchPoint{k, 0.0, s};
      out.ranked.clear();
      return out;
    }
    out.ranked.emplace_back(k, s);
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

struct ProjectResult {
  double alpha = 0.0;
  double score = 0.0;
  bool accepted = false;
  int evaluations = 0;
};

// Stage 2 for one candidate k: probe at alpha = probe_step, then follow the
// secant through the two most recent points, overshooting the tau crossing
// by eta. The branch ends on acceptance, alpha reaching alpha_max, a
// non-positive (or |m| < 1e-9) slope, or the step cap. Unaccepted branches
// report their best observed point.
template <RewardEvaluator F>
ProjectResult project(F&& evaluator, int k, double s_base, const SearchConfig& cfg) {
  cfg.validate();
  ProjectResult out;
  double alpha_prev = 0.0;
  double s_prev = s_base;
  double alpha_curr = std::clamp(cfg.probe_step, 0.0, cfg.alpha_max);
  double s_curr = static_cast<double>(evaluator(k, alpha_curr));
  out.evaluations = 1;
  double best_alpha = alpha_curr;
  double best_score = s_curr;

  for (int step = 0; step < cfg.max_projection_steps(); ++step) {
    if (s_curr > cfg.tau || alpha_curr >= cfg.alpha_max) break;
    const double m = (s_curr - s_prev) / (alpha_curr - alpha_prev);
    if (!(m > 0.0) || std::abs(m) < 1e-9) break;
    const double delta = (cfg.tau - s_curr) / m;
    const double alpha_next = std::clamp(alpha_curr + cfg.eta * delta, 0.0, cfg.alpha_max);
    if (!(alpha_next > alpha_curr)) break;
    alpha_prev = alpha_curr;
    s_prev = s_curr;
    alpha_curr = alpha_next;
    s_curr = static_cast<double>(evaluator(k, alpha_curr));
    ++out.evaluations;
    if (s_curr > best_score) {
      best_score = s_curr;
      best_alpha = alpha_curr;
    }
  }

  if (s_curr > cfg.tau) {
    out.alpha = alpha_curr;
    out.score = s_curr;
    out.accepted = true;
  } else {
    out.alpha = best_alpha;
    out.score = best_score;
  }
  return out;
}

// Scout-and-Project threshold search over (k, alpha).
template <RewardEvaluator F>
SearchResult search(F&& evaluator, const SearchConfig& cfg) {
  cfg.validate();
  SearchResult result;
  RecordingEvaluator<std::remove_reference_t<F>> rec(evaluator, result.trajectory);

  const auto scouted = scout(rec, cfg);
  auto finish = [&](SearchPoint p, bool accepted) {
    result.k_star = p.k;
    result.alpha_star = p.alpha;
    result.score = p.score;
    result.accepted = accepted;
    result.evaluations = static_cast<int>(result.trajectory.size());
    return result;
  };
  if (scouted.early_accept) return finish(*scouted.early_accept, true);

  for (const auto& [k, s_k] : scouted.ranked) {
    const auto branch = project(rec, k, s_k, cfg);
    if (branch.accepted) return finish({k, branch.alpha, branch.score}, true);
  }

  if (cfg.fallback == FallbackPolicy::algorithm1_literal) {
    const auto& [k, s] = scouted.ranked.front();
    return finish({k, 0.0, s}, false);
  }
  const auto best = std::max_element(result.trajectory.begin(), result.trajectory.end(),
                                     [](const SearchPoint& a, const SearchPoint& b) { return a.score < b.score; });
  return finish(*best, false);
}

// Exhaustive validation oracle over k in [0, K) and alpha in {0, step, ...,
// alpha_max}: the satisficing point (score > tau) of maximum score.
template <RewardEvaluator F>
std::optional<SearchPoint> grid_oracle(F&& evaluator, const SearchConfig& cfg, double alpha_grid_step) {
  if (!(alpha_grid_step > 0.0)) throw std::invalid_argument("grid_oracle: step must be positive");
  const auto n = static_cast<int>(std::floor(cfg.alpha_max / alpha_grid_step + 1e-9));
  std::optional<SearchPoint> best;
  for (int k = 0; k < cfg.K; ++k) {
    for (int i = 0; i <= n; ++i) {
      const double alpha = i * alpha_grid_step;
      const double s = static_cast<double>(evaluator(k, alpha));
      if (s > cfg.tau && (!best || s > best->score)) best = SearchPoint{k, alpha, s};
    }
  }
  return best;
}

inline const char* to_string(FallbackPolicy p) {
  return p == FallbackPolicy::best_observed ? "best_observed" : "algorithm1_literal";
}

inline FallbackPolicy parse_fallback(const std::string& s) {
  if (s == "best_observed") return FallbackPolicy::best_observed;
  if (s == "algorithm1_literal") return FallbackPolicy::algorithm1_literal;
  throw std::invalid_argument("unknown fallback policy: " + s);
}

}  // namespace psrd
