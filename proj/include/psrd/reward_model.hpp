#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "psrd/rng.hpp"
#include "psrd/vocabulary.hpp"

namespace psrd {

// Dense row-major matrix; just enough linear algebra for the projections.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool operator==(const Matrix&) const = default;
};

inline std::vector<double> multiply(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols) throw std::invalid_argument("matrix-vector size mismatch");
  std::vector<double> out(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = &m.data[r * m.cols];
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
  return out;
}

// m += outer(u, x)
inline void add_outer(Matrix& m, std::span<const double> u, std::span<const double> x) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    if (u[r] == 0.0) continue;
    double* row = &m.data[r * m.cols];
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += u[r] * x[c];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

struct RewardParams {
  Matrix image_proj;  // E x D
  Matrix text_proj;   // E x D_text, D_text = |V|

  std::size_t embed_dim() const { return image_proj.rows; }

  bool operator==(const RewardParams&) const = default;
};

inline RewardParams init_params(std::size_t embed_dim, std::size_t image_dim, std::size_t text_dim,
                                std::uint64_t seed) {
  RewardParams p{Matrix(embed_dim, image_dim), Matrix(embed_dim, text_dim)};
  Rng rng(mix_seed({seed, 0x7061726d73ULL}));
  const double si = 1.0 / std::sqrt(static_cast<double>(image_dim));
  const double st = 1.0 / std::sqrt(static_cast<double>(text_dim));
  for (double& w : p.image_proj.data) w = si * rng.normal();
  for (double& w : p.text_proj.data) w = st * rng.normal();
  return p;
}

inline std::vector<double> bag_of_tokens(std::span<const TokenId> phrase, std::size_t vocab_size) {
  std::vector<double> b(vocab_size, 0.0);
  for (auto t : phrase) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) throw std::out_of_range("token outside vocabulary");
    b[static_cast<std::size_t>(t)] += 1.0;
  }
  return b;
}

inline std::vector<double> normalized(std::vector<double> v) {
  const double n = norm2(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw std::domain_error("degenerate projection");
  for (double& x : v) x /= n;
  return v;
}

inline std::vector<double> encode_text(const RewardParams& params, std::span<const TokenId> phrase) {
  if (phrase.empty()) throw std::invalid_argument("empty phrase");
  return normalized(multiply(params.text_proj, bag_of_tokens(phrase, params.text_proj.cols)));
}

inline std::vector<double> encode_image(const RewardParams& params, std::span<const double> scene_embedding) {
  return normalized(multiply(params.image_proj, scene_embedding));
}

// 100 * cos between the two projected vectors.
inline double reward_from_projections(std::span<const double> v, std::span<const double> t) {
  const double nv = norm2(v);
  const double nt = norm2(t);
  if (!(nv > 0.0) || !(nt > 0.0)) throw std::domain_error("degenerate projection");
  return 100.0 * dot(v, t) / (nv * nt);
}

inline double reward(const RewardParams& params, std::span<const double> scene_embedding,
                     std::span<const TokenId> phrase) {
  if (phrase.empty()) throw std::invalid_argument("empty phrase");
  return reward_from_projections(multiply(params.image_proj, scene_embedding),
                                 multiply(params.text_proj, bag_of_tokens(phrase, params.text_proj.cols)));
}

// ---------------------------------------------------------------------------
// Training data and losses
// ---------------------------------------------------------------------------

struct Triplet {
  int scene_id = 0;
  std::vector<double> scene_embedding;  // clean
  TokenSeq s_plus;
  TokenSeq s_minus;
  double w_plus = 1.0;   // p+ of s_plus
  double w_minus = 1.0;  // p- of s_minus
};

// Two pseudo-negative phrases of the same scene, for the consistency term.
struct NegativePair {
  int scene_id_a = 0;
  int scene_id_b = 0;
  TokenSeq a;
  TokenSeq b;
  double w_a = 1.0;  // p- of a
  double w_b = 1.0;  // p- of b
};

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 2.4;
  double lambda3 = 0.1;
  double margin_delta = 0.3;
  double logit_scale = 10.0;
};

struct LossBreakdown {
  double da = 0.0;
  double margin = 0.0;
  double hc = 0.0;
  double total = 0.0;
};

using Gradients = RewardParams;

inline Gradients zero_gradients(const RewardParams& p) {
  return {Matrix(p.image_proj.rows, p.image_proj.cols), Matrix(p.text_proj.rows, p.text_proj.cols)};
}

namespace detail {

// Cosine of raw vectors a, b and its partial derivatives.
struct CosineGrad {
  double value = 0.0;
  std::vector<double> d_a;
  std::vector<double> d_b;
};

inline CosineGrad cosine_with_grad(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw std::domain_error("degenerate projection");
  CosineGrad g;
  g.value = dot(a, b) / (na * nb);
  g.d_a.resize(a.size());
  g.d_b.resize(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    g.d_a[i] = b[i] / (na * nb) - g.value * a[i] / (na * na);
    g.d_b[i] = a[i] / (na * nb) - g.value * b[i] / (nb * nb);
  }
  return g;
}

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct TripletView {
  std::vector<double> x, b_plus, b_minus;
  std::vector<double> v, t_plus, t_minus;
};

inline TripletView project(const RewardParams& p, const Triplet& tr) {
  TripletView tv;
  tv.x = tr.scene_embedding;
  tv.b_plus = bag_of_tokens(tr.s_plus, p.text_proj.cols);
  tv.b_minus = bag_of_tokens(tr.s_minus, p.text_proj.cols);
  tv.v = multiply(p.image_proj, tv.x);
  tv.t_plus = multiply(p.text_proj, tv.b_plus);
  tv.t_minus = multiply(p.text_proj, tv.b_minus);
  return tv;
}

// Backpropagates dL/dc+ and dL/dc- of one triplet into grad.
inline void backprop_triplet(Gradients& grad, const TripletView& tv, const CosineGrad& cp, const CosineGrad& cm,
                             double dl_dcplus, double dl_dcminus) {
  std::vector<double> dv(tv.v.size());
  std::vector<double> dtp(tv.v.size());
  std::vector<double> dtm(tv.v.size());
  for (std::size_t i = 0; i < dv.size(); ++i) {
    dv[i] = dl_dcplus * cp.d_a[i] + dl_dcminus * cm.d_a[i];
    dtp[i] = dl_dcplus * cp.d_b[i];
    dtm[i] = dl_dcminus * cm.d_b[i];
  }
  add_outer(grad.image_proj, dv, tv.x);
  add_outer(grad.text_proj, dtp, tv.b_plus);
  add_outer(grad.text_proj, dtm, tv.b_minus);
}

}  // namespace detail

// Uncertainty-weighted two-way cross-entropy over scaled cosines [c-, c+]
// with the positive index as target, averaged over the batch. When `grad` is
// given, `scale` * dL/dparams is accumulated into it.
inline double loss_da(const RewardParams& params, std::span<const Triplet> batch, const LossWeights& w,
                      Gradients* grad = nullptr, double scale = 1.0) {
  if (batch.empty()) throw std::invalid_argument("loss_da: empty batch");
  const double n = static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& tr : batch) {
    const double weight = tr.w_plus * tr.w_minus;
    const auto tv = detail::project(params, tr);
    const auto cp = detail::cosine_with_grad(tv.v, tv.t_plus);
    const auto cm = detail::cosine_with_grad(tv.v, tv.t_minus);
    const double z = w.logit_scale * (cm.value - cp.value);
    total += detail::softplus(z) * weight;
    if (grad && weight != 0.0) {
      const double g = scale * weight * w.logit_scale * detail::sigmoid(z) / n;
      detail::backprop_triplet(*grad, tv, cp, cm, -g, g);
    }
  }
  return total / n;
}

// Weighted hinge max(0, c- - c+ + delta); subgradient 0 at the kink.
inline double loss_margin(const RewardParams& params, std::span<const Triplet> batch, const LossWeights& w,
                          Gradients* grad = nullptr, double scale = 1.0) {
  if (batch.empty()) throw std::invalid_argument("loss_margin: empty batch");
  const double n = static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& tr : batch) {
    const double weight = tr.w_plus * tr.w_minus;
    const auto tv = detail::project(params, tr);
    const auto cp = detail::cosine_with_grad(tv.v, tv.t_plus);
    const auto cm = detail::cosine_with_grad(tv.v, tv.t_minus);
    const double h = cm.value - cp.value + w.margin_delta;
    if (h > 0.0) {
      total += h * weight;
      if (grad && weight != 0.0) {
        const double g = scale * weight / n;
        detail::backprop_triplet(*grad, tv, cp, cm, -g, g);
      }
    }
  }
  return total / n;
}

// Pulls pseudo-negatives of the same scene together: mean (1 - cos) * p-_a p-_b.
inline double loss_hc(const RewardParams& params, std::span<const NegativePair> pairs, const LossWeights& /*w*/,
                      Gradients* grad = nullptr, double scale = 1.0) {
  if (pairs.empty()) return 0.0;
  const double n = static_cast<double>(pairs.size());
  double total = 0.0;
  for (const auto& pr : pairs) {
    if (pr.scene_id_a != pr.scene_id_b) throw std::invalid_argument("loss_hc: pair spans two scenes");
    const double weight = pr.w_a * pr.w_b;
    const auto ba = bag_of_tokens(pr.a, params.text_proj.cols);
    const auto bb = bag_of_tokens(pr.b, params.text_proj.cols);
    const auto ta = multiply(params.text_proj, ba);
    const auto tb = multiply(params.text_proj, bb);
    const auto c = detail::cosine_with_grad(ta, tb);
    total += (1.0 - c.value) * weight;
    if (grad && weight != 0.0) {
      const double g = -scale * weight / n;
      std::vector<double> da(c.d_a.size()), db(c.d_b.size());
      for (std::size_t i = 0; i < da.size(); ++i) {
        da[i] = g * c.d_a[i];
        db[i] = g * c.d_b[i];
      }
      add_outer(grad->text_proj, da, ba);
      add_outer(grad->text_proj, db, bb);
    }
  }
  return total / n;
}

inline LossBreakdown loss_total(const RewardParams& params, std::span<const Triplet> batch,
                                std::span<const NegativePair> pairs, const LossWeights& w,
                                Gradients* grad = nullptr) {
  LossBreakdown out;
  out.da = loss_da(params, batch, w, grad, w.lambda1);
  out.margin = loss_margin(params, batch, w, grad, w.lambda2);
  out.hc = loss_hc(params, pairs, w, grad, w.lambda3);
  out.total = w.lambda1 * out.da + w.lambda2 * out.margin + w.lambda3 * out.hc;
  return out;
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

struct SgdConfig {
  double lr = 0.5;
  std::size_t batch_size = 64;
  int epochs = 5;
  std::uint64_t seed = 0;
};

struct EpochLoss {
  int epoch = 0;  // 0 is the evaluation before the first update
  LossBreakdown loss;
};

struct TrainResult {
  RewardParams params;
  std::vector<EpochLoss> log;
};

inline void sgd_step(RewardParams& params, const Gradients& grad, double lr) {
  for (std::size_t i = 0; i < params.image_proj.data.size(); ++i) params.image_proj.data[i] -= lr * grad.image_proj.data[i];
  for (std::size_t i = 0; i < params.text_proj.data.size(); ++i) params.text_proj.data[i] -= lr * grad.text_proj.data[i];
}

// Plain minibatch SGD on the weighted total loss. Triplets and negative
// pairs are shuffled independently each epoch; every step sees one triplet
// batch and the matching slice of pairs so each epoch covers both sets once.
inline TrainResult train(RewardParams params, std::span<const Triplet> triplets, std::span<const NegativePair> pairs,
                         const LossWeights& w, const SgdConfig& cfg) {
  if (triplets.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  TrainResult result;

  // A non-finite weight surfaces as a degenerate projection.
  auto checked = [&](auto&& f, int epoch) {
    try {
      return f();
    } catch (const std::domain_error& e) {
      throw std::runtime_error("divergence at epoch " + std::to_string(epoch) + ": " + e.what());
    }
  };
  auto evaluate = [&](int epoch) {
    auto l = checked([&] { return loss_total(params, triplets, pairs, w); }, epoch);
    if (!std::isfinite(l.total)) throw std::runtime_error("divergence: non-finite loss at epoch " + std::to_string(epoch));
    result.log.push_back({epoch, l});
  };
  evaluate(0);

  std::vector<std::size_t> order(triplets.size());
  std::vector<std::size_t> pair_order(pairs.size());
  const std::size_t steps = (triplets.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t pair_batch = pairs.empty() ? 0 : (pairs.size() + steps - 1) / steps;
  std::vector<Triplet> batch;
  std::vector<NegativePair> pair_slice;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(mix_seed({cfg.seed, static_cast<std::uint64_t>(epoch), 0x736764ULL}));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < pair_order.size(); ++i) pair_order[i] = i;
    rng.shuffle(order);
    rng.shuffle(pair_order);

    for (std::size_t s = 0; s < steps; ++s) {
      batch.clear();
      pair_slice.clear();
      for (std::size_t i = s * cfg.batch_size; i < std::min(order.size(), (s + 1) * cfg.batch_size); ++i)
        batch.push_back(triplets[order[i]]);
      for (std::size_t i = s * pair_batch; i < std::min(pair_order.size(), (s + 1) * pair_batch); ++i)
        pair_slice.push_back(pairs[pair_order[i]]);
      auto grad = zero_gradients(params);
      const auto l = checked([&] { return loss_total(params, batch, pair_slice, w, &grad); }, epoch);
      if (!std::isfinite(l.total)) throw std::runtime_error("divergence: non-finite loss at epoch " + std::to_string(epoch));
      sgd_step(params, grad, cfg.lr);
    }
    evaluate(epoch);
  }
  result.params = std::move(params);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class Label : std::uint8_t { grounded, hallucinated };

inline Label classify(const RewardParams& params, std::span<const double> scene_embedding,
                      std::span<const TokenId> phrase, double tau_cls) {
  return reward(params, scene_embedding, phrase) > tau_cls ? Label::grounded : Label::hallucinated;
}

struct BinaryMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;
};

// Metrics with `positive` as the positive class. Undefined ratios are 0.
inline BinaryMetrics binary_metrics(std::span<const Label> predicted, std::span<const Label> actual,
                                    Label positive = Label::hallucinated) {
  if (predicted.size() != actual.size()) throw std::invalid_argument("binary_metrics: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == positive;
    const bool a = actual[i] == positive;
    tp += p && a;
    fp += p && !a;
    fn += !p && a;
    correct += predicted[i] == actual[i];
  }
  BinaryMetrics m;
  m.count = predicted.size();
  m.accuracy = m.count ? static_cast<double>(correct) / static_cast<double>(m.count) : 0.0;
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

// Shared area of the two normalized histograms over a common binning of
// [min, max] of both lists. Bins are left-closed; the maximum lands in the
// last bin.
inline double overlap_ratio(std::span<const double> pos, std::span<const double> neg, int bins) {
  if (pos.empty() || neg.empty()) throw std::invalid_argument("overlap_ratio: empty score list");
  if (bins < 2) throw std::invalid_argument("overlap_ratio: need at least two bins");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double x : pos) lo = std::min(lo, x), hi = std::max(hi, x);
  for (double x : neg) lo = std::min(lo, x), hi = std::max(hi, x);
  if (hi == lo) return 1.0;
  const double width = (hi - lo) / bins;
  auto histogram = [&](std::span<const double> xs) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (double x : xs) {
      auto b = static_cast<std::size_t>(std::floor((x - lo) / width));
      h[std::min(b, h.size() - 1)] += 1.0;
    }
    for (double& c : h) c /= static_cast<double>(xs.size());
    return h;
  };
  const auto hp = histogram(pos);
  const auto hn = histogram(neg);
  double shared = 0.0;
  for (std::size_t b = 0; b < hp.size(); ++b) shared += std::min(hp[b], hn[b]);
  return shared;
}

// ---------------------------------------------------------------------------
// Serialization: one JSON header line, then little-endian float64 payload
// (image_proj row-major, then text_proj row-major).
// ---------------------------------------------------------------------------

inline void write_params(std::ostream& out, const RewardParams& p, nlohmann::json header) {
  header["format"] = "psrd-reward-params/1";
  header["E"] = p.image_proj.rows;
  header["D"] = p.image_proj.cols;
  header["D_text"] = p.text_proj.cols;
  header["count"] = p.image_proj.data.size() + p.text_proj.data.size();
  out << header.dump() << '\n';
  auto put = [&](double x) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(bytes, 8);
  };
  for (double x : p.image_proj.data) put(x);
  for (double x : p.text_proj.data) put(x);
}

struct LoadedParams {
  RewardParams params;
  nlohmann::json header;
};

inline LoadedParams read_params(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("reward params: missing header");
  LoadedParams out;
  out.header = nlohmann::json::parse(line);
  if (out.header.value("format", "") != "psrd-reward-params/1") throw std::runtime_error("reward params: bad format tag");
  const auto e = out.header.at("E").get<std::size_t>();
  const auto d = out.header.at("D").get<std::size_t>();
  const auto dt = out.header.at("D_text").get<std::size_t>();
  out.params = {Matrix(e, d), Matrix(e, dt)};
  auto get = [&]() {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("reward params: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
  };
  for (double& x : out.params.image_proj.data) x = get();
  for (double& x : out.params.text_proj.data) x = get();
  return out;
}

inline nlohmann::json to_json(const LossWeights& w) {
  return {{"lambda1", w.lambda1}, {"lambda2", w.lambda2}, {"lambda3", w.lambda3},
          {"margin_delta", w.margin_delta}, {"logit_scale", w.logit_scale}};
}

}  // namespace psrd
