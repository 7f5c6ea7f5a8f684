/** Copyright 2026 The ntgcf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * 	http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Contrastive objectives over propagated embeddings and their exact
// gradients.
//
// Every objective is built from "directions". A direction has an anchor row,
// one positive row and a list of negative rows; it contributes either a
// sampled-softmax term or a pairwise BPR term. The item direction anchors on
// the user and contrasts items; the user direction anchors on the item and
// contrasts users. Type-aware objectives score a negative b against anchor a
// with a reweighted copy of b's embedding,
//
//   g_b = alpha_from_users * e_b^(U) + alpha_from_items * e_b^(I),
//
// where e_b^(U) / e_b^(I) are the parts of e_b propagated from user / item
// initial embeddings. Positives always use the plain score.

#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ntgcf/common.hpp"
#include "ntgcf/graph.hpp"
#include "ntgcf/model.hpp"

namespace ntgcf {

enum class LossKind { BPR, NtBPR, SSM, NtSSM };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::BPR: return "bpr";
    case LossKind::NtBPR: return "nt-bpr";
    case LossKind::SSM: return "ssm";
    default: return "nt-ssm";
  }
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "bpr" || s == "BPR") return LossKind::BPR;
  if (s == "nt-bpr" || s == "NT-BPR") return LossKind::NtBPR;
  if (s == "ssm" || s == "SSM") return LossKind::SSM;
  if (s == "nt-ssm" || s == "NT-SSM") return LossKind::NtSSM;
  throw std::invalid_argument("unknown loss kind '" + s + "' (expected bpr|nt-bpr|ssm|nt-ssm)");
}

inline bool is_pairwise(LossKind k) { return k == LossKind::BPR || k == LossKind::NtBPR; }
inline bool is_type_aware(LossKind k) { return k == LossKind::NtBPR || k == LossKind::NtSSM; }

/// Negative-side coefficients. item_user scales a negative item's
/// user-sourced part, item_item its item-sourced part; user_user / user_item
/// do the same for negative users.
struct TypeCoefficients {
  double item_user = 1.0;
  double item_item = 1.0;
  double user_user = 1.0;
  double user_item = 1.0;

  friend bool operator==(const TypeCoefficients&, const TypeCoefficients&) = default;
};

struct LossConfig {
  LossKind kind = LossKind::SSM;
  Similarity similarity = Similarity::Cosine;
  double tau = 0.2;
  TypeCoefficients alpha;
  std::size_t neg_items = 256;
  std::size_t neg_users = 256;
  // Ablation switches for the type-aware objectives.
  bool item_direction = true;
  bool user_direction = true;

  bool uses_item_direction() const { return !is_type_aware(kind) || item_direction; }
  bool uses_user_direction() const { return is_type_aware(kind) && user_direction; }

  /// Negatives actually drawn per positive (pairwise objectives use one).
  std::size_t items_needed() const { return uses_item_direction() ? (is_pairwise(kind) ? 1 : neg_items) : 0; }
  std::size_t users_needed() const { return uses_user_direction() ? (is_pairwise(kind) ? 1 : neg_users) : 0; }

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be positive");
    for (double a : {alpha.item_user, alpha.item_item, alpha.user_user, alpha.user_item})
      if (!(a > 0.0) || !std::isfinite(a)) throw std::invalid_argument("type coefficients must be positive");
    if (neg_items < 1) throw std::invalid_argument("neg_items must be >= 1");
    if (is_type_aware(kind) && neg_users < 1) throw std::invalid_argument("neg_users must be >= 1");
    if (is_type_aware(kind) && !item_direction && !user_direction)
      throw std::invalid_argument("at least one contrastive direction must be enabled");
  }
};

/// Positive edges with their sampled negatives, stored row-major:
/// negative items of positive p occupy [p*items_per_positive, (p+1)*items_per_positive).
struct TrainBatch {
  std::vector<Edge> positives;
  std::size_t items_per_positive = 0;
  std::size_t users_per_positive = 0;
  std::vector<std::uint32_t> neg_items;
  std::vector<std::uint32_t> neg_users;

  std::size_t size() const { return positives.size(); }
  std::span<const std::uint32_t> items_for(std::size_t p) const {
    return {neg_items.data() + p * items_per_positive, items_per_positive};
  }
  std::span<const std::uint32_t> users_for(std::size_t p) const {
    return {neg_users.data() + p * users_per_positive, users_per_positive};
  }
};

/// Gradients of the batch loss with respect to the final embeddings and,
/// for type-aware objectives, the two typed components.
struct GradientBuffer {
  Matrix grad;
  Matrix grad_from_users;
  Matrix grad_from_items;
  bool typed = false;
  double loss = 0.0;
};

/// Uniform draws with replacement over items the user has not interacted with.
inline std::vector<std::uint32_t> sample_negatives(const InteractionGraph& g, std::uint32_t u, std::size_t count,
                                                   std::mt19937_64& rng) {
  std::vector<std::uint32_t> out;
  if (count == 0) return out;
  if (g.user_degree(u) >= g.num_items())
    throw std::invalid_argument("user " + std::to_string(u) + " has interacted with every item");
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(g.num_items() - 1));
  const std::size_t max_draws = 1000 * count;
  out.reserve(count);
  std::size_t draws = 0;
  while (out.size() < count) {
    if (++draws > max_draws)
      throw std::runtime_error("negative sampling for user " + std::to_string(u) + " exceeded " +
                               std::to_string(max_draws) + " draws");
    std::uint32_t j = pick(rng);
    if (!g.has_edge(u, j)) out.push_back(j);
  }
  return out;
}

/// Same as sample_negatives, drawing users that never interacted with item i.
inline std::vector<std::uint32_t> sample_negative_users(const InteractionGraph& g, std::uint32_t i, std::size_t count,
                                                        std::mt19937_64& rng) {
  std::vector<std::uint32_t> out;
  if (count == 0) return out;
  if (g.item_degree(i) >= g.num_users())
    throw std::invalid_argument("item " + std::to_string(i) + " was interacted with by every user");
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(g.num_users() - 1));
  const std::size_t max_draws = 1000 * count;
  out.reserve(count);
  std::size_t draws = 0;
  auto users = g.users_of(i);
  while (out.size() < count) {
    if (++draws > max_draws)
      throw std::runtime_error("negative sampling for item " + std::to_string(i) + " exceeded " +
                               std::to_string(max_draws) + " draws");
    std::uint32_t k = pick(rng);
    if (!std::binary_search(users.begin(), users.end(), k)) out.push_back(k);
  }
  return out;
}

/// Samples negatives for each positive from its own stream
/// (seed, epoch, positive_ids[p]); results do not depend on batch layout.
inline TrainBatch make_batch(const InteractionGraph& g, std::span<const Edge> positives,
                             std::span<const std::size_t> positive_ids, const LossConfig& cfg,
                             std::uint64_t seed, std::uint64_t epoch, int threads = 1) {
  TrainBatch b;
  b.positives.assign(positives.begin(), positives.end());
  b.items_per_positive = cfg.items_needed();
  b.users_per_positive = cfg.users_needed();
  b.neg_items.resize(b.size() * b.items_per_positive);
  b.neg_users.resize(b.size() * b.users_per_positive);
  parallel_for(b.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      auto rng = make_rng(seed, stream::kSampling, epoch, positive_ids[p]);
      auto items = sample_negatives(g, positives[p].user, b.items_per_positive, rng);
      auto users = sample_negative_users(g, positives[p].item, b.users_per_positive, rng);
      std::copy(items.begin(), items.end(), b.neg_items.begin() + static_cast<std::ptrdiff_t>(p * b.items_per_positive));
      std::copy(users.begin(), users.end(), b.neg_users.begin() + static_cast<std::ptrdiff_t>(p * b.users_per_positive));
    }
  });
  return b;
}

/// Softmax of scores / tau, max-shifted.
inline std::vector<double> candidate_distribution(std::span<const double> scores, double tau) {
  double m = -std::numeric_limits<double>::infinity();
  for (double s : scores) m = std::max(m, s / tau);
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) z += (p[k] = std::exp(scores[k] / tau - m));
  for (double& x : p) x /= z;
  return p;
}

/// -log softmax_0(scores / tau) where index 0 is the positive.
inline double sampled_softmax_loss(std::span<const double> scores, double tau) {
  double m = -std::numeric_limits<double>::infinity();
  for (double s : scores) m = std::max(m, s / tau);
  double z = 0.0;
  for (double s : scores) z += std::exp(s / tau - m);
  return m + std::log(z) - scores[0] / tau;
}

namespace detail {

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void axpy(double* dst, double c, const double* src, Eigen::Index d) {
  for (Eigen::Index k = 0; k < d; ++k) dst[k] += c * src[k];
}

// Update owed to a non-anchor row r of one direction:
//   G[r] += c_self * e_r;  (typed ? H : G)[r] += c_anchor * e_anchor.
struct RowUpdate {
  std::uint32_t row = 0;
  std::uint32_t anchor = 0;
  double c_self = 0.0;
  double c_anchor = 0.0;
  bool typed = false;
};

// Scores and gradient pieces of one direction: anchor x, positive partner y,
// negatives b_k. The anchor's whole gradient is summed into `anchor_grad`;
// the other rows get RowUpdates.
class DirectionKernel {
 public:
  DirectionKernel(const PropagatedState& s, const LossConfig& cfg)
      : s_(s), cfg_(cfg), d_(s.dim()), g_(static_cast<std::size_t>(s.dim())) {}

  double run(std::uint32_t x, std::uint32_t y, std::span<const std::uint32_t> negs, bool typed, double au,
             double ai, double scale, double* anchor_grad, std::span<RowUpdate> updates) {
    const std::size_t m = negs.size();
    const bool cosine = cfg_.similarity == Similarity::Cosine;
    scores_.resize(m + 1);
    scores_[0] = similarity(s_, x, y, cfg_.similarity);
    for (std::size_t k = 0; k < m; ++k)
      scores_[k + 1] = typed ? typed_score(x, negs[k], au, ai) : similarity(s_, x, negs[k], cfg_.similarity);

    coef_.resize(m + 1);
    double loss;
    if (is_pairwise(cfg_.kind)) {
      const double z = scores_[1] - scores_[0];
      const double sg = sigmoid(z);
      coef_[0] = -sg * scale;
      coef_[1] = sg * scale;
      loss = softplus(z);
    } else {
      loss = sampled_softmax_loss(scores_, cfg_.tau);
      auto pi = candidate_distribution(scores_, cfg_.tau);
      coef_[0] = (pi[0] - 1.0) / cfg_.tau * scale;
      for (std::size_t k = 0; k < m; ++k) coef_[k + 1] = pi[k + 1] / cfg_.tau * scale;
    }

    std::fill(anchor_grad, anchor_grad + d_, 0.0);
    const double nx = s_.norms[x];
    double self = 0.0;  // coefficient of e_x from the norm terms
    for (std::size_t t = 0; t <= m; ++t) {
      const std::uint32_t r = t == 0 ? y : negs[t - 1];
      const bool ty = typed && t > 0;
      const double c = coef_[t];
      RowUpdate& up = updates[t];
      up = {r, x, 0.0, 0.0, ty};
      double inv = 1.0;
      if (cosine) {
        const double nr = s_.norms[r];
        if (nx == 0.0 || nr == 0.0) continue;
        inv = 1.0 / (nx * nr);
        self -= c * scores_[t] / (nx * nx);
        up.c_self = -c * scores_[t] / (nr * nr);
      }
      up.c_anchor = c * inv;
      if (ty) {
        const double* eu = s_.from_users.data() + static_cast<Eigen::Index>(r) * d_;
        const double* ei = s_.from_items.data() + static_cast<Eigen::Index>(r) * d_;
        axpy(anchor_grad, c * inv * au, eu, d_);
        axpy(anchor_grad, c * inv * ai, ei, d_);
      } else {
        axpy(anchor_grad, c * inv, s_.row(r), d_);
      }
    }
    if (self != 0.0) axpy(anchor_grad, self, s_.row(x), d_);
    return loss;
  }

 private:
  double typed_score(std::uint32_t a, std::uint32_t b, double au, double ai) {
    const double* eu = s_.from_users.data() + static_cast<Eigen::Index>(b) * d_;
    const double* ei = s_.from_items.data() + static_cast<Eigen::Index>(b) * d_;
    for (Eigen::Index c = 0; c < d_; ++c) g_[static_cast<std::size_t>(c)] = au * eu[c] + ai * ei[c];
    const double ip = dot(s_.row(a), g_.data(), d_);
    if (cfg_.similarity == Similarity::Inner) return ip;
    const double na = s_.norms[a];
    const double nb = s_.norms[b];
    if (na == 0.0 || nb == 0.0) return 0.0;
    return ip / (na * nb);
  }

  const PropagatedState& s_;
  const LossConfig& cfg_;
  Eigen::Index d_;
  std::vector<double> g_;
  std::vector<double> scores_;
  std::vector<double> coef_;
};

}  // namespace detail

/// Mean batch loss and its gradient for any configured objective.
///
/// Phase 1 scores each positive independently and sums the anchor gradients
/// locally. Phase 2 scatters row updates; each embedding row is owned by one
/// worker, which applies that row's updates in positive order, so the result
/// is bit-identical for every thread count.
///
/// A negative item only ever receives item-direction typed updates and a
/// negative user only user-direction ones, so both typed buffers are row
/// rescalings of one accumulator H: grad_from_users[r] = alpha_U(r) H[r] and
/// grad_from_items[r] = alpha_I(r) H[r].
inline GradientBuffer loss_and_grad(const PropagatedState& s, const TrainBatch& batch, const LossConfig& cfg,
                                    int threads = 1) {
  s.require_fresh();
  cfg.validate();
  const bool item_dir = cfg.uses_item_direction();
  const bool user_dir = cfg.uses_user_direction();
  const bool typed = is_type_aware(cfg.kind);
  const std::size_t mi = cfg.items_needed();
  const std::size_t mu = cfg.users_needed();
  if (batch.items_per_positive < mi || batch.users_per_positive < mu)
    throw std::invalid_argument("batch holds fewer negatives than the loss configuration requires");
  const std::size_t item_terms = item_dir ? 1 + mi : 0;
  const std::size_t user_terms = user_dir ? 1 + mu : 0;
  const std::size_t per_pos = item_terms + user_terms;
  const std::size_t dirs = (item_dir ? 1 : 0) + (user_dir ? 1 : 0);
  const std::size_t B = batch.size();
  const Eigen::Index d = s.dim();

  GradientBuffer buf;
  buf.typed = typed;
  buf.grad = Matrix::Zero(s.full.rows(), s.full.cols());
  if (typed) {
    buf.grad_from_users = Matrix::Zero(s.full.rows(), s.full.cols());
    buf.grad_from_items = Matrix::Zero(s.full.rows(), s.full.cols());
  }
  if (B == 0) return buf;
  if (!s.full.allFinite()) throw NumericError("non-finite values in propagated embeddings");

  const double scale = 1.0 / static_cast<double>(B);
  std::vector<detail::RowUpdate> updates(B * per_pos);
  std::vector<std::uint32_t> anchors(B * dirs);
  Matrix anchor_grad(static_cast<Eigen::Index>(B * dirs), d);
  std::vector<double> losses(B, 0.0);
  parallel_for(B, threads, [&](std::size_t begin, std::size_t end) {
    detail::DirectionKernel kernel(s, cfg);
    std::vector<std::uint32_t> rows(mi);
    for (std::size_t p = begin; p < end; ++p) {
      const auto [u, i] = batch.positives[p];
      const std::uint32_t ir = s.item_row(i);
      std::span<detail::RowUpdate> slot(updates.data() + p * per_pos, per_pos);
      std::size_t dir = 0;
      double loss = 0.0;
      if (item_dir) {
        auto items = batch.items_for(p);
        for (std::size_t k = 0; k < mi; ++k) rows[k] = s.item_row(items[k]);
        anchors[p * dirs + dir] = u;
        loss += kernel.run(u, ir, rows, typed, cfg.alpha.item_user, cfg.alpha.item_item, scale,
                           anchor_grad.row(static_cast<Eigen::Index>(p * dirs + dir)).data(),
                           slot.subspan(0, item_terms));
        ++dir;
      }
      if (user_dir) {
        anchors[p * dirs + dir] = ir;
        loss += kernel.run(ir, u, batch.users_for(p).subspan(0, mu), typed, cfg.alpha.user_user,
                           cfg.alpha.user_item, scale, anchor_grad.row(static_cast<Eigen::Index>(p * dirs + dir)).data(),
                           slot.subspan(item_terms, user_terms));
      }
      if (!std::isfinite(loss))
        throw NumericError("non-finite loss at positive (" + std::to_string(u) + ", " + std::to_string(i) + ")");
      losses[p] = loss;
    }
  });

  double total = 0.0;
  for (double l : losses) total += l;
  buf.loss = total * scale;

  Matrix h;
  if (typed) h = Matrix::Zero(s.full.rows(), s.full.cols());
  const std::size_t workers = static_cast<std::size_t>(std::max(1, threads));
  parallel_for(workers, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t owner = begin; owner < end; ++owner) {
      for (std::size_t p = 0; p < B; ++p) {
        for (std::size_t k = 0; k < dirs; ++k) {
          const std::uint32_t x = anchors[p * dirs + k];
          if (x % workers == owner)
            detail::axpy(buf.grad.data() + static_cast<Eigen::Index>(x) * d, 1.0,
                         anchor_grad.row(static_cast<Eigen::Index>(p * dirs + k)).data(), d);
        }
        for (std::size_t t = p * per_pos; t < (p + 1) * per_pos; ++t) {
          const auto& up = updates[t];
          if (up.row % workers != owner) continue;
          const Eigen::Index r = up.row;
          if (up.c_self != 0.0) detail::axpy(buf.grad.data() + r * d, up.c_self, s.row(up.row), d);
          double* dst = (up.typed ? h.data() : buf.grad.data()) + r * d;
          detail::axpy(dst, up.c_anchor, s.row(up.anchor), d);
        }
      }
    }
  });

  if (typed) {
    const auto U = static_cast<Eigen::Index>(s.num_users);
    const auto I = static_cast<Eigen::Index>(s.num_items);
    buf.grad_from_users.topRows(U) = cfg.alpha.user_user * h.topRows(U);
    buf.grad_from_items.topRows(U) = cfg.alpha.user_item * h.topRows(U);
    buf.grad_from_users.bottomRows(I) = cfg.alpha.item_user * h.bottomRows(I);
    buf.grad_from_items.bottomRows(I) = cfg.alpha.item_item * h.bottomRows(I);
  }
  return buf;
}

namespace detail {
inline void require_kind(const LossConfig& cfg, LossKind k) {
  if (cfg.kind != k) throw std::invalid_argument(std::string("loss configuration is ") + to_string(cfg.kind) +
                                                 ", expected " + to_string(k));
}
}  // namespace detail

inline GradientBuffer bpr_loss_grad(const PropagatedState& s, const TrainBatch& b, const LossConfig& cfg, int threads = 1) {
  detail::require_kind(cfg, LossKind::BPR);
  return loss_and_grad(s, b, cfg, threads);
}

inline GradientBuffer ssm_loss_grad(const PropagatedState& s, const TrainBatch& b, const LossConfig& cfg, int threads = 1) {
  detail::require_kind(cfg, LossKind::SSM);
  return loss_and_grad(s, b, cfg, threads);
}

inline GradientBuffer nt_ssm_loss_grad(const PropagatedState& s, const TrainBatch& b, const LossConfig& cfg, int threads = 1) {
  detail::require_kind(cfg, LossKind::NtSSM);
  return loss_and_grad(s, b, cfg, threads);
}

inline GradientBuffer nt_bpr_loss_grad(const PropagatedState& s, const TrainBatch& b, const LossConfig& cfg, int threads = 1) {
  detail::require_kind(cfg, LossKind::NtBPR);
  return loss_and_grad(s, b, cfg, threads);
}

/// Gradient with respect to the initial embeddings. The operator is
/// symmetric, so the pullback of E = S X is S G; typed parts were computed
/// from type-masked inputs and are masked again after the pullback.
inline Matrix backprop_to_initial(const SimilarityOperator& op, const GradientBuffer& buf, int threads = 1) {
  if (static_cast<std::size_t>(buf.grad.rows()) != op.num_nodes())
    throw std::invalid_argument("backprop: gradient rows do not match graph size");
  if (!buf.grad.allFinite()) throw NumericError("non-finite gradient");
  Matrix out = op.apply(buf.grad, threads);
  if (buf.typed) {
    Matrix gu = op.apply(buf.grad_from_users, threads);
    op.zero_rows_except(gu, NodeType::User);
    Matrix gi = op.apply(buf.grad_from_items, threads);
    op.zero_rows_except(gi, NodeType::Item);
    out += gu;
    out += gi;
  }
  return out;
}

/// Loss as a function of the initial embeddings; used by gradient checks.
inline double loss_at(const SimilarityOperator& op, const EmbeddingTable& table, const TrainBatch& batch,
                      const LossConfig& cfg) {
  return loss_and_grad(forward(op, table), batch, cfg).loss;
}

}  // namespace ntgcf
