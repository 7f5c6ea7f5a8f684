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

// Small-graph oracles: the loss written as a function of free neighbor-pair
// weights W, closed-form pair-weight gradients, and a central-difference
// check of the analytic gradient with respect to the initial embeddings.

#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ntgcf/common.hpp"
#include "ntgcf/graph.hpp"
#include "ntgcf/losses.hpp"
#include "ntgcf/model.hpp"

namespace ntgcf {

/// Free pair weights over all nodes of a small graph; W(v, v') plays the
/// role of e_v . e_v' with v on the user side and v' on the item side.
struct PairWeightView {
  Matrix W;

  static PairWeightView from_embeddings(const EmbeddingTable& t) { return {t.weights * t.weights.transpose()}; }
};

/// Lookup of materialized operator rows by node id.
class SimRows {
 public:
  explicit SimRows(const NeighborhoodIndex& rows) {
    for (const auto& r : rows) by_node_[r.node] = &r;
  }

  const NeighborRow& at(std::uint32_t node) const {
    auto it = by_node_.find(node);
    if (it == by_node_.end()) throw DataError("missing similarity row for node " + std::to_string(node));
    return *it->second;
  }

 private:
  std::map<std::uint32_t, const NeighborRow*> by_node_;
};

namespace detail {

// sum_v sum_v' S[a,v] S[b,v'] c(v, v') W[v,v'], with c = alpha of the
// relevant neighbor's type (1 for plain scores).
inline double w_score(const SimRows& rows, const PairWeightView& w, std::uint32_t a, std::uint32_t b,
                      std::size_t num_users, double a_side_user, double a_side_item, double b_side_user,
                      double b_side_item) {
  const auto& ra = rows.at(a);
  const auto& rb = rows.at(b);
  double s = 0.0;
  for (std::size_t x = 0; x < ra.ids.size(); ++x) {
    const std::uint32_t v = ra.ids[x];
    const double cv = v < num_users ? a_side_user : a_side_item;
    for (std::size_t y = 0; y < rb.ids.size(); ++y) {
      const std::uint32_t vp = rb.ids[y];
      const double cvp = vp < num_users ? b_side_user : b_side_item;
      s += ra.weights[x] * rb.weights[y] * cv * cvp * w.W(v, vp);
    }
  }
  return s;
}

}  // namespace detail

/// The configured loss with inner-product scores computed from W instead of
/// embeddings. Node ids in `batch` are dense user / item indices.
inline double w_parametrized_loss(const NeighborhoodIndex& sim_rows, const PairWeightView& w, std::size_t num_users,
                                  const TrainBatch& batch, const LossConfig& cfg) {
  cfg.validate();
  SimRows rows(sim_rows);
  const bool typed = is_type_aware(cfg.kind);
  const std::size_t mi = cfg.items_needed();
  const std::size_t mu = cfg.users_needed();
  const auto& al = cfg.alpha;
  double total = 0.0;
  std::vector<double> scores;
  for (std::size_t p = 0; p < batch.size(); ++p) {
    const auto [u, i] = batch.positives[p];
    const auto ir = static_cast<std::uint32_t>(num_users + i);
    const double pos = detail::w_score(rows, w, u, ir, num_users, 1, 1, 1, 1);
    auto finish = [&] {
      if (is_pairwise(cfg.kind)) return detail::softplus(scores[1] - scores[0]);
      return sampled_softmax_loss(scores, cfg.tau);
    };
    if (cfg.uses_item_direction()) {
      scores.assign(1, pos);
      for (std::size_t k = 0; k < mi; ++k) {
        const auto j = static_cast<std::uint32_t>(num_users + batch.items_for(p)[k]);
        scores.push_back(typed ? detail::w_score(rows, w, u, j, num_users, 1, 1, al.item_user, al.item_item)
                               : detail::w_score(rows, w, u, j, num_users, 1, 1, 1, 1));
      }
      total += finish();
    }
    if (cfg.uses_user_direction()) {
      scores.assign(1, pos);
      for (std::size_t k = 0; k < mu; ++k) {
        const std::uint32_t kk = batch.users_for(p)[k];
        scores.push_back(detail::w_score(rows, w, kk, ir, num_users, al.user_user, al.user_item, 1, 1));
      }
      total += finish();
    }
  }
  return batch.size() == 0 ? 0.0 : total / static_cast<double>(batch.size());
}

/// d L_SSM / d W(v, v') for one positive (u, i); pi is the candidate
/// distribution over [i, negs...] (index 0 is the positive). Node ids are
/// graph node ids (items offset by the user count).
inline double pair_weight_grad_ssm(const NeighborhoodIndex& sim_rows, std::uint32_t u, std::uint32_t i,
                                   std::span<const std::uint32_t> negs, std::span<const double> pi,
                                   std::uint32_t v, std::uint32_t vp, double tau) {
  if (pi.size() != negs.size() + 1) throw std::invalid_argument("pi must cover the positive and every negative");
  SimRows rows(sim_rows);
  const double suv = rows.at(u).weight(v);
  if (suv == 0.0) return 0.0;
  double expect = pi[0] * rows.at(i).weight(vp);
  for (std::size_t k = 0; k < negs.size(); ++k) expect += pi[k + 1] * rows.at(negs[k]).weight(vp);
  return suv / tau * (expect - rows.at(i).weight(vp));
}

/// Model-induced distributions of the bidirectional type-aware softmax:
/// pi_hat_* are renormalized over negatives, mass_* is the total negative
/// mass.
struct NtDistributions {
  std::vector<double> pi_hat_u;
  std::vector<double> pi_hat_i;
  double mass_u = 0.0;
  double mass_i = 0.0;
};

/// d L_NT-SSM / d W(v, v') for one positive. Node ids are graph node ids.
/// A direction disabled in cfg contributes nothing.
inline double pair_weight_grad_ntssm(const NeighborhoodIndex& sim_rows, std::uint32_t u, std::uint32_t i,
                                     std::span<const std::uint32_t> neg_items,
                                     std::span<const std::uint32_t> neg_users, const NtDistributions& dist,
                                     std::uint32_t v, std::uint32_t vp, std::size_t num_users,
                                     const LossConfig& cfg) {
  SimRows rows(sim_rows);
  const double suv = rows.at(u).weight(v);
  const double siv = rows.at(i).weight(vp);
  double g = 0.0;
  if (cfg.uses_item_direction() && suv != 0.0) {
    if (dist.pi_hat_u.size() != neg_items.size()) throw std::invalid_argument("pi_hat_u size mismatch");
    double expect = 0.0;
    for (std::size_t k = 0; k < neg_items.size(); ++k) expect += dist.pi_hat_u[k] * rows.at(neg_items[k]).weight(vp);
    const double a = vp < num_users ? cfg.alpha.item_user : cfg.alpha.item_item;
    g += dist.mass_u * suv / cfg.tau * (a * expect - siv);
  }
  if (cfg.uses_user_direction() && siv != 0.0) {
    if (dist.pi_hat_i.size() != neg_users.size()) throw std::invalid_argument("pi_hat_i size mismatch");
    double expect = 0.0;
    for (std::size_t k = 0; k < neg_users.size(); ++k) expect += dist.pi_hat_i[k] * rows.at(neg_users[k]).weight(v);
    const double a = v < num_users ? cfg.alpha.user_user : cfg.alpha.user_item;
    g += dist.mass_i * siv / cfg.tau * (a * expect - suv);
  }
  return g;
}

/// Snapshot of the distributions induced by W for positive p of a batch.
inline NtDistributions nt_distributions(const NeighborhoodIndex& sim_rows, const PairWeightView& w,
                                        std::size_t num_users, const TrainBatch& batch, std::size_t p,
                                        const LossConfig& cfg) {
  SimRows rows(sim_rows);
  const auto& al = cfg.alpha;
  const auto [u, i] = batch.positives[p];
  const auto ir = static_cast<std::uint32_t>(num_users + i);
  const double pos = detail::w_score(rows, w, u, ir, num_users, 1, 1, 1, 1);
  NtDistributions d;
  auto split = [](std::vector<double>& scores, double tau, std::vector<double>& hat, double& mass) {
    auto pi = candidate_distribution(scores, tau);
    mass = 1.0 - pi[0];
    hat.assign(pi.begin() + 1, pi.end());
    for (double& x : hat) x /= mass;
  };
  std::vector<double> scores;
  if (cfg.uses_item_direction()) {
    scores.assign(1, pos);
    for (auto j : batch.items_for(p).subspan(0, cfg.items_needed()))
      scores.push_back(detail::w_score(rows, w, u, static_cast<std::uint32_t>(num_users + j), num_users, 1, 1,
                                       al.item_user, al.item_item));
    split(scores, cfg.tau, d.pi_hat_u, d.mass_u);
  }
  if (cfg.uses_user_direction()) {
    scores.assign(1, pos);
    for (auto k : batch.users_for(p).subspan(0, cfg.users_needed()))
      scores.push_back(detail::w_score(rows, w, k, ir, num_users, al.user_user, al.user_item, 1, 1));
    split(scores, cfg.tau, d.pi_hat_i, d.mass_i);
  }
  return d;
}

/// A random small bipartite graph with embeddings and a sampled batch.
/// Every user misses at least one item and vice versa, so negatives exist.
struct VerifyInstance {
  InteractionGraph graph;
  int layers = 1;
  EmbeddingTable table;
  TrainBatch batch;
};

inline VerifyInstance random_instance(std::uint64_t seed, std::size_t max_nodes, const LossConfig& cfg,
                                      std::size_t dim = 4, std::size_t max_positives = 4) {
  if (max_nodes < 6) throw std::invalid_argument("random_instance needs at least 6 nodes");
  auto rng = make_rng(seed, stream::kInstance);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(6, max_nodes)(rng);
  const std::size_t U = std::uniform_int_distribution<std::size_t>(3, n - 3)(rng);
  const std::size_t I = n - U;
  std::bernoulli_distribution coin(0.35);
  std::vector<std::vector<char>> adj(U, std::vector<char>(I, 0));
  for (auto& row : adj)
    for (auto& x : row) x = coin(rng);
  // Repair degrees: every user needs 1..I-1 items and every item 1..U-1 users.
  auto du = [&](std::size_t u) { return static_cast<std::size_t>(std::count(adj[u].begin(), adj[u].end(), 1)); };
  auto di = [&](std::size_t i) {
    std::size_t d = 0;
    for (std::size_t u = 0; u < U; ++u) d += adj[u][i];
    return d;
  };
  for (int pass = 0; pass < 100; ++pass) {
    bool changed = false;
    for (std::size_t u = 0; u < U; ++u) {
      if (du(u) == 0) adj[u][std::uniform_int_distribution<std::size_t>(0, I - 1)(rng)] = 1, changed = true;
      if (du(u) == I) adj[u][std::uniform_int_distribution<std::size_t>(0, I - 1)(rng)] = 0, changed = true;
    }
    for (std::size_t i = 0; i < I; ++i) {
      if (di(i) == 0) adj[std::uniform_int_distribution<std::size_t>(0, U - 1)(rng)][i] = 1, changed = true;
      if (di(i) == U) adj[std::uniform_int_distribution<std::size_t>(0, U - 1)(rng)][i] = 0, changed = true;
    }
    if (!changed) break;
    if (pass == 99) throw std::runtime_error("random_instance: degree repair did not converge");
  }
  std::vector<Edge> edges;
  for (std::uint32_t u = 0; u < U; ++u)
    for (std::uint32_t i = 0; i < I; ++i)
      if (adj[u][i]) edges.push_back({u, i});
  VerifyInstance inst;
  inst.graph = InteractionGraph(U, I, edges);
  inst.layers = std::uniform_int_distribution<int>(1, 3)(rng);
  // Unit-variance entries: with Xavier scale the propagated rows of a tiny
  // graph have small norms and cosine curvature swamps central differences.
  std::normal_distribution<double> normal(0.0, 1.0);
  inst.table.weights.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index k = 0; k < inst.table.weights.size(); ++k) inst.table.weights.data()[k] = normal(rng);
  std::shuffle(edges.begin(), edges.end(), rng);
  edges.resize(std::min(edges.size(), max_positives));
  std::vector<std::size_t> ids(edges.size());
  for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k;
  inst.batch = make_batch(inst.graph, edges, ids, cfg, seed, 0);
  return inst;
}

struct GradCheckEntry {
  std::size_t row = 0;
  std::size_t col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  std::string loss;
  std::string similarity;
  double h = 0.0;
  double tolerance = 0.0;
  double max_rel_err = 0.0;
  bool passed = false;
  std::vector<GradCheckEntry> entries;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries that are zero up
/// to rounding from reporting huge relative errors.
inline double relative_error(double a, double n, double floor = 1e-7) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Compares the analytic gradient with respect to the initial embeddings
/// against central differences on `coords` random entries.
inline GradCheckReport finite_diff_check(const VerifyInstance& inst, const LossConfig& cfg, std::size_t coords,
                                         double h, double tolerance, std::uint64_t seed) {
  if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("invalid step");
  SimilarityOperator op(inst.graph, inst.layers);
  auto state = forward(op, inst.table);
  auto buf = loss_and_grad(state, inst.batch, cfg);
  Matrix grad = backprop_to_initial(op, buf);

  GradCheckReport r;
  r.loss = to_string(cfg.kind);
  r.similarity = to_string(cfg.similarity);
  r.h = h;
  r.tolerance = tolerance;
  auto rng = make_rng(seed, stream::kInstance, 1);
  std::uniform_int_distribution<Eigen::Index> row(0, inst.table.rows() - 1), col(0, inst.table.dim() - 1);
  EmbeddingTable probe = inst.table;
  for (std::size_t c = 0; c < coords; ++c) {
    const Eigen::Index x = row(rng), y = col(rng);
    const double orig = probe.weights(x, y);
    probe.weights(x, y) = orig + h;
    const double lp = loss_at(op, probe, inst.batch, cfg);
    probe.weights(x, y) = orig - h;
    const double lm = loss_at(op, probe, inst.batch, cfg);
    probe.weights(x, y) = orig;
    GradCheckEntry e{static_cast<std::size_t>(x), static_cast<std::size_t>(y), grad(x, y), (lp - lm) / (2 * h), 0.0};
    e.rel_err = relative_error(e.analytic, e.numeric);
    r.max_rel_err = std::max(r.max_rel_err, e.rel_err);
    r.entries.push_back(e);
  }
  r.passed = r.max_rel_err < tolerance;
  return r;
}

inline nlohmann::ordered_json to_json(const GradCheckReport& r) {
  nlohmann::ordered_json j;
  j["loss"] = r.loss;
  j["similarity"] = r.similarity;
  j["h"] = r.h;
  j["tolerance"] = r.tolerance;
  j["max_rel_err"] = r.max_rel_err;
  j["passed"] = r.passed;
  j["coords"] = r.entries.size();
  return j;
}

}  // namespace ntgcf
