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

// Training-free heuristic scoring from retained neighbor sets.
//
// A node x keeps its top-q% operator neighbors, ret_q(x). The co-occurrence
// of (v, v') counts training edges (u', i') with v in ret_q(u') and v' in
// ret_q'(i'), and the heuristic score is
//
//   r(u, i) = sum_v sum_v' S[u,v] S[i,v'] omega(v, v')
//           = sum_{(u',i')} a(u, u') b(i, i'),
//
// with a(u, u') = sum_{v in ret_q(u')} S[u,v] and b likewise. The second form
// never touches the quadratic index space of omega.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <fmt/format.h>

#include "ntgcf/common.hpp"
#include "ntgcf/data.hpp"
#include "ntgcf/evaluation.hpp"
#include "ntgcf/graph.hpp"
#include "ntgcf/model.hpp"

namespace ntgcf {

/// Retained sets for a list of nodes; each set is sorted by node id.
struct RetainedNeighborhoods {
  double q = 100.0;
  int layers = 0;
  std::vector<std::uint32_t> nodes;
  std::vector<std::vector<std::uint32_t>> sets;

  const std::vector<std::uint32_t>& of(std::uint32_t node) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), node);
    if (it == nodes.end() || *it != node) throw std::out_of_range("no retained set for node " + std::to_string(node));
    return sets[static_cast<std::size_t>(it - nodes.begin())];
  }
  bool contains(std::uint32_t node, std::uint32_t v) const {
    const auto& s = of(node);
    return std::binary_search(s.begin(), s.end(), v);
  }
  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& s : sets) n += s.size();
    return n;
  }
};

/// max(1, ceil(q/100 * size)); the small slack absorbs binary rounding of q.
inline std::size_t retained_count(std::size_t size, double q) {
  if (!(q > 0.0 && q <= 100.0)) throw std::invalid_argument("retention ratio must lie in (0, 100]");
  const double raw = q / 100.0 * static_cast<double>(size);
  const auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(size, std::max<std::size_t>(1, k));
}

/// Retained sets at every ratio in qs from a single pass over the operator
/// rows. Result k corresponds to qs[k].
inline std::vector<RetainedNeighborhoods> retain_neighbors_multi(const SimilarityOperator& op,
                                                                 std::span<const std::uint32_t> nodes,
                                                                 std::span<const double> qs, int threads = 1) {
  for (double q : qs) (void)retained_count(1, q);
  std::vector<std::uint32_t> sorted(nodes.begin(), nodes.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<RetainedNeighborhoods> out(qs.size());
  for (std::size_t k = 0; k < qs.size(); ++k) {
    out[k].q = qs[k];
    out[k].layers = op.layers();
    out[k].nodes = sorted;
    out[k].sets.resize(sorted.size());
  }
  std::size_t pos = 0;
  std::vector<std::uint32_t> order;
  for_each_row(
      op, sorted,
      [&](std::uint32_t node, std::span<const double> col) {
        order.clear();
        for (std::size_t v = 0; v < col.size(); ++v)
          if (col[v] != 0.0) order.push_back(static_cast<std::uint32_t>(v));
        if (order.empty()) throw std::logic_error("empty neighborhood for node " + std::to_string(node));
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return col[a] > col[b]; });
        for (std::size_t k = 0; k < qs.size(); ++k) {
          auto& set = out[k].sets[pos];
          set.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(retained_count(order.size(), qs[k])));
          std::sort(set.begin(), set.end());
        }
        ++pos;
      },
      128, threads);
  return out;
}

inline RetainedNeighborhoods retain_neighbors(const SimilarityOperator& op, std::span<const std::uint32_t> nodes,
                                              double q, int threads = 1) {
  const double qs[] = {q};
  return std::move(retain_neighbors_multi(op, nodes, qs, threads)[0]);
}

/// omega(v, v') by direct enumeration of the training edges. `ru` must cover
/// every user, `ri` every item node.
inline std::size_t cooccurrence(const InteractionGraph& g, const RetainedNeighborhoods& ru,
                                const RetainedNeighborhoods& ri, std::uint32_t v, std::uint32_t vp) {
  if (v >= g.num_nodes() || vp >= g.num_nodes()) throw std::out_of_range("cooccurrence: node out of range");
  std::size_t n = 0;
  for (const auto& e : g.edges()) n += ru.contains(e.user, v) && ri.contains(g.item_node(e.item), vp);
  return n;
}

inline std::vector<std::uint32_t> all_users(const InteractionGraph& g) {
  std::vector<std::uint32_t> v(g.num_users());
  for (std::uint32_t u = 0; u < v.size(); ++u) v[u] = u;
  return v;
}

inline std::vector<std::uint32_t> all_item_nodes(const InteractionGraph& g) {
  std::vector<std::uint32_t> v(g.num_items());
  for (std::uint32_t i = 0; i < v.size(); ++i) v[i] = g.item_node(i);
  return v;
}

/// Factorized heuristic scorer. prepare() caches, for each requested user u,
/// a(u, .) split by the type of v, and b(i, .) for each requested item.
class HeuristicScorer {
 public:
  HeuristicScorer(const InteractionGraph& g, int layers, double q, double q_prime, int threads = 1)
      : g_(g), op_(g, layers), threads_(threads) {
    auto users = all_users(g);
    auto items = all_item_nodes(g);
    ru_ = retain_neighbors(op_, users, q, threads);
    ri_ = retain_neighbors(op_, items, q_prime, threads);
  }

  const RetainedNeighborhoods& user_sets() const { return ru_; }
  const RetainedNeighborhoods& item_sets() const { return ri_; }
  const SimilarityOperator& op() const { return op_; }

  void prepare(std::span<const std::uint32_t> users, std::span<const std::uint32_t> items) {
    std::vector<std::uint32_t> nodes(users.begin(), users.end());
    for (auto i : items) {
      if (i >= g_.num_items()) throw std::out_of_range("prepare: item out of range");
      nodes.push_back(g_.item_node(i));
    }
    for (auto u : users)
      if (u >= g_.num_users()) throw std::out_of_range("prepare: user out of range");
    for_each_row(
        op_, nodes,
        [&](std::uint32_t node, std::span<const double> col) {
          const bool is_user = node < g_.num_users();
          const auto& sets = is_user ? ru_ : ri_;
          Cache c;
          c.from_users.resize(sets.sets.size());
          c.from_items.resize(sets.sets.size());
          for (std::size_t k = 0; k < sets.sets.size(); ++k) {
            double su = 0.0, si = 0.0;
            for (auto v : sets.sets[k]) (v < g_.num_users() ? su : si) += col[v];
            c.from_users[k] = su;
            c.from_items[k] = si;
          }
          cache_[node] = std::move(c);
        },
        128, threads_);
  }

  void invalidate() { cache_.clear(); }

  TypedScores score_typed(std::uint32_t u, std::uint32_t i) const {
    const Cache& a = lookup(u, "user");
    const Cache& b = lookup(g_.item_node(i), "item");
    TypedScores t;
    for (const auto& e : g_.edges()) {
      t.uu += a.from_users[e.user] * b.from_users[e.item];
      t.ii += a.from_items[e.user] * b.from_items[e.item];
      t.ui += a.from_users[e.user] * b.from_items[e.item];
      t.iu += a.from_items[e.user] * b.from_users[e.item];
    }
    return t;
  }

  double score(std::uint32_t u, std::uint32_t i) const {
    const Cache& a = lookup(u, "user");
    const Cache& b = lookup(g_.item_node(i), "item");
    double s = 0.0;
    for (const auto& e : g_.edges())
      s += (a.from_users[e.user] + a.from_items[e.user]) * (b.from_users[e.item] + b.from_items[e.item]);
    return s;
  }

 private:
  struct Cache {
    std::vector<double> from_users;
    std::vector<double> from_items;
  };

  const Cache& lookup(std::uint32_t node, const char* what) const {
    if (node >= g_.num_nodes()) throw std::out_of_range(std::string("heuristic score: ") + what + " out of range");
    auto it = cache_.find(node);
    if (it == cache_.end())
      throw std::logic_error(std::string("heuristic cache not prepared for ") + what + " node " + std::to_string(node));
    return it->second;
  }

  const InteractionGraph& g_;
  SimilarityOperator op_;
  int threads_ = 1;
  RetainedNeighborhoods ru_;
  RetainedNeighborhoods ri_;
  std::unordered_map<std::uint32_t, Cache> cache_;
};

inline double heuristic_score(const HeuristicScorer& s, std::uint32_t u, std::uint32_t i) { return s.score(u, i); }
inline TypedScores heuristic_score_typed(const HeuristicScorer& s, std::uint32_t u, std::uint32_t i) {
  return s.score_typed(u, i);
}

// ---------------------------------------------------------------------------
// Retention study

enum class PairType { Full, UU, II, UI, IU };

inline const char* to_string(PairType t) {
  switch (t) {
    case PairType::Full: return "full";
    case PairType::UU: return "UU";
    case PairType::II: return "II";
    case PairType::UI: return "UI";
    default: return "IU";
  }
}

inline PairType parse_pair_type(const std::string& s) {
  if (s == "full") return PairType::Full;
  if (s == "UU") return PairType::UU;
  if (s == "II") return PairType::II;
  if (s == "UI") return PairType::UI;
  if (s == "IU") return PairType::IU;
  throw std::invalid_argument("unknown pair type '" + s + "' (expected full|UU|II|UI|IU)");
}

struct RetentionSpec {
  int layers = 3;
  std::vector<double> q_grid = {0.1, 1, 10, 100};
  std::vector<double> q_prime_grid = {0.1, 1, 10, 100};
  std::vector<PairType> types = {PairType::Full};
  std::size_t cutoff = 20;
  SplitPart split = SplitPart::Test;
  std::size_t user_block = 256;
  std::size_t memory_budget = std::size_t{3} << 30;
};

struct RetentionCell {
  double q = 0.0;
  double q_prime = 0.0;
  PairType type = PairType::Full;
  double ndcg = 0.0;
  std::size_t users = 0;
};

namespace detail {

// A^T for one ratio, split by the type of v: at_u(u', u) = sum over user-type
// v in ret(u') of S[u, v]; at_i likewise for item-type v. Both U x U.
inline void user_side_factors(const SimilarityOperator& op, const RetainedNeighborhoods& ru, Matrix& at_u,
                              Matrix& at_i, int threads, std::size_t block) {
  const std::size_t U = op.num_users();
  const auto n = static_cast<Eigen::Index>(op.num_nodes());
  at_u.resize(static_cast<Eigen::Index>(U), static_cast<Eigen::Index>(U));
  at_i.resize(static_cast<Eigen::Index>(U), static_cast<Eigen::Index>(U));
  for (int side = 0; side < 2; ++side) {
    Matrix& dst = side == 0 ? at_u : at_i;
    for (std::size_t first = 0; first < U; first += block) {
      const std::size_t cb = std::min(block, U - first);
      Matrix m = Matrix::Zero(n, static_cast<Eigen::Index>(cb));
      for (std::size_t c = 0; c < cb; ++c)
        for (auto v : ru.sets[first + c])
          if ((v < U) == (side == 0)) m(v, static_cast<Eigen::Index>(c)) = 1.0;
      Matrix sm = op.apply(m, threads);
      for (std::size_t c = 0; c < cb; ++c)
        for (std::size_t u = 0; u < U; ++u)
          dst(static_cast<Eigen::Index>(first + c), static_cast<Eigen::Index>(u)) =
              sm(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(c));
    }
  }
}

}  // namespace detail

/// Heuristic scores for a block of users, written row-major into out
/// (count x num_items). use_user_v / use_item_v select the type of v on the
/// user side, use_user_vp / use_item_vp the type of v' on the item side.
inline void heuristic_block_scores(const SimilarityOperator& op, const InteractionGraph& g, const Matrix& at_u,
                                   const Matrix& at_i, const RetainedNeighborhoods& ri, bool use_user_v,
                                   bool use_item_v, bool use_user_vp, bool use_item_vp, std::size_t first,
                                   std::size_t count, std::span<double> out, int threads) {
  const std::size_t U = g.num_users();
  const std::size_t I = g.num_items();
  const auto ub = static_cast<Eigen::Index>(count);
  // xt(i', r) = sum_{u' : (u',i') train} a(first + r, u')
  Matrix xt = Matrix::Zero(static_cast<Eigen::Index>(I), ub);
  for (const auto& e : g.edges()) {
    double* dst = xt.data() + static_cast<Eigen::Index>(e.item) * ub;
    const double* au = at_u.data() + static_cast<Eigen::Index>(e.user) * at_u.cols() + first;
    const double* ai = at_i.data() + static_cast<Eigen::Index>(e.user) * at_i.cols() + first;
    if (use_user_v)
      for (Eigen::Index r = 0; r < ub; ++r) dst[r] += au[r];
    if (use_item_v)
      for (Eigen::Index r = 0; r < ub; ++r) dst[r] += ai[r];
  }
  // yt(v', r) = sum_{i' : v' in ret(i')} xt(i', r)
  Matrix yt = Matrix::Zero(static_cast<Eigen::Index>(op.num_nodes()), ub);
  for (std::size_t k = 0; k < ri.sets.size(); ++k) {
    const std::uint32_t inode = ri.nodes[k];
    const double* src = xt.data() + static_cast<Eigen::Index>(inode - U) * ub;
    for (auto vp : ri.sets[k]) {
      if (vp < U ? !use_user_vp : !use_item_vp) continue;
      double* dst = yt.data() + static_cast<Eigen::Index>(vp) * ub;
      for (Eigen::Index r = 0; r < ub; ++r) dst[r] += src[r];
    }
  }
  Matrix z = op.apply(yt, threads);
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t i = 0; i < I; ++i)
      out[r * I + i] = z(static_cast<Eigen::Index>(U + i), static_cast<Eigen::Index>(r));
}

/// Ranks the held-out items of every evaluated user by heuristic score for
/// each (q, q', type) and reports NDCG at the cutoff. Cells are emitted in
/// q-major, then q', then type order.
inline std::vector<RetentionCell> retention_study(const DatasetBundle& bundle, const RetentionSpec& spec,
                                                  int threads = 1,
                                                  const std::function<void(const RetentionCell&)>& on_cell = {}) {
  if (spec.q_grid.empty() || spec.q_prime_grid.empty() || spec.types.empty())
    throw std::invalid_argument("retention grids must be non-empty");
  if (spec.cutoff < 1) throw std::invalid_argument("cutoff must be >= 1");
  InteractionGraph g = build_graph(bundle, EdgeSelection::Train);
  SimilarityOperator op(g, spec.layers);
  const std::size_t U = g.num_users(), I = g.num_items(), n = g.num_nodes();
  const std::size_t block = std::max<std::size_t>(1, spec.user_block);

  auto users = all_users(g);
  auto items = all_item_nodes(g);
  auto ru_all = retain_neighbors_multi(op, users, spec.q_grid, threads);
  auto ri_all = retain_neighbors_multi(op, items, spec.q_prime_grid, threads);
  std::size_t set_bytes = 0;
  for (const auto& r : ru_all) set_bytes += r.total_size() * 4;
  for (const auto& r : ri_all) set_bytes += r.total_size() * 4;
  const std::size_t need = set_bytes + 2 * U * U * 8 + 4 * n * block * 8 + I * block * 8 * 2;
  if (need > spec.memory_budget)
    throw std::length_error(fmt::format("retention study needs about {} MiB, budget is {} MiB", need >> 20,
                                        spec.memory_budget >> 20));

  auto targets = eval_targets(bundle, spec.split);
  const std::array<std::size_t, 1> cut{spec.cutoff};
  std::vector<RetentionCell> cells;
  Matrix at_u, at_i;
  for (std::size_t a = 0; a < spec.q_grid.size(); ++a) {
    detail::user_side_factors(op, ru_all[a], at_u, at_i, threads, block);
    for (std::size_t b = 0; b < spec.q_prime_grid.size(); ++b) {
      for (PairType t : spec.types) {
        const bool uv = t == PairType::Full || t == PairType::UU || t == PairType::UI;
        const bool iv = t == PairType::Full || t == PairType::II || t == PairType::IU;
        const bool uvp = t == PairType::Full || t == PairType::UU || t == PairType::IU;
        const bool ivp = t == PairType::Full || t == PairType::II || t == PairType::UI;
        auto m = evaluate_rankings(
            I, targets, cut,
            [&](std::size_t first, std::size_t count, std::span<double> out) {
              heuristic_block_scores(op, g, at_u, at_i, ri_all[b], uv, iv, uvp, ivp, first, count, out, threads);
            },
            threads, false, block);
        RetentionCell c{spec.q_grid[a], spec.q_prime_grid[b], t, m.ndcg[0], m.users_evaluated};
        cells.push_back(c);
        if (on_cell) on_cell(c);
      }
    }
  }
  return cells;
}

inline std::string retention_csv(const std::vector<RetentionCell>& cells) {
  std::string out = "q,q_prime,type,ndcg\n";
  for (const auto& c : cells) out += fmt::format("{},{},{},{:.8f}\n", c.q, c.q_prime, to_string(c.type), c.ndcg);
  return out;
}

inline std::string pair_count_csv(const std::vector<PairCountRow>& rows) {
  std::string out = "hop,mean_pairs,coverage\n";
  for (const auto& r : rows) out += fmt::format("{},{:.4f},{:.8f}\n", r.hop, r.mean_pairs, r.coverage);
  return out;
}

}  // namespace ntgcf
