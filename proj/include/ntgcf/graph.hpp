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

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ntgcf/common.hpp"
#include "ntgcf/data.hpp"

namespace ntgcf {

/// Immutable user-item bipartite graph. Nodes are numbered users first
/// (0 .. U-1) then items (U .. U+I-1); the same numbering indexes embedding
/// rows. Both adjacency orientations are CSR with sorted, unique neighbors.
class InteractionGraph {
 public:
  InteractionGraph() = default;

  InteractionGraph(std::size_t num_users, std::size_t num_items, std::vector<Edge> edges)
      : num_users_(num_users), num_items_(num_items) {
    for (const auto& e : edges) {
      if (e.user >= num_users || e.item >= num_items)
        throw DataError("edge (" + std::to_string(e.user) + ", " + std::to_string(e.item) +
                        ") index out of range");
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    edges_ = std::move(edges);

    user_ptr_.assign(num_users + 1, 0);
    item_ptr_.assign(num_items + 1, 0);
    for (const auto& e : edges_) {
      ++user_ptr_[e.user + 1];
      ++item_ptr_[e.item + 1];
    }
    for (std::size_t u = 0; u < num_users; ++u) user_ptr_[u + 1] += user_ptr_[u];
    for (std::size_t i = 0; i < num_items; ++i) item_ptr_[i + 1] += item_ptr_[i];
    user_adj_.resize(edges_.size());
    item_adj_.resize(edges_.size());
    std::vector<std::size_t> ufill(user_ptr_.begin(), user_ptr_.end() - 1);
    std::vector<std::size_t> ifill(item_ptr_.begin(), item_ptr_.end() - 1);
    // edges_ is sorted by (user, item), so both fills come out ascending.
    for (const auto& e : edges_) {
      user_adj_[ufill[e.user]++] = e.item;
      item_adj_[ifill[e.item]++] = e.user;
    }
  }

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_nodes() const { return num_users_ + num_items_; }
  std::size_t num_edges() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }

  std::span<const std::uint32_t> items_of(std::uint32_t u) const {
    return {user_adj_.data() + user_ptr_[u], user_adj_.data() + user_ptr_[u + 1]};
  }
  std::span<const std::uint32_t> users_of(std::uint32_t i) const {
    return {item_adj_.data() + item_ptr_[i], item_adj_.data() + item_ptr_[i + 1]};
  }
  std::size_t user_degree(std::uint32_t u) const { return user_ptr_[u + 1] - user_ptr_[u]; }
  std::size_t item_degree(std::uint32_t i) const { return item_ptr_[i + 1] - item_ptr_[i]; }

  bool has_edge(std::uint32_t u, std::uint32_t i) const {
    auto its = items_of(u);
    return std::binary_search(its.begin(), its.end(), i);
  }

  std::uint32_t item_node(std::uint32_t i) const { return static_cast<std::uint32_t>(num_users_ + i); }
  NodeType type_of(std::size_t node) const { return node < num_users_ ? NodeType::User : NodeType::Item; }

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> user_ptr_{0};
  std::vector<std::size_t> item_ptr_{0};
  std::vector<std::uint32_t> user_adj_;
  std::vector<std::uint32_t> item_adj_;
};

enum class EdgeSelection { Train, TrainValid };

inline InteractionGraph build_graph(const DatasetBundle& b, EdgeSelection which = EdgeSelection::Train) {
  std::vector<Edge> edges = b.train;
  if (which == EdgeSelection::TrainValid) edges.insert(edges.end(), b.valid.begin(), b.valid.end());
  return InteractionGraph(b.num_users, b.num_items, std::move(edges));
}

/// One materialized row of the similarity operator. ids ascending; because
/// users are numbered first, ids[0 .. user_count) are the user-type neighbors
/// and the remainder are item-type neighbors.
struct NeighborRow {
  std::uint32_t node = 0;
  std::vector<std::uint32_t> ids;
  std::vector<double> weights;
  std::size_t user_count = 0;

  std::span<const std::uint32_t> user_ids() const { return {ids.data(), user_count}; }
  std::span<const std::uint32_t> item_ids() const { return {ids.data() + user_count, ids.size() - user_count}; }

  /// Weight of neighbor v, 0 when v is outside the neighborhood.
  double weight(std::uint32_t v) const {
    auto it = std::lower_bound(ids.begin(), ids.end(), v);
    if (it == ids.end() || *it != v) return 0.0;
    return weights[static_cast<std::size_t>(it - ids.begin())];
  }
};

using NeighborhoodIndex = std::vector<NeighborRow>;

/// Mean-pooled multi-hop propagation (1/(L+1)) * sum_{l=0..L} A_norm^l with
/// A_norm = D^{-1/2} A D^{-1/2}. Never materialized; applied as L sparse
/// multiplications. Zero-degree nodes have an all-zero adjacency row.
class SimilarityOperator {
 public:
  SimilarityOperator(const InteractionGraph& g, int layers)
      : num_users_(g.num_users()), num_items_(g.num_items()), layers_(layers) {
    if (layers < 0) throw std::invalid_argument("layer count must be >= 0");
    const std::size_t n = g.num_nodes();
    ptr_.assign(n + 1, 0);
    for (std::uint32_t u = 0; u < num_users_; ++u) ptr_[u + 1] = g.user_degree(u);
    for (std::uint32_t i = 0; i < num_items_; ++i) ptr_[num_users_ + i + 1] = g.item_degree(i);
    for (std::size_t x = 0; x < n; ++x) ptr_[x + 1] += ptr_[x];
    col_.resize(ptr_[n]);
    val_.resize(ptr_[n]);
    std::size_t k = 0;
    for (std::uint32_t u = 0; u < num_users_; ++u) {
      const double du = static_cast<double>(g.user_degree(u));
      for (auto i : g.items_of(u)) {
        col_[k] = g.item_node(i);
        val_[k++] = 1.0 / std::sqrt(du * static_cast<double>(g.item_degree(i)));
      }
    }
    for (std::uint32_t i = 0; i < num_items_; ++i) {
      const double di = static_cast<double>(g.item_degree(i));
      for (auto u : g.users_of(i)) {
        col_[k] = u;
        val_[k++] = 1.0 / std::sqrt(static_cast<double>(g.user_degree(u)) * di);
      }
    }
  }

  int layers() const { return layers_; }
  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_nodes() const { return num_users_ + num_items_; }
  NodeType type_of(std::size_t node) const { return node < num_users_ ? NodeType::User : NodeType::Item; }

  /// Normalized adjacency entries of row x as (column, weight) ranges.
  std::span<const std::uint32_t> adjacency_cols(std::size_t x) const {
    return {col_.data() + ptr_[x], col_.data() + ptr_[x + 1]};
  }
  std::span<const double> adjacency_vals(std::size_t x) const {
    return {val_.data() + ptr_[x], val_.data() + ptr_[x + 1]};
  }

  /// out = A_norm * in. Rows are independent, so the result does not depend
  /// on the thread count.
  void multiply_adjacency(const Matrix& in, Matrix& out, int threads = 1) const {
    const Eigen::Index d = in.cols();
    out.resize(in.rows(), d);
    parallel_for(num_nodes(), threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t x = begin; x < end; ++x) {
        double* dst = out.data() + static_cast<Eigen::Index>(x) * d;
        std::fill(dst, dst + d, 0.0);
        for (std::size_t k = ptr_[x]; k < ptr_[x + 1]; ++k) {
          const double w = val_[k];
          const double* src = in.data() + static_cast<Eigen::Index>(col_[k]) * d;
          for (Eigen::Index c = 0; c < d; ++c) dst[c] += w * src[c];
        }
      }
    });
  }

  /// Returns (1/(L+1)) * sum_{l=0..L} A_norm^l X, accumulated with l ascending.
  Matrix apply(const Matrix& x, int threads = 1) const {
    if (static_cast<std::size_t>(x.rows()) != num_nodes())
      throw std::invalid_argument("apply_similarity: matrix has " + std::to_string(x.rows()) +
                                  " rows, graph has " + std::to_string(num_nodes()) + " nodes");
    Matrix acc = x;
    if (layers_ == 0) return acc;
    Matrix cur = x;
    Matrix next;
    for (int l = 1; l <= layers_; ++l) {
      multiply_adjacency(cur, next, threads);
      acc += next;
      std::swap(cur, next);
    }
    acc *= 1.0 / static_cast<double>(layers_ + 1);
    return acc;
  }

  /// apply() on x with the rows of the other node type zeroed.
  Matrix apply_from(NodeType source, const Matrix& x, int threads = 1) const {
    Matrix masked = x;
    zero_rows_except(masked, source);
    return apply(masked, threads);
  }

  void zero_rows_except(Matrix& m, NodeType keep) const {
    if (keep == NodeType::User)
      m.bottomRows(static_cast<Eigen::Index>(num_items_)).setZero();
    else
      m.topRows(static_cast<Eigen::Index>(num_users_)).setZero();
  }

  /// Dense materialization, for small-graph oracles only.
  Matrix dense() const {
    const auto n = static_cast<Eigen::Index>(num_nodes());
    return apply(Matrix::Identity(n, n));
  }

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  int layers_ = 0;
  std::vector<std::size_t> ptr_;
  std::vector<std::uint32_t> col_;
  std::vector<double> val_;
};

inline Matrix apply_similarity(const SimilarityOperator& op, const Matrix& x, int threads = 1) {
  return op.apply(x, threads);
}

/// Calls visit(node, column) for each requested node, where column holds the
/// node's full operator row (equal to its column by symmetry). Nodes are
/// processed in blocks of `batch` unit vectors.
template <class Visit>
void for_each_row(const SimilarityOperator& op, std::span<const std::uint32_t> nodes, Visit&& visit,
                  std::size_t batch = 128, int threads = 1) {
  const auto n = static_cast<Eigen::Index>(op.num_nodes());
  std::vector<double> column(static_cast<std::size_t>(n));
  for (std::size_t start = 0; start < nodes.size(); start += batch) {
    const std::size_t b = std::min(batch, nodes.size() - start);
    Matrix unit = Matrix::Zero(n, static_cast<Eigen::Index>(b));
    for (std::size_t k = 0; k < b; ++k) {
      if (nodes[start + k] >= op.num_nodes()) throw std::invalid_argument("node id out of range");
      unit(nodes[start + k], static_cast<Eigen::Index>(k)) = 1.0;
    }
    Matrix rows = op.apply(unit, threads);
    for (std::size_t k = 0; k < b; ++k) {
      for (Eigen::Index x = 0; x < n; ++x) column[static_cast<std::size_t>(x)] = rows(x, static_cast<Eigen::Index>(k));
      visit(nodes[start + k], std::span<const double>(column));
    }
  }
}

/// Exact sparse operator rows for `nodes`. Throws when a row would exceed
/// max_row_entries.
inline NeighborhoodIndex materialize_rows(const SimilarityOperator& op, std::span<const std::uint32_t> nodes,
                                          std::size_t max_row_entries = static_cast<std::size_t>(-1),
                                          int threads = 1) {
  NeighborhoodIndex out;
  out.reserve(nodes.size());
  for_each_row(
      op, nodes,
      [&](std::uint32_t node, std::span<const double> col) {
        NeighborRow row;
        row.node = node;
        std::size_t nnz = 0;
        for (double w : col) nnz += (w != 0.0);
        if (nnz > max_row_entries)
          throw std::length_error("row of node " + std::to_string(node) + " has " + std::to_string(nnz) +
                                  " entries, budget is " + std::to_string(max_row_entries));
        row.ids.reserve(nnz);
        row.weights.reserve(nnz);
        for (std::size_t v = 0; v < col.size(); ++v) {
          if (col[v] != 0.0) {
            row.ids.push_back(static_cast<std::uint32_t>(v));
            row.weights.push_back(col[v]);
            if (v < op.num_users()) ++row.user_count;
          }
        }
        out.push_back(std::move(row));
      },
      128, threads);
  return out;
}

/// Neighborhood sizes |N~_x| for every node.
inline std::vector<std::size_t> neighborhood_sizes(const SimilarityOperator& op, int threads = 1) {
  std::vector<std::uint32_t> all(op.num_nodes());
  for (std::size_t x = 0; x < all.size(); ++x) all[x] = static_cast<std::uint32_t>(x);
  std::vector<std::size_t> sizes(op.num_nodes(), 0);
  for_each_row(
      op, all,
      [&](std::uint32_t node, std::span<const double> col) {
        std::size_t nnz = 0;
        for (double w : col) nnz += (w != 0.0);
        sizes[node] = nnz;
      },
      256, threads);
  return sizes;
}

struct PairCountRow {
  int hop = 0;
  double mean_pairs = 0.0;
  double coverage = 0.0;
};

/// For each hop count L: mean over edges (u, i) of |N~_u| * |N~_i| and that
/// mean divided by (|U| + |I|)^2.
inline std::vector<PairCountRow> count_neighbor_pairs(const InteractionGraph& g, std::span<const Edge> edges,
                                                      std::span<const int> hops, int threads = 1) {
  std::vector<PairCountRow> out;
  const double total = static_cast<double>(g.num_nodes()) * static_cast<double>(g.num_nodes());
  for (int L : hops) {
    SimilarityOperator op(g, L);
    auto sizes = neighborhood_sizes(op, threads);
    double sum = 0.0;
    for (const auto& e : edges) {
      if (e.user >= g.num_users() || e.item >= g.num_items()) throw DataError("edge index out of range");
      sum += static_cast<double>(sizes[e.user]) * static_cast<double>(sizes[g.item_node(e.item)]);
    }
    const double mean = edges.empty() ? 0.0 : sum / static_cast<double>(edges.size());
    out.push_back({L, mean, total > 0 ? mean / total : 0.0});
  }
  return out;
}

}  // namespace ntgcf
