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

#include <array>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ntgcf/common.hpp"
#include "ntgcf/graph.hpp"

namespace ntgcf {

enum class Similarity { Inner, Cosine };

inline const char* to_string(Similarity s) { return s == Similarity::Inner ? "inner" : "cosine"; }

inline Similarity parse_similarity(const std::string& s) {
  if (s == "inner") return Similarity::Inner;
  if (s == "cosine") return Similarity::Cosine;
  throw std::invalid_argument("unknown similarity '" + s + "' (expected inner|cosine)");
}

/// Learnable initial embeddings, users in rows [0, U), items in rows [U, U+I).
struct EmbeddingTable {
  Matrix weights;

  Eigen::Index rows() const { return weights.rows(); }
  Eigen::Index dim() const { return weights.cols(); }
};

/// Xavier-uniform on [-sqrt(6/(rows+d)), +sqrt(6/(rows+d))].
inline EmbeddingTable init_embeddings(std::size_t num_rows, std::size_t dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("embedding dimension must be >= 1");
  const double bound = std::sqrt(6.0 / static_cast<double>(num_rows + dim));
  auto rng = make_rng(seed, stream::kInit);
  std::uniform_real_distribution<double> dist(-bound, bound);
  EmbeddingTable t;
  t.weights.resize(static_cast<Eigen::Index>(num_rows), static_cast<Eigen::Index>(dim));
  for (Eigen::Index k = 0; k < t.weights.size(); ++k) t.weights.data()[k] = dist(rng);
  return t;
}

/// Final embeddings and their split by the type of the source node.
/// `full` is formed as from_users + from_items so the identity is exact.
struct PropagatedState {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  Matrix full;
  Matrix from_users;
  Matrix from_items;
  Vector norms;
  bool stale = true;

  std::uint32_t item_row(std::uint32_t i) const { return static_cast<std::uint32_t>(num_users + i); }
  Eigen::Index dim() const { return full.cols(); }
  const double* row(std::size_t x) const { return full.data() + static_cast<Eigen::Index>(x) * full.cols(); }
  void invalidate() { stale = true; }
  void require_fresh() const {
    if (stale) throw std::logic_error("propagated state is stale; run forward() after updating embeddings");
  }
};

inline PropagatedState forward(const SimilarityOperator& op, const EmbeddingTable& table, int threads = 1) {
  if (static_cast<std::size_t>(table.rows()) != op.num_nodes())
    throw std::invalid_argument("forward: embedding table has " + std::to_string(table.rows()) +
                                " rows, graph has " + std::to_string(op.num_nodes()) + " nodes");
  PropagatedState s;
  s.num_users = op.num_users();
  s.num_items = op.num_items();
  s.from_users = op.apply_from(NodeType::User, table.weights, threads);
  s.from_items = op.apply_from(NodeType::Item, table.weights, threads);
  s.full = s.from_users + s.from_items;
  s.norms = s.full.rowwise().norm();
  s.stale = false;
  return s;
}

/// Similarity between rows a and b; cosine is 0 when either norm is 0.
inline double similarity(const PropagatedState& s, std::size_t a, std::size_t b, Similarity kind) {
  const double ip = dot(s.row(a), s.row(b), s.dim());
  if (kind == Similarity::Inner) return ip;
  const double na = s.norms[static_cast<Eigen::Index>(a)];
  const double nb = s.norms[static_cast<Eigen::Index>(b)];
  if (na == 0.0 || nb == 0.0) return 0.0;
  return ip / (na * nb);
}

inline double score(const PropagatedState& s, std::uint32_t u, std::uint32_t i, Similarity kind = Similarity::Inner) {
  s.require_fresh();
  if (u >= s.num_users || i >= s.num_items) throw std::out_of_range("score: user or item out of range");
  return similarity(s, u, s.item_row(i), kind);
}

/// Sub-scores of the inner-product score by the types of the two contributing
/// neighbors (user side, item side).
struct TypedScores {
  double uu = 0.0;
  double ii = 0.0;
  double ui = 0.0;
  double iu = 0.0;

  double total() const { return uu + ii + ui + iu; }
};

inline TypedScores score_decomposed(const PropagatedState& s, std::uint32_t u, std::uint32_t i) {
  s.require_fresh();
  if (u >= s.num_users || i >= s.num_items) throw std::out_of_range("score: user or item out of range");
  const Eigen::Index d = s.dim();
  const Eigen::Index ir = s.item_row(i);
  const double* uu = s.from_users.data() + static_cast<Eigen::Index>(u) * d;
  const double* ui = s.from_items.data() + static_cast<Eigen::Index>(u) * d;
  const double* iu = s.from_users.data() + ir * d;
  const double* ii = s.from_items.data() + ir * d;
  return {dot(uu, iu, d), dot(ui, ii, d), dot(uu, ii, d), dot(ui, iu, d)};
}

/// All item scores for user u.
inline void score_items(const PropagatedState& s, std::uint32_t u, Similarity kind, std::span<double> out) {
  s.require_fresh();
  for (std::uint32_t i = 0; i < s.num_items; ++i) out[i] = similarity(s, u, s.item_row(i), kind);
}

/// Top-K item ids from a score vector: highest score first, ties by ascending
/// id, excluded[i] != 0 removes item i.
inline std::vector<std::uint32_t> top_k(std::span<const double> scores, std::size_t k,
                                        std::span<const char> excluded) {
  std::vector<std::uint32_t> cand;
  cand.reserve(scores.size());
  for (std::uint32_t i = 0; i < scores.size(); ++i)
    if (excluded.empty() || !excluded[i]) cand.push_back(i);
  k = std::min(k, cand.size());
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
  cand.resize(k);
  return cand;
}

inline std::vector<std::uint32_t> rank_topk(const PropagatedState& s, std::uint32_t u, std::size_t k,
                                            std::span<const std::uint32_t> exclude,
                                            Similarity kind = Similarity::Inner) {
  if (k < 1) throw std::invalid_argument("rank_topk: K must be >= 1");
  if (u >= s.num_users) throw std::out_of_range("rank_topk: user out of range");
  std::vector<double> scores(s.num_items);
  score_items(s, u, kind, scores);
  std::vector<char> mask(s.num_items, 0);
  for (auto i : exclude)
    if (i < s.num_items) mask[i] = 1;
  return top_k(scores, k, mask);
}

// Checkpoint: ASCII header "NTGCF1 <rows> <dim>\n" then rows*dim little-endian
// float32 values, row-major.
inline void save_checkpoint(const std::filesystem::path& path, const EmbeddingTable& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << "NTGCF1 " << t.rows() << ' ' << t.dim() << '\n';
  std::vector<char> bytes(static_cast<std::size_t>(t.weights.size()) * 4);
  for (Eigen::Index k = 0; k < t.weights.size(); ++k) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t.weights.data()[k]));
    for (int b = 0; b < 4; ++b) bytes[static_cast<std::size_t>(k) * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failure on " + path.string());
}

inline EmbeddingTable load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream h(header);
  std::string magic;
  long long rows = -1, dim = -1;
  if (!(h >> magic >> rows >> dim) || magic != "NTGCF1" || rows < 0 || dim < 1)
    throw DataError("bad checkpoint header in " + path.string());
  std::vector<unsigned char> bytes(static_cast<std::size_t>(rows * dim) * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw DataError("truncated checkpoint " + path.string());
  EmbeddingTable t;
  t.weights.resize(rows, dim);
  for (Eigen::Index k = 0; k < t.weights.size(); ++k) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[static_cast<std::size_t>(k) * 4 + b]) << (8 * b);
    t.weights.data()[k] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return t;
}

}  // namespace ntgcf
