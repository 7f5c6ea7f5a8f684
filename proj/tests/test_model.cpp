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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ntgcf/model.hpp"
#include "test_util.hpp"

namespace ntgcf {
namespace {

using testing::dense_similarity;
using testing::g0;
using testing::random_graph;
using testing::random_matrix;
using testing::TempDir;

PropagatedState state_from_rows(const Matrix& full, std::size_t users) {
  PropagatedState s;
  s.num_users = users;
  s.num_items = static_cast<std::size_t>(full.rows()) - users;
  s.full = full;
  s.from_users = full;
  s.from_items = Matrix::Zero(full.rows(), full.cols());
  s.norms = full.rowwise().norm();
  s.stale = false;
  return s;
}

TEST(InitEmbeddings, DeterministicAndBounded) {
  auto a = init_embeddings(2, 1, 5), b = init_embeddings(2, 1, 5);
  EXPECT_EQ(a.weights, b.weights);
  const double bound = std::sqrt(6.0 / 3.0);
  EXPECT_LE(a.weights.cwiseAbs().maxCoeff(), bound);
  EXPECT_NE(init_embeddings(2, 1, 6).weights, a.weights);
  EXPECT_THROW(init_embeddings(2, 0, 1), std::invalid_argument);
}

TEST(InitEmbeddings, SampleMeanWithinUniformBand) {
  auto t = init_embeddings(1000, 100, 17);
  const double bound = std::sqrt(6.0 / 1100.0);
  EXPECT_LE(t.weights.cwiseAbs().maxCoeff(), bound);
  EXPECT_LT(std::abs(t.weights.mean()), 3.0 * bound / std::sqrt(3.0 * 1e5));
}

TEST(Forward, ZeroTableGivesZeroState) {
  auto g = random_graph(1, 5, 6);
  SimilarityOperator op(g, 3);
  EmbeddingTable t{Matrix::Zero(11, 4)};
  auto s = forward(op, t);
  EXPECT_EQ(s.full.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(s.norms.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_FALSE(s.stale);
}

TEST(Forward, G0OneLayerHandValue) {
  SimilarityOperator op(g0(), 1);
  EmbeddingTable t{Matrix::Zero(3, 2)};
  t.weights(0, 0) = 1.0;
  t.weights(1, 1) = 1.0;
  auto s = forward(op, t);
  EXPECT_NEAR(s.full(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(s.full(0, 1), 0.35355339059327373, 1e-15);
}

TEST(Forward, TypedPartsAndLinearity) {
  auto g = random_graph(2, 9, 13);
  SimilarityOperator op(g, 3);
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  EmbeddingTable x{random_matrix(1, n, 5)}, y{random_matrix(2, n, 5)};
  auto sx = forward(op, x);
  EXPECT_EQ(sx.full, sx.from_users + sx.from_items);
  EXPECT_LT((sx.full - dense_similarity(g, 3) * x.weights).cwiseAbs().maxCoeff(), 1e-12);
  auto sy = forward(op, y);
  EmbeddingTable z{2.5 * x.weights - 0.75 * y.weights};
  auto sz = forward(op, z);
  Matrix lin = 2.5 * sx.full - 0.75 * sy.full;
  EXPECT_LT((sz.full - lin).cwiseAbs().maxCoeff(), 1e-6 * lin.cwiseAbs().maxCoeff());
  EXPECT_THROW(forward(op, EmbeddingTable{Matrix::Zero(n + 1, 5)}), std::invalid_argument);
}

TEST(Score, CosineOfIdenticalAndOrthogonalRows) {
  Matrix e(3, 2);
  e << 1, 2, 1, 2, -2, 1;
  auto s = state_from_rows(e, 1);
  EXPECT_NEAR(score(s, 0, 0, Similarity::Cosine), 1.0, 1e-15);
  EXPECT_EQ(score(s, 0, 1, Similarity::Cosine), 0.0);
  EXPECT_EQ(score(s, 0, 1, Similarity::Inner), 0.0);
  EXPECT_EQ(score(s, 0, 0, Similarity::Inner), 5.0);
}

TEST(Score, CosineWithZeroNormIsZero) {
  Matrix e(2, 2);
  e << 0, 0, 1, 1;
  auto s = state_from_rows(e, 1);
  EXPECT_EQ(score(s, 0, 0, Similarity::Cosine), 0.0);
}

TEST(Score, StaleStateAndRangeErrors) {
  Matrix e = Matrix::Ones(3, 2);
  auto s = state_from_rows(e, 1);
  EXPECT_THROW(score(s, 1, 0), std::out_of_range);
  EXPECT_THROW(score(s, 0, 2), std::out_of_range);
  s.invalidate();
  EXPECT_THROW(score(s, 0, 0), std::logic_error);
  EXPECT_THROW(score_decomposed(s, 0, 0), std::logic_error);
}

// sum_v sum_v' S[u,v] S[i,v'] (e_v . e_v'), restricted by the types of v and v'.
double pair_sum(const Matrix& S, const Matrix& E0, std::size_t U, std::size_t u, std::size_t inode, int tv, int tvp) {
  double s = 0.0;
  for (Eigen::Index v = 0; v < S.cols(); ++v) {
    if (tv >= 0 && (v < static_cast<Eigen::Index>(U)) != (tv == 0)) continue;
    for (Eigen::Index vp = 0; vp < S.cols(); ++vp) {
      if (tvp >= 0 && (vp < static_cast<Eigen::Index>(U)) != (tvp == 0)) continue;
      s += S(u, v) * S(inode, vp) * E0.row(v).dot(E0.row(vp));
    }
  }
  return s;
}

TEST(Score, PairSumOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto g = random_graph(seed, 6, 8, 0.35);
    const int L = 1 + static_cast<int>(seed % 3);
    SimilarityOperator op(g, L);
    const auto n = static_cast<Eigen::Index>(g.num_nodes());
    EmbeddingTable t{random_matrix(seed, n, 3)};
    auto s = forward(op, t);
    Matrix S = dense_similarity(g, L);
    for (std::uint32_t u = 0; u < g.num_users(); ++u)
      for (std::uint32_t i = 0; i < g.num_items(); ++i) {
        const std::size_t in = g.item_node(i);
        EXPECT_NEAR(score(s, u, i), pair_sum(S, t.weights, g.num_users(), u, in, -1, -1), 1e-8);
        auto typed = score_decomposed(s, u, i);
        EXPECT_NEAR(typed.uu, pair_sum(S, t.weights, g.num_users(), u, in, 0, 0), 1e-8);
        EXPECT_NEAR(typed.ii, pair_sum(S, t.weights, g.num_users(), u, in, 1, 1), 1e-8);
        EXPECT_NEAR(typed.ui, pair_sum(S, t.weights, g.num_users(), u, in, 0, 1), 1e-8);
        EXPECT_NEAR(typed.iu, pair_sum(S, t.weights, g.num_users(), u, in, 1, 0), 1e-8);
        const double full = score(s, u, i);
        EXPECT_LE(std::abs(typed.total() - full), 1e-6 * std::max(1e-12, std::abs(full)));
      }
  }
}

TEST(Score, ZeroUserRowsRemoveUserSourcedParts) {
  auto g = random_graph(4, 5, 7, 0.4);
  SimilarityOperator op(g, 2);
  EmbeddingTable t{random_matrix(9, static_cast<Eigen::Index>(g.num_nodes()), 3)};
  t.weights.topRows(5).setZero();
  auto s = forward(op, t);
  for (std::uint32_t u = 0; u < 5; ++u)
    for (std::uint32_t i = 0; i < 7; ++i) {
      auto typed = score_decomposed(s, u, i);
      EXPECT_EQ(typed.uu, 0.0);
      EXPECT_EQ(typed.ui, 0.0);
      EXPECT_EQ(typed.iu, 0.0);
      EXPECT_NEAR(typed.ii, score(s, u, i), 1e-15);
    }
}

TEST(TopK, OrdersByScoreThenId) {
  const double scores[] = {0.1, 0.9, 0.5};
  EXPECT_EQ(top_k(scores, 2, {}), (std::vector<std::uint32_t>{1, 2}));
  const double flat[] = {0.3, 0.3, 0.3, 0.3};
  EXPECT_EQ(top_k(flat, 3, {}), (std::vector<std::uint32_t>{0, 1, 2}));
  const char all[] = {1, 1, 1};
  EXPECT_TRUE(top_k(scores, 2, all).empty());
  const char some[] = {0, 1, 0};
  EXPECT_EQ(top_k(scores, 10, some), (std::vector<std::uint32_t>{2, 0}));
}

TEST(RankTopK, ExcludesAndIsDeterministic) {
  auto g = random_graph(6, 4, 12, 0.3);
  SimilarityOperator op(g, 2);
  EmbeddingTable t{random_matrix(3, static_cast<Eigen::Index>(g.num_nodes()), 4)};
  auto s = forward(op, t);
  const std::uint32_t ex[] = {0, 3, 5};
  auto a = rank_topk(s, 1, 5, ex, Similarity::Cosine);
  auto b = rank_topk(s, 1, 5, ex, Similarity::Cosine);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 5u);
  for (auto i : a) EXPECT_TRUE(i != 0 && i != 3 && i != 5);
  for (std::size_t k = 1; k < a.size(); ++k)
    EXPECT_GE(score(s, 1, a[k - 1], Similarity::Cosine), score(s, 1, a[k], Similarity::Cosine));
  EXPECT_EQ(rank_topk(s, 1, 100, ex).size(), 9u);
  EXPECT_THROW(rank_topk(s, 1, 0, ex), std::invalid_argument);
}

TEST(Checkpoint, RoundTripAtSinglePrecision) {
  TempDir dir;
  EmbeddingTable t{random_matrix(5, 7, 3)};
  save_checkpoint(dir / "c.bin", t);
  auto r = load_checkpoint(dir / "c.bin");
  ASSERT_EQ(r.rows(), 7);
  ASSERT_EQ(r.dim(), 3);
  for (Eigen::Index k = 0; k < t.weights.size(); ++k)
    EXPECT_EQ(r.weights.data()[k], static_cast<double>(static_cast<float>(t.weights.data()[k])));
  // A float-exact table survives unchanged.
  save_checkpoint(dir / "d.bin", r);
  EXPECT_EQ(load_checkpoint(dir / "d.bin").weights, r.weights);
}

TEST(Checkpoint, BadInputs) {
  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir / "missing.bin"), DataError);
  detail::write_file(dir / "bad.bin", "WRONG 2 2\n");
  EXPECT_THROW(load_checkpoint(dir / "bad.bin"), DataError);
  detail::write_file(dir / "short.bin", std::string("NTGCF1 2 2\n") + std::string(8, '\0'));
  EXPECT_THROW(load_checkpoint(dir / "short.bin"), DataError);
}

}  // namespace
}  // namespace ntgcf
