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

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "ntgcf/common.hpp"
#include "ntgcf/data.hpp"
#include "ntgcf/model.hpp"

namespace ntgcf {

namespace detail {
inline void require_truth(std::span<const std::uint32_t> truth, std::size_t n) {
  if (truth.empty()) throw std::invalid_argument("ranking metric on empty ground truth");
  if (n < 1) throw std::invalid_argument("ranking metric cutoff must be >= 1");
}
}  // namespace detail

/// |top-N ∩ truth| / |truth|. truth must be sorted.
inline double recall_at(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> truth, std::size_t n) {
  detail::require_truth(truth, n);
  std::size_t hits = 0;
  for (std::size_t p = 0; p < std::min(n, ranked.size()); ++p)
    hits += std::binary_search(truth.begin(), truth.end(), ranked[p]);
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Binary-relevance NDCG with gains 1/log2(p+1). truth must be sorted.
inline double ndcg_at(std::span<const std::uint32_t> ranked, std::span<const std::uint32_t> truth, std::size_t n) {
  detail::require_truth(truth, n);
  double dcg = 0.0;
  for (std::size_t p = 0; p < std::min(n, ranked.size()); ++p)
    if (std::binary_search(truth.begin(), truth.end(), ranked[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  double idcg = 0.0;
  for (std::size_t p = 0; p < std::min(n, truth.size()); ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return dcg / idcg;
}

struct UserMetrics {
  std::uint32_t user = 0;
  std::vector<double> recall;
  std::vector<double> ndcg;
};

struct RankingMetrics {
  std::vector<std::size_t> cutoffs;
  std::vector<double> recall;
  std::vector<double> ndcg;
  std::size_t users_evaluated = 0;
  std::vector<UserMetrics> per_user;

  std::size_t index_of(std::size_t n) const {
    auto it = std::find(cutoffs.begin(), cutoffs.end(), n);
    if (it == cutoffs.end()) throw std::out_of_range("cutoff " + std::to_string(n) + " was not evaluated");
    return static_cast<std::size_t>(it - cutoffs.begin());
  }
  double recall_at(std::size_t n) const { return recall[index_of(n)]; }
  double ndcg_at(std::size_t n) const { return ndcg[index_of(n)]; }
};

/// Per-user ground truth and exclusion lists, both sorted by item id.
struct EvalTargets {
  std::vector<std::vector<std::uint32_t>> truth;
  std::vector<std::vector<std::uint32_t>> exclude;
};

/// Truth from `which`; exclusion = train items for Valid, train ∪ valid for
/// Test.
inline EvalTargets eval_targets(const DatasetBundle& b, SplitPart which) {
  if (which == SplitPart::Train) throw std::invalid_argument("evaluation split must be valid or test");
  EvalTargets t;
  t.truth.resize(b.num_users);
  t.exclude.resize(b.num_users);
  for (const auto& e : b.part(which)) t.truth[e.user].push_back(e.item);
  for (const auto& e : b.train) t.exclude[e.user].push_back(e.item);
  if (which == SplitPart::Test)
    for (const auto& e : b.valid) t.exclude[e.user].push_back(e.item);
  for (auto& v : t.truth) std::sort(v.begin(), v.end());
  for (auto& v : t.exclude) std::sort(v.begin(), v.end());
  return t;
}

/// Full-ranking evaluation with a caller-supplied scorer:
/// score_users(first, count, out) fills out (count x num_items, row-major).
/// Users with empty truth are skipped; means are summed in user order.
template <class ScoreUsers>
RankingMetrics evaluate_rankings(std::size_t num_items, const EvalTargets& targets,
                                 std::span<const std::size_t> cutoffs, ScoreUsers&& score_users,
                                 int threads = 1, bool keep_per_user = false, std::size_t block = 256) {
  if (cutoffs.empty()) throw std::invalid_argument("at least one cutoff is required");
  for (auto n : cutoffs)
    if (n < 1) throw std::invalid_argument("cutoffs must be >= 1");
  const std::size_t num_users = targets.truth.size();
  const std::size_t kmax = *std::max_element(cutoffs.begin(), cutoffs.end());
  const std::size_t nc = cutoffs.size();
  std::vector<double> rec(num_users * nc, 0.0), nd(num_users * nc, 0.0);
  std::vector<double> scores;
  for (std::size_t first = 0; first < num_users; first += block) {
    const std::size_t count = std::min(block, num_users - first);
    bool any = false;
    for (std::size_t u = first; u < first + count; ++u) any = any || !targets.truth[u].empty();
    if (!any) continue;
    scores.assign(count * num_items, 0.0);
    score_users(first, count, std::span<double>(scores));
    parallel_for(count, threads, [&](std::size_t begin, std::size_t end) {
      std::vector<char> mask(num_items);
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t u = first + k;
        if (targets.truth[u].empty()) continue;
        std::fill(mask.begin(), mask.end(), 0);
        for (auto i : targets.exclude[u]) mask[i] = 1;
        auto ranked = top_k(std::span<const double>(scores.data() + k * num_items, num_items), kmax, mask);
        for (std::size_t c = 0; c < nc; ++c) {
          rec[u * nc + c] = recall_at(ranked, targets.truth[u], cutoffs[c]);
          nd[u * nc + c] = ndcg_at(ranked, targets.truth[u], cutoffs[c]);
        }
      }
    });
  }
  RankingMetrics m;
  m.cutoffs.assign(cutoffs.begin(), cutoffs.end());
  m.recall.assign(nc, 0.0);
  m.ndcg.assign(nc, 0.0);
  for (std::size_t u = 0; u < num_users; ++u) {
    if (targets.truth[u].empty()) continue;
    ++m.users_evaluated;
    for (std::size_t c = 0; c < nc; ++c) {
      m.recall[c] += rec[u * nc + c];
      m.ndcg[c] += nd[u * nc + c];
    }
    if (keep_per_user)
      m.per_user.push_back({static_cast<std::uint32_t>(u), {rec.begin() + u * nc, rec.begin() + (u + 1) * nc},
                            {nd.begin() + u * nc, nd.begin() + (u + 1) * nc}});
  }
  if (m.users_evaluated > 0)
    for (std::size_t c = 0; c < nc; ++c) {
      m.recall[c] /= static_cast<double>(m.users_evaluated);
      m.ndcg[c] /= static_cast<double>(m.users_evaluated);
    }
  return m;
}

/// Ranks every item for each user with ground truth in `which`.
inline RankingMetrics evaluate_all(const PropagatedState& s, const DatasetBundle& b, SplitPart which,
                                   std::span<const std::size_t> cutoffs, Similarity kind = Similarity::Inner,
                                   int threads = 1, bool keep_per_user = false) {
  s.require_fresh();
  if (s.num_users != b.num_users || s.num_items != b.num_items)
    throw std::invalid_argument("evaluate_all: state does not match the dataset");
  auto targets = eval_targets(b, which);
  const std::size_t I = b.num_items;
  return evaluate_rankings(
      I, targets, cutoffs,
      [&](std::size_t first, std::size_t count, std::span<double> out) {
        parallel_for(count, threads, [&](std::size_t begin, std::size_t end) {
          for (std::size_t k = begin; k < end; ++k)
            score_items(s, static_cast<std::uint32_t>(first + k), kind, out.subspan(k * I, I));
        });
      },
      threads, keep_per_user);
}

inline std::string metrics_csv(const RankingMetrics& m) {
  std::string out = "N,recall,ndcg,users_evaluated\n";
  for (std::size_t c = 0; c < m.cutoffs.size(); ++c)
    out += fmt::format("{},{:.8f},{:.8f},{}\n", m.cutoffs[c], m.recall[c], m.ndcg[c], m.users_evaluated);
  return out;
}

inline std::string per_user_csv(const RankingMetrics& m) {
  std::string out = "user";
  for (auto n : m.cutoffs) out += fmt::format(",recall{},ndcg{}", n, n);
  out += '\n';
  for (const auto& u : m.per_user) {
    out += std::to_string(u.user);
    for (std::size_t c = 0; c < m.cutoffs.size(); ++c) out += fmt::format(",{:.8f},{:.8f}", u.recall[c], u.ndcg[c]);
    out += '\n';
  }
  return out;
}

}  // namespace ntgcf
