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
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ntgcf/common.hpp"
#include "ntgcf/data.hpp"
#include "ntgcf/evaluation.hpp"
#include "ntgcf/graph.hpp"
#include "ntgcf/losses.hpp"
#include "ntgcf/model.hpp"

namespace ntgcf {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double l2 = 1e-4;
  std::size_t epochs = 300;
  std::size_t batch_size = 2048;
  std::size_t patience = 10;
  std::size_t eval_every = 1;
  std::uint64_t seed = 42;
  LossConfig loss;
  std::size_t dim = 64;
  int layers = 3;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw std::invalid_argument("beta1 and beta2 must lie in (0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
    if (!(l2 >= 0.0)) throw std::invalid_argument("l2 must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    if (dim < 1) throw std::invalid_argument("d must be >= 1");
    if (layers < 0) throw std::invalid_argument("L must be >= 0");
    loss.validate();
  }
};

/// Default similarity per objective: cosine for the softmax family, inner
/// product for the pairwise family.
inline Similarity default_similarity(LossKind k) { return is_pairwise(k) ? Similarity::Inner : Similarity::Cosine; }

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "lr", "beta1", "beta2", "eps", "l2", "epochs", "batch_size", "patience", "eval_every", "seed",
      "loss", "similarity", "tau", "alpha_I_U", "alpha_I_I", "alpha_U_U", "alpha_U_I", "neg_items",
      "neg_users", "item_direction", "user_direction", "d", "L"};
  return keys;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["l2"] = c.l2;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["patience"] = c.patience;
  j["eval_every"] = c.eval_every;
  j["seed"] = c.seed;
  j["loss"] = to_string(c.loss.kind);
  j["similarity"] = to_string(c.loss.similarity);
  j["tau"] = c.loss.tau;
  j["alpha_I_U"] = c.loss.alpha.item_user;
  j["alpha_I_I"] = c.loss.alpha.item_item;
  j["alpha_U_U"] = c.loss.alpha.user_user;
  j["alpha_U_I"] = c.loss.alpha.user_item;
  j["neg_items"] = c.loss.neg_items;
  j["neg_users"] = c.loss.neg_users;
  j["item_direction"] = c.loss.item_direction;
  j["user_direction"] = c.loss.user_direction;
  j["d"] = c.dim;
  j["L"] = c.layers;
  return j;
}

/// Applies the keys present in j on top of `base`. Unknown keys are an error.
/// When "loss" changes and "similarity" is absent, the similarity follows the
/// new objective's default.
inline TrainConfig merge_config(TrainConfig base, const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  const auto& keys = config_keys();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw std::invalid_argument("unknown config key '" + it.key() + "'");
  try {
    auto get = [&](const char* k, auto& dst) {
      if (j.contains(k)) dst = j.at(k).get<std::remove_reference_t<decltype(dst)>>();
    };
    get("lr", base.lr);
    get("beta1", base.beta1);
    get("beta2", base.beta2);
    get("eps", base.eps);
    get("l2", base.l2);
    get("epochs", base.epochs);
    get("batch_size", base.batch_size);
    get("patience", base.patience);
    get("eval_every", base.eval_every);
    get("seed", base.seed);
    if (j.contains("loss")) {
      base.loss.kind = parse_loss_kind(j.at("loss").get<std::string>());
      base.loss.similarity = default_similarity(base.loss.kind);
    }
    if (j.contains("similarity")) base.loss.similarity = parse_similarity(j.at("similarity").get<std::string>());
    get("tau", base.loss.tau);
    get("alpha_I_U", base.loss.alpha.item_user);
    get("alpha_I_I", base.loss.alpha.item_item);
    get("alpha_U_U", base.loss.alpha.user_user);
    get("alpha_U_I", base.loss.alpha.user_item);
    get("neg_items", base.loss.neg_items);
    get("neg_users", base.loss.neg_users);
    get("item_direction", base.loss.item_direction);
    get("user_direction", base.loss.user_direction);
    get("d", base.dim);
    get("L", base.layers);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad config value: ") + e.what());
  }
  return base;
}

struct AdamState {
  Matrix m;
  Matrix v;
  std::size_t t = 0;

  static AdamState like(const EmbeddingTable& t) {
    return {Matrix::Zero(t.rows(), t.dim()), Matrix::Zero(t.rows(), t.dim()), 0};
  }
};

/// One bias-corrected Adam step on grad + 2 * l2 * E0.
inline void adam_step(EmbeddingTable& table, const Matrix& grad, AdamState& st, const TrainConfig& cfg) {
  if (grad.rows() != table.rows() || grad.cols() != table.dim() || st.m.rows() != table.rows() ||
      st.m.cols() != table.dim())
    throw std::invalid_argument("adam_step: shape mismatch");
  if (!grad.allFinite()) throw NumericError("adam_step: non-finite gradient");
  ++st.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  double* w = table.weights.data();
  const double* g = grad.data();
  double* m = st.m.data();
  double* v = st.v.data();
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    const double gk = g[k] + 2.0 * cfg.l2 * w[k];
    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
    w[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
  }
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double reg = 0.0;
  bool evaluated = false;
  double recall20 = 0.0;
  double ndcg20 = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_ndcg20 = -1.0;
  std::string best_checkpoint;
};

struct TrainResult {
  EmbeddingTable table;
  TrainHistory history;
};

struct TrainOptions {
  int threads = 1;
  /// Called after every epoch; lets callers flush history before an abort.
  std::function<void(const TrainHistory&)> on_epoch;
};

/// Adam on mini-batches of training edges, validation NDCG@20 every
/// eval_every epochs, early stopping after `patience` evaluations without
/// improvement, best table restored at the end.
inline TrainResult train(const DatasetBundle& bundle, const TrainConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  const int threads = std::max(1, opt.threads);
  InteractionGraph graph = build_graph(bundle, EdgeSelection::Train);
  SimilarityOperator op(graph, cfg.layers);
  TrainResult res;
  res.table = init_embeddings(graph.num_nodes(), cfg.dim, cfg.seed);
  if (cfg.epochs == 0) return res;

  AdamState adam = AdamState::like(res.table);
  EmbeddingTable best = res.table;
  const std::vector<Edge>& edges = graph.edges();
  std::vector<std::size_t> order(edges.size());
  const std::array<std::size_t, 1> cut{20};
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(cfg.seed, stream::kShuffle, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::vector<Edge> pos;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> ids(order.data() + start, end - start);
      pos.clear();
      for (auto id : ids) pos.push_back(edges[id]);
      TrainBatch batch = make_batch(graph, pos, ids, cfg.loss, cfg.seed, epoch, threads);
      PropagatedState state = forward(op, res.table, threads);
      GradientBuffer buf = loss_and_grad(state, batch, cfg.loss, threads);
      Matrix g = backprop_to_initial(op, buf, threads);
      adam_step(res.table, g, adam, cfg);
      loss_sum += buf.loss * static_cast<double>(batch.size());
    }
    rec.loss = edges.empty() ? 0.0 : loss_sum / static_cast<double>(edges.size());
    rec.reg = cfg.l2 * res.table.weights.squaredNorm();
    if (!std::isfinite(rec.loss)) {
      res.history.epochs.push_back(rec);
      if (opt.on_epoch) opt.on_epoch(res.history);
      throw NumericError(fmt::format("training diverged at epoch {}", epoch));
    }

    bool stop = false;
    if (epoch % cfg.eval_every == 0) {
      PropagatedState state = forward(op, res.table, threads);
      auto m = evaluate_all(state, bundle, SplitPart::Valid, cut, cfg.loss.similarity, threads);
      rec.evaluated = true;
      rec.recall20 = m.recall[0];
      rec.ndcg20 = m.ndcg[0];
      if (rec.ndcg20 > res.history.best_ndcg20) {
        res.history.best_ndcg20 = rec.ndcg20;
        res.history.best_epoch = epoch;
        best = res.table;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        stop = true;
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.epochs.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(res.history);
    if (stop) break;
  }
  if (res.history.best_epoch > 0) res.table = std::move(best);
  return res;
}

/// epoch,loss,recall20,ndcg20 with metrics left empty on epochs that were not
/// evaluated. Wall-clock time is kept out so reruns compare byte for byte.
inline std::string history_csv(const TrainHistory& h) {
  std::string out = "epoch,loss,recall20,ndcg20\n";
  for (const auto& r : h.epochs) {
    if (r.evaluated)
      out += fmt::format("{},{:.10f},{:.8f},{:.8f}\n", r.epoch, r.loss, r.recall20, r.ndcg20);
    else
      out += fmt::format("{},{:.10f},,\n", r.epoch, r.loss);
  }
  return out;
}

inline nlohmann::ordered_json timing_json(const TrainHistory& h) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : h.epochs) j.push_back({{"epoch", r.epoch}, {"seconds", r.seconds}, {"reg", r.reg}});
  return j;
}

// ---------------------------------------------------------------------------
// Coefficient sweep

/// Coefficients in sweep order (alpha_U_U, alpha_I_I, alpha_U_I, alpha_I_U).
using AlphaPoint = std::array<double, 4>;

inline TypeCoefficients to_coefficients(const AlphaPoint& a) {
  TypeCoefficients c;
  c.user_user = a[0];
  c.item_item = a[1];
  c.user_item = a[2];
  c.item_user = a[3];
  return c;
}

struct SweepSpec {
  std::vector<double> grid = {0.8, 1.0, 1.2};
  double low = 0.5;
  double high = 1.5;
  std::size_t budget = 100;
};

/// Candidate order: the all-1.0 point, the rest of grid^4 lexicographically,
/// then seeded uniform draws rounded to 0.01 (duplicates skipped), truncated
/// to the budget.
inline std::vector<AlphaPoint> sweep_candidates(const SweepSpec& spec, std::uint64_t seed) {
  if (spec.budget < 1) throw std::invalid_argument("sweep budget must be >= 1");
  if (!(spec.low > 0.0) || !(spec.high >= spec.low)) throw std::invalid_argument("invalid sweep range");
  std::vector<AlphaPoint> out{{1.0, 1.0, 1.0, 1.0}};
  std::set<AlphaPoint> seen(out.begin(), out.end());
  auto grid = spec.grid;
  std::sort(grid.begin(), grid.end());
  for (double a : grid)
    for (double b : grid)
      for (double c : grid)
        for (double d : grid) {
          AlphaPoint p{a, b, c, d};
          if (seen.insert(p).second) out.push_back(p);
        }
  if (out.size() >= spec.budget) {
    out.resize(spec.budget);
    return out;
  }
  auto rng = make_rng(seed, stream::kSweep);
  std::uniform_real_distribution<double> dist(spec.low, spec.high);
  std::size_t draws = 0;
  while (out.size() < spec.budget) {
    if (++draws > 1000 * spec.budget) break;
    AlphaPoint p;
    for (double& x : p) x = std::round(dist(rng) * 100.0) / 100.0;
    if (seen.insert(p).second) out.push_back(p);
  }
  return out;
}

struct SweepResult {
  AlphaPoint alpha{};
  double ndcg20 = 0.0;
  double recall20 = 0.0;
  std::size_t best_epoch = 0;
};

/// Trains one model per candidate and ranks them by validation NDCG@20
/// (descending, ties by ascending coefficients).
inline std::vector<SweepResult> sweep_alpha(const DatasetBundle& bundle, const TrainConfig& base, const SweepSpec& spec,
                                            const TrainOptions& opt = {},
                                            const std::function<void(const SweepResult&)>& on_trial = {}) {
  if (!is_type_aware(base.loss.kind)) throw std::invalid_argument("sweep requires a type-aware loss (nt-ssm or nt-bpr)");
  std::vector<SweepResult> results;
  for (const auto& a : sweep_candidates(spec, base.seed)) {
    TrainConfig cfg = base;
    cfg.loss.alpha = to_coefficients(a);
    TrainOptions o = opt;
    o.on_epoch = nullptr;
    auto r = train(bundle, cfg, o);
    SweepResult s{a, 0.0, 0.0, r.history.best_epoch};
    for (const auto& e : r.history.epochs)
      if (e.epoch == r.history.best_epoch) {
        s.ndcg20 = e.ndcg20;
        s.recall20 = e.recall20;
      }
    results.push_back(s);
    if (on_trial) on_trial(s);
  }
  std::stable_sort(results.begin(), results.end(), [](const SweepResult& x, const SweepResult& y) {
    if (x.ndcg20 != y.ndcg20) return x.ndcg20 > y.ndcg20;
    return x.alpha < y.alpha;
  });
  return results;
}

inline std::string sweep_csv(const std::vector<SweepResult>& rs) {
  std::string out = "rank,alpha_U_U,alpha_I_I,alpha_U_I,alpha_I_U,ndcg20,recall20,best_epoch\n";
  for (std::size_t k = 0; k < rs.size(); ++k) {
    const auto& r = rs[k];
    out += fmt::format("{},{:.2f},{:.2f},{:.2f},{:.2f},{:.8f},{:.8f},{}\n", k + 1, r.alpha[0], r.alpha[1], r.alpha[2],
                       r.alpha[3], r.ndcg20, r.recall20, r.best_epoch);
  }
  return out;
}

}  // namespace ntgcf
