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

// Command-line front end. Exit codes: 0 success, 1 usage or validation
// error, 2 runtime failure.

#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ntgcf/analysis.hpp"
#include "ntgcf/data.hpp"
#include "ntgcf/evaluation.hpp"
#include "ntgcf/graph.hpp"
#include "ntgcf/losses.hpp"
#include "ntgcf/model.hpp"
#include "ntgcf/training.hpp"
#include "ntgcf/verify.hpp"

namespace ntgcf::cli {

namespace fs = std::filesystem;

inline void write_json(const fs::path& p, const nlohmann::ordered_json& j) { detail::write_file(p, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(detail::read_file(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("cannot parse " + p.string() + ": " + e.what());
  }
}

inline SplitPart parse_split(const std::string& s) {
  if (s == "valid") return SplitPart::Valid;
  if (s == "test") return SplitPart::Test;
  throw std::invalid_argument("split must be valid or test");
}

/// Flags shared by train and sweep; each set flag overrides the config file.
struct TrainFlags {
  std::string data, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss, similarity;
  std::optional<double> lr, l2, tau, a_iu, a_ii, a_uu, a_ui;
  std::optional<std::size_t> epochs, batch_size, patience, eval_every, neg_items, neg_users, dim;
  std::optional<int> layers;
  bool no_item_direction = false;
  bool no_user_direction = false;

  void attach(CLI::App* app) {
    app->add_option("--data", data, "Bundle directory produced by split")->required();
    app->add_option("--config", config,
                    "JSON config; keys: " + [] {
                      std::string k;
                      for (const auto& s : config_keys()) k += (k.empty() ? "" : ", ") + s;
                      return k;
                    }());
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--seed", seed, "Global seed (config key seed)");
    app->add_option("--loss", loss, "bpr | nt-bpr | ssm | nt-ssm");
    app->add_option("--similarity", similarity, "inner | cosine (default: cosine for ssm family, inner for bpr)");
    app->add_option("--epochs", epochs, "Maximum epochs");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--l2", l2, "L2 weight on the initial embeddings");
    app->add_option("--batch-size", batch_size, "Positives per step");
    app->add_option("--patience", patience, "Early-stop patience in evaluations");
    app->add_option("--eval-every", eval_every, "Epochs between validations");
    app->add_option("--tau", tau, "Softmax temperature");
    app->add_option("--neg-items", neg_items, "Negative items per positive");
    app->add_option("--neg-users", neg_users, "Negative users per positive");
    app->add_option("--alpha-I-U", a_iu, "Coefficient of a negative item's user-sourced part");
    app->add_option("--alpha-I-I", a_ii, "Coefficient of a negative item's item-sourced part");
    app->add_option("--alpha-U-U", a_uu, "Coefficient of a negative user's user-sourced part");
    app->add_option("--alpha-U-I", a_ui, "Coefficient of a negative user's item-sourced part");
    app->add_option("--d", dim, "Embedding dimension");
    app->add_option("--L", layers, "Propagation layers");
    app->add_flag("--no-item-direction", no_item_direction, "Drop the item-direction term (type-aware losses)");
    app->add_flag("--no-user-direction", no_user_direction, "Drop the user-direction term (type-aware losses)");
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    cfg.loss.similarity = default_similarity(cfg.loss.kind);
    if (!config.empty()) cfg = merge_config(cfg, read_json(config));
    nlohmann::json o = nlohmann::json::object();
    if (seed) o["seed"] = *seed;
    if (loss) o["loss"] = *loss;
    if (similarity) o["similarity"] = *similarity;
    if (epochs) o["epochs"] = *epochs;
    if (lr) o["lr"] = *lr;
    if (l2) o["l2"] = *l2;
    if (batch_size) o["batch_size"] = *batch_size;
    if (patience) o["patience"] = *patience;
    if (eval_every) o["eval_every"] = *eval_every;
    if (tau) o["tau"] = *tau;
    if (neg_items) o["neg_items"] = *neg_items;
    if (neg_users) o["neg_users"] = *neg_users;
    if (a_iu) o["alpha_I_U"] = *a_iu;
    if (a_ii) o["alpha_I_I"] = *a_ii;
    if (a_uu) o["alpha_U_U"] = *a_uu;
    if (a_ui) o["alpha_U_I"] = *a_ui;
    if (dim) o["d"] = *dim;
    if (layers) o["L"] = *layers;
    if (no_item_direction) o["item_direction"] = false;
    if (no_user_direction) o["user_direction"] = false;
    // A --loss flag without --similarity keeps a similarity set in the file.
    if (loss && !similarity && !config.empty()) {
      auto file = read_json(config);
      if (file.contains("similarity")) o["similarity"] = file["similarity"];
    }
    cfg = merge_config(cfg, o);
    cfg.validate();
    return cfg;
  }
};

inline int cmd_split(const std::string& input, const std::vector<double>& ratios, std::uint64_t seed,
                     const fs::path& out, std::ostream& os) {
  if (ratios.size() != 3) throw std::invalid_argument("--ratios needs three values");
  SplitRatios r{ratios[0], ratios[1], ratios[2]};
  auto raw = load_interactions(input);
  auto bundle = split_dataset(raw, r, seed);
  fs::create_directories(out);
  save_bundle(bundle, out);
  os << fmt::format("split: {} interactions, {} users, {} items -> train {} / valid {} / test {} in {}\n",
                    raw.records.size(), bundle.num_users, bundle.num_items, bundle.train.size(), bundle.valid.size(),
                    bundle.test.size(), out.string());
  return 0;
}

inline int cmd_train(const TrainFlags& f, int threads, std::ostream& os) {
  TrainConfig cfg = f.resolve();
  auto bundle = load_bundle(f.data);
  const fs::path out = f.out;
  fs::create_directories(out);
  write_json(out / "config.json", to_json(cfg));
  TrainOptions opt;
  opt.threads = threads;
  opt.on_epoch = [&](const TrainHistory& h) { detail::write_file(out / "history.csv", history_csv(h)); };
  auto res = train(bundle, cfg, opt);
  res.history.best_checkpoint = (out / "checkpoint.bin").string();
  detail::write_file(out / "history.csv", history_csv(res.history));
  write_json(out / "timing.json", timing_json(res.history));
  save_checkpoint(out / "checkpoint.bin", res.table);

  InteractionGraph g = build_graph(bundle, EdgeSelection::Train);
  SimilarityOperator op(g, cfg.layers);
  auto state = forward(op, res.table, threads);
  const std::vector<std::size_t> cuts{10, 20};
  auto test = evaluate_all(state, bundle, SplitPart::Test, cuts, cfg.loss.similarity, threads);
  detail::write_file(out / "test_metrics.csv", metrics_csv(test));

  nlohmann::ordered_json meta;
  meta["format"] = "ntgcf-checkpoint-1";
  meta["num_users"] = bundle.num_users;
  meta["num_items"] = bundle.num_items;
  meta["best_epoch"] = res.history.best_epoch;
  meta["best_valid_ndcg20"] = res.history.best_epoch > 0 ? res.history.best_ndcg20 : 0.0;
  meta["config"] = to_json(cfg);
  write_json(out / "checkpoint.json", meta);
  os << fmt::format("train: {} epochs, best epoch {}, valid ndcg@20 {:.4f}, test ndcg@20 {:.4f} -> {}\n",
                    res.history.epochs.size(), res.history.best_epoch,
                    res.history.best_epoch > 0 ? res.history.best_ndcg20 : 0.0, test.ndcg_at(20), out.string());
  return 0;
}

struct EvalFlags {
  std::string data, checkpoint, out, split = "test";
  std::vector<std::size_t> cutoffs{10, 20};
  std::optional<std::string> similarity;
  std::optional<int> layers;
  bool per_user = false;
};

inline int cmd_eval(const EvalFlags& f, int threads, std::ostream& os) {
  auto bundle = load_bundle(f.data);
  auto table = load_checkpoint(f.checkpoint);
  // Model settings come from the sidecar written by train unless overridden.
  TrainConfig cfg;
  cfg.loss.similarity = default_similarity(cfg.loss.kind);
  fs::path sidecar = fs::path(f.checkpoint).replace_extension(".json");
  if (fs::exists(sidecar)) {
    auto meta = read_json(sidecar);
    if (meta.contains("config")) cfg = merge_config(cfg, meta["config"]);
  }
  if (f.similarity) cfg.loss.similarity = parse_similarity(*f.similarity);
  if (f.layers) cfg.layers = *f.layers;
  InteractionGraph g = build_graph(bundle, EdgeSelection::Train);
  SimilarityOperator op(g, cfg.layers);
  auto state = forward(op, table, threads);
  auto m = evaluate_all(state, bundle, parse_split(f.split), f.cutoffs, cfg.loss.similarity, threads, f.per_user);
  const fs::path out = f.out;
  fs::create_directories(out);
  nlohmann::ordered_json eff;
  eff["checkpoint"] = f.checkpoint;
  eff["split"] = f.split;
  eff["N"] = f.cutoffs;
  eff["similarity"] = to_string(cfg.loss.similarity);
  eff["L"] = cfg.layers;
  write_json(out / "config.json", eff);
  detail::write_file(out / "metrics.csv", metrics_csv(m));
  if (f.per_user) detail::write_file(out / "per_user.csv", per_user_csv(m));
  std::string summary = fmt::format("eval: {} users on {}", m.users_evaluated, f.split);
  for (std::size_t c = 0; c < m.cutoffs.size(); ++c)
    summary += fmt::format(", recall@{} {:.4f} ndcg@{} {:.4f}", m.cutoffs[c], m.recall[c], m.cutoffs[c], m.ndcg[c]);
  os << summary << "\n";
  return 0;
}

inline int cmd_sweep(const TrainFlags& f, std::size_t budget, int threads, std::ostream& os) {
  TrainConfig cfg = f.resolve();
  auto bundle = load_bundle(f.data);
  const fs::path out = f.out;
  fs::create_directories(out);
  SweepSpec spec;
  spec.budget = budget;
  auto eff = to_json(cfg);
  eff["budget"] = budget;
  write_json(out / "config.json", eff);
  TrainOptions opt;
  opt.threads = threads;
  auto rs = sweep_alpha(bundle, cfg, spec, opt);
  detail::write_file(out / "sweep.csv", sweep_csv(rs));
  const auto& b = rs.front();
  os << fmt::format("sweep: {} configs, best (U_U, I_I, U_I, I_U) = ({:.2f}, {:.2f}, {:.2f}, {:.2f}) valid ndcg@20 {:.4f}\n",
                    rs.size(), b.alpha[0], b.alpha[1], b.alpha[2], b.alpha[3], b.ndcg20);
  return 0;
}

struct GradCheckFlags {
  std::string loss = "nt-ssm";
  std::optional<std::string> similarity;
  std::uint64_t seed = 7;
  std::size_t instances = 10;
  std::size_t coords = 20;
  std::size_t max_nodes = 50;
  double h = 1e-4;
  double tolerance = 1e-5;
  std::string out;
};

inline LossConfig grad_check_loss(LossKind kind, Similarity sim) {
  LossConfig cfg;
  cfg.kind = kind;
  cfg.similarity = sim;
  cfg.neg_items = 3;
  cfg.neg_users = 3;
  if (is_type_aware(kind)) cfg.alpha = {0.8, 1.2, 0.9, 1.1};
  return cfg;
}

inline int cmd_grad_check(const GradCheckFlags& f, std::ostream& os) {
  const LossKind kind = parse_loss_kind(f.loss);
  const Similarity sim = f.similarity ? parse_similarity(*f.similarity) : default_similarity(kind);
  const LossConfig cfg = grad_check_loss(kind, sim);
  nlohmann::ordered_json report;
  report["loss"] = to_string(kind);
  report["similarity"] = to_string(sim);
  report["seed"] = f.seed;
  report["h"] = f.h;
  report["tolerance"] = f.tolerance;
  report["checks"] = nlohmann::ordered_json::array();
  double worst = 0.0;
  bool ok = true;
  for (std::size_t k = 0; k < f.instances; ++k) {
    auto inst = random_instance(f.seed + k, f.max_nodes, cfg);
    auto r = finite_diff_check(inst, cfg, f.coords, f.h, f.tolerance, f.seed + k);
    auto j = to_json(r);
    j["instance"] = k;
    j["nodes"] = inst.graph.num_nodes();
    report["checks"].push_back(j);
    worst = std::max(worst, r.max_rel_err);
    ok = ok && r.passed;
  }
  report["max_rel_err"] = worst;
  report["passed"] = ok;
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    write_json(fs::path(f.out) / "grad_check.json", report);
  } else {
    os << report.dump(2) << "\n";
  }
  os << fmt::format("grad-check: {} {} on {} instances, max_rel_err {:.3e} ({})\n", to_string(kind), to_string(sim),
                    f.instances, worst, ok ? "pass" : "FAIL");
  return 0;
}

inline int cmd_analyze_pairs(const std::string& data, const std::vector<int>& hops, const fs::path& out, int threads,
                             std::ostream& os) {
  auto bundle = load_bundle(data);
  InteractionGraph g = build_graph(bundle, EdgeSelection::Train);
  auto rows = count_neighbor_pairs(g, g.edges(), hops, threads);
  fs::create_directories(out);
  nlohmann::ordered_json eff;
  eff["data"] = data;
  eff["hops"] = hops;
  eff["edges"] = "train";
  write_json(out / "config.json", eff);
  detail::write_file(out / "pairs.csv", pair_count_csv(rows));
  std::string summary = "analyze-pairs:";
  for (const auto& r : rows) summary += fmt::format(" L={} coverage {:.4f};", r.hop, r.coverage);
  os << summary << "\n";
  return 0;
}

struct RetentionFlags {
  std::string data, out, split = "test";
  int layers = 3;
  std::vector<double> q{0.1, 1, 10, 100};
  std::vector<double> q_prime{0.1, 1, 10, 100};
  std::vector<std::string> types{"full"};
  std::size_t cutoff = 20;
  std::size_t memory_mb = 3072;
};

inline int cmd_retention(const RetentionFlags& f, int threads, std::ostream& os) {
  auto bundle = load_bundle(f.data);
  RetentionSpec spec;
  spec.layers = f.layers;
  spec.q_grid = f.q;
  spec.q_prime_grid = f.q_prime;
  spec.types.clear();
  for (const auto& t : f.types) spec.types.push_back(parse_pair_type(t));
  spec.cutoff = f.cutoff;
  spec.split = parse_split(f.split);
  spec.memory_budget = f.memory_mb << 20;
  const fs::path out = f.out;
  fs::create_directories(out);
  nlohmann::ordered_json eff;
  eff["data"] = f.data;
  eff["L"] = f.layers;
  eff["q"] = f.q;
  eff["q_prime"] = f.q_prime;
  eff["types"] = f.types;
  eff["N"] = f.cutoff;
  eff["split"] = f.split;
  write_json(out / "config.json", eff);
  auto cells = retention_study(bundle, spec, threads);
  detail::write_file(out / "retention.csv", retention_csv(cells));
  const RetentionCell* best = &cells.front();
  for (const auto& c : cells)
    if (c.ndcg > best->ndcg) best = &c;
  os << fmt::format("retention-study: {} cells, best q={} q'={} {} ndcg@{} {:.4f}\n", cells.size(), best->q,
                    best->q_prime, to_string(best->type), f.cutoff, best->ndcg);
  return 0;
}

inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
  CLI::App app{"Graph collaborative filtering lab: splits, training, evaluation and neighbor-pair studies"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker cap (default: NTGCF_THREADS, then hardware)");

  auto* split = app.add_subcommand("split", "Split a raw interaction log into a bundle");
  std::string input, split_out;
  std::vector<double> ratios{0.7, 0.1, 0.2};
  std::uint64_t split_seed = 42;
  split->add_option("--input", input, "Whitespace-separated 'user item [...]' lines")->required();
  split->add_option("--ratios", ratios, "train valid test fractions")->expected(3);
  split->add_option("--seed", split_seed, "Split seed");
  split->add_option("--out", split_out, "Bundle directory")->required();
  split->add_option("--threads", threads, "Worker cap");

  auto* train_cmd = app.add_subcommand("train", "Train embeddings with early stopping");
  TrainFlags tf;
  tf.attach(train_cmd);
  train_cmd->add_option("--threads", threads, "Worker cap");

  auto* eval_cmd = app.add_subcommand("eval", "Full-ranking evaluation of a checkpoint");
  EvalFlags ef;
  eval_cmd->add_option("--data", ef.data, "Bundle directory")->required();
  eval_cmd->add_option("--checkpoint", ef.checkpoint, "checkpoint.bin written by train")->required();
  eval_cmd->add_option("--out", ef.out, "Output directory")->required();
  eval_cmd->add_option("--split", ef.split, "valid | test");
  eval_cmd->add_option("--N", ef.cutoffs, "Cutoffs");
  eval_cmd->add_option("--similarity", ef.similarity, "inner | cosine (default: from checkpoint.json)");
  eval_cmd->add_option("--L", ef.layers, "Propagation layers (default: from checkpoint.json)");
  eval_cmd->add_flag("--per-user", ef.per_user, "Also write per_user.csv");
  eval_cmd->add_option("--threads", threads, "Worker cap");

  auto* sweep_cmd = app.add_subcommand("sweep", "Coefficient search for type-aware losses");
  TrainFlags sf;
  sf.attach(sweep_cmd);
  std::size_t budget = 100;
  sweep_cmd->add_option("--budget", budget, "Number of trained configurations");
  sweep_cmd->add_option("--threads", threads, "Worker cap");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of analytic gradients");
  GradCheckFlags gf;
  gc->add_option("--loss", gf.loss, "bpr | nt-bpr | ssm | nt-ssm");
  gc->add_option("--similarity", gf.similarity, "inner | cosine");
  gc->add_option("--seed", gf.seed, "Instance seed");
  gc->add_option("--instances", gf.instances, "Random graphs");
  gc->add_option("--coords", gf.coords, "Sampled coordinates per graph");
  gc->add_option("--max-nodes", gf.max_nodes, "Largest graph size");
  gc->add_option("--step", gf.h, "Central-difference step h");
  gc->add_option("--tol", gf.tolerance, "Relative error tolerance");
  gc->add_option("--out", gf.out, "Write grad_check.json here instead of stdout");

  auto* ap = app.add_subcommand("analyze-pairs", "Neighbor-pair counts per hop over training edges");
  std::string ap_data, ap_out;
  std::vector<int> hops{1, 2, 3};
  ap->add_option("--data", ap_data, "Bundle directory")->required();
  ap->add_option("--hops", hops, "Layer counts");
  ap->add_option("--out", ap_out, "Output directory")->required();
  ap->add_option("--threads", threads, "Worker cap");

  auto* rs = app.add_subcommand("retention-study", "Heuristic scoring over retention ratios");
  RetentionFlags rf;
  rs->add_option("--data", rf.data, "Bundle directory")->required();
  rs->add_option("--out", rf.out, "Output directory")->required();
  rs->add_option("--L", rf.layers, "Propagation layers");
  rs->add_option("--q", rf.q, "User-side retention percentages");
  rs->add_option("--q-prime", rf.q_prime, "Item-side retention percentages");
  rs->add_option("--types", rf.types, "full | UU | II | UI | IU");
  rs->add_option("--N", rf.cutoff, "NDCG cutoff");
  rs->add_option("--split", rf.split, "valid | test");
  rs->add_option("--memory-mb", rf.memory_mb, "Memory guard");
  rs->add_option("--threads", threads, "Worker cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, os, es);
  } catch (const CLI::ParseError& e) {
    app.exit(e, es, es);
    CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands()) sub = s;
    es << (sub ? sub->help() : app.help());
    return 1;
  }

  const int workers = resolve_threads(threads);
  try {
    if (*split) return cmd_split(input, ratios, split_seed, split_out, os);
    if (*train_cmd) return cmd_train(tf, workers, os);
    if (*eval_cmd) return cmd_eval(ef, workers, os);
    if (*sweep_cmd) return cmd_sweep(sf, budget, workers, os);
    if (*gc) return cmd_grad_check(gf, os);
    if (*ap) return cmd_analyze_pairs(ap_data, hops, ap_out, workers, os);
    if (*rs) return cmd_retention(rf, workers, os);
  } catch (const std::invalid_argument& e) {
    es << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    es << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace ntgcf::cli
