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

// Interaction ingestion, per-user stratified splitting and bundle persistence.

#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "ntgcf/common.hpp"

namespace ntgcf {

struct RawInteractions {
  std::vector<std::pair<std::string, std::string>> records;
  std::filesystem::path source_path;
};

struct SplitRatios {
  double train = 0.7;
  double valid = 0.1;
  double test = 0.2;

  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

enum class SplitPart { Train, Valid, Test };

/// Dense-index dataset with its three disjoint edge sets. Edge lists are
/// sorted by (user, item). user_keys[k] is the raw key of user index k, which
/// fully determines the key -> index map.
struct DatasetBundle {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<Edge> train;
  std::vector<Edge> valid;
  std::vector<Edge> test;
  std::vector<std::string> user_keys;
  std::vector<std::string> item_keys;
  std::uint64_t split_seed = 0;
  SplitRatios ratios;
  std::size_t users_without_train = 0;
  std::size_t items_without_train = 0;

  const std::vector<Edge>& part(SplitPart p) const {
    switch (p) {
      case SplitPart::Train: return train;
      case SplitPart::Valid: return valid;
      default: return test;
    }
  }

  std::unordered_map<std::string, std::uint32_t> user_map() const { return index_of(user_keys); }
  std::unordered_map<std::string, std::uint32_t> item_map() const { return index_of(item_keys); }

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;

 private:
  static std::unordered_map<std::string, std::uint32_t> index_of(const std::vector<std::string>& keys) {
    std::unordered_map<std::string, std::uint32_t> m;
    m.reserve(keys.size());
    for (std::size_t k = 0; k < keys.size(); ++k) m.emplace(keys[k], static_cast<std::uint32_t>(k));
    return m;
  }
};

/// Reads "user item [extra...]" lines. Extra columns are ignored, exact
/// duplicate (user, item) pairs collapse to their first occurrence.
inline RawInteractions load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interactions file: " + path.string());
  RawInteractions raw;
  raw.source_path = path;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string user, item;
    if (!(fields >> user)) continue;  // blank line
    if (!(fields >> item))
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": malformed line, expected at least 2 fields");
    std::string key;
    key.reserve(user.size() + item.size() + 1);
    key.append(user).push_back('\0');
    key.append(item);
    if (seen.insert(std::move(key)).second) raw.records.emplace_back(std::move(user), std::move(item));
  }
  if (in.bad()) throw DataError("read failure on " + path.string());
  return raw;
}

/// Per-user allocation: valid and test take floor(n * ratio) each, training
/// keeps the remainder, so every user keeps at least one training edge.
inline std::array<std::size_t, 3> allocate_split(std::size_t n, const SplitRatios& r) {
  auto take = [n](double ratio) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
  };
  std::size_t valid = take(r.valid);
  std::size_t test = take(r.test);
  return {n - valid - test, valid, test};
}

inline void validate_ratios(const SplitRatios& r) {
  if (!(r.train > 0.0 && r.valid > 0.0 && r.test > 0.0))
    throw std::invalid_argument("split ratios must be positive");
  if (std::abs(r.train + r.valid + r.test - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");
}

inline DatasetBundle split_dataset(const RawInteractions& raw, const SplitRatios& ratios,
                                   std::uint64_t seed) {
  validate_ratios(ratios);
  DatasetBundle b;
  b.split_seed = seed;
  b.ratios = ratios;

  std::unordered_map<std::string, std::uint32_t> users, items;
  std::vector<std::vector<std::uint32_t>> per_user;
  for (const auto& [uk, ik] : raw.records) {
    if (uk.empty() || ik.empty()) throw DataError("interaction with an empty key");
    auto [uit, unew] = users.try_emplace(uk, static_cast<std::uint32_t>(b.user_keys.size()));
    if (unew) {
      b.user_keys.push_back(uk);
      per_user.emplace_back();
    }
    auto [iit, inew] = items.try_emplace(ik, static_cast<std::uint32_t>(b.item_keys.size()));
    if (inew) b.item_keys.push_back(ik);
    per_user[uit->second].push_back(iit->second);
  }
  b.num_users = b.user_keys.size();
  b.num_items = b.item_keys.size();

  for (std::uint32_t u = 0; u < per_user.size(); ++u) {
    auto& its = per_user[u];
    auto rng = make_rng(seed, stream::kSplit, u);
    std::shuffle(its.begin(), its.end(), rng);
    auto [n_train, n_valid, n_test] = allocate_split(its.size(), ratios);
    std::size_t k = 0;
    for (; k < n_train; ++k) b.train.push_back({u, its[k]});
    for (; k < n_train + n_valid; ++k) b.valid.push_back({u, its[k]});
    for (; k < its.size(); ++k) b.test.push_back({u, its[k]});
    (void)n_test;
  }
  std::sort(b.train.begin(), b.train.end());
  std::sort(b.valid.begin(), b.valid.end());
  std::sort(b.test.begin(), b.test.end());

  std::vector<char> user_seen(b.num_users, 0), item_seen(b.num_items, 0);
  for (const auto& e : b.train) {
    user_seen[e.user] = 1;
    item_seen[e.item] = 1;
  }
  b.users_without_train = static_cast<std::size_t>(std::count(user_seen.begin(), user_seen.end(), 0));
  b.items_without_train = static_cast<std::size_t>(std::count(item_seen.begin(), item_seen.end(), 0));
  return b;
}

namespace detail {

inline std::uint32_t crc32_of(const std::string& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("missing file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << bytes;
  if (!out) throw DataError("write failure on " + p.string());
}

inline std::string edges_to_text(const std::vector<Edge>& edges) {
  std::string s;
  s.reserve(edges.size() * 12);
  for (const auto& e : edges) {
    s += std::to_string(e.user);
    s += '\t';
    s += std::to_string(e.item);
    s += '\n';
  }
  return s;
}

inline std::string keys_to_text(const std::vector<std::string>& keys) {
  std::string s;
  for (const auto& k : keys) {
    s += k;
    s += '\n';
  }
  return s;
}

inline std::vector<Edge> parse_edges(const std::string& text, const std::string& name,
                                     std::size_t num_users, std::size_t num_items) {
  std::vector<Edge> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream f(line);
    long long u = -1, i = -1;
    if (!(f >> u >> i)) throw DataError(name + ":" + std::to_string(line_no) + ": malformed edge");
    if (u < 0 || i < 0 || static_cast<std::size_t>(u) >= num_users ||
        static_cast<std::size_t>(i) >= num_items)
      throw DataError(name + ":" + std::to_string(line_no) + ": index out of range");
    out.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(i)});
  }
  return out;
}

inline std::vector<std::string> parse_keys(const std::string& text) {
  std::vector<std::string> keys;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) keys.push_back(line);
  return keys;
}

}  // namespace detail

/// Writes manifest.json, train/valid/test.txt ("user_id\titem_id") and the
/// users.txt / items.txt key tables into dir.
inline void save_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, std::string> files[] = {
      {"train.txt", detail::edges_to_text(b.train)},
      {"valid.txt", detail::edges_to_text(b.valid)},
      {"test.txt", detail::edges_to_text(b.test)},
      {"users.txt", detail::keys_to_text(b.user_keys)},
      {"items.txt", detail::keys_to_text(b.item_keys)},
  };
  nlohmann::ordered_json manifest;
  manifest["format"] = "ntgcf-bundle-1";
  manifest["num_users"] = b.num_users;
  manifest["num_items"] = b.num_items;
  manifest["split_seed"] = b.split_seed;
  manifest["ratios"] = {b.ratios.train, b.ratios.valid, b.ratios.test};
  manifest["stratification"] = "per-user";
  manifest["counts"] = {{"train", b.train.size()}, {"valid", b.valid.size()}, {"test", b.test.size()}};
  manifest["warnings"] = {{"users_without_train", b.users_without_train},
                          {"items_without_train", b.items_without_train}};
  for (const auto& [name, bytes] : files) {
    detail::write_file(dir / name, bytes);
    manifest["checksums"][name] = detail::crc32_of(bytes);
  }
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline DatasetBundle load_bundle(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw DataError("missing manifest: " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(detail::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("unreadable manifest: ") + e.what());
  }
  DatasetBundle b;
  try {
    b.num_users = m.at("num_users").get<std::size_t>();
    b.num_items = m.at("num_items").get<std::size_t>();
    b.split_seed = m.at("split_seed").get<std::uint64_t>();
    const auto& r = m.at("ratios");
    b.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
    b.users_without_train = m.at("warnings").at("users_without_train").get<std::size_t>();
    b.items_without_train = m.at("warnings").at("items_without_train").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid manifest: ") + e.what());
  }

  auto checked = [&](const char* name) {
    std::string bytes = detail::read_file(dir / name);
    if (!m.contains("checksums") || !m["checksums"].contains(name))
      throw DataError(std::string("manifest has no checksum for ") + name);
    if (m["checksums"][name].get<std::uint32_t>() != detail::crc32_of(bytes))
      throw DataError(std::string("checksum mismatch: ") + name);
    return bytes;
  };
  b.train = detail::parse_edges(checked("train.txt"), "train.txt", b.num_users, b.num_items);
  b.valid = detail::parse_edges(checked("valid.txt"), "valid.txt", b.num_users, b.num_items);
  b.test = detail::parse_edges(checked("test.txt"), "test.txt", b.num_users, b.num_items);
  b.user_keys = detail::parse_keys(checked("users.txt"));
  b.item_keys = detail::parse_keys(checked("items.txt"));
  if (b.user_keys.size() != b.num_users || b.item_keys.size() != b.num_items)
    throw DataError("key table size does not match manifest counts");
  return b;
}

}  // namespace ntgcf
