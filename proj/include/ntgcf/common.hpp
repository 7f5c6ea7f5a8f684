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
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace ntgcf {

/// Row-major dense matrix; one row per graph node.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Malformed input, I/O failure, or a violated data contract.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown during loss evaluation or optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NodeType : std::uint8_t { User, Item };

inline const char* to_string(NodeType t) { return t == NodeType::User ? "U" : "I"; }

/// One observed interaction in dense-index form.
struct Edge {
  std::uint32_t user = 0;
  std::uint32_t item = 0;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

// Named random sub-streams. Every random draw in the library is taken from a
// generator seeded by (global seed, stream, a, b), so results never depend on
// call order across threads.
namespace stream {
inline constexpr std::uint32_t kSplit = 1;
inline constexpr std::uint32_t kInit = 2;
inline constexpr std::uint32_t kSampling = 3;
inline constexpr std::uint32_t kShuffle = 4;
inline constexpr std::uint32_t kSweep = 5;
inline constexpr std::uint32_t kInstance = 6;
}  // namespace stream

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint32_t stream_id,
                                std::uint64_t a = 0, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream_id,
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

/// Worker count: explicit value if positive, else NTGCF_THREADS, else hardware.
inline int resolve_threads(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("NTGCF_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunk boundaries
/// depend only on n and the thread count; callers that write disjoint outputs
/// per index get results independent of scheduling.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::size_t workers = static_cast<std::size_t>(std::max(1, threads));
  workers = std::min(workers, std::max<std::size_t>(1, n));
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
      std::size_t begin = std::min(n, w * chunk);
      std::size_t end = std::min(n, begin + chunk);
      pool.emplace_back([&fn, &errors, w, begin, end] {
        try {
          fn(begin, end);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    try {
      fn(std::size_t{0}, std::min(n, chunk));
    } catch (...) {
      errors[0] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline double dot(const double* a, const double* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

}  // namespace ntgcf
