// Copyright 2026 The simalign Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace simalign {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps ArgumentError/ValidationError to exit code 2
// and everything else to exit code 3.
// ---------------------------------------------------------------------------

/// Shape or dimension mismatch between tensors.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid argument value (out-of-range label, bad ratio, ...).
struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// API misuse: stale cache, mismatched parameter names, ...
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered where finite values are required.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File missing, unreadable, or failing its integrity hash.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Config file or schema violation.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Object layout rejected (pairwise box overlap above the threshold).
struct LayoutError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Provenance index cannot resolve a uid.
struct ProvenanceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit hashing, used for artifact integrity and config fingerprints.
// ---------------------------------------------------------------------------

inline constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr uint64_t kFnvPrime = 0x100000001b3ull;

inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Logging, controlled by the SIMALIGN_LOG environment variable
// (quiet | info | debug; default info). Messages go to stderr.
// ---------------------------------------------------------------------------

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

inline LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("SIMALIGN_LOG");
    if (!env) return LogLevel::kInfo;
    std::string v(env);
    if (v == "quiet") return LogLevel::kQuiet;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
  if (log_level() >= LogLevel::kInfo) {
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
  }
}

template <typename... Args>
void log_debug(const char* fmt, Args... args) {
  if (log_level() >= LogLevel::kDebug) {
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
  }
}

// ---------------------------------------------------------------------------
// Deterministic parallel-for: results are produced per index so the caller
// reduces them in a fixed order regardless of thread count.
// ---------------------------------------------------------------------------

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

inline void parallel_for(size_t n, int threads, const std::function<void(size_t)>& body) {
  threads = resolve_threads(threads);
  if (threads <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) body(i);
    return;
  }
  size_t workers = std::min<size_t>(static_cast<size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace simalign
