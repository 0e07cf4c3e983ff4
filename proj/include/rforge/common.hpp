#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rforge {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParamError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// All randomness in the library flows through this generator so results are
// reproducible across platforms and standard-library versions (the std::
// distributions are implementation-defined).
// ---------------------------------------------------------------------------

struct Rng {
  uint64_t state = 0;

  Rng() = default;
  explicit Rng(uint64_t seed) : state(seed) {}

  // splitmix64
  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0,n)
  int64_t uniform_int(int64_t n) {
    if (n <= 0) throw ParamError("uniform_int: n must be positive");
    return int64_t(next() % uint64_t(n));
  }

  // standard normal, Box-Muller (no spare caching, stays stateless per call pair)
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(next() % uint64_t(i));
      std::swap(v[i - 1], v[j]);
    }
  }
};

// FNV-1a, used to derive per-stage sub-seeds: sub_seed = hash(name) ^ seed.
inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t sub_seed(uint64_t seed, const std::string& stage) {
  return fnv1a64(stage) ^ seed;
}

// ---------------------------------------------------------------------------
// Threading
// ---------------------------------------------------------------------------

inline int thread_count() {
  if (const char* env = std::getenv("RFORGE_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? int(hc) : 1;
}

// Runs fn(i) for i in [0,n). Work items must write to disjoint state; any
// deterministic result must be reduced by the caller in index order.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn, int threads = 0) {
  if (threads <= 0) threads = thread_count();
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> counter{0};
  int nw = int(std::min<int64_t>(threads, n));
  std::vector<std::thread> workers;
  workers.reserve(nw);
  for (int t = 0; t < nw; ++t) {
    workers.emplace_back([&] {
      for (;;) {
        int64_t i = counter.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace rforge
