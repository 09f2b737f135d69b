#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace stp {

// Error categories map 1:1 onto CLI exit codes (config=2, data=3, numeric=4).
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct shape_error : config_error {
  using config_error::config_error;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return splitmix64(a ^ (splitmix64(b) + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

inline uint64_t hash_combine(uint64_t a, uint64_t b, uint64_t c) {
  return hash_combine(hash_combine(a, b), c);
}

// Deterministic RNG. Distribution helpers are hand-rolled so streams are
// reproducible across standard libraries, not just across runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

  uint64_t next() { return gen_(); }

  double u01() { return double(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  float uniform_f(float lo, float hi) { return float(uniform(lo, hi)); }

  // in [0, n)
  uint64_t below(uint64_t n) { return n ? gen_() % n : 0; }

  bool bernoulli(double p) { return u01() < p; }

 private:
  std::mt19937_64 gen_;
};

inline int default_threads() {
  if (const char* env = std::getenv("STP_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? int(hc) : 1;
}

inline int& thread_count() {
  static int n = default_threads();
  return n;
}

inline void set_threads(int n) { thread_count() = n < 1 ? 1 : n; }

// Splits [0, n) into contiguous chunks, one per worker. Each index is handled
// by exactly one thread, so results do not depend on the thread count.
inline void parallel_for(int64_t n, int64_t work_per_item,
                         const std::function<void(int64_t, int64_t)>& fn) {
  int nt = thread_count();
  if (n <= 0) return;
  if (nt <= 1 || n == 1 || n * work_per_item < 65536) {
    fn(0, n);
    return;
  }
  int chunks = int(std::min<int64_t>(nt, n));
  std::vector<std::thread> workers;
  workers.reserve(chunks - 1);
  int64_t per = (n + chunks - 1) / chunks;
  for (int t = 1; t < chunks; ++t) {
    int64_t lo = t * per, hi = std::min<int64_t>(n, lo + per);
    if (lo >= hi) break;
    workers.emplace_back(fn, lo, hi);
  }
  fn(0, std::min<int64_t>(per, n));
  for (auto& th : workers) th.join();
}

}  // namespace stp
