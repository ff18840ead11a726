#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace echl {

// Malformed input files, bad field values. Carries a 1-based line number when
// the failure is tied to a specific line (0 otherwise).
class parse_error : public std::runtime_error {
 public:
  parse_error(const std::string& msg, std::size_t line = 0)
      : std::runtime_error(line ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Structurally well-formed input that violates a data invariant
// (feature out of range, dangling node index, leakage guard, ...).
class validation_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric engine faults: shape mismatches, non-finite values, tape misuse.
class engine_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad flag combinations or values; the CLI maps this to exit code 2.
class usage_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic RNG. mt19937_64 output is pinned by the standard; the
// distributions below are hand-rolled because std:: distributions are
// implementation-defined and would break cross-platform reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free modulo bias is negligible for
  // the n used here, but use Lemire-style rejection anyway.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw engine_error("uniform_int: n must be positive");
    std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; deterministic across platforms.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Independent child stream; avoids correlated streams when one seed fans
  // out into several generators (per-epoch dropout, per-species draws, ...).
  Rng fork(std::uint64_t salt) {
    return Rng(engine_() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, used for dataset/split fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// Number of worker threads for parallel sections: min(hardware_concurrency,
// ECHL_NUM_THREADS if set). Always >= 1.
unsigned num_threads();

// Runs fn(begin, end) on disjoint index ranges covering [0, n). Each index is
// processed by exactly one thread with a fixed per-index computation, so
// results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

// Shortest round-trip decimal form of a double (std::to_chars).
std::string format_double(double v);

}  // namespace echl
