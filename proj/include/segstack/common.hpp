#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace segstack {

// Thrown when a documented precondition or config constraint is violated.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown for failures at run time (I/O, non-finite values, missing files).
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void append_msg(std::ostringstream&) {}
template <typename T, typename... Rest>
void append_msg(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  append_msg(os, rest...);
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
  std::ostringstream os;
  detail::append_msg(os, args...);
  throw RuntimeError(os.str());
}

template <typename... Args>
void check(bool cond, const Args&... args) {
  if (!cond) {
    std::ostringstream os;
    detail::append_msg(os, args...);
    throw InvalidArgument(os.str());
  }
}

// N, C, H, W. All tensors in the engine are rank-4; lower-rank data uses
// size-1 dimensions.
struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const {
    return std::int64_t(n) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

// Deterministic RNG. std::mt19937 output is pinned by the standard; the
// float/int helpers below avoid std::uniform_*_distribution, whose mapping
// is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : seed_mixed_(mix(seed)), gen_(static_cast<std::uint32_t>(mix(seed))) {}

  std::uint32_t next_u32() { return gen_(); }

  // Uniform on [0, 1) with 24 bits of mantissa.
  float uniform() { return float(next_u32() >> 8) * (1.0f / 16777216.0f); }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    check(hi >= lo, "uniform_int: empty range [", lo, ",", hi, "]");
    std::uint64_t span = std::uint64_t(hi) - std::uint64_t(lo) + 1;
    return lo + int((std::uint64_t(next_u32()) * span) >> 32);
  }

  bool coin(float p = 0.5f) { return uniform() < p; }

  // Independent child stream, e.g. one per tile or per epoch.
  Rng child(std::uint64_t key) const {
    return Rng(seed_mixed_ ^ (key * 0x9e3779b97f4a7c15ULL));
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_mixed_ = 0;
  std::mt19937 gen_;
};

}  // namespace segstack
