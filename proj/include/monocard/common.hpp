// Shared error types, the seeded random stream, and a small thread fan-out helper.
#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace monocard {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller input: invalid flag values, out-of-range arguments.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Invalid column schema (bounds, distribution parameters, duplicate names).
class SchemaError : public Error {
 public:
  using Error::Error;
};

// File ingestion failure; the message names the offending file and line.
class IngestError : public Error {
 public:
  using Error::Error;
};

// A query references a column the target structure does not have.
class QueryError : public Error {
 public:
  using Error::Error;
};

// The workload generator exhausted its retry budget.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// A non-finite value surfaced where the pipeline requires finite numbers.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Model deserialization failure (malformed JSON, version mismatch, truncation).
class ModelLoadError : public Error {
 public:
  using Error::Error;
};

// Evaluation over a workload that is not in evaluable shape.
class EvalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Deterministic random stream. All sampling in the project goes through this
// wrapper so that a (seed, call sequence) pair fully determines the output.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n), unbiased via rejection.
  uint64_t below(uint64_t n) {
    if (n == 0) throw ArgumentError("Rng::below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  int64_t int_in(int64_t lo, int64_t hi) {
    if (lo > hi) throw ArgumentError("Rng::int_in: empty range");
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo) + 1));
  }

  double real_in(double lo, double hi) { return lo + unit() * (hi - lo); }

  // Box-Muller; consumes two draws per call.
  double normal(double mean, double stddev) {
    double u1 = unit();
    double u2 = unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    return mean + stddev * r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Shortest decimal representation that round-trips through parsing.
inline std::string double_to_string(double v) {
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

// Runs fn(begin, end) over contiguous chunks of [0, n). A thread count of 0
// means hardware concurrency. Each chunk writes only to its own slots, so the
// result is identical for any thread count.
inline void parallel_for(size_t n, unsigned threads,
                         const std::function<void(size_t, size_t)>& fn) {
  if (n == 0) return;
  unsigned t = threads != 0 ? threads : std::thread::hardware_concurrency();
  if (t == 0) t = 1;
  if (t > n) t = static_cast<unsigned>(n);
  if (t == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(t);
  const size_t chunk = (n + t - 1) / t;
  for (unsigned i = 0; i < t; ++i) {
    const size_t begin = i * chunk;
    const size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace monocard
