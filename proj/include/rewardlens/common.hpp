#pragma once

// Shared plumbing: the library-wide error type, a deterministic RNG whose
// stream does not depend on standard-library distribution internals, and a
// bounded parallel-for used by the batch loops.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rewardlens {

enum class ErrorKind {
  argument,          // caller passed something out of contract
  shape_mismatch,    // tensor/config dims disagree
  unknown_head_kind, // head_kind string not recognised
  corrupt_blob,      // tensor file failed structural validation
  data_format,       // pair/probe/config file malformed, unknown token
  degenerate_input,  // zero norm, constant regressor, empty corpus
  degenerate_stat,   // undefined correlation or rank statistic
  ill_conditioned,   // Cholesky failure after regularisation
  io,                // filesystem failure
  numeric            // NaN/inf escaped a computation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

// Preference differentials with magnitude below this count as "no preference"
// (crystallisation undefined, normalised patch effects suppressed).
inline constexpr double kZeroDifferential = 1e-6;

// mt19937_64 with a hand-rolled Box-Muller transform. std::normal_distribution
// is implementation-defined, which would make seeded model weights differ
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in (0, 1]
  double uniform_pos() {
    return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform_pos();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Weights are stored as 32-bit floats on disk; builders round through f32 at
// construction time so a save/load cycle is bit-identical.
inline double quantize_f32(double x) {
  return static_cast<double>(static_cast<float>(x));
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// REWARD_LENS_THREADS bounds worker count; unset means hardware concurrency.
inline unsigned thread_budget() {
  if (const char* env = std::getenv("REWARD_LENS_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Each index writes only its own outputs, so results are identical for any
// worker count.
inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t)>& fn) {
  const unsigned workers =
      std::min<std::size_t>(thread_budget(), n == 0 ? 1 : n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace rewardlens
