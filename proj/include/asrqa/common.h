#ifndef ASRQA_COMMON_H
#define ASRQA_COMMON_H

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace asrqa {

// Error taxonomy; the CLI maps these onto exit codes.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct MaskError : std::runtime_error {
  explicit MaskError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using Rng = std::mt19937_64;

// Uniform double in [lo, hi). Hand-rolled so results do not depend on the
// standard library's distribution implementation.
inline double uniform(Rng& rng, double lo, double hi) {
  double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

// Uniform integer in [0, n). n must be positive.
inline std::uint64_t uniform_int(Rng& rng, std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased for any n.
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

// Seed derivation: one run seed fans out into independent streams so that
// e.g. model init and batch order do not share state across commands.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return std::string(buf);
}

}  // namespace asrqa

#endif
