#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cdp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// Caller passed something malformed (wrong dimension, out-of-range index, ...).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Operation is not valid in the object's current state (empty buffer, stale region, ...).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Unknown names or inconsistent settings in a configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double standard_normal(Rng& rng) { return std::normal_distribution<double>{0.0, 1.0}(rng); }
inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>{0.0, 1.0}(rng); }
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>{0, n - 1}(rng);
}

inline std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }
inline Vec from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// FNV-1a, stable across platforms; used for config hashes and seed derivation.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  return fnv1a(stream, fnv1a(std::to_string(seed)));
}

}  // namespace cdp
