#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace ews {

// Hand-rolled xoshiro256++ so that streams are bit-reproducible across
// platforms (std:: distributions are not). All randomness in the artifact
// funnels through labeled substreams derived from one root seed, so a
// component can be toggled without perturbing the draws of the others.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) { init(seed); }

  // Derives an independent stream from (seed, label, index).
  Rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char ch : label) {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ull;
    }
    init(splitmix(seed ^ splitmix(h + 0x9e3779b97f4a7c15ull * (index + 1))));
  }

  std::uint64_t u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(u64() % static_cast<std::uint64_t>(n));
  }

  // Standard normal via Box-Muller (no cached second value, draws stay
  // aligned when interleaved with other calls).
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Poisson sample; Knuth for small lambda, normal approximation above.
  int poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda > 64.0) {
      double v = lambda + std::sqrt(lambda) * normal();
      return v < 0.0 ? 0 : static_cast<int>(v + 0.5);
    }
    double l = std::exp(-lambda), p = 1.0;
    int k = 0;
    do {
      ++k;
      p *= uniform();
    } while (p > l);
    return k - 1;
  }

  // k distinct indices from [0, n), ascending.
  std::vector<int> sample_k_of_n(int k, int n) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + uniform_int(n - i);
      std::swap(pool[static_cast<std::size_t>(i)],
                pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(
          u64() % static_cast<std::uint64_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  void init(std::uint64_t seed) {
    for (auto& s : s_) {
      seed = splitmix(seed);
      s = seed;
    }
  }

  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
};

}  // namespace ews
