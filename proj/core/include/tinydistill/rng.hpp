#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tinydistill/errors.hpp"

namespace tinydistill {

// Deterministic random source. The engine (mt19937_64) has a bit-exact
// sequence fixed by the standard; all floating-point transforms are coded
// here instead of using std::*_distribution, whose output is
// implementation-defined and would break run-to-run reproducibility across
// library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw DomainError("uniform_int: n must be positive");
    return static_cast<int>(gen_() % static_cast<std::uint64_t>(n));
  }

  // Standard normal via Box-Muller; draws are consumed in pairs.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Gamma(alpha, 1) via Marsaglia-Tsang squeeze; alpha < 1 is boosted with
  // the u^(1/alpha) scaling identity.
  double gamma(double alpha) {
    if (alpha <= 0.0) throw DomainError("gamma: alpha must be positive");
    if (alpha < 1.0) {
      double u = 0.0;
      while (u <= 0.0) u = uniform();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = 0.0;
      while (u <= 0.0) u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  // Dirichlet(concentration) over n symbols: normalized iid gammas.
  std::vector<double> dirichlet(int n, double concentration) {
    std::vector<double> p(static_cast<std::size_t>(n));
    double total = 0.0;
    for (auto& x : p) {
      x = gamma(concentration);
      total += x;
    }
    for (auto& x : p) x /= total;
    return p;
  }

  // Index draw from an explicit probability vector (cumulative scan). The
  // final bucket absorbs any rounding slack so the draw always lands.
  std::size_t categorical(std::span<const double> probs) {
    double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.empty() ? 0 : probs.size() - 1;
  }

  // Stream splitter: derive an independent seed from (seed, tag) without
  // advancing either. splitmix64 finalizer on the xor keeps streams
  // decorrelated for adjacent tags.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace tinydistill
