#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace qrt {

// Seeded generator with explicit value mappings. std::*_distribution is
// implementation-defined, which breaks bit-exact regression tests, so all
// mappings from raw engine output to floats are spelled out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

  std::uint32_t next_u32() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return (static_cast<double>(next_u32()) + 0.5) * (1.0 / 4294967296.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint32_t uniform_int(std::uint32_t n) { return next_u32() % n; }

  // Box-Muller; one value per call, pair cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Laplace(0, b) via inverse CDF.
  double laplace(double b) {
    double u = uniform() - 0.5;
    double s = u < 0 ? -1.0 : 1.0;
    return -b * s * std::log(1.0 - 2.0 * std::fabs(u));
  }

  std::vector<float> uniform_vec(std::size_t n, double lo, double hi) {
    std::vector<float> out(n);
    for (auto& v : out) v = static_cast<float>(uniform(lo, hi));
    return out;
  }

  std::vector<float> gaussian_vec(std::size_t n, double sigma = 1.0) {
    std::vector<float> out(n);
    for (auto& v : out) v = static_cast<float>(sigma * gaussian());
    return out;
  }

  std::vector<float> laplace_vec(std::size_t n, double b = 1.0) {
    std::vector<float> out(n);
    for (auto& v : out) v = static_cast<float>(laplace(b));
    return out;
  }

 private:
  std::mt19937 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace qrt
