#pragma once

#include <cmath>
#include <vector>

#include "qrt/qcore.hpp"
#include "qrt/rng.hpp"

namespace qrt::testutil {

inline bool close_rel(double a, double b, double tol) {
  double scale = std::max({std::fabs(a), std::fabs(b), 1e-12});
  return std::fabs(a - b) <= tol * scale;
}

// relative with a unit floor, for float32 pipelines hitting near-zero values
inline bool close(double a, double b, double tol) {
  return std::fabs(a - b) <= tol * std::max({std::fabs(a), std::fabs(b), 1.0});
}

// Random valid QuantParams, half symmetric half asymmetric.
inline qcore::QuantParams random_params(Rng& rng, int bits) {
  if (rng.uniform() < 0.5) {
    double bound = rng.uniform(0.05, 8.0);
    return qcore::symmetric_params(bits, bound);
  }
  double lo = rng.uniform(-8.0, 2.0);
  double hi = lo + rng.uniform(0.1, 10.0);
  return qcore::asymmetric_params(bits, lo, hi);
}

}  // namespace qrt::testutil
