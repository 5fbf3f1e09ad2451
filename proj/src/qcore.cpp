#include "qrt/qcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace qrt::qcore {

namespace {

constexpr double kMinBound = 1e-8;

double clamp(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace

const char* kind_name(QuantizerKind k) {
  switch (k) {
    case QuantizerKind::FIX: return "FIX";
    case QuantizerKind::MAX: return "MAX";
    case QuantizerKind::SAWB: return "SAWB";
    case QuantizerKind::PACT: return "PACT";
  }
  return "?";
}

QuantizerKind kind_from_name(std::string_view name) {
  if (name == "FIX") return QuantizerKind::FIX;
  if (name == "MAX") return QuantizerKind::MAX;
  if (name == "SAWB") return QuantizerKind::SAWB;
  if (name == "PACT") return QuantizerKind::PACT;
  fail(ErrorCode::config, "unknown quantizer kind '" + std::string(name) + "'");
}

double round_half_away(double v) { return std::round(v); }

int QuantParams::storage_zero() const {
  if (symmetric) return (1 << (bits - 1)) - 1;
  return static_cast<int>(round_half_away(zero_point));
}

QuantParams symmetric_params(int bits, double bound) {
  require(bits >= 2, ErrorCode::validate, "quantizer needs at least 2 bits");
  require(bound > 0.0 && std::isfinite(bound), ErrorCode::validate,
          "symmetric bound must be positive and finite");
  QuantParams p;
  p.bits = bits;
  p.lower = -bound;
  p.upper = bound;
  p.symmetric = true;
  p.scale = bound / static_cast<double>((1 << (bits - 1)) - 1);
  p.zero_point = 0.0;
  return p;
}

QuantParams asymmetric_params(int bits, double lower, double upper) {
  require(bits >= 2, ErrorCode::validate, "quantizer needs at least 2 bits");
  require(std::isfinite(lower) && std::isfinite(upper) && lower < upper, ErrorCode::validate,
          "asymmetric bounds must be finite with lower < upper");
  QuantParams p;
  p.bits = bits;
  p.lower = lower;
  p.upper = upper;
  p.symmetric = false;
  p.scale = (upper - lower) / static_cast<double>((1 << bits) - 1);
  p.zero_point = -lower / p.scale;
  return p;
}

void validate(const QuantParams& p) {
  require(p.bits >= 2 && p.bits <= 16, ErrorCode::validate, "bits out of range");
  require(std::isfinite(p.lower) && std::isfinite(p.upper) && p.lower < p.upper,
          ErrorCode::validate, "bounds must satisfy lower < upper");
  require(p.scale > 0.0 && std::isfinite(p.scale), ErrorCode::validate, "scale must be positive");
  if (p.symmetric) {
    require(std::fabs(p.lower + p.upper) <= 1e-12 * std::fabs(p.upper), ErrorCode::validate,
            "symmetric params require lower == -upper");
    require(p.zero_point == 0.0, ErrorCode::validate, "symmetric params require zero_point == 0");
  }
}

void validate_spec(const QuantizerSpec& spec, bool weight_role) {
  require(spec.bits >= 2, ErrorCode::validate, "quantizer needs at least 2 bits");
  if (weight_role)
    require(spec.symmetric, ErrorCode::validate, "weight quantizers must be symmetric");
  if (spec.kind == QuantizerKind::FIX) {
    require(spec.fixed_bounds.has_value(), ErrorCode::validate, "FIX quantizer needs fixed_bounds");
    auto [lo, hi] = *spec.fixed_bounds;
    require(lo < hi, ErrorCode::validate, "FIX bounds must satisfy lower < upper");
    if (spec.symmetric)
      require(std::fabs(lo + hi) <= 1e-12 * std::fabs(hi), ErrorCode::validate,
              "symmetric FIX bounds must be +-alpha");
  } else {
    require(!spec.fixed_bounds.has_value(), ErrorCode::validate,
            "fixed_bounds only valid for FIX quantizers");
  }
  if (spec.learned_bounds) {
    require(spec.kind == QuantizerKind::PACT, ErrorCode::validate,
            "learned_bounds only valid for PACT quantizers");
    require(spec.learned_bounds->first < spec.learned_bounds->second, ErrorCode::validate,
            "PACT bounds must satisfy lower < upper");
  }
}

QuantParams static_params(const QuantizerSpec& spec) {
  switch (spec.kind) {
    case QuantizerKind::FIX: {
      require(spec.fixed_bounds.has_value(), ErrorCode::validate, "FIX quantizer needs fixed_bounds");
      auto [lo, hi] = *spec.fixed_bounds;
      if (spec.symmetric) return symmetric_params(spec.bits, hi);
      return asymmetric_params(spec.bits, lo, hi);
    }
    case QuantizerKind::PACT: {
      require(spec.learned_bounds.has_value(), ErrorCode::validate,
              "PACT quantizer used before boundary calibration");
      auto [lo, hi] = *spec.learned_bounds;
      if (spec.symmetric) return symmetric_params(spec.bits, hi);
      return asymmetric_params(spec.bits, lo, hi);
    }
    default:
      fail(ErrorCode::validate,
           std::string(kind_name(spec.kind)) + " quantizer has no static boundaries");
  }
}

namespace {

int quantize_code(double x, const QuantParams& p) {
  int zero = p.storage_zero();
  double c = round_half_away(x / p.scale) + static_cast<double>(zero);
  return static_cast<int>(clamp(c, 0.0, static_cast<double>(p.max_code())));
}

}  // namespace

double fake_quantize_one(double x, const QuantParams& p) {
  int zero = p.storage_zero();
  return p.scale * static_cast<double>(quantize_code(x, p) - zero);
}

std::vector<int> quantize_int(std::span<const float> x, const QuantParams& p,
                              std::string_view name) {
  validate(p);
  std::vector<int> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]))
      fail(ErrorCode::numeric, "non-finite value in tensor '" + std::string(name) + "' at index " +
                                   std::to_string(i));
    out[i] = quantize_code(x[i], p);
  }
  return out;
}

std::vector<float> dequantize(std::span<const int> codes, const QuantParams& p) {
  validate(p);
  int zero = p.storage_zero();
  int max_code = p.max_code();
  std::vector<float> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < 0 || codes[i] > max_code)
      fail(ErrorCode::validate, "code " + std::to_string(codes[i]) + " out of range [0, " +
                                    std::to_string(max_code) + "] at index " + std::to_string(i));
    out[i] = static_cast<float>(p.scale * static_cast<double>(codes[i] - zero));
  }
  return out;
}

std::vector<float> fake_quantize(std::span<const float> x, const QuantParams& p,
                                 std::string_view name) {
  validate(p);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]))
      fail(ErrorCode::numeric, "non-finite value in tensor '" + std::string(name) + "' at index " +
                                   std::to_string(i));
    out[i] = static_cast<float>(fake_quantize_one(x[i], p));
  }
  return out;
}

SteGradients ste_gradients(std::span<const float> x, const QuantParams& p,
                           std::span<const float> upstream) {
  validate(p);
  require(x.size() == upstream.size(), ErrorCode::validate,
          "ste_gradients: upstream shape does not match x");
  SteGradients g;
  g.grad_x.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > p.upper) {
      g.grad_x[i] = 0.0f;
      g.grad_upper += upstream[i];
    } else if (x[i] < p.lower) {
      g.grad_x[i] = 0.0f;
      g.grad_lower += upstream[i];
    } else {
      g.grad_x[i] = upstream[i];
    }
  }
  return g;
}

QuantParams bounds_max(std::span<const float> x, bool symmetric, int bits) {
  require(!x.empty(), ErrorCode::validate, "bounds_max: empty tensor");
  require(all_finite(x), ErrorCode::numeric, "bounds_max: non-finite input");
  if (symmetric) {
    double m = 0.0;
    for (float v : x) m = std::max(m, static_cast<double>(std::fabs(v)));
    return symmetric_params(bits, std::max(m, kMinBound));
  }
  double lo = x[0], hi = x[0];
  for (float v : x) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  // Asymmetric ranges always span zero so the zero point stays inside the
  // code range, which the integer MAC kernels assume.
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  if (hi - lo < kMinBound) hi = lo + kMinBound;
  return asymmetric_params(bits, lo, hi);
}

namespace {

double mse_against(std::span<const float> x, const QuantParams& p) {
  double acc = 0.0;
  for (float v : x) {
    double d = static_cast<double>(v) - fake_quantize_one(v, p);
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

constexpr int kSawbGridSize = 256;
// Candidates span [max|x|/64, max|x|]; 64 covers optima even for tensors
// whose extreme outliers sit ~20 sigma out.
constexpr double kSawbGridSpan = 64.0;

SawbCoeffs g_sawb_table[9] = {};
bool g_sawb_set[9] = {};

}  // namespace

QuantParams bounds_sawb(std::span<const float> x, int bits, SawbMode mode) {
  require(bits == 2 || bits == 4 || bits == 8, ErrorCode::validate,
          "bounds_sawb supports 2, 4, or 8 bits");
  require(!x.empty(), ErrorCode::validate, "bounds_sawb: empty tensor");
  require(all_finite(x), ErrorCode::numeric, "bounds_sawb: non-finite input");

  double max_abs = 0.0;
  for (float v : x) max_abs = std::max(max_abs, static_cast<double>(std::fabs(v)));
  max_abs = std::max(max_abs, kMinBound);

  if (mode == SawbMode::closed_form) {
    double sum_sq = 0.0, sum_abs = 0.0;
    for (float v : x) {
      sum_sq += static_cast<double>(v) * static_cast<double>(v);
      sum_abs += std::fabs(static_cast<double>(v));
    }
    double n = static_cast<double>(x.size());
    SawbCoeffs c = sawb_coefficients(bits);
    double alpha = c.c1 * std::sqrt(sum_sq / n) + c.c2 * (sum_abs / n);
    alpha = clamp(alpha, kMinBound, max_abs);
    return symmetric_params(bits, alpha);
  }

  // Geometric candidate grid descending from max|x|. Index 0 is the MAX
  // boundary itself, so the selected minimizer can never lose to MAX.
  double ratio = std::pow(kSawbGridSpan, -1.0 / static_cast<double>(kSawbGridSize - 1));
  std::vector<double> mse(kSawbGridSize);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < kSawbGridSize; ++i) {
    double alpha = max_abs * std::pow(ratio, static_cast<double>(i));
    mse[i] = mse_against(x, symmetric_params(bits, alpha));
  }
  int best = 0;
  for (int i = 1; i < kSawbGridSize; ++i)
    if (mse[i] < mse[best]) best = i;
  return symmetric_params(bits, max_abs * std::pow(ratio, static_cast<double>(best)));
}

SawbCoeffs sawb_coefficients(int bits) {
  require(bits >= 2 && bits <= 8, ErrorCode::validate, "sawb_coefficients: bits out of range");
  if (g_sawb_set[bits]) return g_sawb_table[bits];
  // Defaults refit against the oracle on standard Gaussian and Laplace
  // samples (the two-point fit makes the closed form exact on both).
  switch (bits) {
    case 2: return {3.00688, -2.23918};
    case 4: return {10.64409, -10.20555};
    case 8: return {29.83558, -32.44316};
    default:
      fail(ErrorCode::config, "no SAWB coefficients configured for " + std::to_string(bits) +
                                  " bits; call set_sawb_coefficients");
  }
}

void set_sawb_coefficients(int bits, SawbCoeffs c) {
  require(bits >= 2 && bits <= 8, ErrorCode::validate, "set_sawb_coefficients: bits out of range");
  g_sawb_table[bits] = c;
  g_sawb_set[bits] = true;
}

PactResult calibrate_pact(std::span<const float> x, int bits, int steps, double lr) {
  require(steps >= 1, ErrorCode::validate, "calibrate_pact: steps must be >= 1");
  require(lr > 0.0, ErrorCode::validate, "calibrate_pact: lr must be positive");
  require(x.size() >= 2, ErrorCode::validate, "calibrate_pact: need at least 2 samples");

  QuantParams p = bounds_max(x, /*symmetric=*/false, bits);
  double lower = p.lower, upper = p.upper;
  double n = static_cast<double>(x.size());
  double min_gap = std::max(1e-6 * (upper - lower), kMinBound);

  std::vector<double> trajectory;
  trajectory.reserve(static_cast<std::size_t>(steps) + 1);
  double initial = mse_against(x, p);
  trajectory.push_back(initial);
  double best = initial;
  double best_lower = lower, best_upper = upper;

  std::vector<float> upstream(x.size());
  for (int step = 0; step < steps; ++step) {
    // upstream = dMSE/dfq; the saturation sums come from ste_gradients,
    // the interior scale-path term is accumulated alongside.
    double interior = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double fq = fake_quantize_one(x[i], p);
      double u = 2.0 * (fq - x[i]) / n;
      upstream[i] = static_cast<float>(u);
      if (x[i] >= p.lower && x[i] <= p.upper) interior += u * (fq - x[i]) / (upper - lower);
    }
    SteGradients g = ste_gradients(x, p, upstream);
    double g_upper = g.grad_upper + interior;
    double g_lower = g.grad_lower - interior;

    upper -= lr * g_upper;
    lower -= lr * g_lower;
    if (upper - lower < min_gap) upper = lower + min_gap;

    p = asymmetric_params(bits, lower, upper);
    double mse = mse_against(x, p);
    trajectory.push_back(mse);
    if (mse > 10.0 * initial)
      throw CalibrationDivergence(
          "PACT calibration diverged: MSE " + std::to_string(mse) + " vs initial " +
              std::to_string(initial),
          std::move(trajectory));
    if (mse < best) {
      best = mse;
      best_lower = lower;
      best_upper = upper;
    }
  }

  // Report the best iterate; plain last-step bounds can sit on an uphill
  // overshoot for large lr.
  PactResult result;
  result.params = asymmetric_params(bits, best_lower, best_upper);
  result.mse_trajectory = std::move(trajectory);
  return result;
}

ErrorDecomposition error_decomposition(std::span<const float> x, const QuantParams& p) {
  validate(p);
  require(!x.empty(), ErrorCode::validate, "error_decomposition: empty tensor");
  int zero = p.storage_zero();
  int max_code = p.max_code();
  double clip_acc = 0.0, round_acc = 0.0;
  for (float v : x) {
    double raw = round_half_away(v / p.scale) + static_cast<double>(zero);
    bool clipped = raw < 0.0 || raw > static_cast<double>(max_code);
    double d = static_cast<double>(v) - fake_quantize_one(v, p);
    (clipped ? clip_acc : round_acc) += d * d;
  }
  double n = static_cast<double>(x.size());
  ErrorDecomposition e;
  e.clipping_mse = clip_acc / n;
  e.rounding_mse = round_acc / n;
  e.total_mse = e.clipping_mse + e.rounding_mse;
  return e;
}

}  // namespace qrt::qcore
