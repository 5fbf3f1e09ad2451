#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "qrt/common.hpp"

namespace qrt::qcore {

// Linear quantization of a real tensor onto an unsigned integer grid:
//
//   code = clamp(round(x / scale) + zero, 0, max_code)
//   x_q  = scale * (code - zero)
//
// Asymmetric mode uses all 2^bits codes over [lower, upper] with
// scale = (upper - lower) / (2^bits - 1) and zero = -lower / scale.
// Symmetric mode drops the most-negative code so negation stays closed:
// signed values live in [-(2^(bits-1)-1), +(2^(bits-1)-1)] with
// scale = upper / (2^(bits-1) - 1), stored offset by 2^(bits-1)-1.
//
// Rounding is half-away-from-zero everywhere. The zero point is kept
// real-valued in the struct; integer kernels use storage_zero(), the
// nearest-integer form, and the residual-bound tests cover the gap.
struct QuantParams {
  int bits = 8;
  double lower = 0.0;
  double upper = 0.0;
  bool symmetric = false;
  double scale = 0.0;
  double zero_point = 0.0;

  int max_code() const { return symmetric ? (1 << bits) - 2 : (1 << bits) - 1; }
  int storage_zero() const;
};

QuantParams symmetric_params(int bits, double bound);
QuantParams asymmetric_params(int bits, double lower, double upper);
void validate(const QuantParams& p);

// Boundary selection strategy for one tensor role.
enum class QuantizerKind { FIX, MAX, SAWB, PACT };

const char* kind_name(QuantizerKind k);
QuantizerKind kind_from_name(std::string_view name);

struct QuantizerSpec {
  QuantizerKind kind = QuantizerKind::MAX;
  int bits = 8;
  bool symmetric = false;
  std::optional<std::pair<double, double>> fixed_bounds;    // FIX only
  std::optional<std::pair<double, double>> learned_bounds;  // PACT only
};

// Throws on: FIX without fixed_bounds, PACT bounds malformed, bits < 2.
void validate_spec(const QuantizerSpec& spec, bool weight_role);

// Resolves a spec with static boundaries (FIX, or PACT with learned
// bounds present) to QuantParams. MAX/SAWB need data; see bounds_*.
QuantParams static_params(const QuantizerSpec& spec);

struct ErrorDecomposition {
  double clipping_mse = 0.0;
  double rounding_mse = 0.0;
  double total_mse = 0.0;
};

// --- core ops ------------------------------------------------------------

double round_half_away(double v);

// Scalar fake-quantization core shared by the tensor ops.
double fake_quantize_one(double x, const QuantParams& p);

std::vector<int> quantize_int(std::span<const float> x, const QuantParams& p,
                              std::string_view name = "tensor");
std::vector<float> dequantize(std::span<const int> codes, const QuantParams& p);
std::vector<float> fake_quantize(std::span<const float> x, const QuantParams& p,
                                 std::string_view name = "tensor");

// Straight-through estimator of d(fake_quantize)/d(x, lower, upper):
// upstream passes through where lower <= x <= upper, is zero outside;
// grad_upper / grad_lower collect upstream over the saturated elements,
// where the function is exactly linear in the boundary.
struct SteGradients {
  std::vector<float> grad_x;
  double grad_lower = 0.0;
  double grad_upper = 0.0;
};
SteGradients ste_gradients(std::span<const float> x, const QuantParams& p,
                           std::span<const float> upstream);

// MAX quantizer: boundaries at the distribution extremes. Zero clipping
// error on the calibration tensor by construction. Constant tensors fall
// back to a bound of max(|x|, 1e-8) to avoid a zero scale.
QuantParams bounds_max(std::span<const float> x, bool symmetric, int bits);

enum class SawbMode { oracle_grid, closed_form };

// SAWB: symmetric boundary approximating the MSE-optimal clipping point.
// oracle_grid sweeps a geometric grid of candidates descending from
// max|x| (the MAX boundary is always candidate 0, so the oracle never
// loses to MAX); closed_form evaluates
//   alpha = c1 * sqrt(E[x^2]) + c2 * E[|x|]
// with per-bit-width coefficients exposed as configuration.
QuantParams bounds_sawb(std::span<const float> x, int bits, SawbMode mode);

struct SawbCoeffs {
  double c1 = 0.0;
  double c2 = 0.0;
};
SawbCoeffs sawb_coefficients(int bits);
void set_sawb_coefficients(int bits, SawbCoeffs c);

// PACT boundary calibration: gradient descent of the quantization MSE on
// (lower, upper), initialized from bounds_max. The boundary gradient is
// the ste_gradients saturation term plus the scale-path term of the
// interior rounding error, (fq(x)-x)/(upper-lower) per element; without
// the interior term the gradient is identically zero at the MAX
// initialization and the bounds never move.
struct PactResult {
  QuantParams params;
  std::vector<double> mse_trajectory;
};
PactResult calibrate_pact(std::span<const float> x, int bits, int steps, double lr);

// Divergence (MSE exceeding 10x its initial value) aborts calibration.
class CalibrationDivergence : public Error {
 public:
  CalibrationDivergence(std::string detail, std::vector<double> trajectory)
      : Error(ErrorCode::numeric, std::move(detail)), trajectory(std::move(trajectory)) {}
  std::vector<double> trajectory;
};

// Splits the mean squared fake-quantization error into the part from
// elements the clamp saturated (clipping) and the interior rounding
// residual. The two sum to the total exactly.
ErrorDecomposition error_decomposition(std::span<const float> x, const QuantParams& p);

}  // namespace qrt::qcore
