#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qrt/common.hpp"
#include "qrt/qcore.hpp"

namespace qrt::qtensor {

struct FloatTensor {
  std::vector<long> shape;
  std::vector<float> values;

  long numel() const {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
  }
};

// Integer-coded tensor with bit-packed payload. The byte layout is the
// normative checkpoint format: row-major codes, little-endian bytes,
// low bit-field first within a byte (two 4-bit codes per byte, low
// nibble first; four 2-bit codes per byte). Pad fields of a trailing
// partial byte are zero.
struct PackedTensor {
  std::vector<long> shape;
  int bits = 8;  // one of 2, 4, 8
  std::vector<std::uint8_t> codes;
  qcore::QuantParams params;

  long numel() const {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
  }
};

std::size_t packed_bytes(long numel, int bits);

PackedTensor pack(std::span<const int> codes, std::vector<long> shape,
                  const qcore::QuantParams& params);
std::vector<int> unpack(const PackedTensor& t);

// Convenience: quantize a real tensor and pack it in one step.
PackedTensor quantize_pack(std::span<const float> x, std::vector<long> shape,
                           const qcore::QuantParams& params, std::string_view name = "tensor");

std::vector<float> dequantize_tensor(const PackedTensor& t);

// Throws unless bits_w + bits_x + ceil(log2(k)) <= 31, the static
// worst-case bound for the 32-bit accumulator.
void check_accumulator(int bits_w, int bits_x, long k);

// out[i] = s_W * s_x * sum_k W_int[i,k] * (x_int[k] - z_x) + bias[i]
//
// W must be symmetric (zero_point 0); accumulation is exact in int32.
// W shape [m, k] row-major, x shape [k], bias length m (may be empty).
FloatTensor qgemv(const PackedTensor& w, const PackedTensor& x, std::span<const float> bias);

// Batched qgemv: X holds one input vector per row, shape [n, k];
// output shape [n, m], row n matching qgemv(w, X.row(n), bias).
FloatTensor qgemm(const PackedTensor& w, const PackedTensor& x, std::span<const float> bias);
FloatTensor qgemm(const PackedTensor& w, const FloatTensor& x, const qcore::QuantParams& x_params,
                  std::span<const float> bias);

// --- runtime kernels -------------------------------------------------------
//
// Hot-path form used by the LSTM stack: weights unpacked once into signed
// codes, activations as unsigned codes with an integer zero point.
// Multi-segment inputs cover concatenated tensors whose halves carry
// independent scales (bidirectional outputs feeding the next layer).

struct QWeights {
  long rows = 0;
  long cols = 0;
  std::vector<std::int8_t> codes;  // signed, row-major
  double scale = 0.0;
  int bits = 8;
};

QWeights unpack_weights(const PackedTensor& w);

struct SegmentView {
  std::span<const std::uint8_t> codes;
  double scale = 0.0;
  int zero = 0;
};

// Parallel (OpenMP over rows) and serial reference implementations;
// identical accumulation order per row, so outputs match bit-exactly.
void qgemv_run(const QWeights& w, std::span<const SegmentView> x, std::span<const float> bias,
               std::span<float> out);
void qgemv_run_serial(const QWeights& w, std::span<const SegmentView> x,
                      std::span<const float> bias, std::span<float> out);

// Real-arithmetic counterpart for the identity-quantizer mode.
void gemv_real(std::span<const float> w, long rows, long cols, std::span<const float> x,
               std::span<const float> bias, std::span<float> out);
void gemv_real_serial(std::span<const float> w, long rows, long cols, std::span<const float> x,
                      std::span<const float> bias, std::span<float> out);

}  // namespace qrt::qtensor
