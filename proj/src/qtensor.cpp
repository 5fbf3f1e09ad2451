#include "qrt/qtensor.hpp"

#include <algorithm>
#include <cmath>

namespace qrt::qtensor {

namespace {

long checked_numel(const std::vector<long>& shape) {
  long n = 1;
  for (long d : shape) {
    require(d >= 0, ErrorCode::validate, "negative dimension");
    n *= d;
  }
  return n;
}

int codes_per_byte(int bits) {
  switch (bits) {
    case 2: return 4;
    case 4: return 2;
    case 8: return 1;
    default: fail(ErrorCode::validate, "packed storage supports 2, 4, or 8 bits");
  }
}

}  // namespace

std::size_t packed_bytes(long numel, int bits) {
  int per = codes_per_byte(bits);
  return static_cast<std::size_t>((numel + per - 1) / per);
}

PackedTensor pack(std::span<const int> codes, std::vector<long> shape,
                  const qcore::QuantParams& params) {
  qcore::validate(params);
  long n = checked_numel(shape);
  require(n == static_cast<long>(codes.size()), ErrorCode::validate,
          "pack: shape does not match code count");
  int max_code = params.max_code();
  for (std::size_t i = 0; i < codes.size(); ++i)
    require(codes[i] >= 0 && codes[i] <= max_code, ErrorCode::validate,
            "pack: code out of range at index " + std::to_string(i));

  PackedTensor t;
  t.shape = std::move(shape);
  t.bits = params.bits;
  t.params = params;
  t.codes.assign(packed_bytes(n, t.bits), 0);
  int per = codes_per_byte(t.bits);
  int width = 8 / per;
  for (long i = 0; i < n; ++i) {
    long byte = i / per;
    int slot = static_cast<int>(i % per);
    t.codes[static_cast<std::size_t>(byte)] |=
        static_cast<std::uint8_t>(codes[static_cast<std::size_t>(i)] << (slot * width));
  }
  return t;
}

std::vector<int> unpack(const PackedTensor& t) {
  long n = t.numel();
  require(t.codes.size() == packed_bytes(n, t.bits), ErrorCode::format,
          "unpack: payload length inconsistent with shape");
  int per = codes_per_byte(t.bits);
  int width = 8 / per;
  int mask = (1 << width) - 1;
  std::vector<int> out(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    long byte = i / per;
    int slot = static_cast<int>(i % per);
    out[static_cast<std::size_t>(i)] = (t.codes[static_cast<std::size_t>(byte)] >> (slot * width)) & mask;
  }
  return out;
}

PackedTensor quantize_pack(std::span<const float> x, std::vector<long> shape,
                           const qcore::QuantParams& params, std::string_view name) {
  auto codes = qcore::quantize_int(x, params, name);
  return pack(codes, std::move(shape), params);
}

std::vector<float> dequantize_tensor(const PackedTensor& t) {
  auto codes = unpack(t);
  return qcore::dequantize(codes, t.params);
}

void check_accumulator(int bits_w, int bits_x, long k) {
  require(k >= 0, ErrorCode::validate, "negative inner dimension");
  int logk = 0;
  while ((1L << logk) < k) ++logk;
  require(bits_w + bits_x + logk <= 31, ErrorCode::validate,
          "32-bit accumulator can overflow: bits_w=" + std::to_string(bits_w) +
              " bits_x=" + std::to_string(bits_x) + " k=" + std::to_string(k));
}

QWeights unpack_weights(const PackedTensor& w) {
  require(w.shape.size() == 2, ErrorCode::validate, "weight tensor must be 2-D");
  require(w.params.symmetric, ErrorCode::validate, "MAC weights must use a symmetric quantizer");
  QWeights q;
  q.rows = w.shape[0];
  q.cols = w.shape[1];
  q.scale = w.params.scale;
  q.bits = w.bits;
  auto codes = unpack(w);
  int zero = w.params.storage_zero();
  q.codes.resize(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i)
    q.codes[i] = static_cast<std::int8_t>(codes[i] - zero);
  return q;
}

namespace {

inline void qgemv_rows(const QWeights& w, std::span<const SegmentView> x,
                       std::span<const float> bias, std::span<float> out, long row_begin,
                       long row_end) {
  for (long i = row_begin; i < row_end; ++i) {
    double acc = 0.0;
    const std::int8_t* wrow = w.codes.data() + i * w.cols;
    long col = 0;
    for (const SegmentView& seg : x) {
      std::int32_t seg_acc = 0;
      const std::uint8_t* xc = seg.codes.data();
      long len = static_cast<long>(seg.codes.size());
      for (long k = 0; k < len; ++k)
        seg_acc += static_cast<std::int32_t>(wrow[col + k]) *
                   (static_cast<std::int32_t>(xc[k]) - seg.zero);
      acc += w.scale * seg.scale * static_cast<double>(seg_acc);
      col += len;
    }
    if (!bias.empty()) acc += static_cast<double>(bias[static_cast<std::size_t>(i)]);
    out[static_cast<std::size_t>(i)] = static_cast<float>(acc);
  }
}

void check_qgemv_args(const QWeights& w, std::span<const SegmentView> x,
                      std::span<const float> bias, std::span<float> out) {
  long total = 0;
  for (const SegmentView& seg : x) {
    total += static_cast<long>(seg.codes.size());
    check_accumulator(w.bits, 8, static_cast<long>(seg.codes.size()));
  }
  require(total == w.cols, ErrorCode::validate, "qgemv: inner dimensions disagree");
  require(bias.empty() || static_cast<long>(bias.size()) == w.rows, ErrorCode::validate,
          "qgemv: bias length mismatch");
  require(static_cast<long>(out.size()) == w.rows, ErrorCode::validate,
          "qgemv: output length mismatch");
}

}  // namespace

void qgemv_run(const QWeights& w, std::span<const SegmentView> x, std::span<const float> bias,
               std::span<float> out) {
  check_qgemv_args(w, x, bias, out);
#pragma omp parallel for schedule(static) if (w.rows * w.cols > 16384)
  for (long i = 0; i < w.rows; ++i) qgemv_rows(w, x, bias, out, i, i + 1);
}

void qgemv_run_serial(const QWeights& w, std::span<const SegmentView> x,
                      std::span<const float> bias, std::span<float> out) {
  check_qgemv_args(w, x, bias, out);
  qgemv_rows(w, x, bias, out, 0, w.rows);
}

void gemv_real(std::span<const float> w, long rows, long cols, std::span<const float> x,
               std::span<const float> bias, std::span<float> out) {
  require(static_cast<long>(x.size()) == cols, ErrorCode::validate, "gemv: inner dim mismatch");
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (long i = 0; i < rows; ++i) {
    double acc = bias.empty() ? 0.0 : static_cast<double>(bias[static_cast<std::size_t>(i)]);
    const float* wrow = w.data() + i * cols;
    for (long k = 0; k < cols; ++k)
      acc += static_cast<double>(wrow[k]) * static_cast<double>(x[static_cast<std::size_t>(k)]);
    out[static_cast<std::size_t>(i)] = static_cast<float>(acc);
  }
}

void gemv_real_serial(std::span<const float> w, long rows, long cols, std::span<const float> x,
                      std::span<const float> bias, std::span<float> out) {
  require(static_cast<long>(x.size()) == cols, ErrorCode::validate, "gemv: inner dim mismatch");
  for (long i = 0; i < rows; ++i) {
    double acc = bias.empty() ? 0.0 : static_cast<double>(bias[static_cast<std::size_t>(i)]);
    const float* wrow = w.data() + i * cols;
    for (long k = 0; k < cols; ++k)
      acc += static_cast<double>(wrow[k]) * static_cast<double>(x[static_cast<std::size_t>(k)]);
    out[static_cast<std::size_t>(i)] = static_cast<float>(acc);
  }
}

namespace {

std::vector<std::uint8_t> codes_u8(const PackedTensor& t) {
  auto codes = unpack(t);
  std::vector<std::uint8_t> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = static_cast<std::uint8_t>(codes[i]);
  return out;
}

}  // namespace

FloatTensor qgemv(const PackedTensor& w, const PackedTensor& x, std::span<const float> bias) {
  require(w.shape.size() == 2, ErrorCode::validate, "qgemv: W must be 2-D");
  require(x.shape.size() == 1, ErrorCode::validate, "qgemv: x must be 1-D");
  require(w.shape[1] == x.shape[0], ErrorCode::validate, "qgemv: inner dimensions disagree");
  require(x.params.storage_zero() >= 0 && x.params.storage_zero() <= (1 << x.bits) - 1,
          ErrorCode::validate, "qgemv: zero point outside the code range");
  check_accumulator(w.bits, x.bits, w.shape[1]);

  QWeights qw = unpack_weights(w);
  auto xc = codes_u8(x);
  SegmentView seg{std::span<const std::uint8_t>(xc), x.params.scale, x.params.storage_zero()};

  FloatTensor out;
  out.shape = {w.shape[0]};
  out.values.resize(static_cast<std::size_t>(w.shape[0]));
  qgemv_run(qw, std::span<const SegmentView>(&seg, 1), bias, out.values);
  return out;
}

FloatTensor qgemm(const PackedTensor& w, const PackedTensor& x, std::span<const float> bias) {
  require(w.shape.size() == 2, ErrorCode::validate, "qgemm: W must be 2-D");
  require(x.shape.size() == 2, ErrorCode::validate, "qgemm: X must be 2-D");
  require(w.shape[1] == x.shape[1], ErrorCode::validate, "qgemm: inner dimensions disagree");
  check_accumulator(w.bits, x.bits, w.shape[1]);

  long n = x.shape[0];
  long m = w.shape[0];
  long k = w.shape[1];
  QWeights qw = unpack_weights(w);
  auto xc = codes_u8(x);

  FloatTensor out;
  out.shape = {n, m};
  out.values.resize(static_cast<std::size_t>(n * m));
#pragma omp parallel for schedule(static) if (n * m * k > 16384)
  for (long r = 0; r < n; ++r) {
    SegmentView seg{std::span<const std::uint8_t>(xc.data() + r * k, static_cast<std::size_t>(k)),
                    x.params.scale, x.params.storage_zero()};
    std::span<float> row(out.values.data() + r * m, static_cast<std::size_t>(m));
    qgemv_run_serial(qw, std::span<const SegmentView>(&seg, 1), bias, row);
  }
  return out;
}

FloatTensor qgemm(const PackedTensor& w, const FloatTensor& x, const qcore::QuantParams& x_params,
                  std::span<const float> bias) {
  require(x.shape.size() == 2, ErrorCode::validate, "qgemm: X must be 2-D");
  auto codes = qcore::quantize_int(x.values, x_params, "qgemm input");
  PackedTensor px = pack(codes, x.shape, x_params);
  return qgemm(w, px, bias);
}

}  // namespace qrt::qtensor
