#include <doctest.h>

#include "qrt/qtensor.hpp"
#include "qrt/rng.hpp"
#include "test_util.hpp"

using namespace qrt;
using namespace qrt::qtensor;

namespace {

qcore::QuantParams sym4() { return qcore::symmetric_params(4, 1.0); }

}  // namespace

TEST_CASE("pack: low nibble first, zero pad nibble") {
  int codes[] = {1, 2};
  auto t = pack(codes, {2}, sym4());
  REQUIRE(t.codes.size() == 1);
  CHECK(t.codes[0] == 0x21);

  int odd[] = {5, 9, 14};
  auto t3 = pack(odd, {3}, sym4());
  REQUIRE(t3.codes.size() == 2);
  CHECK(t3.codes[0] == 0x95);
  CHECK((t3.codes[1] >> 4) == 0);
  CHECK((t3.codes[1] & 0xF) == 14);

  auto empty = pack(std::span<const int>{}, {0}, sym4());
  CHECK(empty.codes.empty());

  int bad[] = {15};  // symmetric 4-bit max code is 14
  CHECK_THROWS_AS((void)pack(bad, {1}, sym4()), Error);
}

TEST_CASE("unpack inverts pack over random code tensors") {
  Rng rng(41);
  for (int bits : {2, 4, 8}) {
    for (int rep = 0; rep < 20; ++rep) {
      long n = static_cast<long>(rng.uniform_int(40));
      auto p = bits == 2 ? qcore::symmetric_params(2, 1.0)
                         : (bits == 4 ? sym4() : qcore::asymmetric_params(8, -2.0, 3.0));
      std::vector<int> codes(static_cast<std::size_t>(n));
      for (auto& c : codes) c = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(p.max_code() + 1)));
      auto t = pack(codes, {n}, p);
      CHECK(t.codes.size() == packed_bytes(n, bits));
      CHECK(unpack(t) == codes);
    }
  }
}

TEST_CASE("int4 payload is exactly ceil(n/2) bytes") {
  CHECK(packed_bytes(10, 4) == 5);
  CHECK(packed_bytes(11, 4) == 6);
  CHECK(packed_bytes(8, 2) == 2);
  CHECK(packed_bytes(3, 8) == 3);
}

TEST_CASE("qgemv matches the hand-computed MAC") {
  // W_int=[[1,2]], s_W=0.5; x_int=[2,4], s_x=0.25, z_x=0; bias=[0] -> 1.25
  qcore::QuantParams wp = qcore::symmetric_params(4, 0.5 * 7);  // scale 0.5
  CHECK(wp.scale == doctest::Approx(0.5));
  int wzero = wp.storage_zero();
  int wcodes[] = {1 + wzero, 2 + wzero};
  auto w = pack(wcodes, {1, 2}, wp);

  qcore::QuantParams xp = qcore::asymmetric_params(4, 0.0, 0.25 * 15);  // scale 0.25, zero 0
  CHECK(xp.scale == doctest::Approx(0.25));
  CHECK(xp.storage_zero() == 0);
  int xcodes[] = {2, 4};
  auto x = pack(xcodes, {2}, xp);

  float bias[] = {0.0f};
  auto out = qgemv(w, x, bias);
  REQUIRE(out.values.size() == 1);
  CHECK(out.values[0] == doctest::Approx(1.25).epsilon(1e-12));
}

TEST_CASE("qgemv with a zero weight tensor returns the bias") {
  auto wp = sym4();
  std::vector<int> wcodes(6, wp.storage_zero());
  auto w = pack(wcodes, {3, 2}, wp);
  auto xp = qcore::asymmetric_params(4, -1.0, 1.0);
  int xcodes[] = {3, 11};
  auto x = pack(xcodes, {2}, xp);
  float bias[] = {0.5f, -1.5f, 2.0f};
  auto out = qgemv(w, x, bias);
  CHECK(out.values[0] == 0.5f);
  CHECK(out.values[1] == -1.5f);
  CHECK(out.values[2] == 2.0f);
}

TEST_CASE("qgemv equals the real-arithmetic product of dequantized operands") {
  Rng rng(43);
  for (int rep = 0; rep < 50; ++rep) {
    int bits = rep % 2 == 0 ? 4 : 8;
    long m = 1 + static_cast<long>(rng.uniform_int(12));
    long k = 1 + static_cast<long>(rng.uniform_int(48));

    auto wdata = rng.gaussian_vec(static_cast<std::size_t>(m * k));
    auto wp = qcore::bounds_max(wdata, true, bits);
    auto w = quantize_pack(wdata, {m, k}, wp);

    auto xdata = rng.gaussian_vec(static_cast<std::size_t>(k));
    auto xp = qcore::bounds_max(xdata, false, bits);
    auto x = quantize_pack(xdata, {k}, xp);

    auto bias = rng.uniform_vec(static_cast<std::size_t>(m), -1.0, 1.0);

    auto out = qgemv(w, x, bias);

    auto wd = dequantize_tensor(w);
    auto xd = dequantize_tensor(x);
    for (long i = 0; i < m; ++i) {
      double acc = bias[static_cast<std::size_t>(i)];
      for (long c = 0; c < k; ++c)
        acc += static_cast<double>(wd[static_cast<std::size_t>(i * k + c)]) *
               static_cast<double>(xd[static_cast<std::size_t>(c)]);
      CHECK(testutil::close_rel(out.values[static_cast<std::size_t>(i)], acc, 1e-5));
    }
  }
}

TEST_CASE("qgemm columns match qgemv") {
  Rng rng(47);
  long m = 5, k = 16, n = 7;
  auto wdata = rng.gaussian_vec(static_cast<std::size_t>(m * k));
  auto w = quantize_pack(wdata, {m, k}, qcore::bounds_max(wdata, true, 4));
  auto xdata = rng.gaussian_vec(static_cast<std::size_t>(n * k));
  auto xp = qcore::bounds_max(xdata, false, 4);
  auto x = quantize_pack(xdata, {n, k}, xp);
  auto bias = rng.uniform_vec(static_cast<std::size_t>(m), -0.5, 0.5);

  auto full = qgemm(w, x, bias);
  REQUIRE(full.shape == std::vector<long>{n, m});

  auto all_codes = unpack(x);
  for (long r = 0; r < n; ++r) {
    std::vector<int> col(all_codes.begin() + r * k, all_codes.begin() + (r + 1) * k);
    auto xr = pack(col, {k}, xp);
    auto one = qgemv(w, xr, bias);
    for (long i = 0; i < m; ++i)
      CHECK(full.values[static_cast<std::size_t>(r * m + i)] ==
            one.values[static_cast<std::size_t>(i)]);
  }

  // batch of one is identical to qgemv; empty batch yields empty output
  auto x1 = pack(std::vector<int>(all_codes.begin(), all_codes.begin() + k), {1, k}, xp);
  auto g1 = qgemm(w, x1, bias);
  auto v1 = qgemv(w, pack(std::vector<int>(all_codes.begin(), all_codes.begin() + k), {k}, xp), bias);
  CHECK(g1.values == v1.values);

  auto x0 = pack(std::span<const int>{}, {0, k}, xp);
  CHECK(qgemm(w, x0, bias).values.empty());
}

TEST_CASE("accumulator overflow is rejected at construction") {
  CHECK_NOTHROW(check_accumulator(4, 4, 1 << 23));
  CHECK_THROWS_AS(check_accumulator(4, 4, (1 << 23) + 1), Error);
  CHECK_THROWS_AS(check_accumulator(8, 8, (1 << 15) + 1), Error);
}

TEST_CASE("parallel and serial kernels agree bit-exactly") {
  Rng rng(53);
  long m = 64, k = 96;
  auto wdata = rng.gaussian_vec(static_cast<std::size_t>(m * k));
  auto w = quantize_pack(wdata, {m, k}, qcore::bounds_max(wdata, true, 4));
  auto qw = unpack_weights(w);

  auto xdata = rng.gaussian_vec(static_cast<std::size_t>(k));
  auto xp = qcore::bounds_max(xdata, false, 4);
  auto codes = qcore::quantize_int(xdata, xp);
  std::vector<std::uint8_t> xc(codes.begin(), codes.end());
  SegmentView seg{xc, xp.scale, xp.storage_zero()};

  auto bias = rng.uniform_vec(static_cast<std::size_t>(m), -1.0, 1.0);
  std::vector<float> out_par(static_cast<std::size_t>(m));
  std::vector<float> out_ser(static_cast<std::size_t>(m));
  qgemv_run(qw, {&seg, 1}, bias, out_par);
  qgemv_run_serial(qw, {&seg, 1}, bias, out_ser);
  CHECK(out_par == out_ser);

  std::vector<float> rp(static_cast<std::size_t>(m)), rs(static_cast<std::size_t>(m));
  gemv_real(wdata, m, k, xdata, bias, rp);
  gemv_real_serial(wdata, m, k, xdata, bias, rs);
  CHECK(rp == rs);
}
