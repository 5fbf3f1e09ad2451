#include <doctest.h>

#include <cmath>

#include "qrt/qcore.hpp"
#include "qrt/rng.hpp"
#include "test_util.hpp"

using namespace qrt;
using namespace qrt::qcore;
using qrt::testutil::close_rel;
using qrt::testutil::random_params;

TEST_CASE("quantize_int matches hand-evaluated cases") {
  auto p = asymmetric_params(4, 0.0, 1.5);
  CHECK(p.scale == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(p.zero_point == doctest::Approx(0.0));

  float x0[] = {0.26f};
  CHECK(quantize_int(x0, p) == std::vector<int>{3});

  float x1[] = {99.0f};
  CHECK(quantize_int(x1, p) == std::vector<int>{15});

  auto sym = symmetric_params(4, 1.0);
  float zero[] = {0.0f};
  CHECK(quantize_int(zero, sym)[0] == sym.storage_zero());
}

TEST_CASE("quantize_int rejects non-finite input naming tensor and index") {
  auto p = symmetric_params(4, 1.0);
  float x[] = {0.5f, std::numeric_limits<float>::quiet_NaN()};
  CHECK_THROWS_WITH_AS(quantize_int(x, p, "acts"),
                       doctest::Contains("tensor 'acts' at index 1"), Error);
}

TEST_CASE("dequantize matches hand case and zero-point definition") {
  auto p = asymmetric_params(4, 0.0, 1.5);
  int codes[] = {3};
  CHECK(dequantize(codes, p)[0] == doctest::Approx(0.3).epsilon(1e-6));

  auto pa = asymmetric_params(4, -0.7, 1.3);
  int zc[] = {pa.storage_zero()};
  CHECK(dequantize(zc, pa)[0] == 0.0f);

  int bad[] = {16};
  CHECK_THROWS_AS((void)dequantize(bad, p), Error);
}

TEST_CASE("fake_quantize composes quantize and dequantize") {
  auto p = asymmetric_params(4, 0.0, 1.5);
  float x[] = {0.26f};
  CHECK(fake_quantize(x, p)[0] == doctest::Approx(0.3).epsilon(1e-6));

  // values already on the grid pass through unchanged
  float on_grid[] = {0.4f, 1.1f};
  auto fq = fake_quantize(on_grid, p);
  CHECK(fq[0] == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(fq[1] == doctest::Approx(1.1).epsilon(1e-6));

  // clamp saturates at the boundary grid point
  float over[] = {2.7f};
  CHECK(fake_quantize(over, p)[0] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("grid idempotence: every valid code roundtrips") {
  Rng rng(7);
  for (int bits : {2, 4, 8}) {
    for (int rep = 0; rep < 20; ++rep) {
      auto p = random_params(rng, bits);
      std::vector<int> codes(static_cast<std::size_t>(p.max_code()) + 1);
      for (int c = 0; c <= p.max_code(); ++c) codes[static_cast<std::size_t>(c)] = c;
      auto x = dequantize(codes, p);
      auto back = quantize_int(x, p);
      CHECK(back == codes);
    }
  }
}

TEST_CASE("monotonicity: x <= y implies code(x) <= code(y)") {
  Rng rng(11);
  for (int bits : {2, 4, 8}) {
    auto p = random_params(rng, bits);
    for (int rep = 0; rep < 200; ++rep) {
      float a = static_cast<float>(rng.uniform(-12.0, 12.0));
      float b = static_cast<float>(rng.uniform(-12.0, 12.0));
      if (a > b) std::swap(a, b);
      float xs[] = {a, b};
      auto c = quantize_int(xs, p);
      CHECK(c[0] <= c[1]);
    }
  }
}

TEST_CASE("residual inside the clipping range is bounded by s/2") {
  Rng rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    int bits = (rep % 3 == 0) ? 2 : (rep % 3 == 1 ? 4 : 8);
    auto p = random_params(rng, bits);
    for (int i = 0; i < 100; ++i) {
      float x = static_cast<float>(rng.uniform(p.lower, p.upper));
      double fq = fake_quantize_one(x, p);
      CHECK(std::fabs(static_cast<double>(x) - fq) <= p.scale / 2 * (1 + 1e-9) + 1e-12);
    }
  }
}

TEST_CASE("ste_gradients: saturated branches and pass-through") {
  auto p = symmetric_params(4, 1.0);

  float x_hi[] = {2.0f};
  float up1[] = {1.0f};
  auto g = ste_gradients(x_hi, p, up1);
  CHECK(g.grad_x[0] == 0.0f);
  CHECK(g.grad_upper == doctest::Approx(1.0));
  CHECK(g.grad_lower == doctest::Approx(0.0));

  float x_lo[] = {-5.0f};
  float up2[] = {0.5f};
  auto g2 = ste_gradients(x_lo, p, up2);
  CHECK(g2.grad_lower == doctest::Approx(0.5));
  CHECK(g2.grad_upper == doctest::Approx(0.0));

  float x_in[] = {0.3f, -0.9f};
  float up3[] = {0.25f, -2.0f};
  auto g3 = ste_gradients(x_in, p, up3);
  CHECK(g3.grad_upper == 0.0);
  CHECK(g3.grad_lower == 0.0);
  CHECK(g3.grad_x[0] == 0.25f);
  CHECK(g3.grad_x[1] == -2.0f);

  float up_mismatch[] = {1.0f, 2.0f, 3.0f};
  CHECK_THROWS_AS((void)ste_gradients(x_in, p, up_mismatch), Error);
}

TEST_CASE("ste_gradients matches central finite differences where saturated") {
  // d fq / d upper == 1 exactly on saturated elements of a symmetric grid
  const double x = 2.0, h = 1e-4;
  auto hi = symmetric_params(4, 1.0 + h);
  auto lo = symmetric_params(4, 1.0 - h);
  double fd_upper = (fake_quantize_one(x, hi) - fake_quantize_one(x, lo)) / (2 * h);
  CHECK(fd_upper == doctest::Approx(1.0).epsilon(1e-6));

  // d fq / d x == 0 on saturated elements (locally constant)
  auto p = symmetric_params(4, 1.0);
  double fd_x = (fake_quantize_one(x + h, p) - fake_quantize_one(x - h, p)) / (2 * h);
  CHECK(fd_x == doctest::Approx(0.0));
}

TEST_CASE("bounds_max captures the distribution extremes") {
  float x[] = {-2.0f, 0.0f, 3.0f};
  auto pa = bounds_max(x, false, 4);
  CHECK(pa.lower == doctest::Approx(-2.0));
  CHECK(pa.upper == doctest::Approx(3.0));

  auto ps = bounds_max(x, true, 4);
  CHECK(ps.upper == doctest::Approx(3.0));
  CHECK(ps.lower == doctest::Approx(-3.0));

  Rng rng(17);
  auto data = rng.gaussian_vec(500);
  auto e = error_decomposition(data, bounds_max(data, true, 4));
  CHECK(e.clipping_mse == 0.0);

  CHECK_THROWS_AS((void)bounds_max(std::span<const float>{}, true, 4), Error);

  // constant tensors fall back to max(|x|, 1e-8)
  float c[] = {0.0f, 0.0f};
  auto pc = bounds_max(c, true, 4);
  CHECK(pc.upper == doctest::Approx(1e-8));
}

TEST_CASE("sawb oracle: frozen regression value on the standard Gaussian sample") {
  Rng rng(20260810);
  auto x = rng.gaussian_vec(100000);
  auto p = bounds_sawb(x, 4, SawbMode::oracle_grid);
  CHECK(p.upper > 2.0);
  CHECK(p.upper < 4.0);
  // frozen from the committed oracle run
  CHECK(p.upper == doctest::Approx(2.499135).epsilon(1e-4));
}

TEST_CASE("sawb oracle returns the grid alpha on grid-aligned data") {
  const double alpha0 = 1.0;
  auto p0 = symmetric_params(4, alpha0);
  std::vector<float> x;
  for (int c = 0; c <= p0.max_code(); ++c)
    for (int rep = 0; rep < 3; ++rep)
      x.push_back(static_cast<float>(p0.scale * (c - p0.storage_zero())));
  auto p = bounds_sawb(x, 4, SawbMode::oracle_grid);
  CHECK(p.upper == doctest::Approx(alpha0).epsilon(1e-9));
  CHECK(error_decomposition(x, p).total_mse == doctest::Approx(0.0));
}

TEST_CASE("sawb closed form tracks the oracle within 10 percent") {
  Rng rng(99);
  auto gauss = rng.gaussian_vec(100000);
  auto po = bounds_sawb(gauss, 4, SawbMode::oracle_grid);
  auto pc = bounds_sawb(gauss, 4, SawbMode::closed_form);
  CHECK(close_rel(po.upper, pc.upper, 0.10));

  Rng rng2(101);
  auto lap = rng2.laplace_vec(100000, 1.0);
  auto lo = bounds_sawb(lap, 4, SawbMode::oracle_grid);
  auto lc = bounds_sawb(lap, 4, SawbMode::closed_form);
  CHECK(close_rel(lo.upper, lc.upper, 0.10));
}

TEST_CASE("sawb oracle dominates MAX bounds on tensors with far outliers") {
  Rng rng(23);
  auto x = rng.gaussian_vec(20000);
  for (int i = 0; i < 12; ++i) x.push_back((i % 2 == 0) ? 6.0f : -5.5f);
  auto e_oracle = error_decomposition(x, bounds_sawb(x, 4, SawbMode::oracle_grid));
  auto e_max = error_decomposition(x, bounds_max(x, true, 4));
  CHECK(e_oracle.total_mse <= e_max.total_mse);
}

TEST_CASE("sawb rejects unsupported bit widths") {
  float x[] = {0.1f, 0.9f};
  CHECK_THROWS_AS((void)bounds_sawb(x, 3, SawbMode::oracle_grid), Error);
}

TEST_CASE("calibrate_pact converges near the oracle boundary on Gaussian data") {
  Rng rng(20260810);
  auto x = rng.gaussian_vec(100000);
  auto oracle = bounds_sawb(x, 4, SawbMode::oracle_grid);
  auto r = calibrate_pact(x, 4, 500, 2.0);
  CHECK(close_rel(r.params.upper, oracle.upper, 0.10));
  CHECK(close_rel(-r.params.lower, oracle.upper, 0.10));
  CHECK(r.mse_trajectory.back() <= r.mse_trajectory.front());
}

TEST_CASE("calibrate_pact validates preconditions") {
  float x[] = {0.1f, 0.4f};
  CHECK_THROWS_AS((void)calibrate_pact(x, 4, 0, 1.0), Error);
  CHECK_THROWS_AS((void)calibrate_pact(x, 4, 10, 0.0), Error);
}

TEST_CASE("calibrate_pact keeps grid-aligned data at zero error") {
  const double lo = -0.4, s = 0.05;
  std::vector<float> x;
  for (int c = 0; c <= 15; ++c) x.push_back(static_cast<float>(lo + s * c));
  auto r = calibrate_pact(x, 4, 50, 0.5);
  CHECK(r.mse_trajectory.front() == doctest::Approx(0.0).epsilon(1e-10));
  auto e = error_decomposition(x, r.params);
  CHECK(e.total_mse == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("calibrate_pact reports divergence with the MSE trajectory") {
  Rng rng(31);
  auto x = rng.gaussian_vec(2000);
  try {
    (void)calibrate_pact(x, 4, 100, 1e7);
    FAIL("expected divergence");
  } catch (const CalibrationDivergence& e) {
    CHECK(e.trajectory.size() >= 2);
    CHECK(e.trajectory.back() > 10.0 * e.trajectory.front());
  }
}

TEST_CASE("error_decomposition splits clipping from rounding") {
  auto p = symmetric_params(4, 1.0);

  float inside[] = {0.1f, -0.6f, 0.99f};
  CHECK(error_decomposition(inside, p).clipping_mse == 0.0);

  std::vector<float> grid;
  for (int c = 0; c <= p.max_code(); ++c)
    grid.push_back(static_cast<float>(p.scale * (c - p.storage_zero())));
  CHECK(error_decomposition(grid, p).total_mse == doctest::Approx(0.0));

  float clipped[] = {2.0f};
  auto e = error_decomposition(clipped, p);
  CHECK(e.clipping_mse == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.rounding_mse == 0.0);
}

TEST_CASE("error_decomposition totals equal the direct fake-quantization MSE") {
  Rng rng(37);
  for (int rep = 0; rep < 10; ++rep) {
    auto p = random_params(rng, 4);
    auto x = rng.gaussian_vec(500, 2.0);
    auto e = error_decomposition(x, p);
    double direct = 0.0;
    for (float v : x) {
      double d = static_cast<double>(v) - fake_quantize_one(v, p);
      direct += d * d;
    }
    direct /= static_cast<double>(x.size());
    CHECK(e.total_mse == doctest::Approx(direct).epsilon(1e-9));
    CHECK(e.total_mse == doctest::Approx(e.clipping_mse + e.rounding_mse).epsilon(1e-12));
  }
}

TEST_CASE("quantizer specs validate role constraints") {
  QuantizerSpec w{QuantizerKind::SAWB, 4, true, std::nullopt, std::nullopt};
  CHECK_NOTHROW(validate_spec(w, true));
  w.symmetric = false;
  CHECK_THROWS_AS(validate_spec(w, true), Error);

  QuantizerSpec fix{QuantizerKind::FIX, 4, true, std::nullopt, std::nullopt};
  CHECK_THROWS_AS(validate_spec(fix, false), Error);
  fix.fixed_bounds = {{-1.0, 1.0}};
  CHECK_NOTHROW(validate_spec(fix, false));

  QuantizerSpec pact{QuantizerKind::PACT, 4, false, std::nullopt, std::nullopt};
  CHECK_THROWS_AS((void)static_params(pact), Error);
  pact.learned_bounds = {{-0.5, 2.0}};
  auto p = static_params(pact);
  CHECK(p.lower == doctest::Approx(-0.5));
  CHECK(p.upper == doctest::Approx(2.0));
}
