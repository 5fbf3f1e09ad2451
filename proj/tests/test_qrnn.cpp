#include <doctest.h>

#include <cmath>

#include "qrt/qrnn.hpp"
#include "qrt/ref.hpp"
#include "test_util.hpp"

using namespace qrt;
using namespace qrt::qrnn;

namespace {

qcore::QuantizerSpec sawb_w4() {
  return {qcore::QuantizerKind::SAWB, 4, true, std::nullopt, std::nullopt};
}

qcore::QuantizerSpec fix4(double bound) {
  qcore::QuantizerSpec s{qcore::QuantizerKind::FIX, 4, true, std::nullopt, std::nullopt};
  s.fixed_bounds = {{-bound, bound}};
  return s;
}

QuantLSTMLayerConfig quant_cfg(long in, long hidden, bool bidir, Placement placement) {
  QuantLSTMLayerConfig cfg;
  cfg.input_size = in;
  cfg.hidden_size = hidden;
  cfg.bidirectional = bidir;
  cfg.weight_spec = sawb_w4();
  cfg.input_spec = fix4(1.0);
  cfg.hidden_spec = fix4(1.0);
  cfg.placement = placement;
  return cfg;
}

QuantLSTMLayerConfig identity_cfg(long in, long hidden, bool bidir) {
  QuantLSTMLayerConfig cfg;
  cfg.input_size = in;
  cfg.hidden_size = hidden;
  cfg.bidirectional = bidir;
  return cfg;
}

std::vector<std::vector<float>> random_seq(Rng& rng, long t, long dim, double range = 1.0) {
  std::vector<std::vector<float>> x(static_cast<std::size_t>(t));
  for (auto& step : x) step = rng.uniform_vec(static_cast<std::size_t>(dim), -range, range);
  return x;
}

}  // namespace

TEST_CASE("zero weights and inputs give zero outputs and cell states") {
  auto cfg = quant_cfg(3, 4, false, Placement::Inner);
  Rng rng(1);
  auto layer = make_layer(cfg, rng);
  std::fill(layer.fwd.w_ih.begin(), layer.fwd.w_ih.end(), 0.0f);
  std::fill(layer.fwd.w_hh.begin(), layer.fwd.w_hh.end(), 0.0f);
  std::fill(layer.fwd.bias.begin(), layer.fwd.bias.end(), 0.0f);
  quantize_weights(layer);

  std::vector<float> x(3, 0.0f), h(4, 0.0f), c(4, 0.0f);
  auto [s_t, c_t] = lstm_cell_step(layer.fwd, cfg, x, h, c, nullptr);
  for (float v : s_t) CHECK(v == 0.0f);
  for (float v : c_t) CHECK(v == 0.0f);
}

TEST_CASE("Inner and Outer placements coincide on grid-aligned inputs") {
  Rng rng(2);
  auto cfg_in = quant_cfg(4, 5, false, Placement::Inner);
  auto cfg_out = cfg_in;
  cfg_out.placement = Placement::Outer;

  Rng ra(77), rb(77);
  auto layer_in = make_layer(cfg_in, ra);
  auto layer_out = make_layer(cfg_out, rb);
  quantize_weights(layer_in);
  quantize_weights(layer_out);

  // inputs on the FIX +-1 grid (multiples of 1/7)
  const double s = 1.0 / 7.0;
  std::vector<std::vector<float>> x(6);
  for (auto& step : x) {
    step.resize(4);
    for (auto& v : step)
      v = static_cast<float>(s * (static_cast<int>(rng.uniform_int(15)) - 7));
  }

  auto out_inner = run_layer(layer_in, make_act_seq(x), nullptr);
  auto out_outer = run_layer(layer_out, make_act_seq(x), nullptr);

  // Outer output is the quantized form of Inner's raw output; on-grid
  // inputs make the internal states identical.
  auto hp = qcore::static_params(*cfg_in.hidden_spec);
  for (std::size_t t = 0; t < x.size(); ++t) {
    auto q = qcore::fake_quantize(out_inner[t].values, hp);
    for (std::size_t j = 0; j < q.size(); ++j) CHECK(q[j] == out_outer[t].values[j]);
  }
}

TEST_CASE("activation call counts per step match the placement contract") {
  Rng rng(3);
  for (auto placement : {Placement::Inner, Placement::Outer}) {
    auto cfg = quant_cfg(3, 4, false, placement);
    auto layer = make_layer(cfg, rng);
    quantize_weights(layer);
    QuantCallCounter counter;
    auto seq = make_act_seq(random_seq(rng, 1, 3));
    (void)run_layer(layer, seq, &counter);
    CHECK(counter.activation_calls == (placement == Placement::Inner ? 2 : 2));
    // T=1, L=1: Inner = 2*T*L = 2; Outer = T + T*L = 2 (one input + one output)
  }
}

TEST_CASE("instrumented stack counts equal the closed-form formulas") {
  Rng rng(5);
  const long t_steps = 5;
  const long layers = 2;  // bidirectional, so L = 4
  for (auto placement : {Placement::Inner, Placement::Outer}) {
    std::vector<LstmLayer> stack;
    long in = 3;
    for (long l = 0; l < layers; ++l) {
      auto cfg = quant_cfg(in, 4, true, placement);
      stack.push_back(make_layer(cfg, rng));
      quantize_weights(stack.back());
      in = 8;
    }
    QuantCallCounter counter;
    auto seq = make_act_seq(random_seq(rng, t_steps, 3));
    for (auto& layer : stack) seq = run_layer(layer, seq, &counter);
    long l_dirs = 2 * layers;
    CHECK(counter.activation_calls == count_quantizer_calls(t_steps, l_dirs, placement));
  }
}

TEST_CASE("count_quantizer_calls reproduces the encoder-scale numbers") {
  CHECK(count_quantizer_calls(152, 12, Placement::Inner) == 3648);
  CHECK(count_quantizer_calls(152, 12, Placement::Outer) == 1976);

  // L = 1 boundary: the ratio (L+1)/(2L) is 1, no saving
  CHECK(count_quantizer_calls(9, 1, Placement::Inner) ==
        count_quantizer_calls(9, 1, Placement::Outer));

  // ratio independent of T
  for (long t : {1L, 7L, 152L}) {
    double ratio = static_cast<double>(count_quantizer_calls(t, 12, Placement::Outer)) /
                   static_cast<double>(count_quantizer_calls(t, 12, Placement::Inner));
    CHECK(ratio == doctest::Approx(13.0 / 24.0).epsilon(1e-12));
  }
}

TEST_CASE("identity mode matches the serial reference LSTM") {
  Rng rng(7);
  auto cfg = identity_cfg(6, 5, false);
  auto layer = make_layer(cfg, rng);
  auto x = random_seq(rng, 9, 6);

  auto got = act_values(run_layer(layer, make_act_seq(x), nullptr));
  auto want = ref::lstm_forward(layer.fwd.w_ih, layer.fwd.w_hh, layer.fwd.bias, x, 5);
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t j = 0; j < want[t].size(); ++j)
      CHECK(testutil::close(got[t][j], want[t][j], 1e-6));

  auto bcfg = identity_cfg(6, 5, true);
  auto blayer = make_layer(bcfg, rng);
  auto bgot = act_values(run_layer(blayer, make_act_seq(x), nullptr));
  auto bwant = ref::bilstm_forward(blayer.fwd.w_ih, blayer.fwd.w_hh, blayer.fwd.bias,
                                   blayer.bwd->w_ih, blayer.bwd->w_hh, blayer.bwd->bias, x, 5);
  CHECK(bgot[0].size() == 10);  // bidirectional output is 2*hidden
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t j = 0; j < bwant[t].size(); ++j)
      CHECK(testutil::close(bgot[t][j], bwant[t][j], 1e-6));
}

TEST_CASE("T=1 layer run equals a single cell step per direction") {
  Rng rng(9);
  auto cfg = identity_cfg(4, 3, false);
  auto layer = make_layer(cfg, rng);
  auto x = random_seq(rng, 1, 4);
  auto seq_out = act_values(run_layer(layer, make_act_seq(x), nullptr));

  std::vector<float> h(3, 0.0f), c(3, 0.0f);
  auto [s_t, c_t] = lstm_cell_step(layer.fwd, cfg, x[0], h, c, nullptr);
  CHECK(seq_out[0] == s_t);
}

TEST_CASE("reversing the input swaps forward and backward halves with tied weights") {
  Rng rng(11);
  auto cfg = identity_cfg(4, 3, true);
  auto layer = make_layer(cfg, rng);
  layer.bwd = layer.fwd;  // tie directions

  auto x = random_seq(rng, 7, 4);
  auto fwd = act_values(run_layer(layer, make_act_seq(x), nullptr));
  auto rev_in = x;
  std::reverse(rev_in.begin(), rev_in.end());
  auto rev = act_values(run_layer(layer, make_act_seq(rev_in), nullptr));

  const std::size_t h = 3;
  for (std::size_t t = 0; t < x.size(); ++t) {
    std::size_t rt = x.size() - 1 - t;
    for (std::size_t j = 0; j < h; ++j) {
      CHECK(fwd[t][j] == rev[rt][h + j]);
      CHECK(fwd[t][h + j] == rev[rt][j]);
    }
  }
}

TEST_CASE("cell states may exceed [-1, 1] and are never clamped") {
  auto cfg = quant_cfg(2, 3, false, Placement::Outer);
  Rng rng(13);
  auto layer = make_layer(cfg, rng);
  std::fill(layer.fwd.w_ih.begin(), layer.fwd.w_ih.end(), 0.0f);
  std::fill(layer.fwd.w_hh.begin(), layer.fwd.w_hh.end(), 0.0f);
  std::fill(layer.fwd.bias.begin(), layer.fwd.bias.end(), 10.0f);  // saturate i, f, g, o
  quantize_weights(layer);

  StepAct x;
  x.values = {0.0f, 0.0f};
  StepAct h;
  h.values = {0.0f, 0.0f, 0.0f};
  std::vector<float> c(3, 0.0f);
  for (int t = 0; t < 3; ++t) (void)lstm_cell_step(layer.fwd, cfg, x, h, c, nullptr);
  for (float v : c) CHECK(v > 2.5f);  // grew past the +-1 activation range
}

TEST_CASE("layer errors: empty sequence, dimension mismatch, unquantized weights") {
  Rng rng(15);
  auto cfg = quant_cfg(3, 4, false, Placement::Inner);
  auto layer = make_layer(cfg, rng);
  quantize_weights(layer);

  CHECK_THROWS_AS((void)run_layer(layer, {}, nullptr), Error);

  auto bad = make_act_seq(random_seq(rng, 2, 5));
  CHECK_THROWS_AS((void)run_layer(layer, bad, nullptr), Error);

  auto raw = make_layer(cfg, rng);  // quantized cfg, weights never packed
  auto seq = make_act_seq(random_seq(rng, 2, 3));
  CHECK_THROWS_AS((void)run_layer(raw, seq, nullptr), Error);
}
