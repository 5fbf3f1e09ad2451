#include "qrt/qrnn.hpp"

#include <algorithm>
#include <cmath>

namespace qrt::qrnn {

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::vector<std::uint8_t> recode(std::span<const float> values, const qcore::QuantParams& p) {
  auto codes = qcore::quantize_int(values, p, "activation");
  std::vector<std::uint8_t> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = static_cast<std::uint8_t>(codes[i]);
  return out;
}

struct CodedInput {
  std::vector<std::vector<std::uint8_t>> storage;
  std::vector<qtensor::SegmentView> segs;
};

// Turns a StepAct into integer segments for the MAC. `fallback` supplies
// the grid when the tensor carries no segments (Outer-mode inputs handed
// in as plain on-grid reals).
CodedInput code_input(const StepAct& a, const qcore::QuantParams& fallback) {
  CodedInput out;
  if (a.segs.empty()) {
    out.storage.push_back(recode(a.values, fallback));
    out.segs.push_back({out.storage.back(), fallback.scale, fallback.storage_zero()});
    return out;
  }
  for (const auto& seg : a.segs) {
    std::span<const float> part(a.values.data() + seg.offset, static_cast<std::size_t>(seg.len));
    out.storage.push_back(recode(part, seg.params));
  }
  for (std::size_t i = 0; i < a.segs.size(); ++i)
    out.segs.push_back({out.storage[i], a.segs[i].params.scale, a.segs[i].params.storage_zero()});
  return out;
}

}  // namespace

void validate(const QuantLSTMLayerConfig& cfg) {
  require(cfg.input_size > 0 && cfg.hidden_size > 0, ErrorCode::validate,
          "LSTM layer dimensions must be positive");
  bool any = cfg.weight_spec || cfg.input_spec || cfg.hidden_spec;
  bool all = cfg.weight_spec && cfg.input_spec && cfg.hidden_spec;
  require(!any || all, ErrorCode::validate,
          "LSTM layer must quantize weight, input, and hidden roles together");
  if (cfg.weight_spec) qcore::validate_spec(*cfg.weight_spec, /*weight_role=*/true);
  if (cfg.input_spec) qcore::validate_spec(*cfg.input_spec, false);
  if (cfg.hidden_spec) qcore::validate_spec(*cfg.hidden_spec, false);
}

ActSeq make_act_seq(const std::vector<std::vector<float>>& x) {
  ActSeq seq(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) seq[t].values = x[t];
  return seq;
}

std::vector<std::vector<float>> act_values(const ActSeq& seq) {
  std::vector<std::vector<float>> out(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) out[t] = seq[t].values;
  return out;
}

LstmLayer make_layer(const QuantLSTMLayerConfig& cfg, Rng& rng) {
  validate(cfg);
  auto init_dir = [&](LstmDirWeights& w) {
    double r_ih = 1.0 / std::sqrt(static_cast<double>(cfg.input_size));
    double r_hh = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_size));
    w.w_ih = rng.uniform_vec(static_cast<std::size_t>(4 * cfg.hidden_size * cfg.input_size),
                             -r_ih, r_ih);
    w.w_hh = rng.uniform_vec(static_cast<std::size_t>(4 * cfg.hidden_size * cfg.hidden_size),
                             -r_hh, r_hh);
    w.bias = rng.uniform_vec(static_cast<std::size_t>(4 * cfg.hidden_size), -r_hh, r_hh);
  };
  LstmLayer layer;
  layer.cfg = cfg;
  init_dir(layer.fwd);
  if (cfg.bidirectional) {
    layer.bwd.emplace();
    init_dir(*layer.bwd);
  }
  return layer;
}

namespace {

qcore::QuantParams weight_params(std::span<const float> w, const qcore::QuantizerSpec& spec) {
  switch (spec.kind) {
    case qcore::QuantizerKind::MAX:
      return qcore::bounds_max(w, /*symmetric=*/true, spec.bits);
    case qcore::QuantizerKind::SAWB:
      return qcore::bounds_sawb(w, spec.bits, qcore::SawbMode::oracle_grid);
    case qcore::QuantizerKind::FIX:
    case qcore::QuantizerKind::PACT:
      return qcore::static_params(spec);
  }
  fail(ErrorCode::validate, "unhandled weight quantizer kind");
}

void quantize_dir(LstmDirWeights& w, const QuantLSTMLayerConfig& cfg,
                  QuantCallCounter* counter) {
  const auto& spec = *cfg.weight_spec;
  auto pack_one = [&](std::span<const float> data, long rows, long cols) {
    auto p = weight_params(data, spec);
    auto t = qtensor::quantize_pack(data, {rows, cols}, p, "lstm weight");
    if (counter) counter->weight_calls += 1;
    return t;
  };
  w.w_ih_packed = pack_one(w.w_ih, 4 * cfg.hidden_size, cfg.input_size);
  w.w_hh_packed = pack_one(w.w_hh, 4 * cfg.hidden_size, cfg.hidden_size);
  w.w_ih_q = qtensor::unpack_weights(*w.w_ih_packed);
  w.w_hh_q = qtensor::unpack_weights(*w.w_hh_packed);
  if (!w.input_params && cfg.input_spec->kind != qcore::QuantizerKind::MAX)
    w.input_params = qcore::static_params(*cfg.input_spec);
  if (!w.hidden_params && cfg.hidden_spec->kind != qcore::QuantizerKind::MAX)
    w.hidden_params = qcore::static_params(*cfg.hidden_spec);
}

}  // namespace

void quantize_weights(LstmLayer& layer, QuantCallCounter* counter) {
  require(layer.cfg.quantized(), ErrorCode::validate,
          "quantize_weights on an identity-mode layer");
  quantize_dir(layer.fwd, layer.cfg, counter);
  if (layer.bwd) quantize_dir(*layer.bwd, layer.cfg, counter);
}

namespace {

void gate_preacts(const LstmDirWeights& w, const QuantLSTMLayerConfig& cfg, const StepAct& x,
                  const StepAct& h, Placement placement, QuantCallCounter* counter,
                  std::vector<float>& pre) {
  long h4 = 4 * cfg.hidden_size;
  pre.assign(static_cast<std::size_t>(h4), 0.0f);
  if (!cfg.quantized()) {
    // fused double accumulation: bias, then the input MAC, then the
    // recurrent MAC, rounded to float once
    for (long r = 0; r < h4; ++r) {
      double acc = static_cast<double>(w.bias[static_cast<std::size_t>(r)]);
      const float* wi = w.w_ih.data() + r * cfg.input_size;
      for (long k = 0; k < cfg.input_size; ++k)
        acc += static_cast<double>(wi[k]) * static_cast<double>(x.values[static_cast<std::size_t>(k)]);
      const float* wh = w.w_hh.data() + r * cfg.hidden_size;
      for (long k = 0; k < cfg.hidden_size; ++k)
        acc += static_cast<double>(wh[k]) * static_cast<double>(h.values[static_cast<std::size_t>(k)]);
      pre[static_cast<std::size_t>(r)] = static_cast<float>(acc);
    }
    return;
  }

  require(w.w_ih_q && w.w_hh_q, ErrorCode::validate, "lstm_cell_step: unquantized weights");
  require(w.input_params && w.hidden_params, ErrorCode::validate,
          "lstm_cell_step: activation params unresolved (calibration missing)");

  StepAct xq = x;
  StepAct hq = h;
  if (placement == Placement::Inner) {
    // Quantize both entering tensors, one call each, with this layer's
    // input/hidden specs; any producer-side grid is re-quantized here.
    xq.values = qcore::fake_quantize(x.values, *w.input_params, "lstm input");
    xq.segs = {{0, static_cast<long>(xq.values.size()), *w.input_params}};
    hq.values = qcore::fake_quantize(h.values, *w.hidden_params, "lstm hidden");
    hq.segs = {{0, static_cast<long>(hq.values.size()), *w.hidden_params}};
    if (counter) counter->activation_calls += 2;
  }

  CodedInput xc = code_input(xq, *w.input_params);
  CodedInput hc = code_input(hq, *w.hidden_params);

  std::vector<float> tmp(static_cast<std::size_t>(h4));
  qtensor::qgemv_run(*w.w_ih_q, xc.segs, w.bias, pre);
  qtensor::qgemv_run(*w.w_hh_q, hc.segs, {}, tmp);
  for (long i = 0; i < h4; ++i) pre[static_cast<std::size_t>(i)] += tmp[static_cast<std::size_t>(i)];
}

}  // namespace

StepAct lstm_cell_step(const LstmDirWeights& w, const QuantLSTMLayerConfig& cfg,
                       const StepAct& x, const StepAct& s_prev, std::span<float> c,
                       QuantCallCounter* counter) {
  require(static_cast<long>(x.values.size()) == cfg.input_size, ErrorCode::validate,
          "lstm_cell_step: input dimension mismatch");
  require(static_cast<long>(s_prev.values.size()) == cfg.hidden_size, ErrorCode::validate,
          "lstm_cell_step: hidden dimension mismatch");
  require(static_cast<long>(c.size()) == cfg.hidden_size, ErrorCode::validate,
          "lstm_cell_step: cell dimension mismatch");

  long hs = cfg.hidden_size;
  std::vector<float> pre;
  gate_preacts(w, cfg, x, s_prev, cfg.placement, counter, pre);

  StepAct out;
  out.values.resize(static_cast<std::size_t>(hs));
  for (long j = 0; j < hs; ++j) {
    double ig = sigmoid(pre[static_cast<std::size_t>(j)]);
    double fg = sigmoid(pre[static_cast<std::size_t>(hs + j)]);
    double gg = std::tanh(pre[static_cast<std::size_t>(2 * hs + j)]);
    double og = sigmoid(pre[static_cast<std::size_t>(3 * hs + j)]);
    double cv = fg * static_cast<double>(c[static_cast<std::size_t>(j)]) + ig * gg;
    c[static_cast<std::size_t>(j)] = static_cast<float>(cv);
    out.values[static_cast<std::size_t>(j)] = static_cast<float>(og * std::tanh(cv));
  }

  if (cfg.quantized() && cfg.placement == Placement::Outer) {
    out.values = qcore::fake_quantize(out.values, *w.hidden_params, "lstm output");
    out.segs = {{0, hs, *w.hidden_params}};
    if (counter) counter->activation_calls += 1;
  }
  return out;
}

std::pair<std::vector<float>, std::vector<float>> lstm_cell_step(
    const LstmDirWeights& w, const QuantLSTMLayerConfig& cfg, std::span<const float> x_t,
    std::span<const float> s_prev, std::span<const float> c_prev, QuantCallCounter* counter) {
  StepAct x;
  x.values.assign(x_t.begin(), x_t.end());
  StepAct h;
  h.values.assign(s_prev.begin(), s_prev.end());
  std::vector<float> c(c_prev.begin(), c_prev.end());
  StepAct out = lstm_cell_step(w, cfg, x, h, c, counter);
  return {std::move(out.values), std::move(c)};
}

namespace {

std::vector<StepAct> scan_direction(const LstmDirWeights& w, const QuantLSTMLayerConfig& cfg,
                                    const ActSeq& in, bool reverse, QuantCallCounter* counter) {
  long t_steps = static_cast<long>(in.size());
  long hs = cfg.hidden_size;
  std::vector<StepAct> out(static_cast<std::size_t>(t_steps));
  StepAct h;
  h.values.assign(static_cast<std::size_t>(hs), 0.0f);
  if (cfg.quantized() && cfg.placement == Placement::Outer && w.hidden_params) {
    // The zero initial state is on every grid that represents zero; no
    // quantizer call is spent on it.
    h.segs = {{0, hs, *w.hidden_params}};
  }
  std::vector<float> c(static_cast<std::size_t>(hs), 0.0f);
  for (long i = 0; i < t_steps; ++i) {
    long t = reverse ? t_steps - 1 - i : i;
    StepAct next = lstm_cell_step(w, cfg, in[static_cast<std::size_t>(t)], h, c, counter);
    out[static_cast<std::size_t>(t)] = next;
    h = std::move(next);
  }
  return out;
}

}  // namespace

ActSeq run_layer(const LstmLayer& layer, const ActSeq& in, QuantCallCounter* counter) {
  require(!in.empty(), ErrorCode::validate, "run_layer: empty sequence");
  const auto& cfg = layer.cfg;
  for (const auto& step : in)
    require(static_cast<long>(step.values.size()) == cfg.input_size, ErrorCode::validate,
            "run_layer: input dimension mismatch");

  ActSeq input = in;
  if (cfg.quantized() && cfg.placement == Placement::Outer) {
    require(layer.fwd.input_params.has_value(), ErrorCode::validate,
            "run_layer: input params unresolved (calibration missing)");
    // Raw sequence entering the stack is quantized once per step; deeper
    // layers arrive with segments already attached.
    for (auto& step : input) {
      if (!step.segs.empty()) continue;
      step.values = qcore::fake_quantize(step.values, *layer.fwd.input_params, "layer input");
      step.segs = {{0, cfg.input_size, *layer.fwd.input_params}};
      if (counter) counter->activation_calls += 1;
    }
  }

  auto fwd_out = scan_direction(layer.fwd, cfg, input, /*reverse=*/false, counter);
  if (!cfg.bidirectional) return fwd_out;

  auto bwd_out = scan_direction(*layer.bwd, cfg, input, /*reverse=*/true, counter);
  ActSeq out(in.size());
  long hs = cfg.hidden_size;
  for (std::size_t t = 0; t < in.size(); ++t) {
    auto& step = out[t];
    step.values.resize(static_cast<std::size_t>(2 * hs));
    std::copy(fwd_out[t].values.begin(), fwd_out[t].values.end(), step.values.begin());
    std::copy(bwd_out[t].values.begin(), bwd_out[t].values.end(),
              step.values.begin() + static_cast<std::ptrdiff_t>(hs));
    if (!fwd_out[t].segs.empty() && !bwd_out[t].segs.empty()) {
      step.segs = {{0, hs, fwd_out[t].segs[0].params}, {hs, hs, bwd_out[t].segs[0].params}};
    }
  }
  return out;
}

long count_quantizer_calls(long t_steps, long layers, Placement placement) {
  require(t_steps >= 1 && layers >= 1, ErrorCode::validate,
          "count_quantizer_calls: T and L must be >= 1");
  if (placement == Placement::Inner) return 2 * t_steps * layers;
  return t_steps + t_steps * layers;
}

}  // namespace qrt::qrnn
