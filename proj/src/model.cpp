#include "qrt/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace qrt::model {

// --- construction ------------------------------------------------------------

namespace {

Embedding make_embedding(long vocab, long dim, Rng& rng) {
  Embedding e;
  e.vocab = vocab;
  e.dim = dim;
  double r = 1.0 / std::sqrt(static_cast<double>(dim));
  e.table = rng.uniform_vec(static_cast<std::size_t>(vocab * dim), -r, r);
  return e;
}

LinearLayer make_linear(long in, long out, Rng& rng) {
  LinearLayer l;
  l.in = in;
  l.out = out;
  double r = 1.0 / std::sqrt(static_cast<double>(in));
  l.w = rng.uniform_vec(static_cast<std::size_t>(out * in), -r, r);
  l.bias = rng.uniform_vec(static_cast<std::size_t>(out), -r, r);
  return l;
}

qrnn::QuantLSTMLayerConfig plain_lstm_cfg(long in, long hidden, bool bidir) {
  qrnn::QuantLSTMLayerConfig cfg;
  cfg.input_size = in;
  cfg.hidden_size = hidden;
  cfg.bidirectional = bidir;
  return cfg;
}

}  // namespace

RnntModel build_rnnt(const ArchConfig& arch, std::uint64_t seed) {
  validate(arch);
  Rng rng(seed);
  RnntModel m;
  m.arch = arch;

  long in = arch.encoder_input;
  for (long l = 0; l < arch.encoder_layers; ++l) {
    m.encoder.push_back(qrnn::make_layer(plain_lstm_cfg(in, arch.encoder_hidden, true), rng));
    in = 2 * arch.encoder_hidden;
  }
  m.enc_proj = make_linear(2 * arch.encoder_hidden, arch.joint_dim, rng);
  m.pred_embed = make_embedding(arch.vocab, arch.embed_dim, rng);
  m.pred_lstm = qrnn::make_layer(plain_lstm_cfg(arch.embed_dim, arch.pred_hidden, false), rng);
  m.pred_proj = make_linear(arch.pred_hidden, arch.joint_dim, rng);
  m.joint_out = make_linear(arch.joint_dim, arch.vocab, rng);
  return m;
}

LmModel build_lm(const ArchConfig& arch, LmRole role, std::uint64_t seed) {
  validate(arch);
  Rng rng(seed);
  LmModel m;
  m.arch = arch;
  m.role = role;
  if (role == LmRole::EXT) {
    m.embed = make_embedding(arch.vocab, arch.lm_ext_embed, rng);
    long in = arch.lm_ext_embed;
    for (long l = 0; l < arch.lm_ext_layers; ++l) {
      m.lstm.push_back(qrnn::make_layer(plain_lstm_cfg(in, arch.lm_ext_hidden, false), rng));
      in = arch.lm_ext_hidden;
    }
    m.bottleneck = make_linear(arch.lm_ext_hidden, arch.lm_ext_bottleneck, rng);
    m.out = make_linear(arch.lm_ext_bottleneck, arch.vocab, rng);
  } else {
    // same building blocks and size as the prediction network
    m.embed = make_embedding(arch.vocab, arch.embed_dim, rng);
    m.lstm.push_back(qrnn::make_layer(plain_lstm_cfg(arch.embed_dim, arch.pred_hidden, false), rng));
    m.bottleneck = make_linear(arch.pred_hidden, arch.joint_dim, rng);
    m.out = make_linear(arch.joint_dim, arch.vocab, rng);
  }
  return m;
}

// --- parameter counts ---------------------------------------------------------

namespace {

long lstm_params(const qrnn::LstmLayer& l) {
  // 4h(in + h + 1) per direction
  long per_dir = 4 * l.cfg.hidden_size * (l.cfg.input_size + l.cfg.hidden_size + 1);
  return l.cfg.bidirectional ? 2 * per_dir : per_dir;
}

long linear_params(const LinearLayer& l) { return l.out * l.in + l.out; }

}  // namespace

long encoder_param_count(const RnntModel& m) {
  long n = 0;
  for (const auto& l : m.encoder) n += lstm_params(l);
  return n + linear_params(m.enc_proj);
}

long prediction_param_count(const RnntModel& m) {
  return m.pred_embed.vocab * m.pred_embed.dim + lstm_params(m.pred_lstm) +
         linear_params(m.pred_proj);
}

long param_count(const RnntModel& m) {
  return encoder_param_count(m) + prediction_param_count(m) + linear_params(m.joint_out);
}

long param_count(const LmModel& m) {
  long n = m.embed.vocab * m.embed.dim;
  for (const auto& l : m.lstm) n += lstm_params(l);
  return n + linear_params(m.bottleneck) + linear_params(m.out);
}

// --- forward passes ------------------------------------------------------------

std::vector<float> Embedding::lookup(long symbol) const {
  require(symbol >= 0 && symbol < vocab, ErrorCode::validate,
          "embedding lookup out of range: " + std::to_string(symbol));
  if (packed) {
    auto codes = qtensor::unpack(*packed);
    std::vector<int> row(codes.begin() + symbol * dim, codes.begin() + (symbol + 1) * dim);
    return qcore::dequantize(row, packed->params);
  }
  return std::vector<float>(table.begin() + symbol * dim, table.begin() + (symbol + 1) * dim);
}

std::vector<float> LinearLayer::forward(std::span<const float> x) const {
  require(static_cast<long>(x.size()) == in, ErrorCode::validate,
          "linear forward: dimension mismatch");
  std::vector<float> y(static_cast<std::size_t>(out));
  if (!quantized()) {
    qtensor::gemv_real(w, out, in, x, bias, y);
    return y;
  }
  require(input_params.has_value(), ErrorCode::validate,
          "linear forward: input params unresolved (calibration missing)");
  auto codes = qcore::quantize_int(x, *input_params, "linear input");
  std::vector<std::uint8_t> xc(codes.begin(), codes.end());
  qtensor::SegmentView seg{xc, input_params->scale, input_params->storage_zero()};
  qtensor::qgemv_run(*w_q, {&seg, 1}, bias, y);
  return y;
}

std::vector<float> log_softmax(std::span<const float> x) {
  require(!x.empty(), ErrorCode::validate, "log_softmax: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : x) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : x) sum += std::exp(static_cast<double>(v) - mx);
  double lse = mx + std::log(sum);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<float>(static_cast<double>(x[i]) - lse);
  return out;
}

std::vector<std::vector<float>> encoder_forward(const RnntModel& m,
                                                const std::vector<std::vector<float>>& features,
                                                qrnn::QuantCallCounter* counter) {
  require(!features.empty(), ErrorCode::validate, "encoder_forward: empty feature sequence");
  auto seq = qrnn::make_act_seq(features);
  for (const auto& layer : m.encoder) seq = qrnn::run_layer(layer, seq, counter);
  std::vector<std::vector<float>> out(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) out[t] = m.enc_proj.forward(seq[t].values);
  return out;
}

namespace {

// Stateful single-step scan mirroring run_layer's entry/exit quantization.
qrnn::StepAct initial_hidden(const qrnn::LstmLayer& layer) {
  qrnn::StepAct h;
  h.values.assign(static_cast<std::size_t>(layer.cfg.hidden_size), 0.0f);
  if (layer.cfg.quantized() && layer.cfg.placement == qrnn::Placement::Outer &&
      layer.fwd.hidden_params)
    h.segs = {{0, layer.cfg.hidden_size, *layer.fwd.hidden_params}};
  return h;
}

qrnn::StepAct stateful_step(const qrnn::LstmLayer& layer, qrnn::StepAct x, qrnn::StepAct& h,
                            std::vector<float>& c) {
  if (layer.cfg.quantized() && layer.cfg.placement == qrnn::Placement::Outer && x.segs.empty()) {
    require(layer.fwd.input_params.has_value(), ErrorCode::validate,
            "lstm step: input params unresolved (calibration missing)");
    x.values = qcore::fake_quantize(x.values, *layer.fwd.input_params, "step input");
    x.segs = {{0, static_cast<long>(x.values.size()), *layer.fwd.input_params}};
  }
  std::span<float> cs(c);
  qrnn::StepAct out = qrnn::lstm_cell_step(layer.fwd, layer.cfg, x, h, cs, nullptr);
  h = out;
  return out;
}

}  // namespace

PredState pred_initial_state(const RnntModel& m) {
  PredState s;
  s.h = initial_hidden(m.pred_lstm);
  s.c.assign(static_cast<std::size_t>(m.arch.pred_hidden), 0.0f);
  return s;
}

std::vector<float> pred_step(const RnntModel& m, long symbol, PredState& state) {
  long sym = symbol < 0 ? m.arch.vocab - 1 : symbol;  // blank row doubles as SOS
  qrnn::StepAct x;
  x.values = m.pred_embed.lookup(sym);
  auto out = stateful_step(m.pred_lstm, std::move(x), state.h, state.c);
  return m.pred_proj.forward(out.values);
}

std::vector<float> joint_log_probs(const RnntModel& m, std::span<const float> h_enc,
                                   std::span<const float> h_dec) {
  require(static_cast<long>(h_enc.size()) == m.arch.joint_dim &&
              static_cast<long>(h_dec.size()) == m.arch.joint_dim,
          ErrorCode::validate, "joint: dimension mismatch");
  std::vector<float> z(h_enc.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = h_enc[i] * h_dec[i];
  return log_softmax(m.joint_out.forward(z));
}

LmState lm_initial_state(const LmModel& m) {
  LmState s;
  for (const auto& layer : m.lstm) {
    s.h.push_back(initial_hidden(layer));
    s.c.emplace_back(static_cast<std::size_t>(layer.cfg.hidden_size), 0.0f);
  }
  return s;
}

std::vector<float> lm_step(const LmModel& m, long symbol, LmState& state) {
  long sym = symbol < 0 ? m.arch.vocab - 1 : symbol;
  qrnn::StepAct x;
  x.values = m.embed.lookup(sym);
  for (std::size_t l = 0; l < m.lstm.size(); ++l)
    x = stateful_step(m.lstm[l], std::move(x), state.h[l], state.c[l]);
  auto b = m.bottleneck.forward(x.values);
  return log_softmax(m.out.forward(b));
}

// --- calibration ----------------------------------------------------------------

namespace {

struct SiteStats {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  std::vector<float> samples;
  std::size_t seen = 0;
  static constexpr std::size_t kCap = 65536;

  void add(std::span<const float> x) {
    for (float v : x) {
      lo = std::min(lo, static_cast<double>(v));
      hi = std::max(hi, static_cast<double>(v));
      if (samples.size() < kCap)
        samples.push_back(v);
      else
        samples[(seen * 2654435761ull) % kCap] = v;
      ++seen;
    }
  }
};

using StatsMap = std::map<std::string, SiteStats>;

bool needs_data(const qcore::QuantizerSpec& s) {
  if (s.kind == qcore::QuantizerKind::MAX) return true;
  if (s.kind == qcore::QuantizerKind::PACT && !s.learned_bounds) return true;
  return false;
}

// Resolves one activation site; PACT writes the learned bounds back into
// the spec so they persist with the scheme.
qcore::QuantParams resolve_activation(qcore::QuantizerSpec& spec, const std::string& site,
                                      StatsMap& stats, const PactOptions& pact) {
  switch (spec.kind) {
    case qcore::QuantizerKind::FIX:
      return qcore::static_params(spec);
    case qcore::QuantizerKind::MAX: {
      auto it = stats.find(site);
      require(it != stats.end() && it->second.seen > 0, ErrorCode::validate,
              "missing calibration data for MAX site '" + site + "'");
      if (spec.symmetric) {
        double bound = std::max({std::fabs(it->second.lo), std::fabs(it->second.hi), 1e-8});
        return qcore::symmetric_params(spec.bits, bound);
      }
      double lo = std::min(it->second.lo, 0.0);
      double hi = std::max(it->second.hi, 0.0);
      if (hi - lo < 1e-8) hi = lo + 1e-8;
      return qcore::asymmetric_params(spec.bits, lo, hi);
    }
    case qcore::QuantizerKind::PACT: {
      if (spec.learned_bounds) return qcore::static_params(spec);
      auto it = stats.find(site);
      require(it != stats.end() && it->second.samples.size() >= 2, ErrorCode::validate,
              "missing calibration data for PACT site '" + site + "'");
      auto r = qcore::calibrate_pact(it->second.samples, spec.bits, pact.steps, pact.lr);
      spec.learned_bounds = {{r.params.lower, r.params.upper}};
      return r.params;
    }
    default:
      fail(ErrorCode::validate, "SAWB is a weight quantizer; invalid for activation site " + site);
  }
}

qcore::QuantParams weight_params_for(std::span<const float> w, const qcore::QuantizerSpec& spec,
                                     qcore::SawbMode sawb_mode) {
  switch (spec.kind) {
    case qcore::QuantizerKind::MAX:
      return qcore::bounds_max(w, true, spec.bits);
    case qcore::QuantizerKind::SAWB:
      return qcore::bounds_sawb(w, spec.bits, sawb_mode);
    case qcore::QuantizerKind::FIX:
    case qcore::QuantizerKind::PACT:
      return qcore::static_params(spec);
  }
  fail(ErrorCode::validate, "unhandled weight quantizer kind");
}

void quantize_linear(LinearLayer& l, const LayerScheme& ls, const std::string& id,
                     qcore::SawbMode sawb_mode) {
  require(ls.weight.has_value(), ErrorCode::validate, "layer '" + id + "': weight spec required");
  require(!ls.hidden.has_value(), ErrorCode::validate,
          "layer '" + id + "': hidden role invalid for a linear layer");
  auto p = weight_params_for(l.w, *ls.weight, sawb_mode);
  l.w_packed = qtensor::quantize_pack(l.w, {l.out, l.in}, p, id);
  l.w_q = qtensor::unpack_weights(*l.w_packed);
}

void quantize_embedding(Embedding& e, const LayerScheme& ls, const std::string& id,
                        qcore::SawbMode sawb_mode) {
  require(ls.weight.has_value(), ErrorCode::validate, "layer '" + id + "': weight spec required");
  auto p = weight_params_for(e.table, *ls.weight, sawb_mode);
  e.packed = qtensor::quantize_pack(e.table, {e.vocab, e.dim}, p, id);
}

void reset_lstm_quant(qrnn::LstmLayer& layer) {
  layer.cfg.weight_spec.reset();
  layer.cfg.input_spec.reset();
  layer.cfg.hidden_spec.reset();
  auto reset_dir = [](qrnn::LstmDirWeights& w) {
    w.w_ih_packed.reset();
    w.w_hh_packed.reset();
    w.w_ih_q.reset();
    w.w_hh_q.reset();
    w.input_params.reset();
    w.hidden_params.reset();
  };
  reset_dir(layer.fwd);
  if (layer.bwd) reset_dir(*layer.bwd);
}

void apply_lstm_scheme(qrnn::LstmLayer& layer, LayerScheme& ls, const std::string& id,
                       qrnn::Placement placement, qcore::SawbMode sawb_mode, StatsMap& stats,
                       const PactOptions& pact) {
  require(ls.weight && ls.input && ls.hidden, ErrorCode::validate,
          "layer '" + id + "': LSTM entries need weight, input, and hidden specs");
  layer.cfg.weight_spec = ls.weight;
  layer.cfg.input_spec = ls.input;
  layer.cfg.hidden_spec = ls.hidden;
  layer.cfg.placement = placement;

  auto input_p = resolve_activation(*ls.input, id + ".input", stats, pact);
  layer.fwd.input_params = input_p;
  layer.fwd.hidden_params = resolve_activation(*ls.hidden, id + ".fwd.hidden", stats, pact);
  if (layer.bwd) {
    layer.bwd->input_params = input_p;
    // each direction owns its hidden-state boundaries
    auto hid_spec = *ls.hidden;
    layer.bwd->hidden_params = resolve_activation(hid_spec, id + ".bwd.hidden", stats, pact);
  }
  auto quantize_dir_weights = [&](qrnn::LstmDirWeights& w) {
    auto pack_one = [&](std::span<const float> data, long rows, long cols) {
      auto p = weight_params_for(data, *ls.weight, sawb_mode);
      return qtensor::quantize_pack(data, {rows, cols}, p, id);
    };
    w.w_ih_packed = pack_one(w.w_ih, 4 * layer.cfg.hidden_size, layer.cfg.input_size);
    w.w_hh_packed = pack_one(w.w_hh, 4 * layer.cfg.hidden_size, layer.cfg.hidden_size);
    w.w_ih_q = qtensor::unpack_weights(*w.w_ih_packed);
    w.w_hh_q = qtensor::unpack_weights(*w.w_hh_packed);
  };
  quantize_dir_weights(layer.fwd);
  if (layer.bwd) quantize_dir_weights(*layer.bwd);
}

void collect_site(StatsMap& stats, const std::set<std::string>& wanted, const std::string& site,
                  std::span<const float> values) {
  if (wanted.count(site)) stats[site].add(values);
}

void collect_lstm_stack(const std::vector<const qrnn::LstmLayer*>& layers,
                        const std::string& prefix, const qrnn::ActSeq& input, StatsMap& stats,
                        const std::set<std::string>& wanted, qrnn::ActSeq& final_out,
                        long first_index = 0) {
  qrnn::ActSeq seq = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::string id = prefix + std::to_string(first_index + static_cast<long>(l));
    for (const auto& step : seq) collect_site(stats, wanted, id + ".input", step.values);
    seq = qrnn::run_layer(*layers[l], seq, nullptr);
    long hs = layers[l]->cfg.hidden_size;
    for (const auto& step : seq) {
      collect_site(stats, wanted, id + ".fwd.hidden",
                   std::span<const float>(step.values.data(), static_cast<std::size_t>(hs)));
      if (layers[l]->cfg.bidirectional)
        collect_site(stats, wanted, id + ".bwd.hidden",
                     std::span<const float>(step.values.data() + hs, static_cast<std::size_t>(hs)));
    }
  }
  final_out = std::move(seq);
}

}  // namespace

// Which sites the scheme needs data for, keyed like the layer map.
static std::set<std::string> wanted_sites(const QuantSchemeConfig& scheme, bool bidirectional_ids) {
  std::set<std::string> wanted;
  for (const auto& [id, ls] : scheme.layers) {
    if (ls.input && needs_data(*ls.input)) wanted.insert(id + ".input");
    if (ls.hidden && needs_data(*ls.hidden)) {
      wanted.insert(id + ".fwd.hidden");
      if (bidirectional_ids) wanted.insert(id + ".bwd.hidden");
    }
  }
  return wanted;
}

void quantize_model(RnntModel& m, const QuantSchemeConfig& scheme, const CalibrationData& calib,
                    const PactOptions& pact) {
  validate_scheme(scheme);
  std::set<std::string> valid_ids = {"encoder.proj", "pred.embed", "pred.lstm", "pred.proj",
                                     "joint.out"};
  for (long l = 0; l < m.arch.encoder_layers; ++l)
    valid_ids.insert("encoder.lstm" + std::to_string(l));
  // One scheme file covers the whole fused system; LM entries are for the
  // LM checkpoints, anything else must name a real RNN-T layer.
  QuantSchemeConfig filtered = scheme;
  filtered.layers.clear();
  for (const auto& [id, ls] : scheme.layers) {
    if (id.rfind("lm_ext.", 0) == 0 || id.rfind("lm_src.", 0) == 0) continue;
    require(valid_ids.count(id) > 0, ErrorCode::validate,
            "scheme layer '" + id + "' does not exist in the RNN-T");
    filtered.layers[id] = ls;
  }

  // back to identity mode so collection sees real activations
  for (auto& layer : m.encoder) reset_lstm_quant(layer);
  reset_lstm_quant(m.pred_lstm);
  m.enc_proj.w_packed.reset();
  m.enc_proj.w_q.reset();
  m.enc_proj.input_params.reset();
  m.pred_proj.w_packed.reset();
  m.pred_proj.w_q.reset();
  m.pred_proj.input_params.reset();
  m.joint_out.w_packed.reset();
  m.joint_out.w_q.reset();
  m.joint_out.input_params.reset();
  m.pred_embed.packed.reset();
  m.quantized = false;
  m.scheme = std::move(filtered);

  auto wanted = wanted_sites(m.scheme, true);
  bool needs_features = false, needs_labels = false;
  for (const auto& s : wanted) {
    if (s.rfind("encoder.", 0) == 0 || s == "joint.out.input") needs_features = true;
    if (s.rfind("pred.", 0) == 0 || s == "joint.out.input") needs_labels = true;
  }

  StatsMap stats;
  if (needs_features)
    require(!calib.features.empty(), ErrorCode::validate,
            "scheme has data-dependent activation quantizers; calibration features required");
  if (needs_labels)
    require(!calib.label_seqs.empty(), ErrorCode::validate,
            "scheme has data-dependent activation quantizers on the prediction side; "
            "calibration label sequences required");

  if (needs_features || needs_labels) {
    std::size_t n_utts = std::max(calib.features.size(), calib.label_seqs.size());
    for (std::size_t u = 0; u < n_utts; ++u) {
      std::vector<std::vector<float>> h_dec_list;
      if (!calib.label_seqs.empty()) {
        const auto& labels = calib.label_seqs[u % calib.label_seqs.size()];
        PredState st = pred_initial_state(m);
        long prev = -1;
        for (std::size_t i = 0; i <= labels.size(); ++i) {
          auto emb = m.pred_embed.lookup(prev < 0 ? m.arch.vocab - 1 : prev);
          collect_site(stats, wanted, "pred.lstm.input", emb);
          qrnn::StepAct x;
          x.values = emb;
          auto hstep = stateful_step(m.pred_lstm, std::move(x), st.h, st.c);
          collect_site(stats, wanted, "pred.lstm.fwd.hidden", hstep.values);
          collect_site(stats, wanted, "pred.proj.input", hstep.values);
          h_dec_list.push_back(m.pred_proj.forward(hstep.values));
          if (i < labels.size()) prev = labels[i];
        }
      }
      if (!calib.features.empty()) {
        const auto& feats = calib.features[u % calib.features.size()];
        std::vector<const qrnn::LstmLayer*> layers;
        for (const auto& l : m.encoder) layers.push_back(&l);
        qrnn::ActSeq enc_out;
        collect_lstm_stack(layers, "encoder.lstm", qrnn::make_act_seq(feats), stats, wanted,
                           enc_out);
        for (std::size_t t = 0; t < enc_out.size(); ++t) {
          collect_site(stats, wanted, "encoder.proj.input", enc_out[t].values);
          if (wanted.count("joint.out.input") && !h_dec_list.empty()) {
            auto h_enc = m.enc_proj.forward(enc_out[t].values);
            const auto& h_dec = h_dec_list[t % h_dec_list.size()];
            std::vector<float> z(h_enc.size());
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = h_enc[i] * h_dec[i];
            collect_site(stats, wanted, "joint.out.input", z);
          }
        }
      }
    }
  }

  for (long l = 0; l < m.arch.encoder_layers; ++l) {
    std::string id = "encoder.lstm" + std::to_string(l);
    auto it = m.scheme.layers.find(id);
    if (it != m.scheme.layers.end())
      apply_lstm_scheme(m.encoder[static_cast<std::size_t>(l)], it->second, id, m.scheme.placement,
                        m.scheme.sawb_mode, stats, pact);
  }
  if (auto it = m.scheme.layers.find("pred.lstm"); it != m.scheme.layers.end())
    apply_lstm_scheme(m.pred_lstm, it->second, "pred.lstm", m.scheme.placement, m.scheme.sawb_mode,
                      stats, pact);

  auto apply_linear = [&](LinearLayer& lin, const std::string& id) {
    auto it = m.scheme.layers.find(id);
    if (it == m.scheme.layers.end()) return;
    quantize_linear(lin, it->second, id, m.scheme.sawb_mode);
    if (it->second.input)
      lin.input_params = resolve_activation(*it->second.input, id + ".input", stats, pact);
  };
  apply_linear(m.enc_proj, "encoder.proj");
  apply_linear(m.pred_proj, "pred.proj");
  apply_linear(m.joint_out, "joint.out");
  if (auto it = m.scheme.layers.find("pred.embed"); it != m.scheme.layers.end())
    quantize_embedding(m.pred_embed, it->second, "pred.embed", m.scheme.sawb_mode);

  m.quantized = !m.scheme.empty();
}

void quantize_model(LmModel& m, const QuantSchemeConfig& scheme, const CalibrationData& calib,
                    const PactOptions& pact) {
  validate_scheme(scheme);
  std::string prefix = m.role == LmRole::EXT ? "lm_ext." : "lm_src.";
  std::set<std::string> valid_ids = {prefix + "embed", prefix + "bottleneck", prefix + "out"};
  for (std::size_t l = 0; l < m.lstm.size(); ++l)
    valid_ids.insert(prefix + "lstm" + std::to_string(l));
  QuantSchemeConfig filtered = scheme;
  filtered.layers.clear();
  for (const auto& [id, ls] : scheme.layers) {
    if (id.rfind(prefix, 0) != 0) continue;
    require(valid_ids.count(id) > 0, ErrorCode::validate,
            "scheme layer '" + id + "' does not exist in this LM");
    filtered.layers[id] = ls;
  }

  for (auto& layer : m.lstm) reset_lstm_quant(layer);
  m.embed.packed.reset();
  m.bottleneck.w_packed.reset();
  m.bottleneck.w_q.reset();
  m.bottleneck.input_params.reset();
  m.out.w_packed.reset();
  m.out.w_q.reset();
  m.out.input_params.reset();
  m.quantized = false;
  m.scheme = std::move(filtered);

  auto wanted = wanted_sites(m.scheme, false);
  StatsMap stats;
  if (!wanted.empty()) {
    require(!calib.label_seqs.empty(), ErrorCode::validate,
            "LM scheme has data-dependent activation quantizers; calibration label sequences "
            "required");
    for (const auto& labels : calib.label_seqs) {
      LmState st = lm_initial_state(m);
      long prev = -1;
      for (std::size_t i = 0; i <= labels.size(); ++i) {
        auto x = m.embed.lookup(prev < 0 ? m.arch.vocab - 1 : prev);
        qrnn::StepAct act;
        act.values = x;
        for (std::size_t l = 0; l < m.lstm.size(); ++l) {
          std::string id = prefix + "lstm" + std::to_string(l);
          collect_site(stats, wanted, id + ".input", act.values);
          act = stateful_step(m.lstm[l], std::move(act), st.h[l], st.c[l]);
          collect_site(stats, wanted, id + ".fwd.hidden", act.values);
        }
        collect_site(stats, wanted, prefix + "bottleneck.input", act.values);
        auto b = m.bottleneck.forward(act.values);
        collect_site(stats, wanted, prefix + "out.input", b);
        if (i < labels.size()) prev = labels[i];
      }
    }
  }

  for (std::size_t l = 0; l < m.lstm.size(); ++l) {
    std::string id = prefix + "lstm" + std::to_string(l);
    if (auto it = m.scheme.layers.find(id); it != m.scheme.layers.end())
      apply_lstm_scheme(m.lstm[l], it->second, id, m.scheme.placement, m.scheme.sawb_mode, stats,
                        pact);
  }
  auto apply_linear = [&](LinearLayer& lin, const std::string& id) {
    auto it = m.scheme.layers.find(id);
    if (it == m.scheme.layers.end()) return;
    quantize_linear(lin, it->second, id, m.scheme.sawb_mode);
    if (it->second.input)
      lin.input_params = resolve_activation(*it->second.input, id + ".input", stats, pact);
  };
  apply_linear(m.bottleneck, prefix + "bottleneck");
  apply_linear(m.out, prefix + "out");
  if (auto it = m.scheme.layers.find(prefix + "embed"); it != m.scheme.layers.end())
    quantize_embedding(m.embed, it->second, prefix + "embed", m.scheme.sawb_mode);

  m.quantized = !m.scheme.empty();
}

// --- size accounting -------------------------------------------------------------

namespace {

double bytes_per_param(int bits) {
  switch (bits) {
    case 2: return 0.25;
    case 4: return 0.5;
    case 8: return 1.0;
    case 32: return 4.0;
    default: fail(ErrorCode::validate, "unsupported storage width " + std::to_string(bits));
  }
}

struct PlanCtx {
  SizeReport report;
  std::map<int, long> params_by_bits;
  long total_params = 0;

  void add(const std::string& name, long params, int bits) {
    SizeReport::Row row{name, params, bits, static_cast<double>(params) * bytes_per_param(bits)};
    report.rows.push_back(row);
    report.quantized_bytes += row.bytes;
    report.baseline_bytes += static_cast<double>(params) * 4.0;
    params_by_bits[bits] += params;
    total_params += params;
  }
};

int weight_bits(const QuantSchemeConfig& scheme, const std::string& id) {
  const LayerScheme* ls = scheme.find(id);
  if (ls == nullptr || !ls->weight) return 32;
  return ls->weight->bits;
}

void plan_lstm(PlanCtx& ctx, const QuantSchemeConfig& scheme, const std::string& id, long in,
               long hidden, bool bidir) {
  int bits = weight_bits(scheme, id);
  long dirs = bidir ? 2 : 1;
  for (long d = 0; d < dirs; ++d) {
    std::string dir = bidir ? (d == 0 ? ".fwd" : ".bwd") : ".fwd";
    ctx.add(id + dir + ".w_ih", 4 * hidden * in, bits);
    ctx.add(id + dir + ".w_hh", 4 * hidden * hidden, bits);
    ctx.add(id + dir + ".bias", 4 * hidden, 32);
  }
}

void plan_linear(PlanCtx& ctx, const QuantSchemeConfig& scheme, const std::string& id, long in,
                 long out) {
  ctx.add(id + ".w", out * in, weight_bits(scheme, id));
  ctx.add(id + ".b", out, 32);
}

void finish(PlanCtx& ctx) {
  for (const auto& [bits, n] : ctx.params_by_bits)
    ctx.report.param_fraction_by_bits[bits] =
        static_cast<double>(n) / static_cast<double>(ctx.total_params);
}

}  // namespace

SizeReport plan_size_report(const ArchConfig& arch, const QuantSchemeConfig& scheme, bool rnnt,
                            bool lm_ext, bool lm_src) {
  validate(arch);
  PlanCtx ctx;
  if (rnnt) {
    long in = arch.encoder_input;
    for (long l = 0; l < arch.encoder_layers; ++l) {
      plan_lstm(ctx, scheme, "encoder.lstm" + std::to_string(l), in, arch.encoder_hidden, true);
      in = 2 * arch.encoder_hidden;
    }
    plan_linear(ctx, scheme, "encoder.proj", 2 * arch.encoder_hidden, arch.joint_dim);
    ctx.add("pred.embed.table", arch.vocab * arch.embed_dim, weight_bits(scheme, "pred.embed"));
    plan_lstm(ctx, scheme, "pred.lstm", arch.embed_dim, arch.pred_hidden, false);
    plan_linear(ctx, scheme, "pred.proj", arch.pred_hidden, arch.joint_dim);
    plan_linear(ctx, scheme, "joint.out", arch.joint_dim, arch.vocab);
  }
  if (lm_ext) {
    ctx.add("lm_ext.embed.table", arch.vocab * arch.lm_ext_embed,
            weight_bits(scheme, "lm_ext.embed"));
    long in = arch.lm_ext_embed;
    for (long l = 0; l < arch.lm_ext_layers; ++l) {
      plan_lstm(ctx, scheme, "lm_ext.lstm" + std::to_string(l), in, arch.lm_ext_hidden, false);
      in = arch.lm_ext_hidden;
    }
    plan_linear(ctx, scheme, "lm_ext.bottleneck", arch.lm_ext_hidden, arch.lm_ext_bottleneck);
    plan_linear(ctx, scheme, "lm_ext.out", arch.lm_ext_bottleneck, arch.vocab);
  }
  if (lm_src) {
    ctx.add("lm_src.embed.table", arch.vocab * arch.embed_dim, weight_bits(scheme, "lm_src.embed"));
    plan_lstm(ctx, scheme, "lm_src.lstm0", arch.embed_dim, arch.pred_hidden, false);
    plan_linear(ctx, scheme, "lm_src.bottleneck", arch.pred_hidden, arch.joint_dim);
    plan_linear(ctx, scheme, "lm_src.out", arch.joint_dim, arch.vocab);
  }
  finish(ctx);
  return ctx.report;
}

nlohmann::json size_report_to_json(const SizeReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"name", row.name}, {"params", row.params}, {"bits", row.bits},
                    {"bytes", row.bytes}});
  nlohmann::json fractions = nlohmann::json::object();
  for (const auto& [bits, f] : r.param_fraction_by_bits)
    fractions[std::to_string(bits)] = f;
  return {{"rows", rows},
          {"quantized_bytes", r.quantized_bytes},
          {"baseline_bytes", r.baseline_bytes},
          {"megabytes", r.megabytes()},
          {"compression", r.compression()},
          {"param_fraction_by_bits", fractions}};
}

std::string format_size_report(const SizeReport& r) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "size: %.1f MB (baseline %.1f MB, compression %.2fx)\n",
                r.megabytes(), r.baseline_megabytes(), r.compression());
  out += buf;
  for (const auto& [bits, f] : r.param_fraction_by_bits) {
    std::snprintf(buf, sizeof buf, "  %2d-bit params: %5.1f%%\n", bits, 100.0 * f);
    out += buf;
  }
  return out;
}

}  // namespace qrt::model
