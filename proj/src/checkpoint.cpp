#include "qrt/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace qrt::model {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'Q', 'R', 'T', '1'};

json params_to_json(const qcore::QuantParams& p) {
  return json{{"bits", p.bits},         {"lower", p.lower},
              {"upper", p.upper},       {"symmetric", p.symmetric},
              {"scale", p.scale},       {"zero_point", p.zero_point}};
}

qcore::QuantParams params_from_json(const json& j) {
  qcore::QuantParams p;
  p.bits = j.at("bits").get<int>();
  p.lower = j.at("lower").get<double>();
  p.upper = j.at("upper").get<double>();
  p.symmetric = j.at("symmetric").get<bool>();
  p.scale = j.at("scale").get<double>();
  p.zero_point = j.at("zero_point").get<double>();
  return p;
}

struct Builder {
  json tensors = json::array();
  std::vector<std::uint8_t> payload;

  void add_real(const std::string& name, std::vector<long> shape,
                std::span<const float> values) {
    json t{{"name", name}, {"shape", shape}, {"kind", "real32"}};
    t["offset"] = payload.size();
    std::size_t nbytes = values.size() * sizeof(float);
    t["nbytes"] = nbytes;
    std::size_t at = payload.size();
    payload.resize(at + nbytes);
    std::memcpy(payload.data() + at, values.data(), nbytes);
    tensors.push_back(std::move(t));
  }

  void add_packed(const std::string& name, const qtensor::PackedTensor& t) {
    json e{{"name", name},
           {"shape", t.shape},
           {"kind", "packed" + std::to_string(t.bits)},
           {"params", params_to_json(t.params)}};
    e["offset"] = payload.size();
    e["nbytes"] = t.codes.size();
    payload.insert(payload.end(), t.codes.begin(), t.codes.end());
    tensors.push_back(std::move(e));
  }

  void add_weight(const std::string& name, std::vector<long> shape,
                  std::span<const float> master,
                  const std::optional<qtensor::PackedTensor>& packed) {
    if (packed)
      add_packed(name, *packed);
    else
      add_real(name, std::move(shape), master);
  }
};

void emit_lstm(Builder& b, json& act_params, const std::string& id,
               const qrnn::LstmLayer& layer) {
  auto emit_dir = [&](const std::string& dir, const qrnn::LstmDirWeights& w) {
    long h4 = 4 * layer.cfg.hidden_size;
    b.add_weight(id + dir + ".w_ih", {h4, layer.cfg.input_size}, w.w_ih, w.w_ih_packed);
    b.add_weight(id + dir + ".w_hh", {h4, layer.cfg.hidden_size}, w.w_hh, w.w_hh_packed);
    b.add_real(id + dir + ".bias", {h4}, w.bias);
    if (w.hidden_params) act_params[id + dir + ".hidden"] = params_to_json(*w.hidden_params);
  };
  emit_dir(".fwd", layer.fwd);
  if (layer.bwd) emit_dir(".bwd", *layer.bwd);
  if (layer.fwd.input_params) act_params[id + ".input"] = params_to_json(*layer.fwd.input_params);
}

void emit_linear(Builder& b, json& act_params, const std::string& id, const LinearLayer& l) {
  b.add_weight(id + ".w", {l.out, l.in}, l.w, l.w_packed);
  b.add_real(id + ".b", {l.out}, l.bias);
  if (l.input_params) act_params[id + ".input"] = params_to_json(*l.input_params);
}

void emit_embedding(Builder& b, const std::string& id, const Embedding& e) {
  b.add_weight(id + ".table", {e.vocab, e.dim}, e.table, e.packed);
}

json finish_header(const std::string& kind, const ArchConfig& arch,
                   const QuantSchemeConfig& scheme, bool quantized, Builder& b,
                   json act_params) {
  json h;
  h["format"] = "QRT1";
  h["kind"] = kind;
  h["quantized"] = quantized;
  h["arch"] = arch_to_json(arch);
  h["scheme"] = quantized ? scheme_to_json(scheme) : json(nullptr);
  h["activation_params"] = std::move(act_params);
  h["tensors"] = std::move(b.tensors);
  return h;
}

}  // namespace

Checkpoint to_checkpoint(const RnntModel& m) {
  Builder b;
  json act = json::object();
  for (long l = 0; l < m.arch.encoder_layers; ++l)
    emit_lstm(b, act, "encoder.lstm" + std::to_string(l),
              m.encoder[static_cast<std::size_t>(l)]);
  emit_linear(b, act, "encoder.proj", m.enc_proj);
  emit_embedding(b, "pred.embed", m.pred_embed);
  emit_lstm(b, act, "pred.lstm", m.pred_lstm);
  emit_linear(b, act, "pred.proj", m.pred_proj);
  emit_linear(b, act, "joint.out", m.joint_out);

  Checkpoint c;
  c.kind = "rnnt";
  c.header = finish_header("rnnt", m.arch, m.scheme, m.quantized, b, std::move(act));
  c.payload = std::move(b.payload);
  return c;
}

Checkpoint to_checkpoint(const LmModel& m) {
  std::string prefix = m.role == LmRole::EXT ? "lm_ext." : "lm_src.";
  Builder b;
  json act = json::object();
  emit_embedding(b, prefix + "embed", m.embed);
  for (std::size_t l = 0; l < m.lstm.size(); ++l)
    emit_lstm(b, act, prefix + "lstm" + std::to_string(l), m.lstm[l]);
  emit_linear(b, act, prefix + "bottleneck", m.bottleneck);
  emit_linear(b, act, prefix + "out", m.out);

  Checkpoint c;
  c.kind = m.role == LmRole::EXT ? "lm_ext" : "lm_src";
  c.header = finish_header(c.kind, m.arch, m.scheme, m.quantized, b, std::move(act));
  c.payload = std::move(b.payload);
  return c;
}

// --- reading ------------------------------------------------------------------

namespace {

struct Reader {
  const Checkpoint& c;
  std::map<std::string, json> table;
  const json& act_params;

  explicit Reader(const Checkpoint& ckpt) : c(ckpt), act_params(ckpt.header.at("activation_params")) {
    for (const auto& t : c.header.at("tensors")) table[t.at("name").get<std::string>()] = t;
  }

  const json& entry(const std::string& name) const {
    auto it = table.find(name);
    require(it != table.end(), ErrorCode::format, "checkpoint missing tensor '" + name + "'");
    return it->second;
  }

  std::span<const std::uint8_t> bytes(const json& t) const {
    std::uint64_t off = t.at("offset").get<std::uint64_t>();
    std::uint64_t n = t.at("nbytes").get<std::uint64_t>();
    return {c.payload.data() + off, static_cast<std::size_t>(n)};
  }

  std::vector<float> real(const std::string& name, long expect) const {
    const json& t = entry(name);
    require(t.at("kind") == "real32", ErrorCode::format,
            "tensor '" + name + "' expected real32 storage");
    auto raw = bytes(t);
    require(raw.size() == static_cast<std::size_t>(expect) * sizeof(float), ErrorCode::format,
            "tensor '" + name + "' byte length mismatch");
    std::vector<float> out(static_cast<std::size_t>(expect));
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
  }

  // weight tensors: real32, or packed with the master restored by dequantization
  void weight(const std::string& name, long rows, long cols, std::vector<float>& master,
              std::optional<qtensor::PackedTensor>& packed,
              std::optional<qtensor::QWeights>* runtime) const {
    const json& t = entry(name);
    std::string kind = t.at("kind").get<std::string>();
    if (kind == "real32") {
      master = real(name, rows * cols);
      return;
    }
    int bits = 0;
    if (kind == "packed8") bits = 8;
    else if (kind == "packed4") bits = 4;
    else if (kind == "packed2") bits = 2;
    else fail(ErrorCode::format, "tensor '" + name + "' has unknown kind '" + kind + "'");
    qtensor::PackedTensor pt;
    pt.shape = t.at("shape").get<std::vector<long>>();
    pt.bits = bits;
    pt.params = params_from_json(t.at("params"));
    require(pt.params.bits == bits, ErrorCode::format,
            "tensor '" + name + "' params bits disagree with storage kind");
    auto raw = bytes(t);
    require(raw.size() == qtensor::packed_bytes(pt.numel(), bits), ErrorCode::format,
            "tensor '" + name + "' packed byte length mismatch");
    pt.codes.assign(raw.begin(), raw.end());
    master = qtensor::dequantize_tensor(pt);
    if (runtime) *runtime = qtensor::unpack_weights(pt);
    packed = std::move(pt);
  }

  std::optional<qcore::QuantParams> act(const std::string& site) const {
    if (!act_params.contains(site)) return std::nullopt;
    return params_from_json(act_params.at(site));
  }
};

void read_lstm(const Reader& r, const std::string& id, qrnn::LstmLayer& layer) {
  auto read_dir = [&](const std::string& dir, qrnn::LstmDirWeights& w) {
    long h4 = 4 * layer.cfg.hidden_size;
    r.weight(id + dir + ".w_ih", h4, layer.cfg.input_size, w.w_ih, w.w_ih_packed, &w.w_ih_q);
    r.weight(id + dir + ".w_hh", h4, layer.cfg.hidden_size, w.w_hh, w.w_hh_packed, &w.w_hh_q);
    w.bias = r.real(id + dir + ".bias", h4);
    w.hidden_params = r.act(id + dir + ".hidden");
    w.input_params = r.act(id + ".input");
  };
  read_dir(".fwd", layer.fwd);
  if (layer.cfg.bidirectional) {
    layer.bwd.emplace();
    read_dir(".bwd", *layer.bwd);
  }
}

void read_linear(const Reader& r, const std::string& id, LinearLayer& l) {
  r.weight(id + ".w", l.out, l.in, l.w, l.w_packed, &l.w_q);
  l.bias = r.real(id + ".b", l.out);
  l.input_params = r.act(id + ".input");
}

void read_embedding(const Reader& r, const std::string& id, Embedding& e) {
  std::optional<qtensor::QWeights> unused;
  r.weight(id + ".table", e.vocab, e.dim, e.table, e.packed, nullptr);
  (void)unused;
}

void apply_scheme_specs(qrnn::LstmLayer& layer, const QuantSchemeConfig& scheme,
                        const std::string& id) {
  const LayerScheme* ls = scheme.find(id);
  if (ls == nullptr) return;
  layer.cfg.weight_spec = ls->weight;
  layer.cfg.input_spec = ls->input;
  layer.cfg.hidden_spec = ls->hidden;
  layer.cfg.placement = scheme.placement;
}

}  // namespace

RnntModel rnnt_from_checkpoint(const Checkpoint& c) {
  require(c.kind == "rnnt", ErrorCode::format, "checkpoint kind is '" + c.kind + "', not rnnt");
  ArchConfig arch = arch_from_json(c.header.at("arch"));
  RnntModel m = build_rnnt(arch, 0);
  m.quantized = c.header.value("quantized", false);
  if (m.quantized) m.scheme = scheme_from_json(c.header.at("scheme"));

  Reader r(c);
  for (long l = 0; l < arch.encoder_layers; ++l) {
    std::string id = "encoder.lstm" + std::to_string(l);
    auto& layer = m.encoder[static_cast<std::size_t>(l)];
    apply_scheme_specs(layer, m.scheme, id);
    read_lstm(r, id, layer);
  }
  apply_scheme_specs(m.pred_lstm, m.scheme, "pred.lstm");
  read_lstm(r, "pred.lstm", m.pred_lstm);
  read_linear(r, "encoder.proj", m.enc_proj);
  read_embedding(r, "pred.embed", m.pred_embed);
  read_linear(r, "pred.proj", m.pred_proj);
  read_linear(r, "joint.out", m.joint_out);
  return m;
}

LmModel lm_from_checkpoint(const Checkpoint& c) {
  require(c.kind == "lm_ext" || c.kind == "lm_src", ErrorCode::format,
          "checkpoint kind is '" + c.kind + "', not an LM");
  ArchConfig arch = arch_from_json(c.header.at("arch"));
  LmRole role = c.kind == "lm_ext" ? LmRole::EXT : LmRole::SRC;
  LmModel m = build_lm(arch, role, 0);
  m.quantized = c.header.value("quantized", false);
  if (m.quantized) m.scheme = scheme_from_json(c.header.at("scheme"));

  std::string prefix = role == LmRole::EXT ? "lm_ext." : "lm_src.";
  Reader r(c);
  read_embedding(r, prefix + "embed", m.embed);
  for (std::size_t l = 0; l < m.lstm.size(); ++l) {
    std::string id = prefix + "lstm" + std::to_string(l);
    apply_scheme_specs(m.lstm[l], m.scheme, id);
    read_lstm(r, id, m.lstm[l]);
  }
  read_linear(r, prefix + "bottleneck", m.bottleneck);
  read_linear(r, prefix + "out", m.out);
  return m;
}

// --- file io -------------------------------------------------------------------

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::io, "cannot write checkpoint '" + path + "'");
  f.write(kMagic, 4);
  std::string header = c.header.dump();
  std::uint32_t len = static_cast<std::uint32_t>(header.size());
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(c.payload.data()),
          static_cast<std::streamsize>(c.payload.size()));
  require(f.good(), ErrorCode::io, "short write on checkpoint '" + path + "'");
}

namespace {

void validate_table(const Checkpoint& c) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  std::uint64_t total = 0;
  for (const auto& t : c.header.at("tensors")) {
    require(t.contains("name") && t.contains("shape") && t.contains("kind") &&
                t.contains("offset") && t.contains("nbytes"),
            ErrorCode::format, "checkpoint tensor table entry incomplete");
    std::uint64_t off = t.at("offset").get<std::uint64_t>();
    std::uint64_t n = t.at("nbytes").get<std::uint64_t>();
    require(off + n <= c.payload.size(), ErrorCode::format,
            "checkpoint payload truncated: tensor '" + t.at("name").get<std::string>() +
                "' ends past the payload");
    spans.emplace_back(off, off + n);
    total += n;
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    require(spans[i].first >= spans[i - 1].second, ErrorCode::validate,
            "checkpoint tensor table has overlapping offsets");
  require(total == c.payload.size(), ErrorCode::format,
          "checkpoint payload length inconsistent with tensor table");
}

}  // namespace

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorCode::io, "cannot open checkpoint '" + path + "'");
  char magic[4];
  f.read(magic, 4);
  require(f.good() && std::memcmp(magic, kMagic, 4) == 0, ErrorCode::format,
          "'" + path + "' is not a QRT1 checkpoint");
  std::uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 4);
  require(f.good(), ErrorCode::format, "checkpoint header length truncated");
  std::string header(len, '\0');
  f.read(header.data(), len);
  require(f.good(), ErrorCode::format, "checkpoint header truncated");

  Checkpoint c;
  try {
    c.header = json::parse(header);
  } catch (const json::exception& e) {
    fail(ErrorCode::format, std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  require(c.header.value("format", "") == "QRT1", ErrorCode::format,
          "checkpoint header format mismatch");
  c.kind = c.header.value("kind", "");

  c.payload.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  validate_table(c);
  return c;
}

SizeReport size_report(const Checkpoint& c) {
  SizeReport r;
  std::map<int, long> params_by_bits;
  long total_params = 0;
  for (const auto& t : c.header.at("tensors")) {
    std::string kind = t.at("kind").get<std::string>();
    int bits = 32;
    if (kind == "packed8") bits = 8;
    else if (kind == "packed4") bits = 4;
    else if (kind == "packed2") bits = 2;
    else require(kind == "real32", ErrorCode::format, "unknown tensor kind '" + kind + "'");
    long params = 1;
    for (long d : t.at("shape").get<std::vector<long>>()) params *= d;
    double bpp = bits == 32 ? 4.0 : (bits == 8 ? 1.0 : (bits == 4 ? 0.5 : 0.25));
    SizeReport::Row row{t.at("name").get<std::string>(), params, bits,
                        static_cast<double>(params) * bpp};
    r.quantized_bytes += row.bytes;
    r.baseline_bytes += static_cast<double>(params) * 4.0;
    params_by_bits[bits] += params;
    total_params += params;
    r.rows.push_back(std::move(row));
  }
  for (const auto& [bits, n] : params_by_bits)
    r.param_fraction_by_bits[bits] = static_cast<double>(n) / static_cast<double>(total_params);
  return r;
}

}  // namespace qrt::model
