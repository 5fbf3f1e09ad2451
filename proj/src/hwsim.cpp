#include "qrt/hwsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace qrt::hwsim {

using nlohmann::json;

const char* precision_name(Precision p) {
  switch (p) {
    case Precision::real16: return "real16";
    case Precision::int8: return "int8";
    case Precision::int4: return "int4";
  }
  return "?";
}

Precision precision_from_name(const std::string& s) {
  if (s == "real16") return Precision::real16;
  if (s == "int8") return Precision::int8;
  if (s == "int4") return Precision::int4;
  fail(ErrorCode::config, "unknown precision '" + s + "' (real16, int8, int4)");
}

Precision precision_from_bits(int bits) {
  if (bits <= 4) return Precision::int4;
  if (bits <= 8) return Precision::int8;
  return Precision::real16;
}

double bytes_per_value(Precision p) {
  switch (p) {
    case Precision::real16: return 2.0;
    case Precision::int8: return 1.0;
    case Precision::int4: return 0.5;
  }
  return 2.0;
}

const char* component_name(Component c) {
  switch (c) {
    case Component::encoder: return "encoder";
    case Component::prediction: return "prediction";
    case Component::lm_ext: return "lm_ext";
    case Component::lm_src: return "lm_src";
    case Component::non_accelerable: return "non_accelerable";
  }
  return "?";
}

namespace {

Component component_from_name(const std::string& s) {
  for (Component c : {Component::encoder, Component::prediction, Component::lm_ext,
                      Component::lm_src, Component::non_accelerable})
    if (s == component_name(c)) return c;
  fail(ErrorCode::format, "unknown trace component '" + s + "'");
}

const char* kind_name(OpKind k) {
  switch (k) {
    case OpKind::matmul: return "matmul";
    case OpKind::elementwise: return "elementwise";
    case OpKind::transfer: return "transfer";
    case OpKind::sort: return "sort";
    case OpKind::control: return "control";
  }
  return "?";
}

OpKind kind_from_name(const std::string& s) {
  for (OpKind k : {OpKind::matmul, OpKind::elementwise, OpKind::transfer, OpKind::sort,
                   OpKind::control})
    if (s == kind_name(k)) return k;
  fail(ErrorCode::format, "unknown trace op kind '" + s + "'");
}

}  // namespace

void validate(const HwConfig& hw) {
  for (Precision p : {Precision::real16, Precision::int8, Precision::int4})
    require(hw.peak_macs_per_s.count(p) && hw.peak_macs_per_s.at(p) > 0, ErrorCode::validate,
            std::string("hw config missing peak rate for ") + precision_name(p));
  require(hw.peak_macs_per_s.at(Precision::int4) >= hw.peak_macs_per_s.at(Precision::int8) &&
              hw.peak_macs_per_s.at(Precision::int8) >= hw.peak_macs_per_s.at(Precision::real16),
          ErrorCode::validate, "hw peak rates must satisfy int4 >= int8 >= real16");
  require(hw.link_bandwidth > 0, ErrorCode::validate, "hw link bandwidth must be positive");
  require(hw.frame_duration > 0, ErrorCode::validate, "hw frame duration must be positive");
  require(hw.kernel_launch_overhead >= 0, ErrorCode::validate, "negative launch overhead");
  for (OpKind k : {OpKind::sort, OpKind::control})
    require(hw.cpu_op_latency.count(k) && hw.cpu_op_latency.at(k) >= 0, ErrorCode::validate,
            std::string("hw config missing cpu latency for ") + kind_name(k));
}

RtfReport simulate(const WorkloadTrace& trace, const HwConfig& hw) {
  validate(hw);
  RtfReport r;
  r.label = trace.label;
  r.beam = trace.beam;
  r.audio_s = static_cast<double>(trace.frames) * hw.frame_duration;
  for (Component c : {Component::encoder, Component::prediction, Component::lm_ext,
                      Component::lm_src, Component::non_accelerable})
    r.breakdown[c] = 0.0;

  for (const TraceOp& op : trace.ops) {
    require(op.macs >= 0 && op.bytes >= 0 && op.units >= 0, ErrorCode::validate,
            "trace op with negative counts");
    double t = 0.0;
    if (op.device == Device::cpu) {
      require(op.kind == OpKind::sort || op.kind == OpKind::control, ErrorCode::validate,
              "cpu ops must be sort or control");
      t = hw.cpu_op_latency.at(op.kind) * op.units;
      r.breakdown[Component::non_accelerable] += t;
    } else {
      require(op.kind != OpKind::sort && op.kind != OpKind::control, ErrorCode::validate,
              "sort/control ops must be mapped to the cpu");
      double rate = hw.peak_macs_per_s.at(op.precision);
      double compute = op.macs / rate;
      double transfer = op.bytes / hw.link_bandwidth;
      t = std::max(compute, transfer) + hw.kernel_launch_overhead;
      r.breakdown[op.component] += t;
    }
  }
  for (const auto& [c, t] : r.breakdown) r.total_s += t;
  return r;
}

double RtfReport::share(Component c) const {
  auto it = breakdown.find(c);
  if (it == breakdown.end() || total_s <= 0.0) return 0.0;
  return it->second / total_s;
}

AccelReport compare(const RtfReport& a, const RtfReport& b) {
  AccelReport out;
  double dec_a = 0.0, dec_b = 0.0;
  for (const auto& [c, tb] : b.breakdown) {
    double ta = a.breakdown.count(c) ? a.breakdown.at(c) : 0.0;
    out.per_component[c] = ta > 0.0 ? tb / ta : (tb > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
    if (c == Component::prediction || c == Component::lm_ext || c == Component::lm_src) {
      dec_a += ta;
      dec_b += tb;
    }
  }
  out.total = a.total_s > 0.0 ? b.total_s / a.total_s : 1.0;
  out.decoder = dec_a > 0.0 ? dec_b / dec_a : 1.0;
  return out;
}

// --- config io -------------------------------------------------------------------

json hw_to_json(const HwConfig& hw) {
  return json{{"name", hw.name},
              {"peak_macs_per_s",
               {{"real16", hw.peak_macs_per_s.at(Precision::real16)},
                {"int8", hw.peak_macs_per_s.at(Precision::int8)},
                {"int4", hw.peak_macs_per_s.at(Precision::int4)}}},
              {"link_bandwidth", hw.link_bandwidth},
              {"cpu_op_latency",
               {{"sort", hw.cpu_op_latency.at(OpKind::sort)},
                {"control", hw.cpu_op_latency.at(OpKind::control)}}},
              {"kernel_launch_overhead", hw.kernel_launch_overhead},
              {"frame_duration", hw.frame_duration}};
}

HwConfig hw_from_json(const json& j) {
  HwConfig hw;
  hw.name = j.value("name", std::string("custom"));
  const auto& rates = j.at("peak_macs_per_s");
  hw.peak_macs_per_s[Precision::real16] = rates.at("real16").get<double>();
  hw.peak_macs_per_s[Precision::int8] = rates.at("int8").get<double>();
  hw.peak_macs_per_s[Precision::int4] = rates.at("int4").get<double>();
  hw.link_bandwidth = j.at("link_bandwidth").get<double>();
  hw.cpu_op_latency[OpKind::sort] = j.at("cpu_op_latency").at("sort").get<double>();
  hw.cpu_op_latency[OpKind::control] = j.at("cpu_op_latency").at("control").get<double>();
  hw.kernel_launch_overhead = j.at("kernel_launch_overhead").get<double>();
  hw.frame_duration = j.at("frame_duration").get<double>();
  validate(hw);
  return hw;
}

std::vector<std::string> hw_preset_names() { return {"bw32", "bw64"}; }

HwConfig hw_preset(const std::string& name) {
  // Calibration constants fitted once against the published RTF anchor
  // points and frozen; bw64 differs only in link bandwidth.
  HwConfig hw;
  hw.name = name;
  hw.peak_macs_per_s[Precision::real16] = 2.15754e10;
  hw.peak_macs_per_s[Precision::int8] = 4.72216e10;
  hw.peak_macs_per_s[Precision::int4] = 2.71835e11;
  hw.cpu_op_latency[OpKind::sort] = 9.24103e-7;
  hw.cpu_op_latency[OpKind::control] = 3.54518e-6;
  hw.kernel_launch_overhead = 6.68629e-6;
  hw.frame_duration = 0.0360734;
  if (name == "bw32") {
    hw.link_bandwidth = 4.0e9;  // 32 Gbps
  } else if (name == "bw64") {
    hw.link_bandwidth = 8.0e9;  // 64 Gbps
  } else {
    std::string names;
    for (const auto& n : hw_preset_names()) names += (names.empty() ? "" : ", ") + n;
    fail(ErrorCode::config, "unknown hw preset '" + name + "' (presets: " + names + ")");
  }
  validate(hw);
  return hw;
}

HwConfig resolve_hw(const std::string& name_or_path) {
  for (const auto& n : hw_preset_names())
    if (name_or_path == n) return hw_preset(n);
  std::ifstream f(name_or_path);
  if (!f.good()) {
    std::string names;
    for (const auto& n : hw_preset_names()) names += (names.empty() ? "" : ", ") + n;
    fail(ErrorCode::config,
         "'" + name_or_path + "' is neither a hw preset (" + names + ") nor a readable file");
  }
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::format, "hw config '" + name_or_path + "' is not valid JSON: " + e.what());
  }
  return hw_from_json(j);
}

// --- trace / report serialization ---------------------------------------------

json trace_to_json(const WorkloadTrace& t) {
  json ops = json::array();
  for (const TraceOp& op : t.ops)
    ops.push_back({{"kind", kind_name(op.kind)},
                   {"precision", precision_name(op.precision)},
                   {"macs", op.macs},
                   {"bytes", op.bytes},
                   {"device", op.device == Device::cpu ? "cpu" : "coprocessor"},
                   {"component", component_name(op.component)},
                   {"units", op.units}});
  return json{{"label", t.label},     {"frames", t.frames},
              {"beam", t.beam},       {"fused", t.fused},
              {"cache_hits", t.cache_hits}, {"cache_misses", t.cache_misses},
              {"ops", ops}};
}

WorkloadTrace trace_from_json(const json& j) {
  WorkloadTrace t;
  t.label = j.value("label", std::string());
  t.frames = j.at("frames").get<long>();
  t.beam = j.value("beam", 0L);
  t.fused = j.value("fused", false);
  t.cache_hits = j.value("cache_hits", 0L);
  t.cache_misses = j.value("cache_misses", 0L);
  for (const auto& o : j.at("ops")) {
    TraceOp op;
    op.kind = kind_from_name(o.at("kind").get<std::string>());
    op.precision = precision_from_name(o.at("precision").get<std::string>());
    op.macs = o.at("macs").get<double>();
    op.bytes = o.at("bytes").get<double>();
    std::string dev = o.at("device").get<std::string>();
    require(dev == "cpu" || dev == "coprocessor", ErrorCode::format,
            "unknown trace device '" + dev + "'");
    op.device = dev == "cpu" ? Device::cpu : Device::coprocessor;
    op.component = component_from_name(o.at("component").get<std::string>());
    op.units = o.value("units", 1.0);
    t.ops.push_back(op);
  }
  return t;
}

void save_trace(const WorkloadTrace& t, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), ErrorCode::io, "cannot write trace '" + path + "'");
  f << trace_to_json(t).dump(2) << "\n";
  require(f.good(), ErrorCode::io, "short write on trace '" + path + "'");
}

WorkloadTrace load_trace(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::io, "cannot open trace '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::format, "trace '" + path + "' is not valid JSON: " + e.what());
  }
  return trace_from_json(j);
}

json report_to_json(const RtfReport& r) {
  json breakdown = json::object();
  for (const auto& [c, t] : r.breakdown) breakdown[component_name(c)] = t;
  return json{{"label", r.label},   {"beam", r.beam},   {"total_s", r.total_s},
              {"audio_s", r.audio_s}, {"rtf", r.rtf()}, {"breakdown", breakdown}};
}

std::string format_report(const RtfReport& r) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-24s beam=%-3ld rtf=%.4f  (%.4fs / %.2fs audio)\n",
                r.label.c_str(), r.beam, r.rtf(), r.total_s, r.audio_s);
  out += buf;
  for (const auto& [c, t] : r.breakdown) {
    std::snprintf(buf, sizeof buf, "  %-16s %8.4fs  %5.1f%%\n", component_name(c), t,
                  100.0 * r.share(c));
    out += buf;
  }
  return out;
}

std::string sweep_csv(const std::vector<RtfReport>& reports) {
  std::string out = "beam,component,seconds,rtf\n";
  char buf[160];
  for (const RtfReport& r : reports) {
    for (const auto& [c, t] : r.breakdown) {
      std::snprintf(buf, sizeof buf, "%ld,%s,%.6f,%.6f\n", r.beam, component_name(c), t,
                    r.audio_s > 0 ? t / r.audio_s : 0.0);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "%ld,total,%.6f,%.6f\n", r.beam, r.total_s, r.rtf());
    out += buf;
  }
  return out;
}

}  // namespace qrt::hwsim
