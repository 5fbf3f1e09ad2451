#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qrt/model.hpp"

namespace qrt::hwsim {

enum class Precision { real16, int8, int4 };
enum class OpKind { matmul, elementwise, transfer, sort, control };
enum class Device { coprocessor, cpu };
enum class Component { encoder, prediction, lm_ext, lm_src, non_accelerable };

const char* precision_name(Precision p);
Precision precision_from_name(const std::string& s);
Precision precision_from_bits(int bits);
double bytes_per_value(Precision p);
const char* component_name(Component c);

struct TraceOp {
  OpKind kind = OpKind::matmul;
  Precision precision = Precision::real16;
  double macs = 0.0;
  double bytes = 0.0;
  Device device = Device::coprocessor;
  Component component = Component::encoder;
  double units = 1.0;  // multiplier for per-unit CPU latencies
};

struct WorkloadTrace {
  std::string label;
  long frames = 0;
  long beam = 0;
  bool fused = false;
  long cache_hits = 0;
  long cache_misses = 0;
  std::vector<TraceOp> ops;
};

// Accelerator cost model: one coprocessor with peak MAC rates per
// precision behind a CPU link of fixed bandwidth, plus a CPU running the
// control-heavy search ops. Per coprocessor op,
//   time = max(macs / rate(precision), bytes / bandwidth) + launch overhead;
// CPU ops cost latency(kind) * units. Ops are summed serially.
struct HwConfig {
  std::string name;
  std::map<Precision, double> peak_macs_per_s;
  double link_bandwidth = 0.0;  // bytes/s
  std::map<OpKind, double> cpu_op_latency;
  double kernel_launch_overhead = 0.0;
  double frame_duration = 0.0;  // seconds of audio per frame
};

void validate(const HwConfig& hw);
HwConfig hw_preset(const std::string& name);  // "bw32", "bw64"
std::vector<std::string> hw_preset_names();
HwConfig hw_from_json(const nlohmann::json& j);
nlohmann::json hw_to_json(const HwConfig& hw);
// Accepts a preset name or a JSON file path.
HwConfig resolve_hw(const std::string& name_or_path);

struct RtfReport {
  std::string label;
  long beam = 0;
  double total_s = 0.0;
  double audio_s = 0.0;
  std::map<Component, double> breakdown;

  double rtf() const { return audio_s > 0.0 ? total_s / audio_s : 0.0; }
  double share(Component c) const;
};

RtfReport simulate(const WorkloadTrace& trace, const HwConfig& hw);

// Acceleration of `a` over baseline `b`: time_b / time_a per component
// and in total.
struct AccelReport {
  std::map<Component, double> per_component;
  double total = 0.0;
  // prediction + lm_ext + lm_src combined (the decoding loop)
  double decoder = 0.0;
};
AccelReport compare(const RtfReport& a, const RtfReport& b);

// --- analytic paper-scale workload -------------------------------------------

struct WorkloadSpec {
  model::ArchConfig arch;
  Precision precision = Precision::real16;
  long frames = 152;
  long beam = 16;
  bool fused = true;
};

WorkloadTrace generate_trace(const WorkloadSpec& spec);

std::vector<RtfReport> sweep_beam(const WorkloadSpec& spec, const HwConfig& hw,
                                  const std::vector<long>& beams);

// --- serialization -------------------------------------------------------------

nlohmann::json trace_to_json(const WorkloadTrace& t);
WorkloadTrace trace_from_json(const nlohmann::json& j);
void save_trace(const WorkloadTrace& t, const std::string& path);
WorkloadTrace load_trace(const std::string& path);

nlohmann::json report_to_json(const RtfReport& r);
std::string format_report(const RtfReport& r);
std::string sweep_csv(const std::vector<RtfReport>& reports);

// --- shared cost formulas (used by the decoder's trace emission) ---------------

struct TraceBuilder {
  WorkloadTrace trace;

  void matmul(Component c, Precision p, double macs, double bytes);
  void elementwise(Component c, double macs);
  void transfer(Component c, double bytes);
  void cpu(OpKind kind, double units);
};

// bytes of tile/activation traffic charged per MAC on the coprocessor
double coproc_bytes_per_mac();
// per-hypothesis recurrent state bytes shuttled across the link each
// search iteration (hidden at the model precision, cell at real16)
double pred_state_bytes(const model::ArchConfig& arch, Precision p);
double lm_ext_state_bytes(const model::ArchConfig& arch, Precision p);
double lm_src_state_bytes(const model::ArchConfig& arch, Precision p);

double encoder_layer_macs(const model::ArchConfig& arch, long layer);  // per step per direction
double encoder_total_macs(const model::ArchConfig& arch, long frames);
double pred_step_macs(const model::ArchConfig& arch);
double lm_ext_step_macs(const model::ArchConfig& arch);
double lm_src_step_macs(const model::ArchConfig& arch);
double joint_macs(const model::ArchConfig& arch);

}  // namespace qrt::hwsim
