#include <cmath>

#include "qrt/hwsim.hpp"

namespace qrt::hwsim {

// Workload-model constants, fitted together with the hw presets against
// the published RTF anchor points and frozen. Byte intensities charge
// tile/activation traffic per MAC; the per-iteration constants cover the
// beam-independent link traffic of the decoding loop (acoustic embedding
// broadcast, logit readback, control words).
namespace {
constexpr double kEncBytesPerMac = 0.0488226;
constexpr double kDecBytesPerMac = 0.0275146;
constexpr double kPredIterBytes = 48142.0;
constexpr double kExtIterBytes = 1949820.0;
constexpr double kSrcIterBytes = 79243.0;
constexpr double kReusePerSlot = 0.547199;   // unique expansions per extra beam slot
constexpr double kLabelsPerFrame = 0.165891;
}  // namespace

double coproc_bytes_per_mac() { return kDecBytesPerMac; }

double pred_state_bytes(const model::ArchConfig& arch, Precision p) {
  return static_cast<double>(arch.pred_hidden) * (bytes_per_value(p) + 2.0);
}

double lm_ext_state_bytes(const model::ArchConfig& arch, Precision p) {
  return static_cast<double>(arch.lm_ext_layers * arch.lm_ext_hidden) *
         (bytes_per_value(p) + 2.0);
}

double lm_src_state_bytes(const model::ArchConfig& arch, Precision p) {
  return static_cast<double>(arch.pred_hidden) * (bytes_per_value(p) + 2.0);
}

double encoder_layer_macs(const model::ArchConfig& arch, long layer) {
  long in = layer == 0 ? arch.encoder_input : 2 * arch.encoder_hidden;
  return 4.0 * static_cast<double>(arch.encoder_hidden) *
         static_cast<double>(in + arch.encoder_hidden);
}

double encoder_total_macs(const model::ArchConfig& arch, long frames) {
  double macs = 0.0;
  for (long l = 0; l < arch.encoder_layers; ++l)
    macs += 2.0 * static_cast<double>(frames) * encoder_layer_macs(arch, l);
  macs += static_cast<double>(frames) *
          static_cast<double>(arch.joint_dim * 2 * arch.encoder_hidden);
  return macs;
}

double pred_step_macs(const model::ArchConfig& arch) {
  return 4.0 * static_cast<double>(arch.pred_hidden) *
             static_cast<double>(arch.embed_dim + arch.pred_hidden) +
         static_cast<double>(arch.pred_hidden * arch.joint_dim);
}

double lm_ext_step_macs(const model::ArchConfig& arch) {
  double macs = 0.0;
  long in = arch.lm_ext_embed;
  for (long l = 0; l < arch.lm_ext_layers; ++l) {
    macs += 4.0 * static_cast<double>(arch.lm_ext_hidden) *
            static_cast<double>(in + arch.lm_ext_hidden);
    in = arch.lm_ext_hidden;
  }
  macs += static_cast<double>(arch.lm_ext_hidden * arch.lm_ext_bottleneck);
  macs += static_cast<double>(arch.lm_ext_bottleneck * arch.vocab);
  return macs;
}

double lm_src_step_macs(const model::ArchConfig& arch) {
  return 4.0 * static_cast<double>(arch.pred_hidden) *
             static_cast<double>(arch.embed_dim + arch.pred_hidden) +
         static_cast<double>(arch.pred_hidden * arch.joint_dim) +
         static_cast<double>(arch.joint_dim * arch.vocab);
}

double joint_macs(const model::ArchConfig& arch) {
  return static_cast<double>(arch.joint_dim) +
         static_cast<double>(arch.vocab * arch.joint_dim);
}

// --- builder -------------------------------------------------------------------

void TraceBuilder::matmul(Component c, Precision p, double macs, double bytes) {
  trace.ops.push_back({OpKind::matmul, p, macs, bytes, Device::coprocessor, c, 1.0});
}

void TraceBuilder::elementwise(Component c, double macs) {
  trace.ops.push_back(
      {OpKind::elementwise, Precision::real16, macs, 0.0, Device::coprocessor, c, 1.0});
}

void TraceBuilder::transfer(Component c, double bytes) {
  trace.ops.push_back(
      {OpKind::transfer, Precision::real16, 0.0, bytes, Device::coprocessor, c, 1.0});
}

void TraceBuilder::cpu(OpKind kind, double units) {
  trace.ops.push_back(
      {kind, Precision::real16, 0.0, 0.0, Device::cpu, Component::non_accelerable, units});
}

// --- analytic paper-scale generator ----------------------------------------------

namespace {

long net_params(const model::ArchConfig& arch, Component c) {
  long n = 0;
  switch (c) {
    case Component::encoder: {
      long in = arch.encoder_input;
      for (long l = 0; l < arch.encoder_layers; ++l) {
        n += 2 * 4 * arch.encoder_hidden * (in + arch.encoder_hidden + 1);
        in = 2 * arch.encoder_hidden;
      }
      n += arch.joint_dim * 2 * arch.encoder_hidden + arch.joint_dim;
      return n;
    }
    case Component::prediction:
      return arch.vocab * arch.embed_dim +
             4 * arch.pred_hidden * (arch.embed_dim + arch.pred_hidden + 1) +
             arch.joint_dim * arch.pred_hidden + arch.joint_dim +
             arch.vocab * arch.joint_dim + arch.vocab;
    case Component::lm_ext: {
      n = arch.vocab * arch.lm_ext_embed;
      long in = arch.lm_ext_embed;
      for (long l = 0; l < arch.lm_ext_layers; ++l) {
        n += 4 * arch.lm_ext_hidden * (in + arch.lm_ext_hidden + 1);
        in = arch.lm_ext_hidden;
      }
      n += arch.lm_ext_bottleneck * arch.lm_ext_hidden + arch.lm_ext_bottleneck;
      n += arch.vocab * arch.lm_ext_bottleneck + arch.vocab;
      return n;
    }
    case Component::lm_src:
      return arch.vocab * arch.embed_dim +
             4 * arch.pred_hidden * (arch.embed_dim + arch.pred_hidden + 1) +
             arch.joint_dim * arch.pred_hidden + arch.joint_dim +
             arch.vocab * arch.joint_dim + arch.vocab;
    default:
      return 0;
  }
}

}  // namespace

WorkloadTrace generate_trace(const WorkloadSpec& spec) {
  require(spec.frames >= 1, ErrorCode::validate, "generate_trace: frames must be >= 1");
  require(spec.beam >= 1 && spec.beam <= 16, ErrorCode::validate,
          "generate_trace: beam must be in 1..16");
  const auto& arch = spec.arch;
  Precision p = spec.precision;

  TraceBuilder b;
  b.trace.label = std::string(precision_name(p)) + (spec.fused ? "-fused" : "-nolm");
  b.trace.frames = spec.frames;
  b.trace.beam = spec.beam;
  b.trace.fused = spec.fused;

  long labels = std::lround(kLabelsPerFrame * static_cast<double>(spec.frames));
  labels = std::max(1L, labels);
  long iters = spec.frames + labels;
  double expansions_per_label = 1.0 + kReusePerSlot * static_cast<double>(spec.beam - 1);
  double misses = static_cast<double>(labels) * expansions_per_label;
  b.trace.cache_misses = std::lround(misses);
  b.trace.cache_hits = std::lround(static_cast<double>(labels * spec.beam) - misses);

  // encoder: one batched record per layer and direction, plus the output
  // projection; weights stream once per utterance
  for (long l = 0; l < arch.encoder_layers; ++l) {
    double macs = static_cast<double>(spec.frames) * encoder_layer_macs(arch, l);
    for (int dir = 0; dir < 2; ++dir)
      b.matmul(Component::encoder, p, macs, kEncBytesPerMac * macs);
  }
  double proj = static_cast<double>(spec.frames) *
                static_cast<double>(arch.joint_dim * 2 * arch.encoder_hidden);
  b.matmul(Component::encoder, p, proj, kEncBytesPerMac * proj);
  b.transfer(Component::encoder,
             static_cast<double>(net_params(arch, Component::encoder)) * bytes_per_value(p));
  b.transfer(Component::prediction,
             static_cast<double>(net_params(arch, Component::prediction)) * bytes_per_value(p));
  if (spec.fused) {
    b.transfer(Component::lm_ext,
               static_cast<double>(net_params(arch, Component::lm_ext)) * bytes_per_value(p));
    b.transfer(Component::lm_src,
               static_cast<double>(net_params(arch, Component::lm_src)) * bytes_per_value(p));
  }

  // decoding loop: per alignment iteration, the joint over the live beam,
  // per-net hypothesis state shuttles, fixed link traffic, and the CPU
  // search bookkeeping
  double beam = static_cast<double>(spec.beam);
  long nets = spec.fused ? 4 : 2;
  for (long it = 0; it < iters; ++it) {
    double jm = beam * joint_macs(arch);
    b.matmul(Component::prediction, p, jm, kDecBytesPerMac * jm);
    b.transfer(Component::prediction, beam * pred_state_bytes(arch, p));
    b.transfer(Component::prediction, kPredIterBytes);
    if (spec.fused) {
      b.transfer(Component::lm_ext, beam * lm_ext_state_bytes(arch, p));
      b.transfer(Component::lm_ext, kExtIterBytes);
      b.transfer(Component::lm_src, beam * lm_src_state_bytes(arch, p));
      b.transfer(Component::lm_src, kSrcIterBytes);
    }
    b.cpu(OpKind::sort, beam);
    b.cpu(OpKind::control, static_cast<double>(nets) * beam);
  }

  // label extensions: prediction-network and LM steps for the expansions
  // the prefix cache does not absorb
  for (long u = 0; u < labels; ++u) {
    double pm = expansions_per_label * pred_step_macs(arch);
    b.matmul(Component::prediction, p, pm, kDecBytesPerMac * pm);
    if (spec.fused) {
      double xm = expansions_per_label * lm_ext_step_macs(arch);
      b.matmul(Component::lm_ext, p, xm, kDecBytesPerMac * xm);
      double sm = expansions_per_label * lm_src_step_macs(arch);
      b.matmul(Component::lm_src, p, sm, kDecBytesPerMac * sm);
    }
  }
  return b.trace;
}

std::vector<RtfReport> sweep_beam(const WorkloadSpec& spec, const HwConfig& hw,
                                  const std::vector<long>& beams) {
  require(!beams.empty(), ErrorCode::validate, "sweep_beam: no beams given");
  std::vector<RtfReport> out;
  for (long beam : beams) {
    WorkloadSpec s = spec;
    s.beam = beam;
    out.push_back(simulate(generate_trace(s), hw));
  }
  return out;
}

}  // namespace qrt::hwsim
