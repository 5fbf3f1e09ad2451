#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qrt/qrnn.hpp"

namespace qrt::model {

struct ArchConfig {
  long encoder_layers = 6;
  long encoder_input = 340;
  long encoder_hidden = 640;
  long joint_dim = 256;
  long pred_hidden = 768;
  long embed_dim = 10;
  long vocab = 46;
  long lm_ext_hidden = 2048;
  long lm_ext_layers = 2;
  long lm_ext_bottleneck = 256;
  long lm_ext_embed = 14;
};

void validate(const ArchConfig& arch);
ArchConfig arch_from_json(const nlohmann::json& j);
nlohmann::json arch_to_json(const ArchConfig& arch);
ArchConfig load_arch(const std::string& path);

// Per-layer quantizer assignment; the machine-readable form of the main
// scheme figure. A layer id missing from the map stays unquantized.
struct LayerScheme {
  std::optional<qcore::QuantizerSpec> weight;
  std::optional<qcore::QuantizerSpec> input;
  std::optional<qcore::QuantizerSpec> hidden;  // LSTM layers only
};

struct QuantSchemeConfig {
  std::string name = "identity";
  bool quantize_biases = false;  // biases are never quantized; true is rejected
  qrnn::Placement placement = qrnn::Placement::Outer;
  qcore::SawbMode sawb_mode = qcore::SawbMode::oracle_grid;
  std::map<std::string, LayerScheme> layers;

  bool empty() const { return layers.empty(); }
  const LayerScheme* find(const std::string& id) const;
};

QuantSchemeConfig scheme_from_json(const nlohmann::json& j);
nlohmann::json scheme_to_json(const QuantSchemeConfig& s);
QuantSchemeConfig load_scheme(const std::string& path);
void validate_scheme(const QuantSchemeConfig& s);

// --- network blocks --------------------------------------------------------

struct Embedding {
  long vocab = 0;
  long dim = 0;
  std::vector<float> table;  // [vocab x dim]
  std::optional<qtensor::PackedTensor> packed;

  std::vector<float> lookup(long symbol) const;
};

struct LinearLayer {
  long in = 0;
  long out = 0;
  std::vector<float> w;  // [out x in]
  std::vector<float> bias;
  std::optional<qtensor::PackedTensor> w_packed;
  std::optional<qtensor::QWeights> w_q;
  std::optional<qcore::QuantParams> input_params;

  bool quantized() const { return w_packed.has_value(); }
  std::vector<float> forward(std::span<const float> x) const;
};

struct RnntModel {
  ArchConfig arch;
  QuantSchemeConfig scheme;
  bool quantized = false;

  std::vector<qrnn::LstmLayer> encoder;
  LinearLayer enc_proj;
  Embedding pred_embed;
  qrnn::LstmLayer pred_lstm;
  LinearLayer pred_proj;
  LinearLayer joint_out;
};

enum class LmRole { EXT, SRC };

struct LmModel {
  ArchConfig arch;
  LmRole role = LmRole::EXT;
  QuantSchemeConfig scheme;
  bool quantized = false;

  Embedding embed;
  std::vector<qrnn::LstmLayer> lstm;
  LinearLayer bottleneck;
  LinearLayer out;
};

RnntModel build_rnnt(const ArchConfig& arch, std::uint64_t seed);
LmModel build_lm(const ArchConfig& arch, LmRole role, std::uint64_t seed);

long param_count(const RnntModel& m);
long param_count(const LmModel& m);
long encoder_param_count(const RnntModel& m);
long prediction_param_count(const RnntModel& m);

// --- forward passes ---------------------------------------------------------

std::vector<float> log_softmax(std::span<const float> x);

std::vector<std::vector<float>> encoder_forward(const RnntModel& m,
                                                const std::vector<std::vector<float>>& features,
                                                qrnn::QuantCallCounter* counter = nullptr);

struct PredState {
  qrnn::StepAct h;
  std::vector<float> c;
};

PredState pred_initial_state(const RnntModel& m);
// Feeds one symbol (the blank row doubles as the start-of-sequence
// embedding) and returns the joint-dim decoder representation.
std::vector<float> pred_step(const RnntModel& m, long symbol, PredState& state);

std::vector<float> joint_log_probs(const RnntModel& m, std::span<const float> h_enc,
                                   std::span<const float> h_dec);

struct LmState {
  std::vector<qrnn::StepAct> h;
  std::vector<std::vector<float>> c;
};

LmState lm_initial_state(const LmModel& m);
std::vector<float> lm_step(const LmModel& m, long symbol, LmState& state);

// --- calibration and quantization -------------------------------------------

struct CalibrationData {
  std::vector<std::vector<std::vector<float>>> features;  // utterances of [T][encoder_input]
  std::vector<std::vector<long>> label_seqs;
};

struct PactOptions {
  int steps = 200;
  double lr = 1.0;
};

// Packs weights per the scheme, resolves activation boundaries (FIX from
// the scheme, MAX from calibration extremes, PACT via calibrate_pact on
// collected samples) and flips the model into quantized mode. Biases and
// cell states are untouched by construction.
void quantize_model(RnntModel& m, const QuantSchemeConfig& scheme, const CalibrationData& calib,
                    const PactOptions& pact = {});
void quantize_model(LmModel& m, const QuantSchemeConfig& scheme, const CalibrationData& calib,
                    const PactOptions& pact = {});

// --- size accounting ---------------------------------------------------------

struct SizeReport {
  struct Row {
    std::string name;
    long params = 0;
    int bits = 32;
    double bytes = 0.0;
  };
  std::vector<Row> rows;
  double quantized_bytes = 0.0;
  double baseline_bytes = 0.0;  // all tensors at real32
  std::map<int, double> param_fraction_by_bits;

  double megabytes() const { return quantized_bytes / 1e6; }
  double baseline_megabytes() const { return baseline_bytes / 1e6; }
  double compression() const { return baseline_bytes / quantized_bytes; }
};

nlohmann::json size_report_to_json(const SizeReport& r);
std::string format_size_report(const SizeReport& r);

// Analytic report from arch + scheme alone (no tensors materialized);
// identical accounting rules as the checkpoint-based report.
SizeReport plan_size_report(const ArchConfig& arch, const QuantSchemeConfig& scheme,
                            bool rnnt, bool lm_ext, bool lm_src);

}  // namespace qrt::model
