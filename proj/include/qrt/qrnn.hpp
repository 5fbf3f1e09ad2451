#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "qrt/qcore.hpp"
#include "qrt/qtensor.hpp"
#include "qrt/rng.hpp"

namespace qrt::qrnn {

// Where activation quantizers sit relative to the LSTM cell: Inner
// quantizes x_t and s_{t-1} on cell entry (two calls per cell per step),
// Outer quantizes s_t once at the cell output and consumers reuse it
// (one call per cell per step, plus one per step for the raw sequence
// entering the first layer).
enum class Placement { Inner, Outer };

// Quantizer roles for one LSTM layer. An absent spec means identity
// (infinite-precision mode, real arithmetic). There is deliberately no
// spec slot for the cell state: c_t always stays real.
struct QuantLSTMLayerConfig {
  long input_size = 0;
  long hidden_size = 0;
  bool bidirectional = false;
  std::optional<qcore::QuantizerSpec> weight_spec;
  std::optional<qcore::QuantizerSpec> input_spec;
  std::optional<qcore::QuantizerSpec> hidden_spec;
  Placement placement = Placement::Outer;

  bool quantized() const { return weight_spec.has_value(); }
};

void validate(const QuantLSTMLayerConfig& cfg);

struct QuantCallCounter {
  long activation_calls = 0;
  long weight_calls = 0;
};

// Gate order is (input, forget, cell, output); W_ih is [4H x in] and
// W_hh is [4H x H], row-major, one combined bias of length 4H. The
// bias and the cell state stay in real arithmetic.
struct LstmDirWeights {
  std::vector<float> w_ih;
  std::vector<float> w_hh;
  std::vector<float> bias;

  // Built once per utterance by quantize_weights; absent in identity mode.
  std::optional<qtensor::PackedTensor> w_ih_packed;
  std::optional<qtensor::PackedTensor> w_hh_packed;
  std::optional<qtensor::QWeights> w_ih_q;
  std::optional<qtensor::QWeights> w_hh_q;

  // Resolved activation params for this direction's quantizer sites.
  std::optional<qcore::QuantParams> input_params;
  std::optional<qcore::QuantParams> hidden_params;
};

struct LstmLayer {
  QuantLSTMLayerConfig cfg;
  LstmDirWeights fwd;
  std::optional<LstmDirWeights> bwd;
};

// One timestep's activation tensor. A non-empty segment list records
// that the values already sit on the producers' quantization grids
// (Outer flow); each segment carries the params its codes were produced
// with, so a bidirectional output keeps independent per-half scales.
struct StepAct {
  struct Seg {
    long offset = 0;
    long len = 0;
    qcore::QuantParams params;
  };
  std::vector<float> values;
  std::vector<Seg> segs;
};

using ActSeq = std::vector<StepAct>;

ActSeq make_act_seq(const std::vector<std::vector<float>>& x);
std::vector<std::vector<float>> act_values(const ActSeq& seq);

LstmLayer make_layer(const QuantLSTMLayerConfig& cfg, Rng& rng);

// Packs W_ih/W_hh per the layer's weight spec (separate tensors with
// separate scales per direction) and resolves static activation params.
// Counts one weight call per packed tensor.
void quantize_weights(LstmLayer& layer, QuantCallCounter* counter = nullptr);

// Single cell step for one direction. Updates c in place, returns s_t
// (carrying its quantization segment in Outer mode). In Outer mode the
// inputs are expected on-grid already; converting them back to codes is
// a storage conversion, not a quantizer call.
StepAct lstm_cell_step(const LstmDirWeights& w, const QuantLSTMLayerConfig& cfg,
                       const StepAct& x, const StepAct& s_prev, std::span<float> c,
                       QuantCallCounter* counter);

// Real-vector convenience form mirroring the cell contract directly.
std::pair<std::vector<float>, std::vector<float>> lstm_cell_step(
    const LstmDirWeights& w, const QuantLSTMLayerConfig& cfg, std::span<const float> x_t,
    std::span<const float> s_prev, std::span<const float> c_prev, QuantCallCounter* counter);

// Unidirectional scan or concatenated forward/backward scans; hidden and
// cell states start at zero. Output steps carry quantization segments in
// Outer mode so stacked layers consume them without re-quantizing.
ActSeq run_layer(const LstmLayer& layer, const ActSeq& in, QuantCallCounter* counter);

// Closed-form activation-quantizer call counts for a T-step pass over L
// directional layers (bidirectional layers count twice).
long count_quantizer_calls(long t_steps, long layers, Placement placement);

}  // namespace qrt::qrnn
