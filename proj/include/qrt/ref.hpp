#pragma once

#include <span>
#include <vector>

namespace qrt::ref {

// Serial real-arithmetic LSTM forward, kept as an independent reference
// for the quantized stack's identity mode and for the kernel benchmark.
// Same weight layout as qrnn: gates (i, f, g, o), W_ih [4H x in],
// W_hh [4H x H], combined bias [4H].
std::vector<std::vector<float>> lstm_forward(std::span<const float> w_ih,
                                             std::span<const float> w_hh,
                                             std::span<const float> bias,
                                             const std::vector<std::vector<float>>& input,
                                             long hidden_size);

// Forward/backward scans concatenated per step: [T][2H].
std::vector<std::vector<float>> bilstm_forward(std::span<const float> fwd_w_ih,
                                               std::span<const float> fwd_w_hh,
                                               std::span<const float> fwd_bias,
                                               std::span<const float> bwd_w_ih,
                                               std::span<const float> bwd_w_hh,
                                               std::span<const float> bwd_bias,
                                               const std::vector<std::vector<float>>& input,
                                               long hidden_size);

}  // namespace qrt::ref
