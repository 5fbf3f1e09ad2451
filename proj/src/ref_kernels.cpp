#include "qrt/ref.hpp"

#include <cmath>

namespace qrt::ref {

namespace {

std::vector<std::vector<float>> scan(std::span<const float> w_ih, std::span<const float> w_hh,
                                     std::span<const float> bias,
                                     const std::vector<std::vector<float>>& input,
                                     long hidden_size, bool reverse) {
  long t_steps = static_cast<long>(input.size());
  long in_size = static_cast<long>(input[0].size());
  long h4 = 4 * hidden_size;

  std::vector<std::vector<float>> out(static_cast<std::size_t>(t_steps));
  std::vector<float> h(static_cast<std::size_t>(hidden_size), 0.0f);
  std::vector<float> c(static_cast<std::size_t>(hidden_size), 0.0f);
  std::vector<double> pre(static_cast<std::size_t>(h4));

  for (long i = 0; i < t_steps; ++i) {
    long t = reverse ? t_steps - 1 - i : i;
    const auto& x = input[static_cast<std::size_t>(t)];
    for (long r = 0; r < h4; ++r) {
      double acc = bias[static_cast<std::size_t>(r)];
      for (long k = 0; k < in_size; ++k)
        acc += static_cast<double>(w_ih[static_cast<std::size_t>(r * in_size + k)]) *
               static_cast<double>(x[static_cast<std::size_t>(k)]);
      for (long k = 0; k < hidden_size; ++k)
        acc += static_cast<double>(w_hh[static_cast<std::size_t>(r * hidden_size + k)]) *
               static_cast<double>(h[static_cast<std::size_t>(k)]);
      pre[static_cast<std::size_t>(r)] = acc;
    }
    auto& s = out[static_cast<std::size_t>(t)];
    s.resize(static_cast<std::size_t>(hidden_size));
    for (long j = 0; j < hidden_size; ++j) {
      double ig = 1.0 / (1.0 + std::exp(-pre[static_cast<std::size_t>(j)]));
      double fg = 1.0 / (1.0 + std::exp(-pre[static_cast<std::size_t>(hidden_size + j)]));
      double gg = std::tanh(pre[static_cast<std::size_t>(2 * hidden_size + j)]);
      double og = 1.0 / (1.0 + std::exp(-pre[static_cast<std::size_t>(3 * hidden_size + j)]));
      double cv = fg * static_cast<double>(c[static_cast<std::size_t>(j)]) + ig * gg;
      c[static_cast<std::size_t>(j)] = static_cast<float>(cv);
      s[static_cast<std::size_t>(j)] = static_cast<float>(og * std::tanh(cv));
    }
    h = s;
  }
  return out;
}

}  // namespace

std::vector<std::vector<float>> lstm_forward(std::span<const float> w_ih,
                                             std::span<const float> w_hh,
                                             std::span<const float> bias,
                                             const std::vector<std::vector<float>>& input,
                                             long hidden_size) {
  return scan(w_ih, w_hh, bias, input, hidden_size, false);
}

std::vector<std::vector<float>> bilstm_forward(std::span<const float> fwd_w_ih,
                                               std::span<const float> fwd_w_hh,
                                               std::span<const float> fwd_bias,
                                               std::span<const float> bwd_w_ih,
                                               std::span<const float> bwd_w_hh,
                                               std::span<const float> bwd_bias,
                                               const std::vector<std::vector<float>>& input,
                                               long hidden_size) {
  auto f = scan(fwd_w_ih, fwd_w_hh, fwd_bias, input, hidden_size, false);
  auto b = scan(bwd_w_ih, bwd_w_hh, bwd_bias, input, hidden_size, true);
  std::vector<std::vector<float>> out(input.size());
  for (std::size_t t = 0; t < input.size(); ++t) {
    out[t] = f[t];
    out[t].insert(out[t].end(), b[t].begin(), b[t].end());
  }
  return out;
}

}  // namespace qrt::ref
