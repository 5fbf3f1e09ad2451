#pragma once

#include <memory>
#include <string>
#include <vector>

#include "qrt/hwsim.hpp"
#include "qrt/model.hpp"

namespace qrt::decoder {

// 45 labels + blank; blank advances time without emitting a label.
inline constexpr long kBlank = 45;

char symbol_char(long symbol);
long char_symbol(char c);  // -1 when unmapped
std::string labels_to_text(const std::vector<long>& labels);
std::vector<long> text_to_labels(const std::string& text);

// Density-ratio fusion weights (LM weights and character insertion reward).
struct FusionWeights {
  double mu = 0.7;
  double lambda = 0.5;
  double rho = 0.2;

  bool disabled() const { return mu == 0.0 && lambda == 0.0 && rho == 0.0; }
};

// S = log P(y|x) + mu * log P_ext(y) - lambda * log P_src(y) + rho * |y|
double fusion_score(double log_p_rnnt, double log_p_ext, double log_p_src, std::size_t length,
                    const FusionWeights& w);

struct ScoredLabels {
  std::vector<long> labels;
  double log_p_rnnt = 0.0;
  double log_p_ext = 0.0;
  double log_p_src = 0.0;
  double score = 0.0;
};

struct DecodeOptions {
  bool use_cache = true;
  bool collect_trace = false;
  std::size_t nbest = 8;
  // labels an utterance may emit at most; <0 derives 2*T + 10
  long max_labels = -1;
};

struct DecodeResult {
  std::vector<long> labels;
  std::string text;
  double score = 0.0;
  double log_p_rnnt = 0.0;
  double log_p_ext = 0.0;
  double log_p_src = 0.0;
  bool complete = false;  // a hypothesis consumed every frame
  std::vector<ScoredLabels> nbest;
  long cache_hits = 0;
  long cache_misses = 0;
  hwsim::WorkloadTrace trace;  // populated when collect_trace is set
};

// Alignment-length synchronous beam search with density-ratio fusion.
// Hypotheses of equal alignment length (frames consumed + labels emitted)
// compete each iteration and at most `beam` survive; blank advances time,
// a label advances the prefix and steps the prediction network and LMs on
// the previous symbol. Prefix-keyed caching of recurrent states makes
// repeated expansions of the same prefix free. Ties break toward the
// lower symbol index, then the older hypothesis, so decodes are
// deterministic.
DecodeResult beam_search(const std::vector<std::vector<float>>& features,
                         const model::RnntModel& rnnt, const model::LmModel* lm_ext,
                         const model::LmModel* lm_src, const FusionWeights& w, long beam,
                         const DecodeOptions& opts = {});

// --- WER ------------------------------------------------------------------------

struct WerCounts {
  long substitutions = 0;
  long insertions = 0;
  long deletions = 0;
  long ref_words = 0;

  long errors() const { return substitutions + insertions + deletions; }
  double percent() const {
    return ref_words > 0 ? 100.0 * static_cast<double>(errors()) / static_cast<double>(ref_words)
                         : (errors() > 0 ? 100.0 : 0.0);
  }
};

WerCounts wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);
std::vector<std::string> split_words(const std::string& line);

}  // namespace qrt::decoder
