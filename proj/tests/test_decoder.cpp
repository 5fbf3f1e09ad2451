#include <doctest.h>

#include <cmath>

#include "qrt/decoder.hpp"
#include "qrt/model.hpp"
#include "test_util.hpp"

using namespace qrt;
using namespace qrt::decoder;

namespace {

const std::string kRepo = QRT_REPO_DIR;

model::ArchConfig toy_arch() { return model::load_arch(kRepo + "/configs/arch_toy.json"); }

std::vector<std::vector<float>> random_features(Rng& rng, long t, long dim) {
  std::vector<std::vector<float>> f(static_cast<std::size_t>(t));
  for (auto& step : f) step = rng.gaussian_vec(static_cast<std::size_t>(dim));
  return f;
}

// Independent greedy reference: at each alignment step extend with the
// single best symbol (lowest index wins ties), blank advances time.
ScoredLabels greedy_decode(const model::RnntModel& m,
                           const std::vector<std::vector<float>>& feats, long max_labels) {
  auto enc = model::encoder_forward(m, feats);
  model::PredState st = model::pred_initial_state(m);
  auto h_dec = model::pred_step(m, -1, st);
  std::vector<long> labels;
  double lp = 0.0;
  long t = 0;
  const long t_frames = static_cast<long>(feats.size());
  while (t < t_frames) {
    auto logp = model::joint_log_probs(m, enc[static_cast<std::size_t>(t)], h_dec);
    long best = -1;
    double best_v = -1e300;
    bool labels_allowed = static_cast<long>(labels.size()) < max_labels;
    for (long k = 0; k <= kBlank; ++k) {
      if (k != kBlank && !labels_allowed) continue;
      if (static_cast<double>(logp[static_cast<std::size_t>(k)]) > best_v) {
        best_v = static_cast<double>(logp[static_cast<std::size_t>(k)]);
        best = k;
      }
    }
    lp += best_v;
    if (best == kBlank) {
      ++t;
    } else {
      labels.push_back(best);
      h_dec = model::pred_step(m, best, st);
    }
  }
  return {labels, lp, 0.0, 0.0, lp};
}

}  // namespace

TEST_CASE("fusion score matches the hand-computed combination") {
  FusionWeights w;
  CHECK(w.mu == 0.7);
  CHECK(w.lambda == 0.5);
  CHECK(w.rho == 0.2);
  CHECK(fusion_score(-2.0, -1.0, -3.0, 5, w) == doctest::Approx(-0.2).epsilon(1e-12));

  FusionWeights off{0.0, 0.0, 0.0};
  CHECK(fusion_score(-7.25, -1.0, -3.0, 5, off) == -7.25);

  FusionWeights rho_only{0.0, 0.0, 0.3};
  CHECK(fusion_score(-1.0, 0.0, 0.0, 0, rho_only) == -1.0);  // empty y gains no reward
}

TEST_CASE("symbol table maps labels to characters and back") {
  std::string text = "hello world 42.";
  auto labels = text_to_labels(text);
  CHECK(labels_to_text(labels) == text);
  CHECK(labels.size() == text.size());
  CHECK_THROWS_AS((void)text_to_labels("bad\ttab"), Error);
  CHECK(char_symbol('A') == char_symbol('a'));
}

TEST_CASE("wer counts match hand-computed edit distances") {
  auto c0 = wer(split_words("a b c"), split_words("a b c"));
  CHECK(c0.errors() == 0);
  CHECK(c0.percent() == 0.0);

  auto c1 = wer(split_words("a x c d"), split_words("a b c"));
  CHECK(c1.substitutions == 1);
  CHECK(c1.insertions == 1);
  CHECK(c1.deletions == 0);
  CHECK(c1.percent() == doctest::Approx(200.0 / 3.0).epsilon(1e-9));

  auto c2 = wer({}, split_words("w x y z"));
  CHECK(c2.deletions == 4);
  CHECK(c2.percent() == doctest::Approx(100.0));
}

TEST_CASE("beam width one with fusion off equals the greedy reference") {
  auto arch = toy_arch();
  for (std::uint64_t seed : {101u, 102u, 103u, 104u, 105u}) {
    auto m = model::build_rnnt(arch, seed);
    Rng rng(seed * 7 + 1);
    auto feats = random_features(rng, 6, arch.encoder_input);
    FusionWeights off{0.0, 0.0, 0.0};
    auto beam = beam_search(feats, m, nullptr, nullptr, off, 1);
    auto greedy = greedy_decode(m, feats, 2 * 6 + 10);
    CHECK(beam.labels == greedy.labels);
    CHECK(beam.score == doctest::Approx(greedy.score).epsilon(1e-9));
  }
}

TEST_CASE("fusion weights zero with LMs attached decodes byte-identically to no LMs") {
  auto arch = toy_arch();
  auto m = model::build_rnnt(arch, 201);
  auto ext = model::build_lm(arch, model::LmRole::EXT, 202);
  auto src = model::build_lm(arch, model::LmRole::SRC, 203);
  Rng rng(204);
  auto feats = random_features(rng, 7, arch.encoder_input);

  FusionWeights off{0.0, 0.0, 0.0};
  auto with_lms = beam_search(feats, m, &ext, &src, off, 4);
  auto without = beam_search(feats, m, nullptr, nullptr, off, 4);
  CHECK(with_lms.text == without.text);
  CHECK(with_lms.score == doctest::Approx(without.score).epsilon(1e-12));
}

TEST_CASE("decode result score decomposes exactly per the fusion formula") {
  auto arch = toy_arch();
  auto m = model::build_rnnt(arch, 301);
  auto ext = model::build_lm(arch, model::LmRole::EXT, 302);
  auto src = model::build_lm(arch, model::LmRole::SRC, 303);
  Rng rng(304);
  auto feats = random_features(rng, 6, arch.encoder_input);
  FusionWeights w;
  auto r = beam_search(feats, m, &ext, &src, w, 4);
  CHECK(r.score ==
        fusion_score(r.log_p_rnnt, r.log_p_ext, r.log_p_src, r.labels.size(), w));
  for (const auto& nb : r.nbest)
    CHECK(nb.score == fusion_score(nb.log_p_rnnt, nb.log_p_ext, nb.log_p_src, nb.labels.size(), w));
}

TEST_CASE("decodes are deterministic including the workload trace") {
  auto arch = toy_arch();
  auto m = model::build_rnnt(arch, 401);
  auto ext = model::build_lm(arch, model::LmRole::EXT, 402);
  Rng rng(403);
  auto feats = random_features(rng, 6, arch.encoder_input);
  FusionWeights w;
  DecodeOptions opts;
  opts.collect_trace = true;
  auto a = beam_search(feats, m, &ext, nullptr, w, 4, opts);
  auto b = beam_search(feats, m, &ext, nullptr, w, 4, opts);
  CHECK(a.labels == b.labels);
  CHECK(a.score == b.score);
  CHECK(hwsim::trace_to_json(a.trace) == hwsim::trace_to_json(b.trace));
}

TEST_CASE("cache-disabled decodes are score-identical with a larger trace") {
  auto arch = toy_arch();
  auto m = model::build_rnnt(arch, 501);
  auto ext = model::build_lm(arch, model::LmRole::EXT, 502);
  Rng rng(503);
  auto feats = random_features(rng, 7, arch.encoder_input);
  FusionWeights w;
  DecodeOptions on;
  on.collect_trace = true;
  DecodeOptions off = on;
  off.use_cache = false;
  auto with_cache = beam_search(feats, m, &ext, nullptr, w, 6, on);
  auto no_cache = beam_search(feats, m, &ext, nullptr, w, 6, off);
  CHECK(with_cache.labels == no_cache.labels);
  CHECK(with_cache.score == no_cache.score);
  CHECK(no_cache.cache_misses > with_cache.cache_misses);
  CHECK(no_cache.cache_hits == 0);

  double macs_on = 0, macs_off = 0;
  for (const auto& op : with_cache.trace.ops) macs_on += op.macs;
  for (const auto& op : no_cache.trace.ops) macs_off += op.macs;
  CHECK(macs_off > macs_on);
}

TEST_CASE("prefix cache hit accounting") {
  auto arch = toy_arch();
  auto m = model::build_rnnt(arch, 610);
  Rng rng(611);
  auto feats = random_features(rng, 10, arch.encoder_input);
  FusionWeights off{0.0, 0.0, 0.0};

  // fresh symbols at beam 1 never hit the cache
  auto b1 = beam_search(feats, m, nullptr, nullptr, off, 1);
  CHECK(b1.cache_hits == 0);

  // wider beams revisit shared prefixes
  auto b8 = beam_search(feats, m, nullptr, nullptr, off, 8);
  CHECK(b8.cache_hits > 0);
}

TEST_CASE("wider beams never return a worse final score") {
  auto arch = toy_arch();
  for (std::uint64_t seed : {701u, 702u, 703u, 704u}) {
    auto m = model::build_rnnt(arch, seed);
    Rng rng(seed + 9);
    auto feats = random_features(rng, 6, arch.encoder_input);
    FusionWeights w{0.0, 0.0, 0.0};
    auto narrow = beam_search(feats, m, nullptr, nullptr, w, 1);
    auto wide = beam_search(feats, m, nullptr, nullptr, w, 16);
    CHECK(wide.score >= narrow.score - 1e-12);
  }
}

TEST_CASE("a blank-dominant model yields an empty transcript") {
  auto arch = toy_arch();
  auto m = model::build_rnnt(arch, 801);
  m.joint_out.bias[static_cast<std::size_t>(kBlank)] += 10.0f;
  Rng rng(802);
  auto feats = random_features(rng, 1, arch.encoder_input);
  auto r = beam_search(feats, m, nullptr, nullptr, FusionWeights{}, 4);
  CHECK(r.labels.empty());
  CHECK(r.text.empty());
  CHECK(r.complete);
}

TEST_CASE("equal-length finalists keep their argmax under a constant LM shift") {
  auto arch = toy_arch();
  auto m = model::build_rnnt(arch, 901);
  auto ext = model::build_lm(arch, model::LmRole::EXT, 902);
  Rng rng(903);
  auto feats = random_features(rng, 8, arch.encoder_input);
  FusionWeights w;
  DecodeOptions opts;
  opts.nbest = 16;
  auto r = beam_search(feats, m, &ext, nullptr, w, 8, opts);
  REQUIRE(r.nbest.size() >= 2);

  // shifting every per-symbol log P_ext by c moves S by mu*c*|y|: constant
  // within a length group, so each group's argmax is unchanged
  const double shift = 0.37;
  std::map<std::size_t, std::pair<const ScoredLabels*, double>> best_orig, best_shifted;
  for (const auto& nb : r.nbest) {
    double shifted = fusion_score(nb.log_p_rnnt,
                                  nb.log_p_ext + shift * static_cast<double>(nb.labels.size()),
                                  nb.log_p_src, nb.labels.size(), w);
    auto len = nb.labels.size();
    if (!best_orig.count(len) || nb.score > best_orig[len].second)
      best_orig[len] = {&nb, nb.score};
    if (!best_shifted.count(len) || shifted > best_shifted[len].second)
      best_shifted[len] = {&nb, shifted};
  }
  for (const auto& [len, orig] : best_orig)
    CHECK(best_shifted[len].first->labels == orig.first->labels);
}

TEST_CASE("beam search argument validation") {
  auto arch = toy_arch();
  auto m = model::build_rnnt(arch, 1001);
  Rng rng(1002);
  auto feats = random_features(rng, 3, arch.encoder_input);
  CHECK_THROWS_AS((void)beam_search(feats, m, nullptr, nullptr, FusionWeights{}, 0), Error);
  CHECK_THROWS_AS((void)beam_search(feats, m, nullptr, nullptr, FusionWeights{}, 17), Error);
  CHECK_THROWS_AS((void)beam_search({}, m, nullptr, nullptr, FusionWeights{}, 4), Error);
}
