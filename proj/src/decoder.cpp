#include "qrt/decoder.hpp"

#include <algorithm>
#include <unordered_map>

namespace qrt::decoder {

double fusion_score(double log_p_rnnt, double log_p_ext, double log_p_src, std::size_t length,
                    const FusionWeights& w) {
  return log_p_rnnt + w.mu * log_p_ext - w.lambda * log_p_src +
         w.rho * static_cast<double>(length);
}

namespace {

// Recurrent states and next-symbol distributions after consuming a label
// prefix; shared between hypotheses through the prefix cache.
struct PrefixEntry {
  model::PredState pred_state;
  std::vector<float> h_dec;
  std::optional<model::LmState> ext_state;
  std::optional<model::LmState> src_state;
  std::vector<float> ext_logp;
  std::vector<float> src_logp;
};

using EntryPtr = std::shared_ptr<const PrefixEntry>;

std::string prefix_key(const std::vector<long>& labels) {
  std::string k;
  k.reserve(labels.size());
  for (long s : labels) k.push_back(static_cast<char>(s));
  return k;
}

EntryPtr compute_entry(const model::RnntModel& rnnt, const model::LmModel* ext,
                       const model::LmModel* src, const PrefixEntry* parent, long symbol) {
  auto e = std::make_shared<PrefixEntry>();
  e->pred_state = parent ? parent->pred_state : model::pred_initial_state(rnnt);
  e->h_dec = model::pred_step(rnnt, symbol, e->pred_state);
  if (ext) {
    e->ext_state = parent ? *parent->ext_state : model::lm_initial_state(*ext);
    e->ext_logp = model::lm_step(*ext, symbol, *e->ext_state);
  }
  if (src) {
    e->src_state = parent ? *parent->src_state : model::lm_initial_state(*src);
    e->src_logp = model::lm_step(*src, symbol, *e->src_state);
  }
  return e;
}

struct Hyp {
  std::vector<long> labels;
  long time = 0;
  double lp_rnnt = 0.0;
  double lp_ext = 0.0;
  double lp_src = 0.0;
  double score = 0.0;
  EntryPtr entry;
  long age = 0;
};

struct Cand {
  std::size_t parent = 0;
  long symbol = kBlank;
  long time = 0;
  double lp_rnnt = 0.0;
  double lp_ext = 0.0;
  double lp_src = 0.0;
  double score = 0.0;
};

int net_weight_bits(const qrnn::LstmLayer& layer) {
  return layer.cfg.weight_spec ? layer.cfg.weight_spec->bits : 32;
}

hwsim::Precision layer_precision(const qrnn::LstmLayer& layer) {
  return hwsim::precision_from_bits(net_weight_bits(layer));
}

void emit_encoder_trace(hwsim::TraceBuilder& b, const model::RnntModel& m, long frames) {
  const auto& arch = m.arch;
  for (long l = 0; l < arch.encoder_layers; ++l) {
    const auto& layer = m.encoder[static_cast<std::size_t>(l)];
    double macs = static_cast<double>(frames) * hwsim::encoder_layer_macs(arch, l);
    for (int d = 0; d < 2; ++d)
      b.matmul(hwsim::Component::encoder, layer_precision(layer), macs,
               hwsim::coproc_bytes_per_mac() * macs);
  }
  double proj = static_cast<double>(frames) *
                static_cast<double>(arch.joint_dim * 2 * arch.encoder_hidden);
  b.matmul(hwsim::Component::encoder,
           hwsim::precision_from_bits(m.enc_proj.w_packed ? m.enc_proj.w_packed->bits : 32), proj,
           hwsim::coproc_bytes_per_mac() * proj);
}

}  // namespace

DecodeResult beam_search(const std::vector<std::vector<float>>& features,
                         const model::RnntModel& rnnt, const model::LmModel* lm_ext,
                         const model::LmModel* lm_src, const FusionWeights& w, long beam,
                         const DecodeOptions& opts) {
  require(beam >= 1 && beam <= 16, ErrorCode::validate, "beam must be in 1..16");
  require(!features.empty(), ErrorCode::validate, "beam_search: empty feature sequence");

  const long t_frames = static_cast<long>(features.size());
  const long max_labels = opts.max_labels >= 0 ? opts.max_labels : 2 * t_frames + 10;
  const auto& arch = rnnt.arch;

  hwsim::TraceBuilder tb;
  tb.trace.label = "decode";
  tb.trace.frames = t_frames;
  tb.trace.beam = beam;
  tb.trace.fused = lm_ext != nullptr || lm_src != nullptr;

  auto enc = model::encoder_forward(rnnt, features);
  if (opts.collect_trace) emit_encoder_trace(tb, rnnt, t_frames);

  hwsim::Precision pred_prec = layer_precision(rnnt.pred_lstm);
  hwsim::Precision ext_prec =
      lm_ext && !lm_ext->lstm.empty() ? layer_precision(lm_ext->lstm[0]) : hwsim::Precision::real16;
  hwsim::Precision src_prec =
      lm_src && !lm_src->lstm.empty() ? layer_precision(lm_src->lstm[0]) : hwsim::Precision::real16;

  std::unordered_map<std::string, EntryPtr> cache;
  long hits = 0, misses = 0;

  auto fetch_entry = [&](const Hyp& parent, long symbol,
                         const std::vector<long>& labels) -> EntryPtr {
    std::string key = prefix_key(labels);
    if (opts.use_cache) {
      auto it = cache.find(key);
      if (it != cache.end()) {
        ++hits;
        return it->second;
      }
    }
    ++misses;
    EntryPtr e = compute_entry(rnnt, lm_ext, lm_src, parent.entry.get(), symbol);
    if (opts.use_cache) cache[key] = e;
    return e;
  };

  std::vector<Hyp> active;
  {
    Hyp root;
    ++misses;
    root.entry = compute_entry(rnnt, lm_ext, lm_src, nullptr, -1);
    root.score = fusion_score(0.0, 0.0, 0.0, 0, w);
    if (opts.use_cache) cache[std::string()] = root.entry;
    active.push_back(std::move(root));
  }
  long next_age = 1;

  std::vector<ScoredLabels> finals;
  auto add_final = [&](const Cand& c, const std::vector<long>& labels) {
    for (auto& f : finals)
      if (f.labels == labels) {
        if (c.score > f.score) {
          f.log_p_rnnt = c.lp_rnnt;
          f.log_p_ext = c.lp_ext;
          f.log_p_src = c.lp_src;
          f.score = c.score;
        }
        return;
      }
    finals.push_back({labels, c.lp_rnnt, c.lp_ext, c.lp_src, c.score});
  };

  std::vector<Cand> cands;
  for (long n = 0; n <= t_frames + max_labels && !active.empty(); ++n) {
    cands.clear();
    long miss_before = misses;

    for (std::size_t h = 0; h < active.size(); ++h) {
      const Hyp& hyp = active[h];
      auto logp = model::joint_log_probs(rnnt, enc[static_cast<std::size_t>(hyp.time)],
                                         hyp.entry->h_dec);
      Cand blank;
      blank.parent = h;
      blank.symbol = kBlank;
      blank.time = hyp.time + 1;
      blank.lp_rnnt = hyp.lp_rnnt + static_cast<double>(logp[static_cast<std::size_t>(kBlank)]);
      blank.lp_ext = hyp.lp_ext;
      blank.lp_src = hyp.lp_src;
      blank.score = fusion_score(blank.lp_rnnt, blank.lp_ext, blank.lp_src, hyp.labels.size(), w);
      cands.push_back(blank);

      if (static_cast<long>(hyp.labels.size()) >= max_labels) continue;
      for (long k = 0; k < kBlank; ++k) {
        Cand c;
        c.parent = h;
        c.symbol = k;
        c.time = hyp.time;
        c.lp_rnnt = hyp.lp_rnnt + static_cast<double>(logp[static_cast<std::size_t>(k)]);
        c.lp_ext = hyp.lp_ext + (lm_ext ? static_cast<double>(
                                              hyp.entry->ext_logp[static_cast<std::size_t>(k)])
                                        : 0.0);
        c.lp_src = hyp.lp_src + (lm_src ? static_cast<double>(
                                              hyp.entry->src_logp[static_cast<std::size_t>(k)])
                                        : 0.0);
        c.score = fusion_score(c.lp_rnnt, c.lp_ext, c.lp_src, hyp.labels.size() + 1, w);
        cands.push_back(c);
      }
    }

    if (opts.collect_trace) {
      double n_active = static_cast<double>(active.size());
      double jm = n_active * hwsim::joint_macs(arch);
      tb.matmul(hwsim::Component::prediction,
                hwsim::precision_from_bits(rnnt.joint_out.w_packed ? rnnt.joint_out.w_packed->bits
                                                                   : 32),
                jm, hwsim::coproc_bytes_per_mac() * jm);
      tb.transfer(hwsim::Component::prediction,
                  n_active * hwsim::pred_state_bytes(arch, pred_prec));
      if (lm_ext)
        tb.transfer(hwsim::Component::lm_ext, n_active * hwsim::lm_ext_state_bytes(arch, ext_prec));
      if (lm_src)
        tb.transfer(hwsim::Component::lm_src, n_active * hwsim::lm_src_state_bytes(arch, src_prec));
      tb.cpu(hwsim::OpKind::sort, static_cast<double>(cands.size()));
      tb.cpu(hwsim::OpKind::control,
             static_cast<double>((1 + (lm_ext ? 1 : 0) + (lm_src ? 1 : 0) + 1)) * n_active);
    }

    // candidates with identical label prefixes merge, keeping the better
    // alignment path (same prefix at equal alignment length implies the
    // same frame position)
    auto cand_labels = [&](const Cand& c) {
      std::vector<long> labels = active[c.parent].labels;
      if (c.symbol != kBlank) labels.push_back(c.symbol);
      return labels;
    };

    auto better = [&](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.symbol != b.symbol) return a.symbol < b.symbol;
      return active[a.parent].age < active[b.parent].age;
    };

    std::unordered_map<std::string, std::size_t> seen;
    std::vector<Cand> merged;
    std::vector<std::vector<long>> merged_labels;
    for (const Cand& c : cands) {
      auto labels = cand_labels(c);
      std::string key = prefix_key(labels);
      auto it = seen.find(key);
      if (it == seen.end()) {
        seen[key] = merged.size();
        merged.push_back(c);
        merged_labels.push_back(std::move(labels));
      } else if (better(c, merged[it->second])) {
        merged[it->second] = c;
      }
    }

    std::vector<std::size_t> order(merged.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return better(merged[a], merged[b]);
    });

    // the beam cap applies to finals and survivors alike: only the top
    // `beam` candidates of an iteration are retained at all
    std::vector<Hyp> next;
    long taken = 0;
    for (std::size_t idx : order) {
      if (taken >= beam) break;
      const Cand& c = merged[idx];
      if (c.symbol == kBlank && c.time == t_frames) {
        add_final(c, merged_labels[idx]);
        ++taken;
        continue;
      }
      ++taken;
      Hyp h;
      h.labels = merged_labels[idx];
      h.time = c.time;
      h.lp_rnnt = c.lp_rnnt;
      h.lp_ext = c.lp_ext;
      h.lp_src = c.lp_src;
      h.score = c.score;
      if (c.symbol == kBlank) {
        h.entry = active[c.parent].entry;
        h.age = active[c.parent].age;
      } else {
        h.entry = fetch_entry(active[c.parent], c.symbol, h.labels);
        h.age = next_age++;
      }
      next.push_back(std::move(h));
    }
    active = std::move(next);

    if (opts.collect_trace) {
      double new_misses = static_cast<double>(misses - miss_before);
      if (new_misses > 0) {
        double pm = new_misses * hwsim::pred_step_macs(arch);
        tb.matmul(hwsim::Component::prediction, pred_prec, pm,
                  hwsim::coproc_bytes_per_mac() * pm);
        if (lm_ext) {
          double xm = new_misses * hwsim::lm_ext_step_macs(arch);
          tb.matmul(hwsim::Component::lm_ext, ext_prec, xm, hwsim::coproc_bytes_per_mac() * xm);
        }
        if (lm_src) {
          double sm = new_misses * hwsim::lm_src_step_macs(arch);
          tb.matmul(hwsim::Component::lm_src, src_prec, sm, hwsim::coproc_bytes_per_mac() * sm);
        }
      }
    }
  }

  DecodeResult result;
  result.cache_hits = hits;
  result.cache_misses = misses;
  tb.trace.cache_hits = hits;
  tb.trace.cache_misses = misses;

  std::stable_sort(finals.begin(), finals.end(), [](const ScoredLabels& a, const ScoredLabels& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.labels < b.labels;
  });

  ScoredLabels best;
  if (!finals.empty()) {
    best = finals.front();
    result.complete = true;
  } else {
    // alignment cap exhausted without consuming every frame; fall back to
    // the best surviving hypothesis
    require(!active.empty(), ErrorCode::runtime, "beam search emptied without finals");
    const Hyp* top = &active[0];
    for (const Hyp& h : active)
      if (h.score > top->score) top = &h;
    best = {top->labels, top->lp_rnnt, top->lp_ext, top->lp_src, top->score};
    result.complete = false;
  }

  result.labels = best.labels;
  result.text = labels_to_text(best.labels);
  result.log_p_rnnt = best.log_p_rnnt;
  result.log_p_ext = best.log_p_ext;
  result.log_p_src = best.log_p_src;
  result.score = best.score;
  if (finals.size() > opts.nbest) finals.resize(opts.nbest);
  result.nbest = std::move(finals);
  if (opts.collect_trace) result.trace = std::move(tb.trace);
  return result;
}

}  // namespace qrt::decoder
