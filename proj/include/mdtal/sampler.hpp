#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "mdtal/common.hpp"
#include "mdtal/losses.hpp"
#include "mdtal/rng.hpp"
#include "mdtal/timecodec.hpp"

namespace mdtal {

struct DecodeConfig {
  int n_steps = 16;          // S
  int block_length = 32;     // clipped to the response length
  double temperature = 0.0;  // 0 = greedy
  bool record_trajectory = false;

  void validate(int response_len) const {
    require(n_steps >= 1, "DecodeConfig: n_steps must be >= 1");
    require(block_length >= 1 && block_length <= std::max(1, response_len),
            "DecodeConfig: block_length outside [1, response length]");
  }
};

// Even split of n_masked reveals over n_steps: counts differ by at most one
// and the larger counts come first.
std::vector<int> even_split(int n_masked, int n_steps);

// Full reveal plan for a fresh (fully masked) canvas: blocks of block_length
// processed left to right, each block's share of the steps proportional to
// its token count, even split within the block.
struct SchedulePlan {
  struct Step {
    int block_begin = 0;
    int block_end = 0;
    int n_reveal = 0;
  };
  std::vector<Step> steps;  // index 0 corresponds to t = S
};

SchedulePlan make_schedule(int response_len, const DecodeConfig& cfg);

// Flattened per-step reveal counts (the schedule contract: sums to n_masked,
// within-block counts differ by at most one, blocks left to right).
std::vector<int> reveal_schedule(int n_masked, const DecodeConfig& cfg);

struct RevealedToken {
  int position = 0;
  int token = 0;
  double confidence = 0.0;
};

// One reverse-denoising update: pick the n_reveal highest-confidence masked
// positions inside [block_begin, block_end) and fix their candidate tokens.
// Ties in confidence resolve to the lower position index; the mask token is
// never a candidate. Mutates x in place and returns what was revealed.
template <typename T>
std::vector<RevealedToken> denoise_step(std::vector<int>& x, const Mat<T>& logits,
                                        int block_begin, int block_end, int n_reveal,
                                        double temperature, const Vocabulary& vocab,
                                        Rng& rng) {
  struct Cand {
    int pos;
    int token;
    double conf;
  };
  std::vector<Cand> cands;
  const int v = logits.cols;
  std::vector<double> probs(v);
  for (int pos = block_begin; pos < block_end; ++pos) {
    if (x[pos] != vocab.mask_id) continue;
    const T* z = logits.row(pos);
    const double tau = temperature > 0.0 ? temperature : 1.0;
    double m = -1e300;
    for (int j = 0; j < v; ++j)
      if (j != vocab.mask_id) m = std::max(m, static_cast<double>(z[j]) / tau);
    double s = 0.0;
    for (int j = 0; j < v; ++j) {
      probs[j] = j == vocab.mask_id ? 0.0 : std::exp(static_cast<double>(z[j]) / tau - m);
      s += probs[j];
    }
    for (int j = 0; j < v; ++j) probs[j] /= s;
    int tok = -1;
    if (temperature <= 0.0) {
      double best = -1.0;
      for (int j = 0; j < v; ++j)
        if (j != vocab.mask_id && probs[j] > best) {
          best = probs[j];
          tok = j;
        }
    } else {
      double u = rng.u01(), acc = 0.0;
      for (int j = 0; j < v; ++j) {
        acc += probs[j];
        if (u < acc) {
          tok = j;
          break;
        }
      }
      if (tok < 0) tok = vocab.mask_id == v - 1 ? v - 2 : v - 1;
    }
    cands.push_back({pos, tok, probs[tok]});
  }
  require(n_reveal <= static_cast<int>(cands.size()),
          "denoise_step: n_reveal exceeds masked count in block");
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    return a.pos < b.pos;
  });
  std::vector<RevealedToken> out;
  for (int i = 0; i < n_reveal; ++i) {
    x[cands[i].pos] = cands[i].token;
    out.push_back({cands[i].pos, cands[i].token, cands[i].conf});
  }
  return out;
}

struct GenerationResult {
  std::vector<int> tokens;
  std::vector<int> reveal_step;      // the t at which each position was fixed
  std::vector<double> reveal_conf;
  TrajectoryRecord trajectory;       // populated when cfg.record_trajectory
};

// Reverse denoising from the fully masked canvas, t = S..1. logits_at is any
// callable (x_t, t) -> Mat<T>; the trained denoiser and the test oracle both
// fit. gt_bounds, when given, are normalized ground-truth boundaries per
// template tuple and enable soft-IoU trajectory rows.
template <typename T, typename LogitFn>
GenerationResult generate(LogitFn&& logits_at, int template_len, const DecodeConfig& cfg,
                          const Vocabulary& vocab, Rng& rng,
                          const ResponseTemplate* tmpl = nullptr,
                          const std::vector<std::pair<double, double>>* gt_bounds = nullptr) {
  GenerationResult res;
  if (template_len == 0) return res;
  cfg.validate(template_len);
  res.tokens.assign(template_len, vocab.mask_id);
  res.reveal_step.assign(template_len, 0);
  res.reveal_conf.assign(template_len, 0.0);

  const SchedulePlan plan = make_schedule(template_len, cfg);
  for (int idx = 0; idx < cfg.n_steps; ++idx) {
    const int t = cfg.n_steps - idx;
    const SchedulePlan::Step& st = plan.steps[idx];
    const Mat<T> logits = logits_at(res.tokens, t);
    if (cfg.record_trajectory && tmpl != nullptr) {
      int revealed = 0;
      for (int tok : res.tokens) revealed += tok != vocab.mask_id ? 1 : 0;
      for (int k = 0; k < tmpl->max_tuples; ++k) {
        TupleSlots slots{tmpl->class_slot(k), tmpl->start_slot(k), tmpl->end_slot(k)};
        IouStepEval ev;
        if (gt_bounds != nullptr && k < static_cast<int>(gt_bounds->size())) {
          ev = eval_iou_step(logits, slots, vocab, t,
                             gate_at_step(res.tokens, slots, vocab.mask_id) ? 1 : 0,
                             (*gt_bounds)[k].first, (*gt_bounds)[k].second, 1e-8);
        } else {
          auto [ps, pe] = boundary_distributions(logits, slots, vocab);
          ev.ps = std::move(ps);
          ev.pe = std::move(pe);
          std::tie(ev.bs, ev.be) = soft_boundaries(ev.ps, ev.pe, vocab.n_time_tokens);
          ev.gate = gate_at_step(res.tokens, slots, vocab.mask_id) ? 1 : 0;
          ev.r = 0.0;
        }
        res.trajectory.rows.push_back(
            {t, k, ev.r, ev.gate, ev.bs, ev.be, revealed});
      }
    }
    const auto revealed =
        denoise_step(res.tokens, logits, st.block_begin, st.block_end, st.n_reveal,
                     cfg.temperature, vocab, rng);
    for (const RevealedToken& rt : revealed) {
      res.reveal_step[rt.position] = t;
      res.reveal_conf[rt.position] = rt.confidence;
    }
  }
  for (int tok : res.tokens)
    require_state(tok != vocab.mask_id, "generate: mask token left after final step");
  return res;
}

struct ParsedTuple {
  int tuple_index = 0;
  int class_id = 0;
  Segment segment;
  double confidence = 1.0;
  bool disordered = false;
};

struct ParseDiagnostics {
  int dropped_malformed = 0;
  int none_skipped = 0;
};

// Walks the fixed-width tuple grammar. none-class tuples are skipped; a
// non-class token in the class slot or a non-time token in a time slot drops
// the tuple into the diagnostics tally. Tuple confidence is the mean reveal
// confidence over its slots when confidences are supplied.
std::pair<std::vector<ParsedTuple>, ParseDiagnostics> parse_response(
    const std::vector<int>& tokens, const std::vector<double>* confidences,
    const Vocabulary& vocab, const TimeGrid& grid, const ResponseTemplate& tmpl,
    int class_id_offset, int n_classes);

}  // namespace mdtal
