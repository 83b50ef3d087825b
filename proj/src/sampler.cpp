#include "mdtal/sampler.hpp"

namespace mdtal {

std::vector<int> even_split(int n_masked, int n_steps) {
  require(n_masked >= 0, "even_split: negative count");
  require(n_steps >= 1, "even_split: need at least one step");
  std::vector<int> counts(n_steps, n_masked / n_steps);
  const int extra = n_masked % n_steps;
  for (int i = 0; i < extra; ++i) counts[i] += 1;
  return counts;
}

SchedulePlan make_schedule(int response_len, const DecodeConfig& cfg) {
  SchedulePlan plan;
  if (response_len == 0) return plan;
  cfg.validate(response_len);
  const int S = cfg.n_steps;
  // A block with zero steps could never reveal its tokens, so the effective
  // block length grows until every block owns at least one step.
  int bl = std::min(cfg.block_length, response_len);
  bl = std::max(bl, (response_len + S - 1) / S);
  const int n_blocks = (response_len + bl - 1) / bl;

  // Steps per block: start from one each, distribute the rest by largest
  // remainder of the proportional share (earlier block wins ties).
  std::vector<int> block_len(n_blocks), block_steps(n_blocks, 1);
  for (int b = 0; b < n_blocks; ++b)
    block_len[b] = std::min(bl, response_len - b * bl);
  int remaining = S - n_blocks;
  std::vector<double> frac(n_blocks, 0.0);
  int assigned = 0;
  for (int b = 0; b < n_blocks; ++b) {
    const double share = static_cast<double>(remaining) * block_len[b] / response_len;
    const int whole = static_cast<int>(share);
    block_steps[b] += whole;
    assigned += whole;
    frac[b] = share - whole;
  }
  for (int left = remaining - assigned; left > 0; --left) {
    int best = 0;
    for (int b = 1; b < n_blocks; ++b)
      if (frac[b] > frac[best]) best = b;
    block_steps[best] += 1;
    frac[best] = -1.0;
  }

  for (int b = 0; b < n_blocks; ++b) {
    const int begin = b * bl;
    const int end = begin + block_len[b];
    const std::vector<int> counts = even_split(block_len[b], block_steps[b]);
    for (int c : counts) plan.steps.push_back({begin, end, c});
  }
  return plan;
}

std::vector<int> reveal_schedule(int n_masked, const DecodeConfig& cfg) {
  if (n_masked == 0) return std::vector<int>(cfg.n_steps, 0);
  const SchedulePlan plan = make_schedule(n_masked, cfg);
  std::vector<int> counts;
  counts.reserve(plan.steps.size());
  for (const auto& st : plan.steps) counts.push_back(st.n_reveal);
  return counts;
}

std::pair<std::vector<ParsedTuple>, ParseDiagnostics> parse_response(
    const std::vector<int>& tokens, const std::vector<double>* confidences,
    const Vocabulary& vocab, const TimeGrid& grid, const ResponseTemplate& tmpl,
    int class_id_offset, int n_classes) {
  require(static_cast<int>(tokens.size()) == tmpl.length(),
          "parse_response: token count does not match the template");
  for (int tok : tokens)
    require(tok != vocab.mask_id, "parse_response: sequence still contains mask tokens");

  std::vector<ParsedTuple> out;
  ParseDiagnostics diag;
  for (int k = 0; k < tmpl.max_tuples; ++k) {
    const int cls_tok = tokens[tmpl.class_slot(k)];
    if (cls_tok == vocab.none_id) {
      diag.none_skipped += 1;
      continue;
    }
    const int ts_tok = tokens[tmpl.start_slot(k)];
    const int te_tok = tokens[tmpl.end_slot(k)];
    const bool class_ok =
        cls_tok >= class_id_offset && cls_tok < class_id_offset + n_classes;
    if (!class_ok || !vocab.is_time_token(ts_tok) || !vocab.is_time_token(te_tok)) {
      diag.dropped_malformed += 1;
      continue;
    }
    ParsedTuple pt;
    pt.tuple_index = k;
    pt.class_id = cls_tok - class_id_offset;
    const DecodedSegment dec =
        decode_segment(vocab.bin_of_token(ts_tok), vocab.bin_of_token(te_tok), grid);
    pt.segment = dec.segment;
    pt.disordered = dec.disordered;
    if (confidences != nullptr) {
      double c = 0.0;
      for (int j = 0; j < tmpl.tuple_width(); ++j)
        c += (*confidences)[k * tmpl.tuple_width() + j];
      pt.confidence = c / tmpl.tuple_width();
    }
    out.push_back(pt);
  }
  return {out, diag};
}

}  // namespace mdtal
