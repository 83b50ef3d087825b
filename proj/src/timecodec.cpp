#include "mdtal/timecodec.hpp"

#include <cmath>

#include <json.hpp>

namespace mdtal {

int encode_timestamp(double tau, const TimeGrid& grid) {
  require(std::isfinite(tau), "encode_timestamp: tau must be finite");
  require(tau >= 0.0 && tau <= grid.duration,
          "encode_timestamp: tau outside [0, duration]");
  // std::round is round-half-away-from-zero, the fixed tie rule.
  const double x = (grid.n_bins - 1) * tau / grid.duration;
  const int k = static_cast<int>(std::round(x));
  return k < 0 ? 0 : (k > grid.n_bins - 1 ? grid.n_bins - 1 : k);
}

int encode_timestamp_clamped(double tau, const TimeGrid& grid) {
  if (!(tau >= 0.0)) tau = 0.0;
  if (tau > grid.duration) tau = grid.duration;
  return encode_timestamp(tau, grid);
}

double decode_index(int k, const TimeGrid& grid) {
  require(k >= 0 && k <= grid.n_bins - 1, "decode_index: k outside [0, N-1]");
  return grid.duration * k / (grid.n_bins - 1);
}

std::pair<int, int> encode_segment(const Segment& seg, const TimeGrid& grid) {
  require(seg.start <= seg.end, "encode_segment: start > end");
  const int ks = encode_timestamp(seg.start, grid);
  const int ke = encode_timestamp(seg.end, grid);
  return {ks, ke};
}

DecodedSegment decode_segment(int k_s, int k_e, const TimeGrid& grid) {
  DecodedSegment out;
  if (k_s > k_e) {
    std::swap(k_s, k_e);
    out.disordered = true;
  }
  out.segment = Segment(decode_index(k_s, grid), decode_index(k_e, grid));
  return out;
}

std::string Vocabulary::token_string(int id) const {
  require(id >= 0 && id < size(), "Vocabulary: id out of range");
  if (id < time_token_offset()) return base_tokens[id];
  return "<t_" + std::to_string(id - time_token_offset()) + ">";
}

int Vocabulary::lookup(const std::string& tok) const {
  for (int i = 0; i < static_cast<int>(base_tokens.size()); ++i)
    if (base_tokens[i] == tok) return i;
  if (tok.size() > 4 && tok.rfind("<t_", 0) == 0 && tok.back() == '>') {
    const int bin = std::stoi(tok.substr(3, tok.size() - 4));
    if (bin >= 0 && bin < n_time_tokens) return time_token_offset() + bin;
  }
  return -1;
}

void Vocabulary::validate() const {
  require(n_time_tokens >= 2, "Vocabulary: need at least 2 time tokens");
  const int ids[] = {mask_id, pad_id, none_id, sep_id, bos_id};
  for (int a = 0; a < 5; ++a) {
    require(ids[a] >= 0 && ids[a] < time_token_offset(),
            "Vocabulary: reserved id outside the base range");
    for (int b = a + 1; b < 5; ++b)
      require(ids[a] != ids[b], "Vocabulary: reserved ids must be distinct");
  }
}

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["base_tokens"] = base_tokens;
  j["n_time_tokens"] = n_time_tokens;
  return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  Vocabulary v;
  v.base_tokens = j.at("base_tokens").get<std::vector<std::string>>();
  v.n_time_tokens = j.at("n_time_tokens").get<int>();
  v.mask_id = v.lookup("[MASK]");
  v.pad_id = v.lookup("[PAD]");
  v.none_id = v.lookup("[NONE]");
  v.sep_id = v.lookup("[SEP]");
  v.bos_id = v.lookup("[BOS]");
  v.validate();
  return v;
}

}  // namespace mdtal
