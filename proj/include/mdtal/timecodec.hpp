#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mdtal/common.hpp"

namespace mdtal {

// N-bin timeline discretization for one video duration.
struct TimeGrid {
  int n_bins = 100;        // number of time tokens
  double duration = 100.0; // seconds

  TimeGrid() = default;
  TimeGrid(int n, double d) : n_bins(n), duration(d) {
    require(n_bins >= 2, "TimeGrid: n_bins must be >= 2");
    require(duration > 0.0, "TimeGrid: duration must be > 0");
  }
};

struct Segment {
  double start = 0.0;
  double end = 0.0;

  Segment() = default;
  Segment(double s, double e) : start(s), end(e) {}
  double length() const { return end - start; }
};

// Token-id space: an ordered list of semantic/control tokens followed by a
// contiguous block of N time tokens. Reserved ids are fixed at the front.
struct Vocabulary {
  std::vector<std::string> base_tokens;
  int n_time_tokens = 0;
  int mask_id = -1, pad_id = -1, none_id = -1, sep_id = -1, bos_id = -1;

  int time_token_offset() const { return static_cast<int>(base_tokens.size()); }
  int size() const { return time_token_offset() + n_time_tokens; }

  bool is_time_token(int id) const {
    return id >= time_token_offset() && id < size();
  }
  int time_token_id(int bin) const {
    require(bin >= 0 && bin < n_time_tokens, "Vocabulary: bin out of range");
    return time_token_offset() + bin;
  }
  int bin_of_token(int id) const {
    require(is_time_token(id), "Vocabulary: token id is not a time token");
    return id - time_token_offset();
  }

  std::string token_string(int id) const;
  int lookup(const std::string& tok) const;  // -1 if absent

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void validate() const;
};

// Fixed-width response grammar: <class><desc x m><t_s><t_e><sep> repeated
// max_tuples times, padded with none-tuples.
struct ResponseTemplate {
  int m_desc = 2;
  int max_tuples = 1;

  int tuple_width() const { return m_desc + 4; }
  int length() const { return max_tuples * tuple_width(); }
  int class_slot(int k) const { return k * tuple_width(); }
  int desc_slot(int k, int j) const { return k * tuple_width() + 1 + j; }
  int start_slot(int k) const { return k * tuple_width() + 1 + m_desc; }
  int end_slot(int k) const { return k * tuple_width() + 2 + m_desc; }
  int sep_slot(int k) const { return k * tuple_width() + 3 + m_desc; }
};

// k = round((N-1)*tau/D), half away from zero. Rejects tau outside [0, D].
int encode_timestamp(double tau, const TimeGrid& grid);

// tau = D*k/(N-1). Rejects k outside [0, N-1].
double decode_index(int k, const TimeGrid& grid);

// Clamp helper for sampler/generation output; encode_timestamp itself never clamps.
int encode_timestamp_clamped(double tau, const TimeGrid& grid);

std::pair<int, int> encode_segment(const Segment& seg, const TimeGrid& grid);

struct DecodedSegment {
  Segment segment;
  bool disordered = false;  // true when k_s > k_e and the pair was swapped
};
DecodedSegment decode_segment(int k_s, int k_e, const TimeGrid& grid);

}  // namespace mdtal
