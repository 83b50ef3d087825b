#pragma once

#include <vector>

#include "mdtal/common.hpp"
#include "mdtal/rng.hpp"
#include "mdtal/timecodec.hpp"

namespace mdtal {

// Slot indices of one action tuple inside the response.
struct TupleSlots {
  int label_slot = -1;
  int i_s = -1;
  int i_e = -1;
};

// Clean target response plus the position typing both losses share.
struct TargetSequence {
  std::vector<int> tokens;
  std::vector<char> is_boundary;   // target token is a time token
  std::vector<char> supervised;    // position contributes to CE terms
  std::vector<TupleSlots> tuples;  // real action instances only

  int length() const { return static_cast<int>(tokens.size()); }

  std::vector<int> boundary_positions() const {
    std::vector<int> out;
    for (int i = 0; i < length(); ++i)
      if (is_boundary[i]) out.push_back(i);
    return out;
  }

  static TargetSequence from_tokens(const std::vector<int>& toks, const Vocabulary& vocab);
  void validate() const;
};

// Type-specific keep schedule. The canonical planned policy keeps boundary
// tokens masked longer (gamma > eta); the ablation grid also builds the
// swapped variant through with_exponents.
struct MaskPolicy {
  enum class Kind { uniform, planned };
  Kind kind = Kind::uniform;
  double gamma = 1.0;  // exponent for boundary positions
  double eta = 1.0;    // exponent for non-boundary positions
  int n_steps = 64;    // S

  static MaskPolicy uniform(int n_steps) {
    MaskPolicy p;
    p.kind = Kind::uniform;
    p.gamma = p.eta = 1.0;
    p.n_steps = n_steps;
    require(n_steps >= 1, "MaskPolicy: n_steps must be >= 1");
    return p;
  }

  static MaskPolicy planned(double gamma, double eta, int n_steps) {
    require(gamma > eta && eta > 0.0, "MaskPolicy: planned requires gamma > eta > 0");
    return with_exponents(gamma, eta, n_steps);
  }

  // Escape hatch for the reveal-time-early ablation (exponents swapped).
  static MaskPolicy with_exponents(double gamma, double eta, int n_steps) {
    require(gamma > 0.0 && eta > 0.0, "MaskPolicy: exponents must be positive");
    require(n_steps >= 1, "MaskPolicy: n_steps must be >= 1");
    MaskPolicy p;
    p.kind = Kind::planned;
    p.gamma = gamma;
    p.eta = eta;
    p.n_steps = n_steps;
    return p;
  }
};

// kappa_t for one position type: (1 - t/S)^gamma or (1 - t/S)^eta.
double keep_prob(int t, const MaskPolicy& policy, bool is_boundary);

// Nested reveal-time trajectory: one uniform draw per position; position i is
// kept at step t iff u_i < kappa_t^{type(i)}. Since kappa decreases in t the
// kept sets grow monotonically as t decreases; m_0 keeps all, m_S keeps none.
struct MaskTrajectory {
  MaskPolicy policy;
  std::vector<double> reveal_u;
  std::vector<char> boundary_type;

  int length() const { return static_cast<int>(reveal_u.size()); }

  // Keep mask m_t (1 = position carries its clean token).
  std::vector<char> keep_mask_at(int t) const;

  // Complement of the keep mask as a position list.
  std::vector<int> masked_positions_at(int t) const;

  // Steps elapsed from the fully masked state until position i is revealed,
  // in [1, S]; boundary positions reveal later in expectation under the
  // planned policy.
  int reveal_elapsed(int i) const;
};

MaskTrajectory sample_trajectory(const TargetSequence& target, const MaskPolicy& policy,
                                 uint64_t rng_seed);

// x_t = m_t * x_0 + (1 - m_t) * [MASK]
std::vector<int> corrupt(const TargetSequence& target, const std::vector<char>& keep_mask,
                         const Vocabulary& vocab);

}  // namespace mdtal
