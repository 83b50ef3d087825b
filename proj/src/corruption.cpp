#include "mdtal/corruption.hpp"

#include <algorithm>
#include <cmath>

namespace mdtal {

TargetSequence TargetSequence::from_tokens(const std::vector<int>& toks,
                                           const Vocabulary& vocab) {
  TargetSequence t;
  t.tokens = toks;
  t.is_boundary.resize(toks.size());
  t.supervised.assign(toks.size(), 1);
  for (size_t i = 0; i < toks.size(); ++i)
    t.is_boundary[i] = vocab.is_time_token(toks[i]) ? 1 : 0;
  return t;
}

void TargetSequence::validate() const {
  require(!tokens.empty(), "TargetSequence: empty");
  require(is_boundary.size() == tokens.size() && supervised.size() == tokens.size(),
          "TargetSequence: flag lengths mismatch");
  for (const TupleSlots& tp : tuples) {
    require(tp.i_s >= 0 && tp.i_s < length() && is_boundary[tp.i_s],
            "TargetSequence: tuple i_s not a boundary position");
    require(tp.i_e >= 0 && tp.i_e < length() && is_boundary[tp.i_e],
            "TargetSequence: tuple i_e not a boundary position");
    require(tp.label_slot >= 0 && tp.label_slot < length(),
            "TargetSequence: tuple label slot out of range");
  }
}

double keep_prob(int t, const MaskPolicy& policy, bool is_boundary) {
  require(t >= 0 && t <= policy.n_steps, "keep_prob: t outside [0, S]");
  const double base = 1.0 - static_cast<double>(t) / policy.n_steps;
  const double expo = is_boundary ? policy.gamma : policy.eta;
  return std::pow(base, expo);
}

MaskTrajectory sample_trajectory(const TargetSequence& target, const MaskPolicy& policy,
                                 uint64_t rng_seed) {
  require(target.length() > 0, "sample_trajectory: empty target");
  MaskTrajectory traj;
  traj.policy = policy;
  traj.boundary_type.assign(target.is_boundary.begin(), target.is_boundary.end());
  traj.reveal_u.resize(target.length());
  Rng rng(rng_seed);
  for (int i = 0; i < target.length(); ++i) traj.reveal_u[i] = rng.u01();
  return traj;
}

std::vector<char> MaskTrajectory::keep_mask_at(int t) const {
  require(t >= 0 && t <= policy.n_steps, "mask_at_step: t outside [0, S]");
  std::vector<char> m(reveal_u.size());
  const double kb = keep_prob(t, policy, true);
  const double kn = keep_prob(t, policy, false);
  for (size_t i = 0; i < reveal_u.size(); ++i)
    m[i] = reveal_u[i] < (boundary_type[i] ? kb : kn) ? 1 : 0;
  return m;
}

std::vector<int> MaskTrajectory::masked_positions_at(int t) const {
  const std::vector<char> m = keep_mask_at(t);
  std::vector<int> out;
  for (size_t i = 0; i < m.size(); ++i)
    if (!m[i]) out.push_back(static_cast<int>(i));
  return out;
}

int MaskTrajectory::reveal_elapsed(int i) const {
  require(i >= 0 && i < length(), "reveal_elapsed: position out of range");
  // Largest t at which the position is still kept; elapsed = S - t.
  const double u = reveal_u[i];
  const double expo = boundary_type[i] ? policy.gamma : policy.eta;
  // u < (1 - t/S)^expo  <=>  t < S*(1 - u^(1/expo))
  const double tmax = policy.n_steps * (1.0 - std::pow(u, 1.0 / expo));
  int t = static_cast<int>(std::ceil(tmax)) - 1;
  t = std::clamp(t, 0, policy.n_steps - 1);
  // Guard the exact-boundary cases of the closed form.
  while (t + 1 <= policy.n_steps && u < std::pow(1.0 - double(t + 1) / policy.n_steps, expo)) ++t;
  while (t > 0 && !(u < std::pow(1.0 - double(t) / policy.n_steps, expo))) --t;
  return policy.n_steps - t;
}

std::vector<int> corrupt(const TargetSequence& target, const std::vector<char>& keep_mask,
                         const Vocabulary& vocab) {
  require(static_cast<int>(keep_mask.size()) == target.length(),
          "corrupt: mask length does not match sequence length");
  std::vector<int> x(target.tokens);
  for (int i = 0; i < target.length(); ++i)
    if (!keep_mask[i]) x[i] = vocab.mask_id;
  return x;
}

}  // namespace mdtal
