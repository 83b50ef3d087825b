#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mdtal/common.hpp"
#include "mdtal/corruption.hpp"
#include "mdtal/timecodec.hpp"

namespace mdtal {

struct IoUHyper {
  double mu = 0.5;          // monotonic-refinement penalty weight
  double delta = 0.01;      // refinement margin
  double lambda_rel = 0.5;  // relative-weighting coefficient
  double epsilon = 1e-8;

  void validate() const {
    require(mu >= 0 && delta >= 0 && lambda_rel >= 0, "IoUHyper: negative weight");
    require(epsilon > 0, "IoUHyper: epsilon must be positive");
  }
};

struct LossWeights {
  double lambda_plan = 1.0;
  double lambda_iou = 0.5;
  double lambda_ce = 0.2;

  void validate() const {
    require(lambda_plan >= 0 && lambda_iou >= 0 && lambda_ce >= 0,
            "LossWeights: negative weight");
    require(lambda_plan > 0 || lambda_iou > 0 || lambda_ce > 0,
            "LossWeights: at least one weight must be positive");
  }
};

// w_t = 2(S-t+1)/(S(S+1)): sums to 1, strictly decreasing in t.
inline double step_weight(int t, int S) {
  require(t >= 1 && t <= S, "step_weight: t outside [1, S]");
  return 2.0 * (S - t + 1) / (static_cast<double>(S) * (S + 1));
}

// Cross-entropy summed over the given masked positions, restricted to
// supervised ones. Optionally accumulates d(loss)/d(logits) * grad_scale.
template <typename T>
double masked_ce(const Mat<T>& logits, const TargetSequence& target,
                 const std::vector<int>& masked_positions, Mat<T>* dlogits = nullptr,
                 double grad_scale = 1.0) {
  const int v = logits.cols;
  double total = 0.0;
  std::vector<T> probs(v);
  for (int pos : masked_positions) {
    require(pos >= 0 && pos < target.length(), "masked_ce: position out of range");
    if (!target.supervised[pos]) continue;
    const T* z = logits.row(pos);
    const T lse = logsumexp_row(z, v);
    total += static_cast<double>(lse - z[target.tokens[pos]]);
    if (dlogits) {
      softmax_row(z, v, probs.data());
      T* dz = dlogits->row(pos);
      for (int j = 0; j < v; ++j) dz[j] += static_cast<T>(grad_scale) * probs[j];
      dz[target.tokens[pos]] -= static_cast<T>(grad_scale);
    }
  }
  return total;
}

// Cross-entropy over every supervised response position, masked or not.
template <typename T>
double base_ce(const Mat<T>& logits, const TargetSequence& target,
               Mat<T>* dlogits = nullptr, double grad_scale = 1.0) {
  std::vector<int> all;
  all.reserve(target.length());
  for (int i = 0; i < target.length(); ++i) all.push_back(i);
  return masked_ce(logits, target, all, dlogits, grad_scale);
}

// w_t-weighted masked reconstruction at one sampled step of a trajectory.
template <typename T>
double plan_loss(const Mat<T>& logits, const TargetSequence& target,
                 const MaskTrajectory& traj, int t_sample, Mat<T>* dlogits = nullptr,
                 double grad_scale = 1.0, bool uniform_step_weights = false) {
  const int S = traj.policy.n_steps;
  const double w = uniform_step_weights ? 1.0 / S : step_weight(t_sample, S);
  const std::vector<int> masked = traj.masked_positions_at(t_sample);
  return w * masked_ce(logits, target, masked, dlogits, grad_scale * w);
}

// Softmax restricted to the N time-token logits of the two boundary slots.
// Distributions are computed in double regardless of the logit type.
template <typename T>
std::pair<std::vector<double>, std::vector<double>> boundary_distributions(
    const Mat<T>& logits, const TupleSlots& tuple, const Vocabulary& vocab) {
  const int n = vocab.n_time_tokens;
  const int off = vocab.time_token_offset();
  auto restrict_softmax = [&](int row) {
    std::vector<double> p(n);
    const T* z = logits.row(row);
    double m = static_cast<double>(z[off]);
    for (int k = 1; k < n; ++k) m = std::max(m, static_cast<double>(z[off + k]));
    double s = 0.0;
    for (int k = 0; k < n; ++k) {
      p[k] = std::exp(static_cast<double>(z[off + k]) - m);
      s += p[k];
    }
    for (int k = 0; k < n; ++k) p[k] /= s;
    return p;
  };
  require(tuple.i_s >= 0 && tuple.i_s < logits.rows, "boundary_distributions: bad i_s");
  require(tuple.i_e >= 0 && tuple.i_e < logits.rows, "boundary_distributions: bad i_e");
  return {restrict_softmax(tuple.i_s), restrict_softmax(tuple.i_e)};
}

// Normalized expectations of the bin index under each distribution.
inline std::pair<double, double> soft_boundaries(const std::vector<double>& ps,
                                                 const std::vector<double>& pe, int n_bins) {
  require(static_cast<int>(ps.size()) == n_bins && static_cast<int>(pe.size()) == n_bins,
          "soft_boundaries: distribution size mismatch");
  double es = 0.0, ee = 0.0;
  for (int k = 0; k < n_bins; ++k) {
    es += k * ps[k];
    ee += k * pe[k];
  }
  return {es / (n_bins - 1), ee / (n_bins - 1)};
}

// Soft interval IoU with its partial derivatives w.r.t. the soft boundaries.
// Start/end roles stay distinct: a disordered prediction has zero length.
struct SoftIou {
  double r = 0.0;
  double dr_dbs = 0.0;
  double dr_dbe = 0.0;
};

inline SoftIou soft_iou_full(double bs, double be, double gs, double ge, double eps) {
  SoftIou out;
  const double lpred = std::max(0.0, be - bs);
  const bool pred_open = (be - bs) > 0.0;
  const double inner = std::min(be, ge) - std::max(bs, gs);
  const double lcap = std::max(0.0, inner);
  const bool cap_open = inner > 0.0;
  const double lcup = lpred + (ge - gs) - lcap;
  out.r = lcap / (lcup + eps);

  const double dlpred_dbs = pred_open ? -1.0 : 0.0;
  const double dlpred_dbe = pred_open ? 1.0 : 0.0;
  const double dlcap_dbs = (cap_open && bs > gs) ? -1.0 : 0.0;
  const double dlcap_dbe = (cap_open && be < ge) ? 1.0 : 0.0;
  const double dlcup_dbs = dlpred_dbs - dlcap_dbs;
  const double dlcup_dbe = dlpred_dbe - dlcap_dbe;
  const double denom = lcup + eps;
  out.dr_dbs = (dlcap_dbs * denom - lcap * dlcup_dbs) / (denom * denom);
  out.dr_dbe = (dlcap_dbe * denom - lcap * dlcup_dbe) / (denom * denom);
  return out;
}

inline double soft_iou(double bs, double be, double gs, double ge, double eps) {
  return soft_iou_full(bs, be, gs, ge, eps).r;
}

// Both boundary slots revealed (paper gate).
inline bool gate_at_step(const std::vector<int>& revealed_tokens, const TupleSlots& tuple,
                         int mask_id) {
  require(tuple.i_s >= 0 && tuple.i_s < static_cast<int>(revealed_tokens.size()) &&
              tuple.i_e >= 0 && tuple.i_e < static_cast<int>(revealed_tokens.size()),
          "gate_at_step: tuple slots out of range");
  return revealed_tokens[tuple.i_s] != mask_id && revealed_tokens[tuple.i_e] != mask_id;
}

enum class GateMode { both, either, none };

inline bool gate_with_mode(const std::vector<int>& revealed_tokens, const TupleSlots& tuple,
                           int mask_id, GateMode mode) {
  switch (mode) {
    case GateMode::none:
      return true;
    case GateMode::either:
      return revealed_tokens[tuple.i_s] != mask_id || revealed_tokens[tuple.i_e] != mask_id;
    case GateMode::both:
    default:
      return gate_at_step(revealed_tokens, tuple, mask_id);
  }
}

// Group-relative statistics over the active steps. A group of at most one
// active step carries no relative signal, so its advantages are exactly zero.
struct AdvantageStats {
  double r_mean = 0.0;
  double r_std = 0.0;
  std::vector<double> a;       // A_t
  std::vector<double> a_clip;  // max(A_t, 0)
};

inline AdvantageStats step_advantages(const std::vector<double>& rewards,
                                      const std::vector<int>& gates, double eps) {
  require(rewards.size() == gates.size(), "step_advantages: length mismatch");
  AdvantageStats st;
  const size_t n = rewards.size();
  st.a.assign(n, 0.0);
  st.a_clip.assign(n, 0.0);
  double gsum = 0.0, grsum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    gsum += gates[i];
    grsum += gates[i] * rewards[i];
  }
  st.r_mean = grsum / (eps + gsum);
  double var = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = rewards[i] - st.r_mean;
    var += gates[i] * d * d;
  }
  st.r_std = std::sqrt(var / (eps + gsum) + eps);
  if (gsum <= 1.0) return st;
  for (size_t i = 0; i < n; ++i) {
    st.a[i] = gates[i] * (rewards[i] - st.r_mean) / st.r_std;
    st.a_clip[i] = std::max(st.a[i], 0.0);
  }
  return st;
}

// Per-evaluated-step state for the reward objective.
struct IouStepEval {
  int t = 0;
  int gate = 0;
  std::vector<double> ps, pe;
  double bs = 0.0, be = 0.0;
  double r = 0.0;
  SoftIou iou;
};

template <typename T>
IouStepEval eval_iou_step(const Mat<T>& logits, const TupleSlots& tuple,
                          const Vocabulary& vocab, int t, int gate, double gt_bs,
                          double gt_be, double eps) {
  IouStepEval ev;
  ev.t = t;
  ev.gate = gate;
  auto [ps, pe] = boundary_distributions(logits, tuple, vocab);
  ev.ps = std::move(ps);
  ev.pe = std::move(pe);
  std::tie(ev.bs, ev.be) = soft_boundaries(ev.ps, ev.pe, vocab.n_time_tokens);
  ev.iou = soft_iou_full(ev.bs, ev.be, gt_bs, gt_be, eps);
  ev.r = ev.iou.r;
  return ev;
}

// Gradient of the reward objective w.r.t. the time-token logits of one step.
struct IouStepGrad {
  std::vector<double> dz_s, dz_e;  // length N, indexed by bin
};

struct IouLossValue {
  double value = 0.0;
  double term_quality = 0.0;  // sum alpha_t g_t (1 - r_t), normalized
  double term_hinge = 0.0;
  double term_rel = 0.0;
  AdvantageStats adv;
  std::vector<IouStepGrad> grads;  // parallel to the evaluated steps
};

// Unified reward objective over one tuple's evaluated steps (ascending t).
// Gradients flow through r_t in the quality and hinge terms and through the
// boundary log-probabilities in the relative term; the clipped advantages are
// treated as constants.
inline IouLossValue iou_loss(const std::vector<IouStepEval>& steps, int s_star_bin,
                             int e_star_bin, const IoUHyper& hyper,
                             const std::vector<double>& alpha) {
  require(alpha.size() == steps.size(), "iou_loss: alpha size mismatch");
  for (size_t k = 1; k < steps.size(); ++k)
    require(steps[k].t > steps[k - 1].t, "iou_loss: steps must be ascending in t");
  IouLossValue out;
  const size_t n = steps.size();
  out.grads.assign(n, IouStepGrad{});

  std::vector<double> rewards(n), drdval(n, 0.0);
  std::vector<int> gates(n);
  double gsum = 0.0;
  for (size_t k = 0; k < n; ++k) {
    rewards[k] = steps[k].r;
    gates[k] = steps[k].gate;
    gsum += gates[k];
  }
  out.adv = step_advantages(rewards, gates, hyper.epsilon);
  const double norm = 1.0 / (hyper.epsilon + gsum);

  double quality = 0.0, hinge = 0.0, rel = 0.0;
  for (size_t k = 0; k < n; ++k) {
    if (!gates[k]) continue;
    quality += alpha[k] * (1.0 - rewards[k]);
    drdval[k] += -norm * alpha[k];
  }
  for (size_t k = 1; k < n; ++k) {
    if (!gates[k] || !gates[k - 1]) continue;
    const double h = rewards[k] - rewards[k - 1] + hyper.delta;
    if (h > 0.0) {
      hinge += h;
      drdval[k] += norm * hyper.mu;
      drdval[k - 1] -= norm * hyper.mu;
    }
  }

  const int n_bins = n ? static_cast<int>(steps[0].ps.size()) : 0;
  for (size_t k = 0; k < n; ++k) {
    out.grads[k].dz_s.assign(n_bins, 0.0);
    out.grads[k].dz_e.assign(n_bins, 0.0);
    const double at = out.adv.a_clip[k];
    if (at > 0.0) {
      const double lp = std::log(std::max(steps[k].ps[s_star_bin], 1e-300)) +
                        std::log(std::max(steps[k].pe[e_star_bin], 1e-300));
      rel += at * lp;
      // d(-log p(s*))/dz_j = p_j - [j == s*]
      const double c = norm * hyper.lambda_rel * at;
      for (int j = 0; j < n_bins; ++j) {
        out.grads[k].dz_s[j] += c * steps[k].ps[j];
        out.grads[k].dz_e[j] += c * steps[k].pe[j];
      }
      out.grads[k].dz_s[s_star_bin] -= c;
      out.grads[k].dz_e[e_star_bin] -= c;
    }
    // dr_t / dz through the soft boundaries.
    if (drdval[k] != 0.0) {
      const double dbs = drdval[k] * steps[k].iou.dr_dbs;
      const double dbe = drdval[k] * steps[k].iou.dr_dbe;
      for (int j = 0; j < n_bins; ++j) {
        const double pos = static_cast<double>(j) / (n_bins - 1);
        out.grads[k].dz_s[j] += dbs * steps[k].ps[j] * (pos - steps[k].bs);
        out.grads[k].dz_e[j] += dbe * steps[k].pe[j] * (pos - steps[k].be);
      }
    }
  }

  out.term_quality = norm * quality;
  out.term_hinge = norm * hyper.mu * hinge;
  out.term_rel = -norm * hyper.lambda_rel * rel;
  out.value = out.term_quality + out.term_hinge + out.term_rel;
  return out;
}

struct LossBreakdown {
  double ce = 0.0;
  double plan = 0.0;
  double iou = 0.0;
  double total = 0.0;
};

inline LossBreakdown total_loss(double ce, double plan, double iou,
                                const LossWeights& w) {
  require(std::isfinite(ce) && std::isfinite(plan) && std::isfinite(iou),
          "total_loss: non-finite component");
  w.validate();
  LossBreakdown b;
  b.ce = ce;
  b.plan = plan;
  b.iou = iou;
  b.total = w.lambda_ce * ce + w.lambda_plan * plan + w.lambda_iou * iou;
  return b;
}

// Per-step rows for trajectory dumps (soft IoU vs step curves).
struct TrajectoryRecord {
  struct Row {
    int t = 0;
    int tuple = 0;
    double r_soft = 0.0;
    int gate = 0;
    double b_s = 0.0, b_e = 0.0;
    int revealed_count = 0;
  };
  std::vector<Row> rows;
};

}  // namespace mdtal
