#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdtal/common.hpp"
#include "mdtal/corruption.hpp"
#include "mdtal/kernels.hpp"
#include "mdtal/rng.hpp"

namespace mdtal {

// Bidirectional masked-diffusion denoiser: token/step/position embeddings, a
// learned frame-feature context encoder, pre-norm encoder blocks with full
// (unmasked) self-attention, and a vocabulary projection head. Templated on
// the scalar type: float is the training/inference build, double backs the
// finite-difference gradient checks.

struct DenoiserConfig {
  int d_model = 64;
  int n_blocks = 2;
  int n_heads = 4;
  int n_ctx = 8;       // pooled video tokens (compressor queries)
  int n_query = 2;     // instruction tokens
  int d_feat = 16;     // raw frame-feature dimension
  int n_steps = 16;    // S; step embeddings cover 0..S
  int vocab_size = 0;
  int response_len = 0;

  int d_ff() const { return 4 * d_model; }
  int d_head() const { return d_model / n_heads; }
  int ctx_tokens() const { return n_ctx + n_query + 3; }  // BOS, SEP, SEP
  int total_tokens() const { return ctx_tokens() + response_len; }

  void validate() const {
    require(d_model > 0 && n_blocks > 0 && n_heads > 0, "DenoiserConfig: bad dims");
    require(d_model % n_heads == 0, "DenoiserConfig: d_model must divide by n_heads");
    require(vocab_size > 0 && response_len > 0, "DenoiserConfig: vocab/response unset");
    require(n_steps >= 1 && n_ctx >= 1 && d_feat >= 1, "DenoiserConfig: bad sizes");
  }

  nlohmann::json to_json() const {
    return {{"d_model", d_model},   {"n_blocks", n_blocks},
            {"n_heads", n_heads},   {"n_ctx", n_ctx},
            {"n_query", n_query},   {"d_feat", d_feat},
            {"n_steps", n_steps},   {"vocab_size", vocab_size},
            {"response_len", response_len}};
  }
  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.d_model = j.at("d_model");
    c.n_blocks = j.at("n_blocks");
    c.n_heads = j.at("n_heads");
    c.n_ctx = j.at("n_ctx");
    c.n_query = j.at("n_query");
    c.d_feat = j.at("d_feat");
    c.n_steps = j.at("n_steps");
    c.vocab_size = j.at("vocab_size");
    c.response_len = j.at("response_len");
    return c;
  }
};

template <typename T>
struct NamedTensor {
  std::string name;
  std::string group;
  Mat<T> w;
  Mat<T> g;
  bool trainable = true;
};

template <typename T>
struct ContextEmbedding {
  Mat<T> tokens;               // ctx_tokens x d_model
  Mat<T> pooled;               // n_ctx x d_feat, pre-projection bucket means
  std::vector<int> slot_token; // per row: token id, or -1 for video rows
};

namespace detail {

template <typename T>
struct LnCache {
  Mat<T> hat;            // normalized rows, before scale/shift
  Mat<T> out;            // scaled output fed to the next op
  std::vector<T> rstd;   // per row
};

template <typename T>
struct BlockCache {
  LnCache<T> ln1;
  Mat<T> qkv;                  // T x 3d
  std::vector<Mat<T>> att_p;   // per head, T x T post-softmax
  Mat<T> att_concat;           // T x d
  Mat<T> x_mid;                // after attention residual
  LnCache<T> ln2;
  Mat<T> ff_pre;               // T x 4d, before activation
  Mat<T> ff_act;               // T x 4d
};

inline double gelu_fwd(double x) {
  const double c = 0.7978845608028654;  // sqrt(2/pi)
  const double a = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(c * (x + a * x * x * x)));
}

inline double gelu_bwd(double x) {
  const double c = 0.7978845608028654;
  const double a = 0.044715;
  const double u = std::tanh(c * (x + a * x * x * x));
  return 0.5 * (1.0 + u) + 0.5 * x * (1.0 - u * u) * c * (1.0 + 3.0 * a * x * x);
}

}  // namespace detail

template <typename T>
struct ForwardCache {
  std::vector<int> x_tokens;
  int t = 0;
  ContextEmbedding<T> ctx;
  std::vector<detail::BlockCache<T>> blocks;
  detail::LnCache<T> lnf;
  bool valid = false;
};

template <typename T>
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.d_model;
    add(tok_emb_, "tok_emb", "embed", cfg_.vocab_size, d);
    add(pos_emb_, "pos_emb", "embed", cfg_.total_tokens(), d);
    add(step_emb_, "step_emb", "embed", cfg_.n_steps + 1, d);
    add(ctx_proj_w_, "ctx_proj_w", "context", cfg_.d_feat, d);
    add(ctx_proj_b_, "ctx_proj_b", "context", 1, d);
    blocks_.resize(cfg_.n_blocks);
    for (int b = 0; b < cfg_.n_blocks; ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      Block& blk = blocks_[b];
      add(blk.ln1_g, p + "ln1_g", "backbone", 1, d);
      add(blk.ln1_b, p + "ln1_b", "backbone", 1, d);
      add(blk.qkv_w, p + "qkv_w", "backbone", d, 3 * d);
      add(blk.qkv_b, p + "qkv_b", "backbone", 1, 3 * d);
      add(blk.att_o_w, p + "att_o_w", "backbone", d, d);
      add(blk.att_o_b, p + "att_o_b", "backbone", 1, d);
      add(blk.ln2_g, p + "ln2_g", "backbone", 1, d);
      add(blk.ln2_b, p + "ln2_b", "backbone", 1, d);
      add(blk.ff1_w, p + "ff1_w", "backbone", d, cfg_.d_ff());
      add(blk.ff1_b, p + "ff1_b", "backbone", 1, cfg_.d_ff());
      add(blk.ff2_w, p + "ff2_w", "backbone", cfg_.d_ff(), d);
      add(blk.ff2_b, p + "ff2_b", "backbone", 1, d);
    }
    add(lnf_g_, "lnf_g", "backbone", 1, d);
    add(lnf_b_, "lnf_b", "backbone", 1, d);
    add(head_w_, "head_w", "head", d, cfg_.vocab_size);
    add(head_b_, "head_b", "head", 1, cfg_.vocab_size);
    init_weights(seed);
  }

  const DenoiserConfig& config() const { return cfg_; }
  std::vector<NamedTensor<T>*>& tensors() { return registry_; }
  const std::vector<NamedTensor<T>*>& tensors() const { return registry_; }

  size_t param_count() const {
    size_t n = 0;
    for (const auto* t : registry_) n += t->w.size();
    return n;
  }

  void zero_grad() {
    for (auto* t : registry_) t->g.zero();
  }

  void set_group_trainable(const std::string& group, bool trainable) {
    bool found = false;
    for (auto* t : registry_)
      if (t->group == group) {
        t->trainable = trainable;
        found = true;
      }
    require(found, "set_group_trainable: unknown group " + group);
  }

  // Projects bucket-averaged frame features and assembles
  // [BOS, video tokens, SEP, query tokens, SEP].
  ContextEmbedding<T> encode_context(const Mat<T>& frames,
                                     const std::vector<int>& query) const {
    require(frames.rows >= 1, "encode_context: need at least one frame");
    require(frames.cols == cfg_.d_feat, "encode_context: frame feature dim mismatch");
    require(static_cast<int>(query.size()) == cfg_.n_query,
            "encode_context: query length mismatch");
    const int d = cfg_.d_model;
    ContextEmbedding<T> ctx;
    ctx.tokens = Mat<T>(cfg_.ctx_tokens(), d);
    ctx.pooled = Mat<T>(cfg_.n_ctx, cfg_.d_feat);
    ctx.slot_token.assign(cfg_.ctx_tokens(), -1);

    const auto& K = kernels::table<T>();
    for (int j = 0; j < cfg_.n_ctx; ++j) {
      const int lo = static_cast<int>(static_cast<int64_t>(j) * frames.rows / cfg_.n_ctx);
      const int hi = static_cast<int>(static_cast<int64_t>(j + 1) * frames.rows / cfg_.n_ctx);
      T* p = ctx.pooled.row(j);
      for (int f = lo; f < hi; ++f) K.axpy(T(1), frames.row(f), p, cfg_.d_feat);
      if (hi > lo) K.scale(p, T(1) / T(hi - lo), cfg_.d_feat);
    }
    // video rows: pooled * W + b
    K.gemm(ctx.pooled.data.data(), ctx_proj_w_.w.data.data(), ctx.tokens.row(1),
           cfg_.n_ctx, cfg_.d_feat, d, false);
    for (int j = 0; j < cfg_.n_ctx; ++j)
      K.axpy(T(1), ctx_proj_b_.w.row(0), ctx.tokens.row(1 + j), d);

    auto put_embed = [&](int row, int tok) {
      std::copy(tok_emb_.w.row(tok), tok_emb_.w.row(tok) + d, ctx.tokens.row(row));
      ctx.slot_token[row] = tok;
    };
    put_embed(0, bos_id_);
    put_embed(1 + cfg_.n_ctx, sep_id_);
    for (int q = 0; q < cfg_.n_query; ++q) put_embed(2 + cfg_.n_ctx + q, query[q]);
    put_embed(2 + cfg_.n_ctx + cfg_.n_query, sep_id_);
    return ctx;
  }

  // Reserved ids the context assembly needs; set once from the vocabulary.
  void set_special_tokens(int bos_id, int sep_id) {
    bos_id_ = bos_id;
    sep_id_ = sep_id;
  }

  // Full-sequence bidirectional pass; returns response_len x vocab logits.
  Mat<T> forward(const std::vector<int>& x_t, const ContextEmbedding<T>& ctx, int t,
                 ForwardCache<T>* cache = nullptr) const {
    require(t >= 0 && t <= cfg_.n_steps, "forward: step t outside [0, S]");
    require(static_cast<int>(x_t.size()) == cfg_.response_len,
            "forward: response length mismatch");
    require(ctx.tokens.rows == cfg_.ctx_tokens(), "forward: context length mismatch");
    const int d = cfg_.d_model;
    const int n_ctx_rows = cfg_.ctx_tokens();
    const int n_all = cfg_.total_tokens();
    const auto& K = kernels::table<T>();

    Mat<T> h(n_all, d);
    for (int r = 0; r < n_ctx_rows; ++r)
      std::copy(ctx.tokens.row(r), ctx.tokens.row(r) + d, h.row(r));
    for (int i = 0; i < cfg_.response_len; ++i) {
      const int tok = x_t[i];
      require(tok >= 0 && tok < cfg_.vocab_size, "forward: token id out of range");
      T* row = h.row(n_ctx_rows + i);
      std::copy(tok_emb_.w.row(tok), tok_emb_.w.row(tok) + d, row);
      K.axpy(T(1), step_emb_.w.row(t), row, d);
    }
    for (int r = 0; r < n_all; ++r) K.axpy(T(1), pos_emb_.w.row(r), h.row(r), d);

    ForwardCache<T> local;
    ForwardCache<T>& c = cache ? *cache : local;
    c.x_tokens = x_t;
    c.t = t;
    c.ctx = ctx;
    c.blocks.assign(cfg_.n_blocks, detail::BlockCache<T>());

    for (int b = 0; b < cfg_.n_blocks; ++b) {
      block_forward(h, blocks_[b], c.blocks[b]);
      require_state(h.all_finite(),
                    "forward: non-finite activations after block " + std::to_string(b));
    }

    layernorm_forward(h, lnf_g_.w, lnf_b_.w, c.lnf);
    Mat<T> logits(cfg_.response_len, cfg_.vocab_size);
    K.gemm(c.lnf.out.row(n_ctx_rows), head_w_.w.data.data(), logits.data.data(),
           cfg_.response_len, d, cfg_.vocab_size, false);
    for (int i = 0; i < cfg_.response_len; ++i)
      K.axpy(T(1), head_b_.w.row(0), logits.row(i), cfg_.vocab_size);
    require_state(logits.all_finite(), "forward: non-finite logits at the head");
    c.valid = true;
    return logits;
  }

  // Reverse-mode pass; accumulates parameter gradients for every trainable
  // tensor. Requires the cache produced by the matching forward call.
  void backward(const ForwardCache<T>& cache, const Mat<T>& dlogits) {
    require_state(cache.valid, "backward: missing forward cache");
    require(dlogits.rows == cfg_.response_len && dlogits.cols == cfg_.vocab_size,
            "backward: dlogits shape mismatch");
    const int d = cfg_.d_model;
    const int n_ctx_rows = cfg_.ctx_tokens();
    const int n_all = cfg_.total_tokens();
    const auto& K = kernels::table<T>();

    // Head.
    Mat<T> dlnf_out(n_all, d);
    K.gemm_nt(dlogits.data.data(), head_w_.w.data.data(), dlnf_out.row(n_ctx_rows),
              cfg_.response_len, cfg_.vocab_size, d, false);
    if (head_w_.trainable)
      K.gemm_tn(cache.lnf.out.row(n_ctx_rows), dlogits.data.data(),
                head_w_.g.data.data(), d, cfg_.response_len, cfg_.vocab_size, true);
    if (head_b_.trainable)
      for (int i = 0; i < cfg_.response_len; ++i)
        K.axpy(T(1), dlogits.row(i), head_b_.g.row(0), cfg_.vocab_size);

    Mat<T> dh(n_all, d);
    layernorm_backward(dlnf_out, cache.lnf, lnf_g_, lnf_b_, dh);

    for (int b = cfg_.n_blocks - 1; b >= 0; --b)
      block_backward(dh, blocks_[b], cache.blocks[b]);

    // Embedding scatter.
    if (pos_emb_.trainable)
      for (int r = 0; r < n_all; ++r) K.axpy(T(1), dh.row(r), pos_emb_.g.row(r), d);
    for (int r = 0; r < n_ctx_rows; ++r) {
      const int tok = cache.ctx.slot_token[r];
      if (tok >= 0) {
        if (tok_emb_.trainable) K.axpy(T(1), dh.row(r), tok_emb_.g.row(tok), d);
      } else {
        const int v = r - 1;  // video rows sit after BOS
        if (ctx_proj_w_.trainable)
          for (int f = 0; f < cfg_.d_feat; ++f)
            K.axpy(cache.ctx.pooled.at(v, f), dh.row(r), ctx_proj_w_.g.row(f), d);
        if (ctx_proj_b_.trainable) K.axpy(T(1), dh.row(r), ctx_proj_b_.g.row(0), d);
      }
    }
    for (int i = 0; i < cfg_.response_len; ++i) {
      const T* row = dh.row(n_ctx_rows + i);
      if (tok_emb_.trainable) K.axpy(T(1), row, tok_emb_.g.row(cache.x_tokens[i]), d);
      if (step_emb_.trainable) K.axpy(T(1), row, step_emb_.g.row(cache.t), d);
    }
  }

 private:
  struct Block {
    NamedTensor<T> ln1_g, ln1_b, qkv_w, qkv_b, att_o_w, att_o_b;
    NamedTensor<T> ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };

  void add(NamedTensor<T>& t, const std::string& name, const std::string& group,
           int rows, int cols) {
    t.name = name;
    t.group = group;
    t.w = Mat<T>(rows, cols);
    t.g = Mat<T>(rows, cols);
    registry_.push_back(&t);
  }

  void init_weights(uint64_t seed) {
    Rng rng(Rng::derive(seed, 0x6d6f64656c));
    for (auto* t : registry_) {
      const bool is_ln_gain = t->name.find("ln") != std::string::npos &&
                              t->name.size() >= 2 &&
                              t->name.substr(t->name.size() - 2) == "_g";
      const bool is_bias = !is_ln_gain && (t->w.rows == 1);
      for (T& v : t->w.data)
        v = is_ln_gain ? T(1) : (is_bias ? T(0) : static_cast<T>(rng.normal() * 0.02));
    }
  }

  void layernorm_forward(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b,
                         detail::LnCache<T>& c) const {
    const int n = x.rows, d = x.cols;
    c.hat = Mat<T>(n, d);
    c.out = Mat<T>(n, d);
    c.rstd.resize(n);
    for (int r = 0; r < n; ++r) {
      const T* xr = x.row(r);
      T mean = kernels::table<T>().vsum(xr, d) / T(d);
      T var = T(0);
      for (int j = 0; j < d; ++j) {
        const T dv = xr[j] - mean;
        var += dv * dv;
      }
      var /= T(d);
      const T rstd = T(1) / std::sqrt(var + T(1e-5));
      c.rstd[r] = rstd;
      T* hr = c.hat.row(r);
      T* orow = c.out.row(r);
      for (int j = 0; j < d; ++j) {
        hr[j] = (xr[j] - mean) * rstd;
        orow[j] = hr[j] * g.at(0, j) + b.at(0, j);
      }
    }
  }

  void layernorm_backward(const Mat<T>& dout, const detail::LnCache<T>& c,
                          NamedTensor<T>& g, NamedTensor<T>& b, Mat<T>& dx) const {
    const int n = dout.rows, d = dout.cols;
    for (int r = 0; r < n; ++r) {
      const T* dor = dout.row(r);
      const T* hr = c.hat.row(r);
      T sum_dhat = T(0), sum_dhat_hat = T(0);
      for (int j = 0; j < d; ++j) {
        const T dhat = dor[j] * g.w.at(0, j);
        sum_dhat += dhat;
        sum_dhat_hat += dhat * hr[j];
      }
      const T inv_d = T(1) / T(d);
      T* dxr = dx.row(r);
      for (int j = 0; j < d; ++j) {
        const T dhat = dor[j] * g.w.at(0, j);
        dxr[j] = c.rstd[r] * (dhat - sum_dhat * inv_d - hr[j] * sum_dhat_hat * inv_d);
      }
      if (g.trainable)
        for (int j = 0; j < d; ++j) g.g.at(0, j) += dor[j] * hr[j];
      if (b.trainable)
        for (int j = 0; j < d; ++j) b.g.at(0, j) += dor[j];
    }
  }

  void block_forward(Mat<T>& h, const Block& blk, detail::BlockCache<T>& c) const {
    const int n = h.rows, d = cfg_.d_model, nh = cfg_.n_heads, dh = cfg_.d_head();
    const T att_scale = T(1) / std::sqrt(T(dh));
    const auto& K = kernels::table<T>();

    layernorm_forward(h, blk.ln1_g.w, blk.ln1_b.w, c.ln1);
    c.qkv = Mat<T>(n, 3 * d);
    K.gemm(c.ln1.out.data.data(), blk.qkv_w.w.data.data(), c.qkv.data.data(), n, d,
           3 * d, false);
    for (int r = 0; r < n; ++r) K.axpy(T(1), blk.qkv_b.w.row(0), c.qkv.row(r), 3 * d);

    c.att_p.assign(nh, Mat<T>());
    c.att_concat = Mat<T>(n, d);
    Mat<T> qh(n, dh), kh(n, dh), vh(n, dh), oh(n, dh);
    for (int hd = 0; hd < nh; ++hd) {
      for (int r = 0; r < n; ++r) {
        const T* src = c.qkv.row(r);
        for (int j = 0; j < dh; ++j) {
          qh.at(r, j) = src[hd * dh + j] * att_scale;
          kh.at(r, j) = src[d + hd * dh + j];
          vh.at(r, j) = src[2 * d + hd * dh + j];
        }
      }
      Mat<T>& p = c.att_p[hd];
      p = Mat<T>(n, n);
      K.gemm_nt(qh.data.data(), kh.data.data(), p.data.data(), n, dh, n, false);
      for (int r = 0; r < n; ++r) softmax_row(p.row(r), n, p.row(r));
      K.gemm(p.data.data(), vh.data.data(), oh.data.data(), n, n, dh, false);
      for (int r = 0; r < n; ++r)
        std::copy(oh.row(r), oh.row(r) + dh, c.att_concat.row(r) + hd * dh);
    }

    c.x_mid = Mat<T>(n, d);
    K.gemm(c.att_concat.data.data(), blk.att_o_w.w.data.data(), c.x_mid.data.data(), n,
           d, d, false);
    for (int r = 0; r < n; ++r) {
      K.axpy(T(1), blk.att_o_b.w.row(0), c.x_mid.row(r), d);
      K.axpy(T(1), h.row(r), c.x_mid.row(r), d);  // residual
    }

    layernorm_forward(c.x_mid, blk.ln2_g.w, blk.ln2_b.w, c.ln2);
    c.ff_pre = Mat<T>(n, cfg_.d_ff());
    K.gemm(c.ln2.out.data.data(), blk.ff1_w.w.data.data(), c.ff_pre.data.data(), n, d,
           cfg_.d_ff(), false);
    for (int r = 0; r < n; ++r) K.axpy(T(1), blk.ff1_b.w.row(0), c.ff_pre.row(r), cfg_.d_ff());
    c.ff_act = Mat<T>(n, cfg_.d_ff());
    for (size_t i = 0; i < c.ff_pre.size(); ++i)
      c.ff_act.data[i] = static_cast<T>(detail::gelu_fwd(static_cast<double>(c.ff_pre.data[i])));

    K.gemm(c.ff_act.data.data(), blk.ff2_w.w.data.data(), h.data.data(), n, cfg_.d_ff(),
           d, false);
    for (int r = 0; r < n; ++r) {
      K.axpy(T(1), blk.ff2_b.w.row(0), h.row(r), d);
      K.axpy(T(1), c.x_mid.row(r), h.row(r), d);  // residual
    }
  }

  void block_backward(Mat<T>& dh, Block& blk, const detail::BlockCache<T>& c) {
    const int n = dh.rows, d = cfg_.d_model, nh = cfg_.n_heads, dh_dim = cfg_.d_head();
    const T att_scale = T(1) / std::sqrt(T(dh_dim));
    const auto& K = kernels::table<T>();

    // FF branch: h_out = x_mid + ff2(gelu(ff1(ln2(x_mid))))
    Mat<T> dff_act(n, cfg_.d_ff());
    K.gemm_nt(dh.data.data(), blk.ff2_w.w.data.data(), dff_act.data.data(), n, d,
              cfg_.d_ff(), false);
    if (blk.ff2_w.trainable)
      K.gemm_tn(c.ff_act.data.data(), dh.data.data(), blk.ff2_w.g.data.data(),
                cfg_.d_ff(), n, d, true);
    if (blk.ff2_b.trainable)
      for (int r = 0; r < n; ++r) K.axpy(T(1), dh.row(r), blk.ff2_b.g.row(0), d);

    Mat<T> dff_pre(n, cfg_.d_ff());
    for (size_t i = 0; i < dff_pre.size(); ++i)
      dff_pre.data[i] = dff_act.data[i] *
                        static_cast<T>(detail::gelu_bwd(static_cast<double>(c.ff_pre.data[i])));

    Mat<T> dln2_out(n, d);
    K.gemm_nt(dff_pre.data.data(), blk.ff1_w.w.data.data(), dln2_out.data.data(), n,
              cfg_.d_ff(), d, false);
    if (blk.ff1_w.trainable)
      K.gemm_tn(c.ln2.out.data.data(), dff_pre.data.data(), blk.ff1_w.g.data.data(), d,
                n, cfg_.d_ff(), true);
    if (blk.ff1_b.trainable)
      for (int r = 0; r < n; ++r)
        K.axpy(T(1), dff_pre.row(r), blk.ff1_b.g.row(0), cfg_.d_ff());

    Mat<T> dx_mid(n, d);
    layernorm_backward(dln2_out, c.ln2, blk.ln2_g, blk.ln2_b, dx_mid);
    for (int r = 0; r < n; ++r) K.axpy(T(1), dh.row(r), dx_mid.row(r), d);  // residual

    // Attention branch: x_mid = x_in + att_o(concat heads(ln1(x_in)))
    Mat<T> datt_concat(n, d);
    K.gemm_nt(dx_mid.data.data(), blk.att_o_w.w.data.data(), datt_concat.data.data(), n,
              d, d, false);
    if (blk.att_o_w.trainable)
      K.gemm_tn(c.att_concat.data.data(), dx_mid.data.data(), blk.att_o_w.g.data.data(),
                d, n, d, true);
    if (blk.att_o_b.trainable)
      for (int r = 0; r < n; ++r) K.axpy(T(1), dx_mid.row(r), blk.att_o_b.g.row(0), d);

    Mat<T> dqkv(n, 3 * d);
    Mat<T> qh(n, dh_dim), kh(n, dh_dim), vh(n, dh_dim);
    Mat<T> doh(n, dh_dim), dp(n, n), ds(n, n), dqh(n, dh_dim), dkh(n, dh_dim),
        dvh(n, dh_dim);
    for (int hd = 0; hd < nh; ++hd) {
      for (int r = 0; r < n; ++r) {
        const T* src = c.qkv.row(r);
        for (int j = 0; j < dh_dim; ++j) {
          qh.at(r, j) = src[hd * dh_dim + j] * att_scale;
          kh.at(r, j) = src[d + hd * dh_dim + j];
          vh.at(r, j) = src[2 * d + hd * dh_dim + j];
        }
        std::copy(datt_concat.row(r) + hd * dh_dim,
                  datt_concat.row(r) + (hd + 1) * dh_dim, doh.row(r));
      }
      const Mat<T>& p = c.att_p[hd];
      K.gemm_nt(doh.data.data(), vh.data.data(), dp.data.data(), n, dh_dim, n, false);
      K.gemm_tn(p.data.data(), doh.data.data(), dvh.data.data(), n, n, dh_dim, false);
      for (int r = 0; r < n; ++r) {
        const T* pr = p.row(r);
        const T* dpr = dp.row(r);
        const T inner = K.dot(pr, dpr, n);
        T* dsr = ds.row(r);
        for (int j = 0; j < n; ++j) dsr[j] = pr[j] * (dpr[j] - inner);
      }
      K.gemm(ds.data.data(), kh.data.data(), dqh.data.data(), n, n, dh_dim, false);
      K.gemm_tn(ds.data.data(), qh.data.data(), dkh.data.data(), n, n, dh_dim, false);
      for (int r = 0; r < n; ++r) {
        T* dst = dqkv.row(r);
        for (int j = 0; j < dh_dim; ++j) {
          dst[hd * dh_dim + j] = dqh.at(r, j) * att_scale;
          dst[d + hd * dh_dim + j] = dkh.at(r, j);
          dst[2 * d + hd * dh_dim + j] = dvh.at(r, j);
        }
      }
    }

    Mat<T> dln1_out(n, d);
    K.gemm_nt(dqkv.data.data(), blk.qkv_w.w.data.data(), dln1_out.data.data(), n, 3 * d,
              d, false);
    if (blk.qkv_w.trainable)
      K.gemm_tn(c.ln1.out.data.data(), dqkv.data.data(), blk.qkv_w.g.data.data(), d, n,
                3 * d, true);
    if (blk.qkv_b.trainable)
      for (int r = 0; r < n; ++r) K.axpy(T(1), dqkv.row(r), blk.qkv_b.g.row(0), 3 * d);

    Mat<T> dx_in(n, d);
    layernorm_backward(dln1_out, c.ln1, blk.ln1_g, blk.ln1_b, dx_in);
    for (int r = 0; r < n; ++r) K.axpy(T(1), dx_mid.row(r), dx_in.row(r), d);  // residual
    dh = std::move(dx_in);
  }

  DenoiserConfig cfg_;
  NamedTensor<T> tok_emb_, pos_emb_, step_emb_, ctx_proj_w_, ctx_proj_b_;
  std::vector<Block> blocks_;
  NamedTensor<T> lnf_g_, lnf_b_, head_w_, head_b_;
  std::vector<NamedTensor<T>*> registry_;
  int bos_id_ = 0;
  int sep_id_ = 0;
};

// Test oracle: +c at the ground-truth token, 0 elsewhere, independent of t.
template <typename T>
Mat<T> oracle_forward(const TargetSequence& target, int vocab_size,
                      T concentration = T(50)) {
  Mat<T> logits(target.length(), vocab_size);
  for (int i = 0; i < target.length(); ++i) logits.at(i, target.tokens[i]) = concentration;
  return logits;
}

}  // namespace mdtal
