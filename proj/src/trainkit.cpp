#include "mdtal/trainkit.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

namespace mdtal {

namespace {

constexpr uint64_t kStreamModel = 0x6d6f64656c;
constexpr uint64_t kStreamOrder = 0x6f72646572;
constexpr uint64_t kStreamIter = 0x69746572;
constexpr uint64_t kStreamTraj = 0x74726a;
constexpr uint64_t kStreamEval = 0x6576616c;

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "lr",            "weight_decay",  "warmup_ratio",   "epochs",
      "accum_steps",   "batch_size",    "lambda_plan",    "lambda_iou",
      "lambda_ce",     "mask_policy",   "gamma",          "eta",
      "n_steps",       "step_weighting", "mu",            "delta",
      "lambda_rel",    "epsilon",       "gate_mode",      "iou_probe_masked",
      "k_iou_steps",   "ce_scope",      "d_model",        "n_blocks",
      "n_heads",       "n_ctx",         "infer_block_length",
      "infer_temperature", "eval_every", "seed",          "freeze_groups"};
  return keys;
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"weight_decay", weight_decay},
          {"warmup_ratio", warmup_ratio},
          {"epochs", epochs},
          {"accum_steps", accum_steps},
          {"batch_size", batch_size},
          {"lambda_plan", lambda_plan},
          {"lambda_iou", lambda_iou},
          {"lambda_ce", lambda_ce},
          {"mask_policy", mask_policy},
          {"gamma", gamma},
          {"eta", eta},
          {"n_steps", n_steps},
          {"step_weighting", step_weighting},
          {"mu", mu},
          {"delta", delta},
          {"lambda_rel", lambda_rel},
          {"epsilon", epsilon},
          {"gate_mode", gate_mode},
          {"iou_probe_masked", iou_probe_masked},
          {"k_iou_steps", k_iou_steps},
          {"ce_scope", ce_scope},
          {"d_model", d_model},
          {"n_blocks", n_blocks},
          {"n_heads", n_heads},
          {"n_ctx", n_ctx},
          {"infer_block_length", infer_block_length},
          {"infer_temperature", infer_temperature},
          {"eval_every", eval_every},
          {"seed", seed},
          {"freeze_groups", freeze_groups}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  for (const auto& [key, value] : j.items())
    require(known_keys().count(key) > 0, "TrainConfig: unknown key '" + key + "'");
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.epochs = j.value("epochs", c.epochs);
  c.accum_steps = j.value("accum_steps", c.accum_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lambda_plan = j.value("lambda_plan", c.lambda_plan);
  c.lambda_iou = j.value("lambda_iou", c.lambda_iou);
  c.lambda_ce = j.value("lambda_ce", c.lambda_ce);
  c.mask_policy = j.value("mask_policy", c.mask_policy);
  c.gamma = j.value("gamma", c.gamma);
  c.eta = j.value("eta", c.eta);
  c.n_steps = j.value("n_steps", c.n_steps);
  c.step_weighting = j.value("step_weighting", c.step_weighting);
  c.mu = j.value("mu", c.mu);
  c.delta = j.value("delta", c.delta);
  c.lambda_rel = j.value("lambda_rel", c.lambda_rel);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.gate_mode = j.value("gate_mode", c.gate_mode);
  c.iou_probe_masked = j.value("iou_probe_masked", c.iou_probe_masked);
  c.k_iou_steps = j.value("k_iou_steps", c.k_iou_steps);
  c.ce_scope = j.value("ce_scope", c.ce_scope);
  c.d_model = j.value("d_model", c.d_model);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_ctx = j.value("n_ctx", c.n_ctx);
  c.infer_block_length = j.value("infer_block_length", c.infer_block_length);
  c.infer_temperature = j.value("infer_temperature", c.infer_temperature);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.seed = j.value("seed", c.seed);
  c.freeze_groups = j.value("freeze_groups", c.freeze_groups);
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  require(lr > 0.0, "TrainConfig: lr must be positive");
  require(accum_steps >= 1, "TrainConfig: accum_steps must be >= 1");
  require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  require(epochs >= 0, "TrainConfig: negative epochs");
  require(warmup_ratio >= 0.0 && warmup_ratio <= 1.0, "TrainConfig: bad warmup_ratio");
  require(n_steps >= 1, "TrainConfig: n_steps must be >= 1");
  require(k_iou_steps >= 1, "TrainConfig: k_iou_steps must be >= 1");
  require(mask_policy == "planned" || mask_policy == "uniform" ||
              mask_policy == "planned-time-first",
          "TrainConfig: unknown mask_policy " + mask_policy);
  require(step_weighting == "linear" || step_weighting == "uniform",
          "TrainConfig: unknown step_weighting " + step_weighting);
  require(gate_mode == "both" || gate_mode == "either" || gate_mode == "none",
          "TrainConfig: unknown gate_mode " + gate_mode);
  require(ce_scope == "full" || ce_scope == "boundary",
          "TrainConfig: unknown ce_scope " + ce_scope);
  build_weights().validate();
  build_iou_hyper().validate();
}

MaskPolicy TrainConfig::build_policy() const {
  if (mask_policy == "uniform") return MaskPolicy::uniform(n_steps);
  if (mask_policy == "planned-time-first")
    return MaskPolicy::with_exponents(eta, gamma, n_steps);  // exponents swapped
  return MaskPolicy::planned(gamma, eta, n_steps);
}

LossWeights TrainConfig::build_weights() const {
  LossWeights w;
  w.lambda_plan = lambda_plan;
  w.lambda_iou = lambda_iou;
  w.lambda_ce = lambda_ce;
  return w;
}

IoUHyper TrainConfig::build_iou_hyper() const {
  IoUHyper h;
  h.mu = mu;
  h.delta = delta;
  h.lambda_rel = lambda_rel;
  h.epsilon = epsilon;
  return h;
}

GateMode TrainConfig::build_gate_mode() const {
  if (gate_mode == "none") return GateMode::none;
  if (gate_mode == "either") return GateMode::either;
  return GateMode::both;
}

double lr_at(int step, int total_steps, const TrainConfig& cfg) {
  require(step >= 0 && step <= total_steps, "lr_at: step outside [0, total]");
  require(total_steps >= 1, "lr_at: empty schedule");
  const double warmup = cfg.warmup_ratio * total_steps;
  if (warmup > 0.0 && step <= warmup) return cfg.lr * step / warmup;
  const double span = total_steps - warmup;
  if (span <= 0.0) return cfg.lr;
  const double progress = (step - warmup) / span;
  return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

OptimizerState make_optimizer_state(Denoiser<float>& model) {
  OptimizerState st;
  for (const auto* t : model.tensors()) {
    st.m.emplace_back(t->w.rows, t->w.cols);
    st.v.emplace_back(t->w.rows, t->w.cols);
  }
  return st;
}

bool optimizer_step(Denoiser<float>& model, OptimizerState& state,
                    const TrainConfig& cfg, double lr) {
  auto& tensors = model.tensors();
  require(state.m.size() == tensors.size(), "optimizer_step: state shape mismatch");
  for (const auto* t : tensors)
    if (t->trainable && !t->g.all_finite()) {
      state.skipped_updates += 1;
      return false;
    }
  state.step_count += 1;
  for (size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i]->trainable) continue;
    adamw_update(tensors[i]->w, tensors[i]->g, state.m[i], state.v[i],
                 state.step_count, lr, cfg.weight_decay);
  }
  return true;
}

EvalOutcome evaluate_model(Denoiser<float>& model, const DatasetSpec& spec,
                           const std::vector<Example>& eval_set, const DecodeConfig& dcfg,
                           uint64_t seed) {
  EvalOutcome out;
  std::vector<Prediction> preds;
  const int L = spec.tmpl.length();
  DecodeConfig cfg = dcfg;
  cfg.block_length = std::min(cfg.block_length, L);
  for (size_t i = 0; i < eval_set.size(); ++i) {
    const Example& ex = eval_set[i];
    const auto ctx = model.encode_context(ex.features, spec.query_ids(ex));
    auto logits_fn = [&](const std::vector<int>& x, int t) {
      return model.forward(x, ctx, t);
    };
    Rng rng(Rng::derive(seed, Rng::derive(kStreamEval, i)));
    const GenerationResult gen =
        generate<float>(logits_fn, L, cfg, spec.vocab, rng, &spec.tmpl);
    auto [tuples, diag] =
        parse_response(gen.tokens, &gen.reveal_conf, spec.vocab, spec.grid, spec.tmpl,
                       spec.class_token_offset, spec.cfg.n_classes);
    out.parse_diag.dropped_malformed += diag.dropped_malformed;
    out.parse_diag.none_skipped += diag.none_skipped;
    for (const ParsedTuple& pt : tuples)
      preds.push_back({ex.video_id, pt.class_id, pt.segment, pt.confidence});
  }
  const std::vector<GroundTruthInstance> gts = ground_truth_of(eval_set);
  out.rtl = rtl_suite(preds, gts);
  out.map = map_suite(preds, gts, ThresholdGrid::thumos);
  return out;
}

DenoiserConfig Trainer::denoiser_config() const {
  DenoiserConfig dc;
  dc.d_model = cfg_.d_model;
  dc.n_blocks = cfg_.n_blocks;
  dc.n_heads = cfg_.n_heads;
  dc.n_ctx = cfg_.n_ctx;
  dc.n_query = 2;
  dc.d_feat = spec_.cfg.d_feat;
  dc.n_steps = cfg_.n_steps;
  dc.vocab_size = spec_.vocab.size();
  dc.response_len = spec_.tmpl.length();
  return dc;
}

Trainer::Trainer(DatasetSpec spec, std::vector<Example> train_set,
                 std::vector<Example> eval_set, TrainConfig cfg)
    : spec_(std::move(spec)),
      train_(std::move(train_set)),
      eval_(std::move(eval_set)),
      cfg_(std::move(cfg)),
      model_([&] {
        cfg_.validate();
        return Denoiser<float>(denoiser_config(), Rng::derive(cfg_.seed, kStreamModel));
      }()) {
  require(!train_.empty(), "Trainer: empty training set");
  model_.set_special_tokens(spec_.vocab.bos_id, spec_.vocab.sep_id);
  for (const std::string& group : cfg_.freeze_groups)
    model_.set_group_trainable(group, false);
  opt_ = make_optimizer_state(model_);

  prepared_.reserve(train_.size());
  for (const Example& ex : train_) {
    PreparedExample prep;
    prep.target = build_target(ex, spec_);
    if (cfg_.ce_scope == "boundary")
      prep.target.supervised.assign(prep.target.is_boundary.begin(),
                                    prep.target.is_boundary.end());
    prep.query_ids = spec_.query_ids(ex);
    require(static_cast<int>(prep.query_ids.size()) == 2,
            "Trainer: query must hold exactly two tokens");
    prep.bins = target_bins(ex, spec_);
    prep.bounds = target_bounds(ex, spec_);
    prepared_.push_back(std::move(prep));
  }
}

std::vector<int> Trainer::iou_eval_steps() const {
  const int S = cfg_.n_steps;
  const int K = std::min(cfg_.k_iou_steps, S);
  std::vector<int> ts;
  for (int k = 1; k <= K; ++k) {
    const int t = std::max(1, static_cast<int>(std::llround(static_cast<double>(k) * S / K)));
    if (ts.empty() || t > ts.back()) ts.push_back(t);
  }
  return ts;
}

LossBreakdown Trainer::train_iteration(int /*epoch*/, int /*iter_in_epoch*/,
                                       int global_iter, const Example& ex,
                                       const PreparedExample& prep) {
  const double gs = 1.0 / (cfg_.accum_steps * cfg_.batch_size);
  const bool uniform_w = cfg_.step_weighting == "uniform";
  Rng it_rng(Rng::derive(cfg_.seed, Rng::derive(kStreamIter, global_iter)));
  const MaskPolicy policy = cfg_.build_policy();
  const MaskTrajectory traj = sample_trajectory(
      prep.target, policy, Rng::derive(cfg_.seed, Rng::derive(kStreamTraj, global_iter)));

  const auto ctx = model_.encode_context(ex.features, prep.query_ids);

  // Reconstruction pass: planned loss + base CE share one forward.
  const int t_plan = 1 + static_cast<int>(it_rng.uniform_int(cfg_.n_steps));
  const std::vector<int> x_plan = corrupt(prep.target, traj.keep_mask_at(t_plan), spec_.vocab);
  ForwardCache<float> cache;
  const Mat<float> logits = model_.forward(x_plan, ctx, t_plan, &cache);
  Mat<float> dlogits(logits.rows, logits.cols);
  const double plan_val = plan_loss(logits, prep.target, traj, t_plan, &dlogits,
                                    cfg_.lambda_plan * gs, uniform_w);
  const double ce_val = base_ce(logits, prep.target, &dlogits, cfg_.lambda_ce * gs);
  model_.backward(cache, dlogits);

  // Reward pass: probe the trajectory at K steps.
  double iou_val = 0.0;
  if (cfg_.lambda_iou > 0.0 && !prep.target.tuples.empty()) {
    const std::vector<int> ts = iou_eval_steps();
    const int n_steps_eval = static_cast<int>(ts.size());
    const int n_tuples = static_cast<int>(prep.target.tuples.size());
    const IoUHyper hyper = cfg_.build_iou_hyper();
    const GateMode gmode = cfg_.build_gate_mode();

    std::vector<ForwardCache<float>> caches(n_steps_eval);
    std::vector<Mat<float>> probe_logits(n_steps_eval);
    std::vector<Mat<float>> probe_dlogits(n_steps_eval);
    std::vector<char> touched(n_steps_eval, 0);
    // per tuple, per step evals
    std::vector<std::vector<IouStepEval>> evals(n_tuples);
    std::vector<double> alphas;
    for (int t : ts)
      alphas.push_back(uniform_w ? 1.0 / cfg_.n_steps : step_weight(t, cfg_.n_steps));

    for (int k = 0; k < n_steps_eval; ++k) {
      const int t = ts[k];
      const std::vector<char> keep = traj.keep_mask_at(t);
      const std::vector<int> revealed = corrupt(prep.target, keep, spec_.vocab);
      std::vector<int> probe = revealed;
      if (cfg_.iou_probe_masked)
        for (const TupleSlots& tp : prep.target.tuples) {
          probe[tp.i_s] = spec_.vocab.mask_id;
          probe[tp.i_e] = spec_.vocab.mask_id;
        }
      probe_logits[k] = model_.forward(probe, ctx, t, &caches[k]);
      probe_dlogits[k] = Mat<float>(probe_logits[k].rows, probe_logits[k].cols);
      for (int u = 0; u < n_tuples; ++u) {
        const TupleSlots& tp = prep.target.tuples[u];
        const int gate = gate_with_mode(revealed, tp, spec_.vocab.mask_id, gmode) ? 1 : 0;
        evals[u].push_back(eval_iou_step(probe_logits[k], tp, spec_.vocab, t, gate,
                                         prep.bounds[u].first, prep.bounds[u].second,
                                         hyper.epsilon));
      }
    }

    const int off = spec_.vocab.time_token_offset();
    const int n_bins = spec_.vocab.n_time_tokens;
    for (int u = 0; u < n_tuples; ++u) {
      const IouLossValue lv =
          iou_loss(evals[u], prep.bins[u].first, prep.bins[u].second, hyper, alphas);
      iou_val += lv.value / n_tuples;
      const double scale = cfg_.lambda_iou * gs / n_tuples;
      const TupleSlots& tp = prep.target.tuples[u];
      for (int k = 0; k < n_steps_eval; ++k) {
        bool nonzero = false;
        float* dzs = probe_dlogits[k].row(tp.i_s) + off;
        float* dze = probe_dlogits[k].row(tp.i_e) + off;
        for (int j = 0; j < n_bins; ++j) {
          const double gs_j = scale * lv.grads[k].dz_s[j];
          const double ge_j = scale * lv.grads[k].dz_e[j];
          dzs[j] += static_cast<float>(gs_j);
          dze[j] += static_cast<float>(ge_j);
          nonzero = nonzero || gs_j != 0.0 || ge_j != 0.0;
        }
        touched[k] = touched[k] || nonzero;
      }
    }
    for (int k = 0; k < n_steps_eval; ++k)
      if (touched[k]) model_.backward(caches[k], probe_dlogits[k]);
  }

  return total_loss(ce_val, plan_val, iou_val, cfg_.build_weights());
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ckpt;
  ckpt.meta["format"] = "mdtal-checkpoint";
  ckpt.meta["model"] = denoiser_config().to_json();
  ckpt.meta["train"] = cfg_.to_json();
  ckpt.meta["dataset"] = spec_.cfg.to_json();
  ckpt.meta["vocab"] = {{"base_tokens", spec_.vocab.base_tokens},
                        {"n_time_tokens", spec_.vocab.n_time_tokens}};
  ckpt.meta["progress"] = {{"iterations", start_iteration_},
                           {"updates", opt_.step_count},
                           {"skipped_updates", opt_.skipped_updates}};
  const auto& tensors = model_.tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    ckpt.blocks.push_back(block_from_mat(tensors[i]->name, tensors[i]->w));
    ckpt.blocks.push_back(block_from_mat("opt.m." + tensors[i]->name, opt_.m[i]));
    ckpt.blocks.push_back(block_from_mat("opt.v." + tensors[i]->name, opt_.v[i]));
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  const DenoiserConfig want = denoiser_config();
  const DenoiserConfig have = DenoiserConfig::from_json(ckpt.meta.at("model"));
  require(want.to_json() == have.to_json(), "restore: checkpoint model config mismatch");
  auto& tensors = model_.tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    const CheckpointBlock* wb = ckpt.find(tensors[i]->name);
    require_state(wb != nullptr, "restore: missing block " + tensors[i]->name);
    tensors[i]->w = mat_from_block(*wb);
    const CheckpointBlock* mb = ckpt.find("opt.m." + tensors[i]->name);
    const CheckpointBlock* vb = ckpt.find("opt.v." + tensors[i]->name);
    require_state(mb && vb, "restore: missing optimizer state for " + tensors[i]->name);
    opt_.m[i] = mat_from_block(*mb);
    opt_.v[i] = mat_from_block(*vb);
  }
  const auto& progress = ckpt.meta.at("progress");
  start_iteration_ = progress.at("iterations").get<int>();
  opt_.step_count = progress.at("updates").get<int>();
  opt_.skipped_updates = progress.at("skipped_updates").get<int>();
}

TrainOutcome Trainer::run(const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream log(out_dir + "/train_log.jsonl",
                    start_iteration_ > 0 ? std::ios::app : std::ios::out);
  require_state(log.good(), "Trainer: cannot open train log");
  if (start_iteration_ == 0) {
    log << nlohmann::json({{"params", model_.param_count()},
                           {"kernels", kernels::backend_name(kernels::active_backend())},
                           {"train_examples", train_.size()},
                           {"eval_examples", eval_.size()}})
               .dump()
        << "\n";
  }

  const int n_train = static_cast<int>(train_.size());
  const int total_iters = cfg_.epochs * n_train;
  const int total_updates =
      std::max(1, (total_iters + cfg_.accum_steps - 1) / cfg_.accum_steps);

  std::vector<int> order(n_train);
  int order_epoch = -1;
  auto reshuffle = [&](int epoch) {
    for (int i = 0; i < n_train; ++i) order[i] = i;
    Rng rng(Rng::derive(cfg_.seed, Rng::derive(kStreamOrder, epoch)));
    for (int i = n_train - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<int>(rng.uniform_int(i + 1))]);
    order_epoch = epoch;
  };

  double last_total = 0.0;
  for (int g = start_iteration_; g < total_iters; ++g) {
    const int epoch = g / n_train;
    const int idx_in_epoch = g % n_train;
    if (epoch != order_epoch) reshuffle(epoch);
    const int ex_idx = order[idx_in_epoch];

    const LossBreakdown lb =
        train_iteration(epoch, idx_in_epoch, g, train_[ex_idx], prepared_[ex_idx]);
    last_total = lb.total;

    const bool do_update = (g + 1) % cfg_.accum_steps == 0 || g == total_iters - 1;
    double lr = 0.0;
    if (do_update) {
      lr = lr_at(std::min(opt_.step_count + 1, total_updates), total_updates, cfg_);
      optimizer_step(model_, opt_, cfg_, lr);
      model_.zero_grad();
    }
    log << nlohmann::json({{"iter", g},
                           {"l_ce", lb.ce},
                           {"l_plan", lb.plan},
                           {"l_iou", lb.iou},
                           {"total", lb.total},
                           {"lr", lr}})
               .dump()
        << "\n";
    start_iteration_ = g + 1;

    if (cfg_.eval_every > 0 && do_update && opt_.step_count % cfg_.eval_every == 0 &&
        !eval_.empty()) {
      DecodeConfig dcfg;
      dcfg.n_steps = cfg_.n_steps;
      dcfg.block_length = cfg_.infer_block_length;
      dcfg.temperature = cfg_.infer_temperature;
      const EvalOutcome ev = evaluate_model(model_, spec_, eval_, dcfg, cfg_.seed);
      log << nlohmann::json({{"eval_at_update", opt_.step_count},
                             {"miou", ev.rtl.miou},
                             {"p_at_0.5", ev.rtl.p_at_05},
                             {"average_map", ev.map.average_map}})
                 .dump()
          << "\n";
    }
  }

  TrainOutcome out;
  out.iterations = start_iteration_;
  out.updates = opt_.step_count;
  out.skipped_updates = opt_.skipped_updates;
  if (!eval_.empty()) {
    DecodeConfig dcfg;
    dcfg.n_steps = cfg_.n_steps;
    dcfg.block_length = cfg_.infer_block_length;
    dcfg.temperature = cfg_.infer_temperature;
    out.final_eval = evaluate_model(model_, spec_, eval_, dcfg, cfg_.seed);
  }
  out.final_total_loss = last_total;
  out.checkpoint_path = out_dir + "/checkpoint.bin";
  save_checkpoint(out.checkpoint_path, snapshot());
  return out;
}

AblationGrid AblationGrid::from_json(const nlohmann::json& j) {
  AblationGrid grid;
  if (j.contains("seeds")) grid.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  require(!grid.seeds.empty(), "AblationGrid: need at least one seed");
  for (const auto& cell : j.at("cells")) {
    AblationCell c;
    c.name = cell.at("name").get<std::string>();
    c.overrides = cell.value("overrides", nlohmann::json::object());
    grid.cells.push_back(std::move(c));
  }
  require(!grid.cells.empty(), "AblationGrid: empty grid");
  return grid;
}

nlohmann::json table3_grid() {
  return {{"seeds", {1, 2, 3}},
          {"cells",
           {{{"name", "base"},
             {"overrides",
              {{"mask_policy", "uniform"}, {"step_weighting", "uniform"}, {"lambda_iou", 0.0}}}},
            {{"name", "pt_reason"}, {"overrides", {{"lambda_iou", 0.0}}}},
            {{"name", "pt_time"},
             {"overrides", {{"mask_policy", "planned-time-first"}, {"lambda_iou", 0.0}}}},
            {{"name", "iou_no_gate"}, {"overrides", {{"gate_mode", "none"}}}},
            {{"name", "iou_either"}, {"overrides", {{"gate_mode", "either"}}}},
            {{"name", "ce_boundary"}, {"overrides", {{"ce_scope", "boundary"}}}},
            {{"name", "full"}, {"overrides", nlohmann::json::object()}}}}};
}

nlohmann::json table4_grid() {
  auto cell = [](const std::string& name, double p, double i, double c) {
    return nlohmann::json{
        {"name", name},
        {"overrides", {{"lambda_plan", p}, {"lambda_iou", i}, {"lambda_ce", c}}}};
  };
  return {{"seeds", {1, 2, 3}},
          {"cells",
           {cell("plan1.0_iou0.25_ce0.2", 1.0, 0.25, 0.2),
            cell("plan1.0_iou0.5_ce0.1", 1.0, 0.5, 0.1),
            cell("plan1.0_iou0.5_ce0.2", 1.0, 0.5, 0.2),
            cell("plan1.0_iou1.0_ce0.2", 1.0, 1.0, 0.2),
            cell("plan0.5_iou0.5_ce0.2", 0.5, 0.5, 0.2)}}};
}

std::vector<AblationCellResult> run_ablation(const AblationGrid& grid,
                                             const DatasetSpec& spec,
                                             const std::vector<Example>& train_set,
                                             const std::vector<Example>& eval_set,
                                             const TrainConfig& base_cfg,
                                             const std::string& out_dir, int n_workers) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  struct Job {
    int cell;
    int seed_idx;
  };
  std::vector<Job> jobs;
  for (size_t c = 0; c < grid.cells.size(); ++c)
    for (size_t s = 0; s < grid.seeds.size(); ++s)
      jobs.push_back({static_cast<int>(c), static_cast<int>(s)});

  std::vector<AblationCellResult> results(grid.cells.size());
  std::vector<std::vector<double>> job_seconds(grid.cells.size(),
                                               std::vector<double>(grid.seeds.size(), 0.0));
  for (size_t c = 0; c < grid.cells.size(); ++c) {
    results[c].name = grid.cells[c].name;
    results[c].miou.assign(grid.seeds.size(), 0.0);
    results[c].p05.assign(grid.seeds.size(), 0.0);
  }

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t j = next.fetch_add(1);
      if (j >= jobs.size()) break;
      const Job job = jobs[j];
      const AblationCell& cell = grid.cells[job.cell];
      nlohmann::json cfg_json = base_cfg.to_json();
      for (const auto& [k, v] : cell.overrides.items()) cfg_json[k] = v;
      cfg_json["seed"] = grid.seeds[job.seed_idx];
      const TrainConfig cfg = TrainConfig::from_json(cfg_json);

      const auto t0 = std::chrono::steady_clock::now();
      Trainer trainer(spec, train_set, eval_set, cfg);
      const std::string cell_dir = out_dir + "/" + cell.name + "_seed" +
                                   std::to_string(grid.seeds[job.seed_idx]);
      const TrainOutcome outcome = trainer.run(cell_dir);
      const auto t1 = std::chrono::steady_clock::now();

      results[job.cell].miou[job.seed_idx] = outcome.final_eval.rtl.miou;
      results[job.cell].p05[job.seed_idx] = outcome.final_eval.rtl.p_at_05;
      job_seconds[job.cell][job.seed_idx] = std::chrono::duration<double>(t1 - t0).count();
    }
  };

  n_workers = std::max(1, std::min<int>(n_workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> threads;
  for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  for (auto& th : threads) th.join();

  for (size_t c = 0; c < results.size(); ++c) {
    AblationCellResult& r = results[c];
    double sum = 0.0, sum_p = 0.0, sum_s = 0.0;
    for (double v : r.miou) sum += v;
    for (double v : r.p05) sum_p += v;
    for (double v : job_seconds[c]) sum_s += v;
    r.mean_miou = sum / r.miou.size();
    r.mean_p05 = sum_p / r.p05.size();
    r.seconds = sum_s / job_seconds[c].size();
    double var = 0.0;
    for (double v : r.miou) var += (v - r.mean_miou) * (v - r.mean_miou);
    r.std_miou = std::sqrt(var / r.miou.size());
  }
  return results;
}

std::string ablation_markdown(const std::vector<AblationCellResult>& results) {
  std::string md = "| setting | mIoU (mean ± std) | P@0.5 | seconds/run |\n";
  md += "|---|---|---|---|\n";
  char buf[160];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof(buf), "| %s | %.2f ± %.2f | %.2f | %.1f |\n", r.name.c_str(),
                  100.0 * r.mean_miou, 100.0 * r.std_miou, 100.0 * r.mean_p05, r.seconds);
    md += buf;
  }
  return md;
}

nlohmann::json ablation_json(const std::vector<AblationCellResult>& results) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results)
    rows.push_back({{"name", r.name},
                    {"miou_per_seed", r.miou},
                    {"p05_per_seed", r.p05},
                    {"mean_miou", r.mean_miou},
                    {"std_miou", r.std_miou},
                    {"mean_p05", r.mean_p05},
                    {"seconds_per_run", r.seconds}});
  return {{"cells", rows}};
}

}  // namespace mdtal
