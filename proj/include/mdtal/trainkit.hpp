#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdtal/checkpoint.hpp"
#include "mdtal/denoiser.hpp"
#include "mdtal/losses.hpp"
#include "mdtal/metrics.hpp"
#include "mdtal/sampler.hpp"
#include "mdtal/synthgen.hpp"

namespace mdtal {

// Flat key-value training configuration; unknown keys are rejected so config
// typos fail loudly.
struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 0.01;
  double warmup_ratio = 0.03;
  int epochs = 5;
  int accum_steps = 8;
  int batch_size = 1;

  double lambda_plan = 1.0;
  double lambda_iou = 0.5;
  double lambda_ce = 0.2;

  std::string mask_policy = "planned";  // planned | uniform | planned-time-first
  double gamma = 2.0;
  double eta = 1.0;
  int n_steps = 16;  // S
  std::string step_weighting = "linear";  // linear | uniform

  double mu = 0.5;
  double delta = 0.01;
  double lambda_rel = 0.5;
  double epsilon = 1e-8;
  std::string gate_mode = "both";  // both | either | none
  bool iou_probe_masked = true;
  int k_iou_steps = 8;

  std::string ce_scope = "full";  // full | boundary

  int d_model = 64;
  int n_blocks = 2;
  int n_heads = 4;
  int n_ctx = 8;

  int infer_block_length = 32;
  double infer_temperature = 0.0;

  int eval_every = 0;  // updates between evals; 0 = final only
  uint64_t seed = 1;
  std::vector<std::string> freeze_groups;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  void validate() const;

  MaskPolicy build_policy() const;
  LossWeights build_weights() const;
  IoUHyper build_iou_hyper() const;
  GateMode build_gate_mode() const;
};

// Linear warmup from zero to the peak, then cosine decay to zero.
double lr_at(int step, int total_steps, const TrainConfig& cfg);

// One decoupled-weight-decay adaptive-moment update for a single tensor.
// step_count is 1-based and shared across tensors.
template <typename T>
void adamw_update(Mat<T>& w, const Mat<T>& g, Mat<T>& m, Mat<T>& v, int step_count,
                  double lr, double weight_decay, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8) {
  require(step_count >= 1, "adamw_update: step_count must be >= 1");
  const T bc1 = static_cast<T>(1.0 - std::pow(beta1, step_count));
  const T bc2 = static_cast<T>(1.0 - std::pow(beta2, step_count));
  kernels::table<T>().adamw(w.data.data(), g.data.data(), m.data.data(), v.data.data(),
                            static_cast<int>(w.size()), static_cast<T>(lr),
                            static_cast<T>(beta1), static_cast<T>(beta2),
                            static_cast<T>(eps), static_cast<T>(weight_decay), bc1, bc2);
}

struct OptimizerState {
  std::vector<Mat<float>> m;
  std::vector<Mat<float>> v;
  int step_count = 0;
  int skipped_updates = 0;
};

OptimizerState make_optimizer_state(Denoiser<float>& model);

// Applies one update across all trainable tensors. Any non-finite gradient
// skips the whole update and bumps the warning counter. Returns false on skip.
bool optimizer_step(Denoiser<float>& model, OptimizerState& state,
                    const TrainConfig& cfg, double lr);

struct EvalOutcome {
  RtlReport rtl;
  EvalReport map;
  ParseDiagnostics parse_diag;
};

// Decodes every eval example and scores it with the profile's metric suite.
EvalOutcome evaluate_model(Denoiser<float>& model, const DatasetSpec& spec,
                           const std::vector<Example>& eval_set, const DecodeConfig& dcfg,
                           uint64_t seed);

struct TrainOutcome {
  std::string checkpoint_path;
  EvalOutcome final_eval;
  double final_total_loss = 0.0;
  int iterations = 0;
  int updates = 0;
  int skipped_updates = 0;
};

class Trainer {
 public:
  Trainer(DatasetSpec spec, std::vector<Example> train_set, std::vector<Example> eval_set,
          TrainConfig cfg);

  // Full run; writes checkpoint.bin and train_log.jsonl under out_dir.
  TrainOutcome run(const std::string& out_dir);

  // Continue a previous run from its checkpoint (bit-exact with an
  // uninterrupted run of the same config).
  void restore(const Checkpoint& ckpt);

  Denoiser<float>& model() { return model_; }
  const DatasetSpec& spec() const { return spec_; }
  DenoiserConfig denoiser_config() const;
  Checkpoint snapshot() const;

 private:
  struct PreparedExample {
    TargetSequence target;
    std::vector<int> query_ids;
    std::vector<std::pair<int, int>> bins;
    std::vector<std::pair<double, double>> bounds;
  };

  LossBreakdown train_iteration(int epoch, int iter_in_epoch, int global_iter,
                                const Example& ex, const PreparedExample& prep);
  std::vector<int> iou_eval_steps() const;

  DatasetSpec spec_;
  std::vector<Example> train_;
  std::vector<Example> eval_;
  std::vector<PreparedExample> prepared_;
  TrainConfig cfg_;
  Denoiser<float> model_;
  OptimizerState opt_;
  int start_iteration_ = 0;
};

// Named ablation cells over shared seeds; each trains from scratch and is
// scored with the profile's metric suite.
struct AblationCell {
  std::string name;
  nlohmann::json overrides;
};

struct AblationGrid {
  std::vector<AblationCell> cells;
  std::vector<uint64_t> seeds = {1, 2, 3};

  static AblationGrid from_json(const nlohmann::json& j);
};

nlohmann::json table3_grid();
nlohmann::json table4_grid();

struct AblationCellResult {
  std::string name;
  std::vector<double> miou;   // per seed
  std::vector<double> p05;
  double mean_miou = 0.0;
  double std_miou = 0.0;
  double mean_p05 = 0.0;
  double seconds = 0.0;
};

std::vector<AblationCellResult> run_ablation(const AblationGrid& grid,
                                             const DatasetSpec& spec,
                                             const std::vector<Example>& train_set,
                                             const std::vector<Example>& eval_set,
                                             const TrainConfig& base_cfg,
                                             const std::string& out_dir, int n_workers);

std::string ablation_markdown(const std::vector<AblationCellResult>& results);
nlohmann::json ablation_json(const std::vector<AblationCellResult>& results);

}  // namespace mdtal
