// Command-line entry point: data generation, training, inference, evaluation,
// trajectory dumps, and ablation grids. Every run writes a manifest echoing
// the fully resolved configuration and seed; MDTAL_DETERMINISTIC=1 pins the
// scalar kernels for strict reproducibility.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdtal/checkpoint.hpp"
#include "mdtal/kernels.hpp"
#include "mdtal/metrics.hpp"
#include "mdtal/sampler.hpp"
#include "mdtal/synthgen.hpp"
#include "mdtal/trainkit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  mdtal::require_state(out.good(), "cannot open " + path);
  out << text;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  mdtal::require_state(in.good(), "cannot open " + path);
  json j;
  in >> j;
  return j;
}

void write_manifest(const std::string& dir, const std::string& command, const json& resolved) {
  json m;
  m["command"] = command;
  m["config"] = resolved;
  m["kernels"] = mdtal::kernels::backend_name(mdtal::kernels::active_backend());
  write_text(dir + "/manifest.json", m.dump(2) + "\n");
}

struct LoadedData {
  mdtal::DatasetSpec spec;
  std::vector<mdtal::Example> train;
  std::vector<mdtal::Example> eval;
};

LoadedData load_data_dir(const std::string& dir, bool need_train) {
  LoadedData d;
  const json cfg = read_json_file(dir + "/dataset.json");
  d.spec = mdtal::make_dataset_spec(mdtal::SynthConfig::from_json(cfg));
  if (need_train) d.train = mdtal::read_dataset(dir + "/train.jsonl");
  d.eval = mdtal::read_dataset(dir + "/eval.jsonl");
  return d;
}

// Rebuild a trained model from its checkpoint (weights only; optimizer state
// is ignored at inference).
struct LoadedModel {
  mdtal::DatasetSpec spec;
  mdtal::DenoiserConfig dcfg;
  std::unique_ptr<mdtal::Denoiser<float>> model;
};

LoadedModel load_model(const std::string& ckpt_path) {
  const mdtal::Checkpoint ckpt = mdtal::load_checkpoint(ckpt_path);
  LoadedModel lm;
  lm.spec = mdtal::make_dataset_spec(mdtal::SynthConfig::from_json(ckpt.meta.at("dataset")));
  lm.dcfg = mdtal::DenoiserConfig::from_json(ckpt.meta.at("model"));
  lm.model = std::make_unique<mdtal::Denoiser<float>>(lm.dcfg, 0);
  lm.model->set_special_tokens(lm.spec.vocab.bos_id, lm.spec.vocab.sep_id);
  for (auto* t : lm.model->tensors()) {
    const mdtal::CheckpointBlock* b = ckpt.find(t->name);
    mdtal::require_state(b != nullptr, "checkpoint missing block " + t->name);
    t->w = mdtal::mat_from_block(*b);
  }
  return lm;
}

int cmd_gen_data(const std::string& profile, int n_train, int n_eval, uint64_t seed,
                 const std::string& out_dir, double sigma_noise, int max_instances) {
  mdtal::SynthConfig cfg;
  cfg.profile = profile == "rtl" ? mdtal::SynthConfig::Profile::rtl
                                 : mdtal::SynthConfig::Profile::closed_set;
  cfg.max_instances = cfg.profile == mdtal::SynthConfig::Profile::rtl ? 1 : max_instances;
  cfg.sigma_noise = sigma_noise;
  cfg.seed = seed;
  const mdtal::DatasetSpec spec = mdtal::make_dataset_spec(cfg);

  fs::create_directories(out_dir);
  const auto train = mdtal::generate_dataset(spec.cfg, n_train, 0x747261696e);
  const auto eval = mdtal::generate_dataset(spec.cfg, n_eval, 0x6576616c);
  mdtal::write_dataset(out_dir + "/train.jsonl", train);
  mdtal::write_dataset(out_dir + "/eval.jsonl", eval);
  write_text(out_dir + "/dataset.json", spec.cfg.to_json().dump(2) + "\n");
  write_text(out_dir + "/vocab.json", spec.vocab.to_json() + "\n");
  write_manifest(out_dir, "gen-data", spec.cfg.to_json());
  std::cout << "wrote " << train.size() << " train / " << eval.size()
            << " eval examples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, int64_t seed_override) {
  json cfg_json = config_path.empty() ? json::object() : read_json_file(config_path);
  if (seed_override >= 0) cfg_json["seed"] = static_cast<uint64_t>(seed_override);
  const mdtal::TrainConfig cfg = mdtal::TrainConfig::from_json(cfg_json);

  LoadedData data = load_data_dir(data_dir, true);
  fs::create_directories(out_dir);
  mdtal::Trainer trainer(data.spec, data.train, data.eval, cfg);
  std::cout << "model parameters: " << trainer.model().param_count() << "\n";
  const mdtal::TrainOutcome outcome = trainer.run(out_dir);

  json manifest_cfg = cfg.to_json();
  manifest_cfg["data_dir"] = data_dir;
  write_manifest(out_dir, "train", manifest_cfg);
  json summary = {{"checkpoint", outcome.checkpoint_path},
                  {"iterations", outcome.iterations},
                  {"updates", outcome.updates},
                  {"skipped_updates", outcome.skipped_updates},
                  {"miou", outcome.final_eval.rtl.miou},
                  {"p_at_0.5", outcome.final_eval.rtl.p_at_05},
                  {"average_map", outcome.final_eval.map.average_map}};
  write_text(out_dir + "/train_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& data_dir,
              const std::string& out_path, int steps, int block_length,
              double temperature, uint64_t seed, const std::string& dump_traj) {
  LoadedModel lm = load_model(ckpt_path);
  const auto eval = mdtal::read_dataset(data_dir + "/eval.jsonl");

  mdtal::DecodeConfig dcfg;
  dcfg.n_steps = steps > 0 ? steps : lm.dcfg.n_steps;
  dcfg.block_length = std::min(block_length, lm.spec.tmpl.length());
  dcfg.temperature = temperature;
  dcfg.record_trajectory = !dump_traj.empty();
  mdtal::require(dcfg.n_steps == lm.dcfg.n_steps,
                 "infer: --steps must match the trained step count " +
                     std::to_string(lm.dcfg.n_steps));

  std::vector<mdtal::Prediction> preds;
  std::ofstream traj_csv;
  if (!dump_traj.empty()) {
    traj_csv.open(dump_traj);
    mdtal::require_state(traj_csv.good(), "cannot open " + dump_traj);
    traj_csv << "video,step,tuple_id,soft_iou,gate,revealed_count\n";
  }
  const int L = lm.spec.tmpl.length();
  for (size_t i = 0; i < eval.size(); ++i) {
    const mdtal::Example& ex = eval[i];
    const auto ctx = lm.model->encode_context(ex.features, lm.spec.query_ids(ex));
    auto fn = [&](const std::vector<int>& x, int t) { return lm.model->forward(x, ctx, t); };
    mdtal::Rng rng(mdtal::Rng::derive(seed, i));
    const auto bounds = mdtal::target_bounds(ex, lm.spec);
    const auto gen = mdtal::generate<float>(fn, L, dcfg, lm.spec.vocab, rng,
                                            &lm.spec.tmpl, &bounds);
    auto [tuples, diag] =
        mdtal::parse_response(gen.tokens, &gen.reveal_conf, lm.spec.vocab, lm.spec.grid,
                              lm.spec.tmpl, lm.spec.class_token_offset,
                              lm.spec.cfg.n_classes);
    for (const auto& pt : tuples)
      preds.push_back({ex.video_id, pt.class_id, pt.segment, pt.confidence});
    if (traj_csv.is_open())
      for (const auto& row : gen.trajectory.rows)
        traj_csv << ex.video_id << "," << row.t << "," << row.tuple << "," << row.r_soft
                 << "," << row.gate << "," << row.revealed_count << "\n";
  }
  mdtal::write_predictions_jsonl(out_path, preds);
  std::cout << "wrote " << preds.size() << " predictions to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& preds_path, const std::string& data_dir,
             const std::string& profile, const std::string& grid_name,
             const std::string& out_path) {
  const auto preds = mdtal::read_predictions_jsonl(preds_path);
  const auto eval = mdtal::read_dataset(data_dir + "/eval.jsonl");
  const auto gts = mdtal::ground_truth_of(eval);

  json report;
  if (profile == "rtl") {
    report = json::parse(mdtal::rtl_suite(preds, gts).to_json());
  } else {
    mdtal::require(grid_name == "thumos" || grid_name == "anet",
                   "eval: unknown grid " + grid_name);
    const auto grid = grid_name == "thumos" ? mdtal::ThresholdGrid::thumos
                                            : mdtal::ThresholdGrid::anet;
    report = json::parse(mdtal::map_suite(preds, gts, grid).to_json());
  }
  const std::string text = report.dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else {
    write_text(out_path, text);
    std::cout << "wrote report to " << out_path << "\n";
  }
  return 0;
}

int cmd_ablate(const std::string& grid_path, const std::string& data_dir,
               const std::string& config_path, const std::string& out_dir, int workers,
               int64_t seed_override) {
  json grid_json;
  if (grid_path == "table3")
    grid_json = mdtal::table3_grid();
  else if (grid_path == "table4")
    grid_json = mdtal::table4_grid();
  else
    grid_json = read_json_file(grid_path);
  const mdtal::AblationGrid grid = mdtal::AblationGrid::from_json(grid_json);

  json cfg_json = config_path.empty() ? json::object() : read_json_file(config_path);
  if (seed_override >= 0) cfg_json["seed"] = static_cast<uint64_t>(seed_override);
  const mdtal::TrainConfig base_cfg = mdtal::TrainConfig::from_json(cfg_json);

  LoadedData data = load_data_dir(data_dir, true);
  fs::create_directories(out_dir);
  const auto results = mdtal::run_ablation(grid, data.spec, data.train, data.eval,
                                           base_cfg, out_dir, workers);
  const std::string md = mdtal::ablation_markdown(results);
  write_text(out_dir + "/report.md", md);
  write_text(out_dir + "/report.json", mdtal::ablation_json(results).dump(2) + "\n");
  json manifest_cfg = base_cfg.to_json();
  manifest_cfg["grid"] = grid_json;
  manifest_cfg["data_dir"] = data_dir;
  write_manifest(out_dir, "ablate", manifest_cfg);
  std::cout << md;
  return 0;
}

int cmd_dump_traj(const std::string& ckpt_path, const std::string& data_dir, int example,
                  const std::string& out_path, uint64_t seed) {
  LoadedModel lm = load_model(ckpt_path);
  const auto eval = mdtal::read_dataset(data_dir + "/eval.jsonl");
  mdtal::require(example >= 0 && example < static_cast<int>(eval.size()),
                 "dump-traj: example index out of range");
  const mdtal::Example& ex = eval[example];

  mdtal::DecodeConfig dcfg;
  dcfg.n_steps = lm.dcfg.n_steps;
  dcfg.block_length = lm.spec.tmpl.length();
  dcfg.record_trajectory = true;
  const auto ctx = lm.model->encode_context(ex.features, lm.spec.query_ids(ex));
  auto fn = [&](const std::vector<int>& x, int t) { return lm.model->forward(x, ctx, t); };
  mdtal::Rng rng(seed);
  const auto bounds = mdtal::target_bounds(ex, lm.spec);
  const auto gen = mdtal::generate<float>(fn, lm.spec.tmpl.length(), dcfg, lm.spec.vocab,
                                          rng, &lm.spec.tmpl, &bounds);

  std::ofstream csv(out_path);
  mdtal::require_state(csv.good(), "cannot open " + out_path);
  csv << "step,tuple_id,soft_iou,gate,revealed_count\n";
  for (const auto& row : gen.trajectory.rows)
    csv << row.t << "," << row.tuple << "," << row.r_soft << "," << row.gate << ","
        << row.revealed_count << "\n";
  std::cout << "wrote trajectory of example " << example << " to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked-diffusion temporal action localization toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_profile = "rtl", gen_out = "data";
  int gen_n = 600, gen_n_eval = 100, gen_max_inst = 4;
  uint64_t gen_seed = 1;
  double gen_sigma = 0.5;
  gen->add_option("--profile", gen_profile, "rtl | closed-set")
      ->check(CLI::IsMember({"rtl", "closed-set"}));
  gen->add_option("--n", gen_n, "training examples");
  gen->add_option("--n-eval", gen_n_eval, "evaluation examples");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--sigma-noise", gen_sigma, "background noise level");
  gen->add_option("--max-instances", gen_max_inst, "closed-set instance cap");
  gen->add_option("-o,--out", gen_out, "output directory");

  // train
  auto* train = app.add_subcommand("train", "train a denoiser");
  std::string train_cfg, train_data = "data", train_out = "run";
  int64_t train_seed = -1;
  train->add_option("-c,--config", train_cfg, "flat JSON config");
  train->add_option("--data", train_data, "dataset directory");
  train->add_option("-o,--out", train_out, "output directory");
  train->add_option("--seed", train_seed, "seed override");

  // infer
  auto* infer = app.add_subcommand("infer", "decode the eval split");
  std::string infer_ckpt, infer_data = "data", infer_out = "preds.jsonl", infer_traj;
  int infer_steps = 0, infer_block = 32;
  double infer_temp = 0.0;
  uint64_t infer_seed = 1;
  infer->add_option("--ckpt", infer_ckpt, "checkpoint path")->required();
  infer->add_option("--data", infer_data, "dataset directory");
  infer->add_option("-o,--out", infer_out, "predictions JSONL");
  infer->add_option("--steps", infer_steps, "denoising steps (default: trained S)");
  infer->add_option("--block-length", infer_block, "semi-autoregressive block length");
  infer->add_option("--temperature", infer_temp, "sampling temperature (0 = greedy)");
  infer->add_option("--seed", infer_seed, "sampling seed");
  infer->add_option("--dump-trajectory", infer_traj, "per-step soft-IoU CSV");

  // eval
  auto* ev = app.add_subcommand("eval", "score predictions against ground truth");
  std::string ev_preds = "preds.jsonl", ev_data = "data", ev_profile = "rtl",
              ev_grid = "thumos", ev_out;
  ev->add_option("--preds", ev_preds, "predictions JSONL");
  ev->add_option("--data", ev_data, "dataset directory");
  ev->add_option("--profile", ev_profile, "rtl | closed-set")
      ->check(CLI::IsMember({"rtl", "closed-set"}));
  ev->add_option("--grid", ev_grid, "thumos | anet")
      ->check(CLI::IsMember({"thumos", "anet"}));
  ev->add_option("-o,--out", ev_out, "report path (stdout when omitted)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run an ablation grid");
  std::string ab_grid = "table3", ab_data = "data", ab_cfg, ab_out = "ablation";
  int ab_workers = 2;
  int64_t ab_seed = -1;
  ab->add_option("--grid", ab_grid, "table3 | table4 | grid JSON path");
  ab->add_option("--data", ab_data, "dataset directory");
  ab->add_option("-c,--config", ab_cfg, "base config JSON");
  ab->add_option("-o,--out", ab_out, "output directory");
  ab->add_option("--workers", ab_workers, "parallel cells");
  ab->add_option("--seed", ab_seed, "base seed override");

  // dump-traj
  auto* dt = app.add_subcommand("dump-traj", "per-step soft-IoU CSV for one example");
  std::string dt_ckpt, dt_data = "data", dt_out = "trajectory.csv";
  int dt_example = 0;
  uint64_t dt_seed = 1;
  dt->add_option("--ckpt", dt_ckpt, "checkpoint path")->required();
  dt->add_option("--data", dt_data, "dataset directory");
  dt->add_option("--example", dt_example, "eval example index");
  dt->add_option("-o,--out", dt_out, "CSV path");
  dt->add_option("--seed", dt_seed, "sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_profile, gen_n, gen_n_eval, gen_seed, gen_out, gen_sigma,
                          gen_max_inst);
    if (train->parsed()) return cmd_train(train_cfg, train_data, train_out, train_seed);
    if (infer->parsed())
      return cmd_infer(infer_ckpt, infer_data, infer_out, infer_steps, infer_block,
                       infer_temp, infer_seed, infer_traj);
    if (ev->parsed()) return cmd_eval(ev_preds, ev_data, ev_profile, ev_grid, ev_out);
    if (ab->parsed())
      return cmd_ablate(ab_grid, ab_data, ab_cfg, ab_out, ab_workers, ab_seed);
    if (dt->parsed()) return cmd_dump_traj(dt_ckpt, dt_data, dt_example, dt_out, dt_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
