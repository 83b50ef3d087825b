#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mdtal/common.hpp"
#include "mdtal/corruption.hpp"
#include "mdtal/metrics.hpp"
#include "mdtal/rng.hpp"
#include "mdtal/timecodec.hpp"

namespace mdtal {

// Synthetic feature-sequence "videos": isotropic background noise plus a
// class-specific prototype added to the frames inside each action instance.
struct SynthConfig {
  enum class Profile { rtl, closed_set };
  Profile profile = Profile::rtl;
  int n_classes = 6;
  int d_feat = 16;
  int t_frames = 100;
  int max_instances = 1;  // forced to 1 for the rtl profile
  int m_desc = 2;
  double sigma_noise = 0.5;
  double duration = 100.0;
  int n_time_bins = 100;
  double proto_scale = 2.0;
  uint64_t seed = 1;

  void validate() const {
    require(n_classes >= 2, "SynthConfig: need at least 2 classes");
    require(max_instances >= 1, "SynthConfig: max_instances must be >= 1");
    require(sigma_noise >= 0.0, "SynthConfig: negative noise level");
    require(t_frames >= 1 && d_feat >= 1, "SynthConfig: bad feature shape");
    require(duration > 0.0 && n_time_bins >= 2, "SynthConfig: bad time grid");
  }

  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct Instance {
  int class_id = 0;
  double start = 0.0;
  double end = 0.0;
};

struct Example {
  std::string video_id;
  double duration = 0.0;
  Mat<float> features;  // t_frames x d_feat
  std::vector<Instance> instances;
  std::vector<std::string> query;
};

// Everything derived from a SynthConfig that other modules need: the token
// vocabulary, the time grid, and the response template.
struct DatasetSpec {
  SynthConfig cfg;
  Vocabulary vocab;
  TimeGrid grid;
  ResponseTemplate tmpl;

  int class_token_offset = 0;
  int desc_token_offset = 0;

  int class_token(int class_id) const { return class_token_offset + class_id; }
  int desc_token(int class_id, int j) const {
    return desc_token_offset + class_id * cfg.m_desc + j;
  }
  std::vector<int> query_ids(const Example& ex) const;
};

DatasetSpec make_dataset_spec(const SynthConfig& cfg);

// Fixed per-class prototype directions, a pure function of the config seed.
std::vector<std::vector<double>> class_prototypes(const SynthConfig& cfg);

Example generate_example(const SynthConfig& cfg, Rng& rng, int index);

std::vector<Example> generate_dataset(const SynthConfig& cfg, int count,
                                      uint64_t split_stream);

// Tuple grammar: <class><desc x m><t_s><t_e><sep>, padded with none-tuples.
TargetSequence build_target(const Example& ex, const DatasetSpec& spec);

// Ground-truth bin pairs per tuple, and their normalized forms k/(N-1).
std::vector<std::pair<int, int>> target_bins(const Example& ex, const DatasetSpec& spec);
std::vector<std::pair<double, double>> target_bounds(const Example& ex,
                                                     const DatasetSpec& spec);

std::vector<GroundTruthInstance> ground_truth_of(const std::vector<Example>& examples);

// JSONL round trip; read errors carry the offending line number.
void write_dataset(const std::string& path, const std::vector<Example>& examples);
std::vector<Example> read_dataset(const std::string& path);

// Non-learned oracle: nearest-prototype frame labels, majority smoothing and
// a longest-run scan per class. Confirms the generated task carries enough
// signal (mIoU floor) before any training enters the picture.
struct BaselineResult {
  double miou = 0.0;
  int n_instances = 0;
};
BaselineResult prototype_changepoint_baseline(const std::vector<Example>& examples,
                                              const SynthConfig& cfg);

}  // namespace mdtal
