#include "mdtal/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mdtal {

nlohmann::json SynthConfig::to_json() const {
  return {{"profile", profile == Profile::rtl ? "rtl" : "closed-set"},
          {"n_classes", n_classes},
          {"d_feat", d_feat},
          {"t_frames", t_frames},
          {"max_instances", max_instances},
          {"m_desc", m_desc},
          {"sigma_noise", sigma_noise},
          {"duration", duration},
          {"n_time_bins", n_time_bins},
          {"proto_scale", proto_scale},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  const std::string prof = j.at("profile").get<std::string>();
  require(prof == "rtl" || prof == "closed-set", "SynthConfig: unknown profile " + prof);
  c.profile = prof == "rtl" ? Profile::rtl : Profile::closed_set;
  c.n_classes = j.at("n_classes");
  c.d_feat = j.at("d_feat");
  c.t_frames = j.at("t_frames");
  c.max_instances = j.at("max_instances");
  c.m_desc = j.at("m_desc");
  c.sigma_noise = j.at("sigma_noise");
  c.duration = j.at("duration");
  c.n_time_bins = j.at("n_time_bins");
  c.proto_scale = j.value("proto_scale", 2.0);
  c.seed = j.at("seed").get<uint64_t>();
  c.validate();
  return c;
}

DatasetSpec make_dataset_spec(const SynthConfig& cfg) {
  cfg.validate();
  DatasetSpec spec;
  spec.cfg = cfg;
  if (cfg.profile == SynthConfig::Profile::rtl) spec.cfg.max_instances = 1;

  Vocabulary& v = spec.vocab;
  v.base_tokens = {"[MASK]", "[PAD]", "[NONE]", "[SEP]", "[BOS]", "locate", "detect", "all"};
  v.mask_id = 0;
  v.pad_id = 1;
  v.none_id = 2;
  v.sep_id = 3;
  v.bos_id = 4;
  spec.class_token_offset = static_cast<int>(v.base_tokens.size());
  for (int c = 0; c < cfg.n_classes; ++c)
    v.base_tokens.push_back("cls_" + std::to_string(c));
  spec.desc_token_offset = static_cast<int>(v.base_tokens.size());
  for (int c = 0; c < cfg.n_classes; ++c)
    for (int j = 0; j < cfg.m_desc; ++j)
      v.base_tokens.push_back("d" + std::to_string(c) + "_" + std::to_string(j));
  v.n_time_tokens = cfg.n_time_bins;
  v.validate();

  spec.grid = TimeGrid(cfg.n_time_bins, cfg.duration);
  spec.tmpl.m_desc = cfg.m_desc;
  spec.tmpl.max_tuples = spec.cfg.max_instances;
  return spec;
}

std::vector<int> DatasetSpec::query_ids(const Example& ex) const {
  std::vector<int> ids;
  for (const std::string& q : ex.query) {
    const int id = vocab.lookup(q);
    require(id >= 0, "DatasetSpec: query token not in vocabulary: " + q);
    ids.push_back(id);
  }
  return ids;
}

std::vector<std::vector<double>> class_prototypes(const SynthConfig& cfg) {
  Rng rng(Rng::derive(cfg.seed, 0x70726f746f));
  std::vector<std::vector<double>> protos(cfg.n_classes, std::vector<double>(cfg.d_feat));
  for (auto& p : protos) {
    double norm2 = 0.0;
    for (double& x : p) {
      x = rng.normal();
      norm2 += x * x;
    }
    const double s = cfg.proto_scale / std::sqrt(std::max(norm2, 1e-12));
    for (double& x : p) x *= s;
  }
  return protos;
}

namespace {

bool overlaps(const Instance& a, const Instance& b) {
  return a.start < b.end && b.start < a.end;
}

}  // namespace

Example generate_example(const SynthConfig& cfg, Rng& rng, int index) {
  const double min_len = cfg.duration / 20.0;
  const double max_len = cfg.duration / 2.0;
  Example ex;
  {
    std::ostringstream id;
    id << "v" << std::setw(6) << std::setfill('0') << index;
    ex.video_id = id.str();
  }
  ex.duration = cfg.duration;

  const int want = cfg.profile == SynthConfig::Profile::rtl
                       ? 1
                       : 1 + static_cast<int>(rng.uniform_int(cfg.max_instances));
  for (int k = 0; k < want; ++k) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      Instance inst;
      inst.class_id = static_cast<int>(rng.uniform_int(cfg.n_classes));
      const double len = rng.uniform(min_len, max_len);
      inst.start = rng.uniform(0.0, cfg.duration - len);
      inst.end = inst.start + len;
      bool bad = false;
      for (const Instance& other : ex.instances)
        if (overlaps(inst, other)) {
          bad = true;
          break;
        }
      if (!bad) {
        ex.instances.push_back(inst);
        break;
      }
    }
  }
  std::sort(ex.instances.begin(), ex.instances.end(),
            [](const Instance& a, const Instance& b) { return a.start < b.start; });

  const auto protos = class_prototypes(cfg);
  ex.features = Mat<float>(cfg.t_frames, cfg.d_feat);
  for (int f = 0; f < cfg.t_frames; ++f) {
    float* row = ex.features.row(f);
    for (int j = 0; j < cfg.d_feat; ++j)
      row[j] = static_cast<float>(rng.normal() * cfg.sigma_noise);
    const double center = (f + 0.5) * cfg.duration / cfg.t_frames;
    for (const Instance& inst : ex.instances)
      if (center >= inst.start && center < inst.end)
        for (int j = 0; j < cfg.d_feat; ++j)
          row[j] += static_cast<float>(protos[inst.class_id][j]);
  }

  if (cfg.profile == SynthConfig::Profile::rtl) {
    ex.query = {"locate", "cls_" + std::to_string(ex.instances.front().class_id)};
  } else {
    ex.query = {"detect", "all"};
  }
  return ex;
}

std::vector<Example> generate_dataset(const SynthConfig& cfg, int count,
                                      uint64_t split_stream) {
  std::vector<Example> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(Rng::derive(cfg.seed, Rng::derive(split_stream, i)));
    out.push_back(generate_example(cfg, rng, i));
  }
  return out;
}

TargetSequence build_target(const Example& ex, const DatasetSpec& spec) {
  const ResponseTemplate& tmpl = spec.tmpl;
  require(static_cast<int>(ex.instances.size()) <= tmpl.max_tuples,
          "build_target: more instances than the template holds");
  const Vocabulary& v = spec.vocab;
  std::vector<int> toks(tmpl.length(), v.pad_id);
  TargetSequence tgt;
  for (int k = 0; k < tmpl.max_tuples; ++k) {
    if (k < static_cast<int>(ex.instances.size())) {
      const Instance& inst = ex.instances[k];
      const auto [ks, ke] = encode_segment(Segment(inst.start, inst.end), spec.grid);
      toks[tmpl.class_slot(k)] = spec.class_token(inst.class_id);
      for (int j = 0; j < tmpl.m_desc; ++j)
        toks[tmpl.desc_slot(k, j)] = spec.desc_token(inst.class_id, j);
      toks[tmpl.start_slot(k)] = v.time_token_id(ks);
      toks[tmpl.end_slot(k)] = v.time_token_id(ke);
      tgt.tuples.push_back({tmpl.class_slot(k), tmpl.start_slot(k), tmpl.end_slot(k)});
    } else {
      toks[tmpl.class_slot(k)] = v.none_id;
      for (int j = 0; j < tmpl.m_desc; ++j) toks[tmpl.desc_slot(k, j)] = v.pad_id;
      toks[tmpl.start_slot(k)] = v.pad_id;
      toks[tmpl.end_slot(k)] = v.pad_id;
    }
    toks[tmpl.sep_slot(k)] = v.sep_id;
  }
  const std::vector<TupleSlots> tuples = std::move(tgt.tuples);
  tgt = TargetSequence::from_tokens(toks, v);
  tgt.tuples = tuples;
  tgt.validate();
  return tgt;
}

std::vector<std::pair<int, int>> target_bins(const Example& ex, const DatasetSpec& spec) {
  std::vector<std::pair<int, int>> out;
  for (const Instance& inst : ex.instances)
    out.push_back(encode_segment(Segment(inst.start, inst.end), spec.grid));
  return out;
}

std::vector<std::pair<double, double>> target_bounds(const Example& ex,
                                                     const DatasetSpec& spec) {
  std::vector<std::pair<double, double>> out;
  const double denom = spec.grid.n_bins - 1;
  for (const auto& [ks, ke] : target_bins(ex, spec))
    out.push_back({ks / denom, ke / denom});
  return out;
}

std::vector<GroundTruthInstance> ground_truth_of(const std::vector<Example>& examples) {
  std::vector<GroundTruthInstance> out;
  for (const Example& ex : examples)
    for (const Instance& inst : ex.instances)
      out.push_back({ex.video_id, inst.class_id, Segment(inst.start, inst.end)});
  return out;
}

void write_dataset(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path);
  require_state(out.good(), "write_dataset: cannot open " + path);
  for (const Example& ex : examples) {
    nlohmann::json j;
    j["video_id"] = ex.video_id;
    j["duration"] = ex.duration;
    nlohmann::json feats = nlohmann::json::array();
    for (int f = 0; f < ex.features.rows; ++f) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < ex.features.cols; ++c) row.push_back(ex.features.at(f, c));
      feats.push_back(std::move(row));
    }
    j["features"] = std::move(feats);
    nlohmann::json insts = nlohmann::json::array();
    for (const Instance& inst : ex.instances)
      insts.push_back({{"class", inst.class_id}, {"start", inst.start}, {"end", inst.end}});
    j["instances"] = std::move(insts);
    std::string q;
    for (size_t i = 0; i < ex.query.size(); ++i) {
      if (i) q += " ";
      q += ex.query[i];
    }
    j["query"] = q;
    out << j.dump() << "\n";
  }
}

std::vector<Example> read_dataset(const std::string& path) {
  std::ifstream in(path);
  require_state(in.good(), "read_dataset: cannot open " + path);
  std::vector<Example> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("read_dataset: malformed JSON on line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    try {
      Example ex;
      ex.video_id = j.at("video_id").get<std::string>();
      ex.duration = j.at("duration").get<double>();
      const auto& feats = j.at("features");
      const int rows = static_cast<int>(feats.size());
      const int cols = rows ? static_cast<int>(feats[0].size()) : 0;
      ex.features = Mat<float>(rows, cols);
      for (int f = 0; f < rows; ++f)
        for (int c = 0; c < cols; ++c) ex.features.at(f, c) = feats[f][c].get<float>();
      for (const auto& ji : j.at("instances")) {
        Instance inst;
        inst.class_id = ji.at("class").get<int>();
        inst.start = ji.at("start").get<double>();
        inst.end = ji.at("end").get<double>();
        ex.instances.push_back(inst);
      }
      std::istringstream qs(j.at("query").get<std::string>());
      std::string tok;
      while (qs >> tok) ex.query.push_back(tok);
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("read_dataset: bad record on line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

BaselineResult prototype_changepoint_baseline(const std::vector<Example>& examples,
                                              const SynthConfig& cfg) {
  const auto protos = class_prototypes(cfg);
  BaselineResult res;
  double sum = 0.0;
  for (const Example& ex : examples) {
    const int t = ex.features.rows;
    // Nearest prototype per frame (background = zero vector), then a
    // majority-smoothing pass to kill isolated flips.
    std::vector<int> label(t, -1);
    for (int f = 0; f < t; ++f) {
      double best = 0.0;  // distance^2 advantage over background
      int arg = -1;
      for (int c = 0; c < cfg.n_classes; ++c) {
        double dot = 0.0, norm2 = 0.0;
        for (int j = 0; j < cfg.d_feat; ++j) {
          dot += ex.features.at(f, j) * protos[c][j];
          norm2 += protos[c][j] * protos[c][j];
        }
        const double margin = dot - 0.5 * norm2;  // ||x||^2 cancels across classes
        if (margin > best) {
          best = margin;
          arg = c;
        }
      }
      label[f] = arg;
    }
    std::vector<int> smooth(label);
    for (int f = 0; f < t; ++f) {
      int votes[64] = {0};
      int bg = 0;
      for (int w = std::max(0, f - 2); w <= std::min(t - 1, f + 2); ++w) {
        if (label[w] < 0)
          ++bg;
        else
          ++votes[label[w]];
      }
      int arg = -1, most = bg;
      for (int c = 0; c < cfg.n_classes; ++c)
        if (votes[c] > most) {
          most = votes[c];
          arg = c;
        }
      smooth[f] = arg;
    }
    // Longest run per class becomes that class's predicted segment.
    std::vector<Segment> run(cfg.n_classes, Segment(0, 0));
    int f = 0;
    while (f < t) {
      if (smooth[f] < 0) {
        ++f;
        continue;
      }
      int g = f;
      while (g < t && smooth[g] == smooth[f]) ++g;
      const double a = f * ex.duration / t;
      const double b = g * ex.duration / t;
      if (b - a > run[smooth[f]].length()) run[smooth[f]] = Segment(a, b);
      f = g;
    }
    for (const Instance& inst : ex.instances) {
      sum += tiou(run[inst.class_id], Segment(inst.start, inst.end));
      res.n_instances += 1;
    }
  }
  res.miou = res.n_instances ? sum / res.n_instances : 0.0;
  return res;
}

}  // namespace mdtal
