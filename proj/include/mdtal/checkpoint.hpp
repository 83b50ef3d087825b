#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdtal/common.hpp"

namespace mdtal {

// Checkpoint container: magic "MDTL", format version, a JSON metadata blob
// (config echo, training progress), then named blocks of row-major
// little-endian float32 with declared shapes. Optimizer moments ride along as
// blocks named "opt.m.*" / "opt.v.*" so training resumes bit-exactly.

struct CheckpointBlock {
  std::string name;
  std::vector<uint32_t> shape;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<CheckpointBlock> blocks;

  const CheckpointBlock* find(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return &b;
    return nullptr;
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

CheckpointBlock block_from_mat(const std::string& name, const Mat<float>& m);
Mat<float> mat_from_block(const CheckpointBlock& b);

uint64_t file_hash(const std::string& path);

}  // namespace mdtal
