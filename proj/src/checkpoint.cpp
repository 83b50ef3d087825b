#include "mdtal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mdtal {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'D', 'T', 'L'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& what) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require_state(in.good(), "checkpoint: truncated while reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  require_state(out.good(), "save_checkpoint: cannot open " + path);
  out.write(kMagic, 4);
  put(out, kVersion);
  const std::string meta = ckpt.meta.dump();
  put(out, static_cast<uint64_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put(out, static_cast<uint32_t>(ckpt.blocks.size()));
  for (const CheckpointBlock& b : ckpt.blocks) {
    put(out, static_cast<uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put(out, static_cast<uint32_t>(b.shape.size()));
    uint64_t numel = 1;
    for (uint32_t d : b.shape) {
      put(out, static_cast<uint64_t>(d));
      numel *= d;
    }
    require(numel == b.data.size(), "save_checkpoint: shape/data mismatch in " + b.name);
    out.write(reinterpret_cast<const char*>(b.data.data()),
              static_cast<std::streamsize>(b.data.size() * sizeof(float)));
  }
  require_state(out.good(), "save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require_state(in.good(), "load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  require_state(in.good() && std::memcmp(magic, kMagic, 4) == 0,
                "load_checkpoint: bad magic in " + path);
  const uint32_t version = get<uint32_t>(in, "version");
  require_state(version == kVersion,
                "load_checkpoint: unsupported format version " + std::to_string(version));
  const uint64_t meta_len = get<uint64_t>(in, "metadata length");
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  require_state(in.good(), "load_checkpoint: truncated metadata");

  Checkpoint ckpt;
  ckpt.meta = nlohmann::json::parse(meta);
  const uint32_t n_blocks = get<uint32_t>(in, "block count");
  for (uint32_t i = 0; i < n_blocks; ++i) {
    CheckpointBlock b;
    const uint32_t name_len = get<uint32_t>(in, "block name length");
    b.name.resize(name_len);
    in.read(b.name.data(), name_len);
    const uint32_t ndim = get<uint32_t>(in, "block rank");
    uint64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const uint64_t dim = get<uint64_t>(in, "block shape");
      b.shape.push_back(static_cast<uint32_t>(dim));
      numel *= dim;
    }
    b.data.resize(numel);
    in.read(reinterpret_cast<char*>(b.data.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    require_state(in.good(), "load_checkpoint: truncated block " + b.name);
    ckpt.blocks.push_back(std::move(b));
  }
  return ckpt;
}

CheckpointBlock block_from_mat(const std::string& name, const Mat<float>& m) {
  CheckpointBlock b;
  b.name = name;
  b.shape = {static_cast<uint32_t>(m.rows), static_cast<uint32_t>(m.cols)};
  b.data = m.data;
  return b;
}

Mat<float> mat_from_block(const CheckpointBlock& b) {
  require(b.shape.size() == 2, "mat_from_block: block " + b.name + " is not 2-D");
  Mat<float> m(static_cast<int>(b.shape[0]), static_cast<int>(b.shape[1]));
  m.data = b.data;
  return m;
}

uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require_state(in.good(), "file_hash: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
  }
  return h;
}

}  // namespace mdtal
