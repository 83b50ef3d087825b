#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdtal {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void require_state(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// Dense row-major matrix. Doubles as a vector when rows == 1.
template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}

  T* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
  const T* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }
  T& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  const T& at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

  size_t size() const { return data.size(); }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

// log-sum-exp over a row, stable.
template <typename T>
T logsumexp_row(const T* z, int n) {
  T m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  T s = T(0);
  for (int i = 0; i < n; ++i) s += std::exp(z[i] - m);
  return m + std::log(s);
}

// softmax over a row into out (may alias z).
template <typename T>
void softmax_row(const T* z, int n, T* out) {
  T m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  T s = T(0);
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(z[i] - m);
    s += out[i];
  }
  T inv = T(1) / s;
  for (int i = 0; i < n; ++i) out[i] *= inv;
}

// FNV-1a over raw bytes; used for artifact/hash comparisons in manifests.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace mdtal
