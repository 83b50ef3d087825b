#include <algorithm>
#include <cmath>
#include <cstring>

#include "mdtal/kernels.hpp"

// Reference kernels. Plain loops, no pragmas; this translation unit is built
// without AVX flags so it is the portable baseline the SIMD variants are
// checked against.

namespace mdtal::kernels {
namespace {

template <typename T>
T dot_(const T* x, const T* y, int n) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy_(T a, const T* x, T* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void scale_(T* x, T a, int n) {
  for (int i = 0; i < n; ++i) x[i] *= a;
}

template <typename T>
void vadd_(const T* x, const T* y, T* out, int n) {
  for (int i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

template <typename T>
void vmul_(const T* x, const T* y, T* out, int n) {
  for (int i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <typename T>
T vsum_(const T* x, int n) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += x[i];
  return s;
}

template <typename T>
T vmax_(const T* x, int n) {
  T m = x[0];
  for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

template <typename T>
void gemm_(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(T) * static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * n;
    const T* arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_tn_(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(T) * static_cast<size_t>(m) * n);
  for (int p = 0; p < k; ++p) {
    const T* arow = a + static_cast<size_t>(p) * m;
    const T* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt_(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T d = dot_(arow, b + static_cast<size_t>(j) * k, k);
      crow[j] = accumulate ? crow[j] + d : d;
    }
  }
}

template <typename T>
void adamw_(T* p, const T* g, T* m, T* v, int n, T lr, T beta1, T beta2, T eps,
            T wd, T bc1, T bc2) {
  for (int i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    const T mhat = m[i] / bc1;
    const T vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
  }
}

}  // namespace

namespace detail {

template <typename T>
void fill_scalar_table(Table<T>& t) {
  t.dot = dot_<T>;
  t.axpy = axpy_<T>;
  t.scale = scale_<T>;
  t.vadd = vadd_<T>;
  t.vmul = vmul_<T>;
  t.vsum = vsum_<T>;
  t.vmax = vmax_<T>;
  t.gemm = gemm_<T>;
  t.gemm_tn = gemm_tn_<T>;
  t.gemm_nt = gemm_nt_<T>;
  t.adamw = adamw_<T>;
}

template void fill_scalar_table<float>(Table<float>&);
template void fill_scalar_table<double>(Table<double>&);

}  // namespace detail
}  // namespace mdtal::kernels
