#include "mdtal/kernels.hpp"

#ifdef MDTAL_HAVE_AVX2

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>

// AVX2 + FMA variants. This TU is the only one compiled with -mavx2 -mfma;
// nothing here runs unless dispatch confirmed CPU support.

namespace mdtal::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  lo = _mm_add_pd(lo, _mm_unpackhi_pd(lo, lo));
  return _mm_cvtsd_f64(lo);
}

// ---------------------------------------------------------------- float ---

float dot_f32(const float* x, const float* y, int n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  int i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  float s = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_f32(float a, const float* x, float* y, int n) {
  const __m256 va = _mm256_set1_ps(a);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scale_f32(float* x, float a, int n) {
  const __m256 va = _mm256_set1_ps(a);
  int i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(x + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), va));
  for (; i < n; ++i) x[i] *= a;
}

void vadd_f32(const float* x, const float* y, float* out, int n) {
  int i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void vmul_f32(const float* x, const float* y, float* out, int n) {
  int i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

float vsum_f32(const float* x, int n) {
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

float vmax_f32(const float* x, int n) {
  int i = 0;
  float m;
  if (n >= 8) {
    __m256 acc = _mm256_loadu_ps(x);
    for (i = 8; i + 8 <= n; i += 8) acc = _mm256_max_ps(acc, _mm256_loadu_ps(x + i));
    __m128 lo = _mm_max_ps(_mm256_castps256_ps128(acc), _mm256_extractf128_ps(acc, 1));
    lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    m = _mm_cvtss_f32(lo);
  } else {
    m = x[0];
    i = 1;
  }
  for (; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

void gemm_f32(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(float) * static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<size_t>(i) * n;
    const float* arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p)
      axpy_f32(arow[p], b + static_cast<size_t>(p) * n, crow, n);
  }
}

void gemm_tn_f32(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(float) * static_cast<size_t>(m) * n);
  for (int p = 0; p < k; ++p) {
    const float* arow = a + static_cast<size_t>(p) * m;
    const float* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i)
      axpy_f32(arow[i], brow, c + static_cast<size_t>(i) * n, n);
  }
}

void gemm_nt_f32(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float d = dot_f32(arow, b + static_cast<size_t>(j) * k, k);
      crow[j] = accumulate ? crow[j] + d : d;
    }
  }
}

void adamw_f32(float* p, const float* g, float* m, float* v, int n, float lr,
               float beta1, float beta2, float eps, float wd, float bc1, float bc2) {
  for (int i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    const float mhat = m[i] / bc1;
    const float vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
  }
}

// --------------------------------------------------------------- double ---

double dot_f64(const double* x, const double* y, int n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_f64(double a, const double* x, double* y, int n) {
  const __m256d va = _mm256_set1_pd(a);
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scale_f64(double* x, double a, int n) {
  const __m256d va = _mm256_set1_pd(a);
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
  for (; i < n; ++i) x[i] *= a;
}

void vadd_f64(const double* x, const double* y, double* out, int n) {
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void vmul_f64(const double* x, const double* y, double* out, int n) {
  int i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

double vsum_f64(const double* x, int n) {
  __m256d acc = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double vmax_f64(const double* x, int n) {
  int i = 0;
  double m;
  if (n >= 4) {
    __m256d acc = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
    __m128d lo = _mm_max_pd(_mm256_castpd256_pd128(acc), _mm256_extractf128_pd(acc, 1));
    lo = _mm_max_sd(lo, _mm_unpackhi_pd(lo, lo));
    m = _mm_cvtsd_f64(lo);
  } else {
    m = x[0];
    i = 1;
  }
  for (; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

void gemm_f64(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<size_t>(i) * n;
    const double* arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p)
      axpy_f64(arow[p], b + static_cast<size_t>(p) * n, crow, n);
  }
}

void gemm_tn_f64(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<size_t>(p) * m;
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i)
      axpy_f64(arow[i], brow, c + static_cast<size_t>(i) * n, n);
  }
}

void gemm_nt_f64(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double d = dot_f64(arow, b + static_cast<size_t>(j) * k, k);
      crow[j] = accumulate ? crow[j] + d : d;
    }
  }
}

void adamw_f64(double* p, const double* g, double* m, double* v, int n, double lr,
               double beta1, double beta2, double eps, double wd, double bc1, double bc2) {
  for (int i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
  }
}

}  // namespace

namespace detail {

void fill_avx2_table(Table<float>& t) {
  t.dot = dot_f32;
  t.axpy = axpy_f32;
  t.scale = scale_f32;
  t.vadd = vadd_f32;
  t.vmul = vmul_f32;
  t.vsum = vsum_f32;
  t.vmax = vmax_f32;
  t.gemm = gemm_f32;
  t.gemm_tn = gemm_tn_f32;
  t.gemm_nt = gemm_nt_f32;
  t.adamw = adamw_f32;
}

void fill_avx2_table(Table<double>& t) {
  t.dot = dot_f64;
  t.axpy = axpy_f64;
  t.scale = scale_f64;
  t.vadd = vadd_f64;
  t.vmul = vmul_f64;
  t.vsum = vsum_f64;
  t.vmax = vmax_f64;
  t.gemm = gemm_f64;
  t.gemm_tn = gemm_tn_f64;
  t.gemm_nt = gemm_nt_f64;
  t.adamw = adamw_f64;
}

}  // namespace detail
}  // namespace mdtal::kernels

#else  // !MDTAL_HAVE_AVX2

namespace mdtal::kernels::detail {
// Fallback when the toolchain cannot target AVX2: the dispatcher never
// selects this backend, but the symbols must exist.
void fill_avx2_table(Table<float>& t) { fill_scalar_table(t); }
void fill_avx2_table(Table<double>& t) { fill_scalar_table(t); }
}  // namespace mdtal::kernels::detail

#endif
