#pragma once

#include <cstddef>

namespace mdtal::kernels {

// Data-parallel inner loops used by the denoiser and optimizer. Every kernel
// has a scalar reference implementation and, on x86 with AVX2, a vectorized
// variant. The active backend is chosen once at startup:
//   - MDTAL_DETERMINISTIC=1 or MDTAL_KERNELS=scalar forces the scalar path
//   - MDTAL_KERNELS=avx2 forces AVX2 (throws if the CPU lacks it)
//   - otherwise the CPU is probed.
// Scalar and SIMD variants are equivalence-tested against each other; sums
// and GEMMs may differ by reassociation/FMA rounding, elementwise ops are
// bit-identical.

enum class Backend { scalar, avx2 };

template <typename T>
struct Table {
  T (*dot)(const T* x, const T* y, int n);
  void (*axpy)(T a, const T* x, T* y, int n);        // y += a*x
  void (*scale)(T* x, T a, int n);                   // x *= a
  void (*vadd)(const T* x, const T* y, T* out, int n);
  void (*vmul)(const T* x, const T* y, T* out, int n);
  T (*vsum)(const T* x, int n);
  T (*vmax)(const T* x, int n);
  // C[M,N] = A[M,K]*B[K,N]        (accumulate: C +=)
  void (*gemm)(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
  // C[M,N] = A^T*B, A stored [K,M]
  void (*gemm_tn)(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
  // C[M,N] = A*B^T, B stored [N,K]
  void (*gemm_nt)(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate);
  // AdamW inner loop over one tensor; returns nothing, updates p/m/v in place.
  void (*adamw)(T* p, const T* g, T* m, T* v, int n, T lr, T beta1, T beta2,
                T eps, T wd, T bc1, T bc2);
};

bool cpu_has_avx2();
Backend detect_backend();           // env override, then CPU probe
Backend active_backend();
void set_backend(Backend b);        // tests use this to pin a path
const char* backend_name(Backend b);

const Table<float>& f32();
const Table<double>& f64();

template <typename T>
const Table<T>& table();
template <>
inline const Table<float>& table<float>() { return f32(); }
template <>
inline const Table<double>& table<double>() { return f64(); }

namespace detail {
template <typename T>
void fill_scalar_table(Table<T>& t);
void fill_avx2_table(Table<float>& t);
void fill_avx2_table(Table<double>& t);
}  // namespace detail

}  // namespace mdtal::kernels
