#include "mdtal/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace mdtal::kernels {

namespace {

Table<float>& mutable_f32() {
  static Table<float> t;
  return t;
}

Table<double>& mutable_f64() {
  static Table<double> t;
  return t;
}

Backend& backend_slot() {
  static Backend b = []() {
    Backend init = detect_backend();
    if (init == Backend::avx2) {
      detail::fill_avx2_table(mutable_f32());
      detail::fill_avx2_table(mutable_f64());
    } else {
      detail::fill_scalar_table(mutable_f32());
      detail::fill_scalar_table(mutable_f64());
    }
    return init;
  }();
  return b;
}

bool env_flag(const char* name, const char* value) {
  const char* v = std::getenv(name);
  return v != nullptr && std::strcmp(v, value) == 0;
}

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect_backend() {
#ifndef MDTAL_HAVE_AVX2
  return Backend::scalar;
#else
  if (env_flag("MDTAL_DETERMINISTIC", "1")) return Backend::scalar;
  if (env_flag("MDTAL_KERNELS", "scalar")) return Backend::scalar;
  if (env_flag("MDTAL_KERNELS", "avx2")) {
    if (!cpu_has_avx2()) throw std::runtime_error("MDTAL_KERNELS=avx2 but CPU lacks AVX2/FMA");
    return Backend::avx2;
  }
  return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
#endif
}

Backend active_backend() { return backend_slot(); }

void set_backend(Backend b) {
  if (b == Backend::avx2) {
#ifdef MDTAL_HAVE_AVX2
    if (!cpu_has_avx2()) throw std::runtime_error("CPU lacks AVX2/FMA");
    detail::fill_avx2_table(mutable_f32());
    detail::fill_avx2_table(mutable_f64());
#else
    throw std::runtime_error("binary built without AVX2 support");
#endif
  } else {
    detail::fill_scalar_table(mutable_f32());
    detail::fill_scalar_table(mutable_f64());
  }
  backend_slot() = b;
}

const char* backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

const Table<float>& f32() {
  backend_slot();
  return mutable_f32();
}

const Table<double>& f64() {
  backend_slot();
  return mutable_f64();
}

}  // namespace mdtal::kernels
