#pragma once

#include <cstdint>

namespace gssd::kernels {

// Data-parallel inner loops used by the tensor operations. Every entry has a
// scalar reference implementation and may have an AVX2 variant; the active
// table is selected once at startup (see dispatch.cpp). Reductions (dot, sum)
// may differ from the scalar reference in the last bits because the SIMD
// variants accumulate in lanes; equivalence is tested with tolerances in
// tests/test_kernels.cpp.
template <class T>
struct Table {
    // y[i] += a * x[i]
    void (*axpy)(T* y, const T* x, T a, int64_t n);
    // y[i] += a * x[2*i]
    void (*axpy_in_s2)(T* y, const T* x, T a, int64_t n);
    // y[2*i] += a * x[i]
    void (*axpy_out_s2)(T* y, const T* x, T a, int64_t n);
    // sum_i x[i] * y[i]
    T (*dot)(const T* x, const T* y, int64_t n);
    // sum_i x[i] * y[2*i]
    T (*dot_in_s2)(const T* x, const T* y, int64_t n);
    // y[i] = a * x[i] + b
    void (*affine)(T* y, const T* x, T a, T b, int64_t n);
    // y[i] = max(x[i], 0)
    void (*relu_fwd)(T* y, const T* x, int64_t n);
    // dx[i] += dy[i] * (x[i] > 0)
    void (*relu_bwd)(T* dx, const T* dy, const T* x, int64_t n);
    // sum_i x[i]
    T (*sum)(const T* x, int64_t n);
    // sum_i (x[i] - mean)^2
    T (*sumsq_centered)(const T* x, T mean, int64_t n);
    // v = mu*v + g + lambda*w ; w -= lr*v
    void (*sgd_update)(T* w, T* v, const T* g, T mu, T lambda, T lr, int64_t n);

    const char* name;
};

// Active table (runtime dispatch; override with GSSD_SIMD=scalar|avx2).
template <class T>
const Table<T>& table();

// Individual variants, exposed for the scalar/SIMD equivalence tests.
template <class T>
const Table<T>& scalar_table();
template <class T>
const Table<T>* avx2_table();  // nullptr when unsupported by CPU or build

bool cpu_has_avx2();

}  // namespace gssd::kernels
