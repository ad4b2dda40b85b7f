// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma and must only be entered after the dispatcher has checked CPU
// support. Reductions use vector lane accumulators, so they are equivalent to
// the scalar reference only up to reassociation rounding.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include "gssd/kernels.hpp"

namespace gssd::kernels {
namespace avx2 {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_movehdup_ps(lo));
    return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

// Even-index elements of two consecutive vectors: [x0 x2 x4 ... x14].
inline __m256 even_lanes(__m256 v0, __m256 v1) {
    __m256 s = _mm256_shuffle_ps(v0, v1, 0x88);
    return _mm256_castpd_ps(_mm256_permute4x64_pd(_mm256_castps_pd(s), 0xD8));
}

inline __m256d even_lanes(__m256d v0, __m256d v1) {
    __m256d s = _mm256_unpacklo_pd(v0, v1);
    return _mm256_permute4x64_pd(s, 0xD8);
}

// ---- float ----------------------------------------------------------------

void axpy_f(float* y, const float* x, float a, int64_t n) {
    __m256 va = _mm256_set1_ps(a);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_in_s2_f(float* y, const float* x, float a, int64_t n) {
    __m256 va = _mm256_set1_ps(a);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 ev = even_lanes(_mm256_loadu_ps(x + 2 * i), _mm256_loadu_ps(x + 2 * i + 8));
        __m256 vy = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, ev, vy));
    }
    for (; i < n; ++i) y[i] += a * x[2 * i];
}

void axpy_out_s2_f(float* y, const float* x, float a, int64_t n) {
    // Strided read-modify-write store; not worth vectorizing.
    for (int64_t i = 0; i < n; ++i) y[2 * i] += a * x[i];
}

float dot_f(const float* x, const float* y, int64_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    float acc = hsum(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

float dot_in_s2_f(const float* x, const float* y, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 ev = even_lanes(_mm256_loadu_ps(y + 2 * i), _mm256_loadu_ps(y + 2 * i + 8));
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), ev, acc);
    }
    float r = hsum(acc);
    for (; i < n; ++i) r += x[i] * y[2 * i];
    return r;
}

void affine_f(float* y, const float* x, float a, float b, int64_t n) {
    __m256 va = _mm256_set1_ps(a), vb = _mm256_set1_ps(b);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vb));
    for (; i < n; ++i) y[i] = a * x[i] + b;
}

void relu_fwd_f(float* y, const float* x, int64_t n) {
    __m256 z = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), z));
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd_f(float* dx, const float* dy, const float* x, int64_t n) {
    __m256 z = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
        __m256 add = _mm256_and_ps(_mm256_loadu_ps(dy + i), mask);
        _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), add));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0f) dx[i] += dy[i];
}

float sum_f(const float* x, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float r = hsum(acc);
    for (; i < n; ++i) r += x[i];
    return r;
}

float sumsq_centered_f(const float* x, float mean, int64_t n) {
    __m256 vm = _mm256_set1_ps(mean);
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), vm);
        acc = _mm256_fmadd_ps(d, d, acc);
    }
    float r = hsum(acc);
    for (; i < n; ++i) {
        float d = x[i] - mean;
        r += d * d;
    }
    return r;
}

void sgd_update_f(float* w, float* v, const float* g, float mu, float lambda, float lr, int64_t n) {
    __m256 vmu = _mm256_set1_ps(mu), vlam = _mm256_set1_ps(lambda), vlr = _mm256_set1_ps(lr);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vw = _mm256_loadu_ps(w + i);
        __m256 vv = _mm256_loadu_ps(v + i);
        vv = _mm256_fmadd_ps(vmu, vv, _mm256_fmadd_ps(vlam, vw, _mm256_loadu_ps(g + i)));
        _mm256_storeu_ps(v + i, vv);
        _mm256_storeu_ps(w + i, _mm256_fnmadd_ps(vlr, vv, vw));
    }
    for (; i < n; ++i) {
        v[i] = mu * v[i] + g[i] + lambda * w[i];
        w[i] -= lr * v[i];
    }
}

// ---- double ---------------------------------------------------------------

void axpy_d(double* y, const double* x, double a, int64_t n) {
    __m256d va = _mm256_set1_pd(a);
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_in_s2_d(double* y, const double* x, double a, int64_t n) {
    __m256d va = _mm256_set1_pd(a);
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d ev = even_lanes(_mm256_loadu_pd(x + 2 * i), _mm256_loadu_pd(x + 2 * i + 4));
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, ev, _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += a * x[2 * i];
}

void axpy_out_s2_d(double* y, const double* x, double a, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[2 * i] += a * x[i];
}

double dot_d(const double* x, const double* y, int64_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double dot_in_s2_d(const double* x, const double* y, int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d ev = even_lanes(_mm256_loadu_pd(y + 2 * i), _mm256_loadu_pd(y + 2 * i + 4));
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), ev, acc);
    }
    double r = hsum(acc);
    for (; i < n; ++i) r += x[i] * y[2 * i];
    return r;
}

void affine_d(double* y, const double* x, double a, double b, int64_t n) {
    __m256d va = _mm256_set1_pd(a), vb = _mm256_set1_pd(b);
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vb));
    for (; i < n; ++i) y[i] = a * x[i] + b;
}

void relu_fwd_d(double* y, const double* x, int64_t n) {
    __m256d z = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), z));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_d(double* dx, const double* dy, const double* x, int64_t n) {
    __m256d z = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
        __m256d add = _mm256_and_pd(_mm256_loadu_pd(dy + i), mask);
        _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), add));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}

double sum_d(const double* x, int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double r = hsum(acc);
    for (; i < n; ++i) r += x[i];
    return r;
}

double sumsq_centered_d(const double* x, double mean, int64_t n) {
    __m256d vm = _mm256_set1_pd(mean);
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), vm);
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double r = hsum(acc);
    for (; i < n; ++i) {
        double d = x[i] - mean;
        r += d * d;
    }
    return r;
}

void sgd_update_d(double* w, double* v, const double* g, double mu, double lambda, double lr, int64_t n) {
    __m256d vmu = _mm256_set1_pd(mu), vlam = _mm256_set1_pd(lambda), vlr = _mm256_set1_pd(lr);
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vw = _mm256_loadu_pd(w + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        vv = _mm256_fmadd_pd(vmu, vv, _mm256_fmadd_pd(vlam, vw, _mm256_loadu_pd(g + i)));
        _mm256_storeu_pd(v + i, vv);
        _mm256_storeu_pd(w + i, _mm256_fnmadd_pd(vlr, vv, vw));
    }
    for (; i < n; ++i) {
        v[i] = mu * v[i] + g[i] + lambda * w[i];
        w[i] -= lr * v[i];
    }
}

}  // namespace avx2

extern const Table<float> kAvx2TableF;
extern const Table<double> kAvx2TableD;

const Table<float> kAvx2TableF = {
    avx2::axpy_f,   avx2::axpy_in_s2_f, avx2::axpy_out_s2_f, avx2::dot_f,
    avx2::dot_in_s2_f, avx2::affine_f,  avx2::relu_fwd_f,    avx2::relu_bwd_f,
    avx2::sum_f,    avx2::sumsq_centered_f, avx2::sgd_update_f, "avx2"};

const Table<double> kAvx2TableD = {
    avx2::axpy_d,   avx2::axpy_in_s2_d, avx2::axpy_out_s2_d, avx2::dot_d,
    avx2::dot_in_s2_d, avx2::affine_d,  avx2::relu_fwd_d,    avx2::relu_bwd_d,
    avx2::sum_d,    avx2::sumsq_centered_d, avx2::sgd_update_d, "avx2"};

}  // namespace gssd::kernels

#endif  // x86_64
