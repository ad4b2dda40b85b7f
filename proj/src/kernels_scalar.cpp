#include "gssd/kernels.hpp"

// Reference kernels. Plain loops, one accumulator; these define the semantics
// the SIMD variants are tested against.

namespace gssd::kernels {
namespace scalar {

template <class T>
void axpy(T* y, const T* x, T a, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void axpy_in_s2(T* y, const T* x, T a, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[2 * i];
}

template <class T>
void axpy_out_s2(T* y, const T* x, T a, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[2 * i] += a * x[i];
}

template <class T>
T dot(const T* x, const T* y, int64_t n) {
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <class T>
T dot_in_s2(const T* x, const T* y, int64_t n) {
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += x[i] * y[2 * i];
    return acc;
}

template <class T>
void affine(T* y, const T* x, T a, T b, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a * x[i] + b;
}

template <class T>
void relu_fwd(T* y, const T* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_bwd(T* dx, const T* dy, const T* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i)
        if (x[i] > T(0)) dx[i] += dy[i];
}

template <class T>
T sum(const T* x, int64_t n) {
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <class T>
T sumsq_centered(const T* x, T mean, int64_t n) {
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        T d = x[i] - mean;
        acc += d * d;
    }
    return acc;
}

template <class T>
void sgd_update(T* w, T* v, const T* g, T mu, T lambda, T lr, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        v[i] = mu * v[i] + g[i] + lambda * w[i];
        w[i] -= lr * v[i];
    }
}

template <class T>
constexpr Table<T> make_table() {
    return Table<T>{axpy<T>,     axpy_in_s2<T>, axpy_out_s2<T>, dot<T>,
                    dot_in_s2<T>, affine<T>,     relu_fwd<T>,    relu_bwd<T>,
                    sum<T>,      sumsq_centered<T>, sgd_update<T>, "scalar"};
}

}  // namespace scalar

template <>
const Table<float>& scalar_table<float>() {
    static constexpr Table<float> t = scalar::make_table<float>();
    return t;
}

template <>
const Table<double>& scalar_table<double>() {
    static constexpr Table<double> t = scalar::make_table<double>();
    return t;
}

}  // namespace gssd::kernels
