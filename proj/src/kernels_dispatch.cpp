#include "gssd/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace gssd::kernels {

#if defined(__x86_64__) || defined(_M_X64)
extern const Table<float> kAvx2TableF;
extern const Table<double> kAvx2TableD;

bool cpu_has_avx2() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

template <>
const Table<float>* avx2_table<float>() {
    return cpu_has_avx2() ? &kAvx2TableF : nullptr;
}
template <>
const Table<double>* avx2_table<double>() {
    return cpu_has_avx2() ? &kAvx2TableD : nullptr;
}
#else
bool cpu_has_avx2() { return false; }

template <>
const Table<float>* avx2_table<float>() { return nullptr; }
template <>
const Table<double>* avx2_table<double>() { return nullptr; }
#endif

namespace {

enum class Mode { Auto, Scalar, Avx2 };

Mode requested_mode() {
    const char* env = std::getenv("GSSD_SIMD");
    if (env == nullptr) return Mode::Auto;
    if (std::strcmp(env, "scalar") == 0) return Mode::Scalar;
    if (std::strcmp(env, "avx2") == 0) return Mode::Avx2;
    return Mode::Auto;
}

template <class T>
const Table<T>& pick() {
    switch (requested_mode()) {
        case Mode::Scalar:
            return scalar_table<T>();
        case Mode::Avx2:
            if (const Table<T>* t = avx2_table<T>()) return *t;
            return scalar_table<T>();
        case Mode::Auto:
        default:
            if (const Table<T>* t = avx2_table<T>()) return *t;
            return scalar_table<T>();
    }
}

}  // namespace

template <>
const Table<float>& table<float>() {
    static const Table<float>& t = pick<float>();
    return t;
}

template <>
const Table<double>& table<double>() {
    static const Table<double>& t = pick<double>();
    return t;
}

}  // namespace gssd::kernels
