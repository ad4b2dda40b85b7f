#include "gssd/fft.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace gssd::freq {

namespace {
bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

int64_t next_pow2(int64_t n) {
    int64_t m = 1;
    while (m < n) m <<= 1;
    return m;
}
}  // namespace

Fft1d::Fft1d(int64_t n) : n_(n), pow2_(is_pow2(n)) {
    if (n < 1) throw std::invalid_argument("fft: length must be >= 1");
    const int64_t m = pow2_ ? n_ : next_pow2(2 * n_ - 1);
    m_ = m;
    bitrev_.resize(static_cast<size_t>(m));
    for (int64_t i = 0, j = 0; i < m; ++i) {
        bitrev_[static_cast<size_t>(i)] = j;
        int64_t bit = m >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
    }
    twiddle_.resize(static_cast<size_t>(m / 2));
    for (int64_t k = 0; k < m / 2; ++k) {
        const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(m);
        twiddle_[static_cast<size_t>(k)] = cplx(std::cos(ang), std::sin(ang));
    }
    if (!pow2_) {
        chirp_.resize(static_cast<size_t>(n_));
        std::vector<cplx> filt(static_cast<size_t>(m), cplx(0, 0));
        for (int64_t j = 0; j < n_; ++j) {
            // angle = -pi j^2 / n, reduced mod 2n to keep the argument small
            const int64_t jsq = (j * j) % (2 * n_);
            const double ang = -std::numbers::pi * static_cast<double>(jsq) / static_cast<double>(n_);
            chirp_[static_cast<size_t>(j)] = cplx(std::cos(ang), std::sin(ang));
            const cplx b = std::conj(chirp_[static_cast<size_t>(j)]);
            filt[static_cast<size_t>(j)] = b;
            if (j > 0) filt[static_cast<size_t>(m - j)] = b;
        }
        radix2(filt.data(), false);
        chirp_fft_ = std::move(filt);
    }
}

void Fft1d::radix2(cplx* a, bool inv) const {
    const int64_t m = m_;
    for (int64_t i = 0; i < m; ++i) {
        const int64_t j = bitrev_[static_cast<size_t>(i)];
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int64_t len = 2; len <= m; len <<= 1) {
        const int64_t step = m / len;
        for (int64_t i = 0; i < m; i += len) {
            for (int64_t k = 0; k < len / 2; ++k) {
                cplx w = twiddle_[static_cast<size_t>(k * step)];
                if (inv) w = std::conj(w);
                const cplx u = a[i + k];
                const cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

void Fft1d::forward(cplx* a) const {
    if (pow2_) {
        radix2(a, false);
        return;
    }
    std::vector<cplx> buf(static_cast<size_t>(m_), cplx(0, 0));
    for (int64_t j = 0; j < n_; ++j) buf[static_cast<size_t>(j)] = a[j] * chirp_[static_cast<size_t>(j)];
    radix2(buf.data(), false);
    for (int64_t j = 0; j < m_; ++j) buf[static_cast<size_t>(j)] *= chirp_fft_[static_cast<size_t>(j)];
    radix2(buf.data(), true);
    const double scale = 1.0 / static_cast<double>(m_);
    for (int64_t k = 0; k < n_; ++k) a[k] = buf[static_cast<size_t>(k)] * scale * chirp_[static_cast<size_t>(k)];
}

void Fft1d::inverse(cplx* a) const {
    if (pow2_) {
        radix2(a, true);
        return;
    }
    for (int64_t j = 0; j < n_; ++j) a[j] = std::conj(a[j]);
    forward(a);
    for (int64_t j = 0; j < n_; ++j) a[j] = std::conj(a[j]);
}

std::shared_ptr<const Fft1d> fft_plan(int64_t n) {
    static std::mutex mu;
    static std::map<int64_t, std::shared_ptr<const Fft1d>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    auto plan = std::make_shared<const Fft1d>(n);
    cache.emplace(n, plan);
    return plan;
}

}  // namespace gssd::freq
