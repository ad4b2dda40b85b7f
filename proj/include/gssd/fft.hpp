#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

namespace gssd::freq {

using cplx = std::complex<double>;

// 1-D DFT of a fixed length. Power-of-two lengths run an iterative radix-2
// transform; everything else goes through Bluestein's chirp-z reduction to a
// padded power of two. Forward/inverse are unnormalized (inverse-then-forward
// scales by n). Plans are immutable after construction and safe to share
// across threads.
class Fft1d {
public:
    explicit Fft1d(int64_t n);

    int64_t size() const { return n_; }
    void forward(cplx* a) const;
    void inverse(cplx* a) const;

private:
    void radix2(cplx* a, bool inv) const;

    int64_t n_;
    bool pow2_;
    std::vector<int64_t> bitrev_;  // for the internal power-of-two size
    std::vector<cplx> twiddle_;    // exp(-2 pi i k / m), k < m/2
    // Bluestein state
    int64_t m_ = 0;
    std::vector<cplx> chirp_;       // exp(-i pi j^2 / n)
    std::vector<cplx> chirp_fft_;   // FFT_m of the conjugate-chirp filter
};

// Shared plan cache.
std::shared_ptr<const Fft1d> fft_plan(int64_t n);

}  // namespace gssd::freq
