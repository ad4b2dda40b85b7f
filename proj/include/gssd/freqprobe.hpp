#pragma once

#include <algorithm>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gssd/datasets.hpp"
#include "gssd/fft.hpp"
#include "gssd/parallel.hpp"
#include "gssd/tensor.hpp"

namespace gssd::freq {

enum class PassType { Low, High };

// Hard spectral mask in the centered spectrum. Low keeps distance <= radius
// from DC, high keeps distance > radius, so equal-radius masks partition the
// spectrum exactly.
struct IdealFilter {
    double radius = 0.0;
    PassType pass = PassType::Low;

    bool keeps(double dist_sq) const {
        const double r2 = radius * radius;
        return pass == PassType::Low ? dist_sq <= r2 : dist_sq > r2;
    }
};

// Centered 2-D spectrum of a (N, C, H, W) tensor; DC sits at (h/2, w/2) of
// every plane. Bins are always complex double regardless of the image type.
struct Spectrum {
    Shape shape;
    std::vector<cplx> bins;
};

double max_bin_distance(int64_t h, int64_t w);

namespace detail {

// Frequency offset of a standard-layout bin index relative to DC, matching
// the centered convention (DC maps to index n/2 after the shift).
inline int64_t freq_offset(int64_t k, int64_t n) {
    const int64_t c = (k + n / 2) % n;
    return c - n / 2;
}

template <class T>
void plane_fft(const T* src, cplx* dst, int64_t H, int64_t W, const Fft1d& rowp, const Fft1d& colp) {
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) dst[y * W + x] = cplx(static_cast<double>(src[y * W + x]), 0.0);
        rowp.forward(dst + y * W);
    }
    std::vector<cplx> col(static_cast<size_t>(H));
    for (int64_t x = 0; x < W; ++x) {
        for (int64_t y = 0; y < H; ++y) col[static_cast<size_t>(y)] = dst[y * W + x];
        colp.forward(col.data());
        for (int64_t y = 0; y < H; ++y) dst[y * W + x] = col[static_cast<size_t>(y)];
    }
}

// Applies the filter mask to a standard-layout spectrum copy, inverse
// transforms, and writes the real part scaled by 1/(H*W). Returns the largest
// imaginary residue (before scaling by 1/(H*W) it would grow with H*W; the
// returned value is post-scale).
template <class T>
double plane_masked_ifft(const cplx* spec, T* out, int64_t H, int64_t W, const Fft1d& rowp,
                         const Fft1d& colp, const IdealFilter& filter) {
    std::vector<cplx> buf(static_cast<size_t>(H * W));
    for (int64_t y = 0; y < H; ++y) {
        const int64_t dy = freq_offset(y, H);
        for (int64_t x = 0; x < W; ++x) {
            const int64_t dx = freq_offset(x, W);
            const double d2 = static_cast<double>(dy * dy + dx * dx);
            buf[static_cast<size_t>(y * W + x)] = filter.keeps(d2) ? spec[y * W + x] : cplx(0, 0);
        }
    }
    std::vector<cplx> col(static_cast<size_t>(H));
    for (int64_t x = 0; x < W; ++x) {
        for (int64_t y = 0; y < H; ++y) col[static_cast<size_t>(y)] = buf[static_cast<size_t>(y * W + x)];
        colp.inverse(col.data());
        for (int64_t y = 0; y < H; ++y) buf[static_cast<size_t>(y * W + x)] = col[static_cast<size_t>(y)];
    }
    const double scale = 1.0 / static_cast<double>(H * W);
    double imax = 0;
    for (int64_t y = 0; y < H; ++y) {
        rowp.inverse(buf.data() + y * W);
        for (int64_t x = 0; x < W; ++x) {
            const cplx v = buf[static_cast<size_t>(y * W + x)] * scale;
            imax = std::max(imax, std::abs(v.imag()));
            out[y * W + x] = static_cast<T>(v.real());
        }
    }
    return imax;
}

}  // namespace detail

template <class T>
Spectrum dft2(const Tensor<T>& image) {
    const Shape s = image.shape();
    Spectrum spec;
    spec.shape = s;
    spec.bins.resize(static_cast<size_t>(s.numel()));
    auto rowp = fft_plan(s.w);
    auto colp = fft_plan(s.h);
    const int64_t P = s.plane();
    parallel_for(s.n * s.c, [&](int64_t p) {
        std::vector<cplx> std_layout(static_cast<size_t>(P));
        detail::plane_fft(image.data() + p * P, std_layout.data(), s.h, s.w, *rowp, *colp);
        cplx* dst = spec.bins.data() + p * P;
        for (int64_t ky = 0; ky < s.h; ++ky) {
            const int64_t cy = (ky + s.h / 2) % s.h;
            for (int64_t kx = 0; kx < s.w; ++kx) {
                const int64_t cx = (kx + s.w / 2) % s.w;
                dst[cy * s.w + cx] = std_layout[static_cast<size_t>(ky * s.w + kx)];
            }
        }
    });
    return spec;
}

template <class T = float>
Tensor<T> idft2(const Spectrum& spec) {
    const Shape s = spec.shape;
    Tensor<T> out(s);
    auto rowp = fft_plan(s.w);
    auto colp = fft_plan(s.h);
    const int64_t P = s.plane();
    const double scale = 1.0 / static_cast<double>(P);
    std::vector<double> worst(static_cast<size_t>(s.n * s.c), 0.0);
    parallel_for(s.n * s.c, [&](int64_t p) {
        std::vector<cplx> buf(static_cast<size_t>(P));
        const cplx* src = spec.bins.data() + p * P;
        for (int64_t ky = 0; ky < s.h; ++ky) {
            const int64_t cy = (ky + s.h / 2) % s.h;
            for (int64_t kx = 0; kx < s.w; ++kx) {
                const int64_t cx = (kx + s.w / 2) % s.w;
                buf[static_cast<size_t>(ky * s.w + kx)] = src[cy * s.w + cx];
            }
        }
        std::vector<cplx> col(static_cast<size_t>(s.h));
        for (int64_t x = 0; x < s.w; ++x) {
            for (int64_t y = 0; y < s.h; ++y) col[static_cast<size_t>(y)] = buf[static_cast<size_t>(y * s.w + x)];
            colp->inverse(col.data());
            for (int64_t y = 0; y < s.h; ++y) buf[static_cast<size_t>(y * s.w + x)] = col[static_cast<size_t>(y)];
        }
        double imax = 0;
        T* dst = out.data() + p * P;
        for (int64_t y = 0; y < s.h; ++y) {
            rowp->inverse(buf.data() + y * s.w);
            for (int64_t x = 0; x < s.w; ++x) {
                const cplx v = buf[static_cast<size_t>(y * s.w + x)] * scale;
                imax = std::max(imax, std::abs(v.imag()));
                dst[y * s.w + x] = static_cast<T>(v.real());
            }
        }
        worst[static_cast<size_t>(p)] = imax;
    });
    for (double v : worst)
        if (!(v < 1e-8))
            throw std::runtime_error("idft2: imaginary residue " + std::to_string(v) +
                                     " exceeds 1e-8; spectrum is not conjugate-symmetric");
    return out;
}

// Per-channel ideal filtering on the raw pixel values. A low-pass whose
// radius covers the whole spectrum short-circuits to the identity.
template <class T>
Tensor<T> apply_filter(const Tensor<T>& image, const IdealFilter& filter) {
    if (filter.radius < 0) throw std::invalid_argument("apply_filter: radius must be >= 0");
    const Shape s = image.shape();
    if (filter.pass == PassType::Low && filter.radius >= max_bin_distance(s.h, s.w))
        return image.clone_detached();
    Tensor<T> out(s);
    auto rowp = fft_plan(s.w);
    auto colp = fft_plan(s.h);
    const int64_t P = s.plane();
    parallel_for(s.n * s.c, [&](int64_t p) {
        std::vector<cplx> spec(static_cast<size_t>(P));
        detail::plane_fft(image.data() + p * P, spec.data(), s.h, s.w, *rowp, *colp);
        detail::plane_masked_ifft(spec.data(), out.data() + p * P, s.h, s.w, *rowp, *colp, filter);
    });
    return out;
}

enum class FrequencyBand { UltraLow, Low, Medium, High };

// The 7/28/56 LPF-radius thresholds are defined at a 224x224 reference and
// rescale linearly with the image side.
FrequencyBand band_of(double radius, int64_t image_side);
std::string band_name(FrequencyBand b);

// Bilinear upscale by `factor` followed by a center crop back to the input
// extents. factor == 1 is the identity.
Tensor<float> rescale_and_crop(const Tensor<float>& image, double factor);

// ---------------------------------------------------------------------------
// sensitivity curves
// ---------------------------------------------------------------------------

enum class Level { Overall, Class, Sample };

struct Classifier {
    virtual ~Classifier() = default;
    // Argmax class labels for a batch of normalized images.
    virtual std::vector<int> predict(const Tensor<float>& normalized_images) const = 0;
};

struct CurvePoint {
    double radius = 0;
    int64_t n_correct = 0;
    int64_t n_total = 0;

    double accuracy() const {
        return n_total == 0 ? 0.0 : static_cast<double>(n_correct) / static_cast<double>(n_total);
    }
};

struct SensitivityCurve {
    Level level = Level::Overall;
    int class_id = -1;       // set for Level::Class
    int64_t sample_id = -1;  // set for Level::Sample
    PassType pass = PassType::Low;
    std::vector<CurvePoint> points;
};

struct PredictionRecord {
    double radius;
    int64_t sample_id;
    int label;
    int predicted;
};

struct SweepOptions {
    int64_t batch_size = 256;
    std::vector<PredictionRecord>* prediction_log = nullptr;
};

// Filters every image at every radius, classifies, and aggregates hit counts
// at the requested level. Counts are integers and the aggregation is an
// order-independent sum, so serial and parallel sweeps agree exactly.
std::vector<SensitivityCurve> sensitivity_sweep(const Classifier& model, const data::Dataset& dataset,
                                                const std::vector<double>& radii, PassType pass,
                                                Level level, const SweepOptions& options = {});

// Smallest radius (linearly interpolated between sweep points) at which the
// curve reaches half of its accuracy at the largest swept radius. Undefined
// (nullopt) for empty curves.
std::optional<double> half_max_radius(const SensitivityCurve& curve);

// Curve CSV contract: header + one row per point, empty strings for
// inapplicable ids.
void write_curves_csv(std::ostream& os, const std::vector<SensitivityCurve>& curves);

// Minimal line-plot SVG (content not contract-bound).
void write_curve_svg(std::ostream& os, const SensitivityCurve& curve);

std::string level_name(Level level);
std::string pass_name(PassType pass);

}  // namespace gssd::freq
