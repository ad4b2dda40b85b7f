#pragma once

#include <optional>
#include <vector>

#include "gssd/ops.hpp"
#include "gssd/tensor.hpp"

namespace gssd::scalespace {

// Discrete 2-D Gaussian: sampled exp(-(x^2+y^2)/(2 sigma^2)) on the integer
// grid [-radius, radius]^2, renormalized to unit sum. Row-major, rows indexed
// by y.
struct GaussianKernel {
    double sigma = 1.0;
    int64_t radius = 3;
    std::vector<double> weights;

    int64_t side() const { return 2 * radius + 1; }
    double at(int64_t x, int64_t y) const {
        return weights[static_cast<size_t>((y + radius) * side() + (x + radius))];
    }
};

// Sampled partial derivative of the Gaussian, orders 1 <= m+n <= 2. Weights
// are mean-corrected to zero sum and scaled so the convolution response to
// the matching monomial is exact (x -> 1 for d/dx, x^2 -> 2 for d2/dx2,
// xy -> 1 for d2/dxdy); without that scaling the 3-sigma truncation leaves a
// ~0.5% gain error.
struct DerivativeOperator {
    double sigma = 1.0;
    int m = 0;
    int n = 0;
    int64_t radius = 3;
    std::vector<double> weights;

    int64_t side() const { return 2 * radius + 1; }
    double at(int64_t x, int64_t y) const {
        return weights[static_cast<size_t>((y + radius) * side() + (x + radius))];
    }
};

int64_t auto_radius(double sigma);  // ceil(3 sigma)

GaussianKernel gaussian_kernel(double sigma, std::optional<int64_t> radius = std::nullopt);
std::vector<double> gaussian_profile_1d(double sigma, std::optional<int64_t> radius = std::nullopt);
DerivativeOperator derivative_kernel(double sigma, int m, int n,
                                     std::optional<int64_t> radius = std::nullopt);

// Ordered family of progressively blurred images; base is the sigma = 0
// original and levels carry strictly increasing sigmas.
template <class T>
struct ScaleSpace {
    Tensor<T> base;
    std::vector<std::pair<double, Tensor<T>>> levels;
};

namespace detail {

// Same-size 2-D correlation of every (n, c) plane with a square grid kernel.
template <class T>
Tensor<T> correlate2d(const Tensor<T>& image, const std::vector<T>& grid, int64_t radius,
                      Padding pad) {
    const Shape xs = image.shape();
    Tensor<T> out(xs);
    const int64_t side = 2 * radius + 1;
    const T* X = image.data();
    T* Y = out.data();
    parallel_for(xs.n * xs.c, [&](int64_t p) {
        const T* xp = X + p * xs.plane();
        T* yp = Y + p * xs.plane();
        for (int64_t y = 0; y < xs.h; ++y) {
            for (int64_t x = 0; x < xs.w; ++x) {
                T acc = 0;
                for (int64_t ky = -radius; ky <= radius; ++ky) {
                    int64_t sy = y + ky;
                    if (sy < 0 || sy >= xs.h) {
                        if (pad == Padding::Zero) continue;
                        sy = std::clamp<int64_t>(sy, 0, xs.h - 1);
                    }
                    const T* krow = grid.data() + (ky + radius) * side;
                    const T* xrow = xp + sy * xs.w;
                    for (int64_t kx = -radius; kx <= radius; ++kx) {
                        int64_t sx = x + kx;
                        if (sx < 0 || sx >= xs.w) {
                            if (pad == Padding::Zero) continue;
                            sx = std::clamp<int64_t>(sx, 0, xs.w - 1);
                        }
                        acc += krow[kx + radius] * xrow[sx];
                    }
                }
                yp[y * xs.w + x] = acc;
            }
        }
    });
    return out;
}

template <class T>
std::vector<T> cast_weights(const std::vector<double>& w) {
    return std::vector<T>(w.begin(), w.end());
}

}  // namespace detail

// L(.,.;s): separable Gaussian blur; sigma = 0 is the identity.
template <class T>
Tensor<T> blur(const Tensor<T>& image, double sigma, Padding pad = Padding::Replicate,
               std::optional<int64_t> radius = std::nullopt) {
    if (sigma < 0) throw std::invalid_argument("blur: sigma must be >= 0, got " + std::to_string(sigma));
    if (sigma == 0.0) return image;
    const std::vector<T> k = detail::cast_weights<T>(gaussian_profile_1d(sigma, radius));
    return ops::separable_conv2d(image, k, pad);
}

// L_{x^m y^n}(.,.;s): true convolution with the sampled Gaussian derivative
// (the kernel is flipped before correlating, which matters for odd orders).
template <class T>
Tensor<T> derivative(const Tensor<T>& image, double sigma, int m, int n,
                     Padding pad = Padding::Replicate,
                     std::optional<int64_t> radius = std::nullopt) {
    const DerivativeOperator op = derivative_kernel(sigma, m, n, radius);
    std::vector<T> flipped(op.weights.size());
    for (size_t i = 0; i < op.weights.size(); ++i)
        flipped[i] = static_cast<T>(op.weights[op.weights.size() - 1 - i]);
    return detail::correlate2d(image, flipped, op.radius, pad);
}

// Incremental construction: level k is blurred from level k-1 with the
// semigroup increment sqrt(sigma_k^2 - sigma_{k-1}^2).
template <class T>
ScaleSpace<T> build_scale_space(const Tensor<T>& image, const std::vector<double>& sigmas,
                                Padding pad = Padding::Replicate) {
    for (size_t i = 0; i < sigmas.size(); ++i) {
        if (sigmas[i] <= 0)
            throw std::invalid_argument("build_scale_space: sigma must be > 0, got " +
                                        std::to_string(sigmas[i]));
        if (i > 0 && sigmas[i] <= sigmas[i - 1])
            throw std::invalid_argument("build_scale_space: sigmas must be strictly increasing (" +
                                        std::to_string(sigmas[i - 1]) + " then " +
                                        std::to_string(sigmas[i]) + ")");
    }
    ScaleSpace<T> ss;
    ss.base = image;
    Tensor<T> current = image;
    double prev = 0.0;
    for (double s : sigmas) {
        const double inc = std::sqrt(s * s - prev * prev);
        current = blur(current, inc, pad);
        ss.levels.emplace_back(s, current);
        prev = s;
    }
    return ss;
}

}  // namespace gssd::scalespace
