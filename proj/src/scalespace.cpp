#include "gssd/scalespace.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gssd::scalespace {

int64_t auto_radius(double sigma) { return static_cast<int64_t>(std::ceil(3.0 * sigma)); }

namespace {

// 1-D factor of the separable Gaussian derivative, built with exact mirror
// parity (even for order 0 and 2, odd for order 1).
std::vector<double> factor_profile(double sigma, int order, int64_t radius) {
    std::vector<double> f(static_cast<size_t>(2 * radius + 1));
    const double s2 = sigma * sigma;
    for (int64_t t = 0; t <= radius; ++t) {
        const double g = std::exp(-static_cast<double>(t * t) / (2.0 * s2));
        double v = g;
        if (order == 1) v = -static_cast<double>(t) / s2 * g;
        if (order == 2) v = (static_cast<double>(t * t) - s2) / (s2 * s2) * g;
        f[static_cast<size_t>(radius + t)] = v;
        f[static_cast<size_t>(radius - t)] = order == 1 ? -v : v;
    }
    return f;
}

int64_t resolve_radius(double sigma, std::optional<int64_t> radius) {
    if (!radius.has_value()) return auto_radius(sigma);
    if (*radius < 1) throw std::invalid_argument("kernel radius must be >= 1, got " + std::to_string(*radius));
    return *radius;
}

}  // namespace

std::vector<double> gaussian_profile_1d(double sigma, std::optional<int64_t> radius) {
    if (sigma <= 0) throw std::invalid_argument("gaussian kernel: sigma must be > 0, got " + std::to_string(sigma));
    const int64_t r = resolve_radius(sigma, radius);
    std::vector<double> f = factor_profile(sigma, 0, r);
    double total = 0;
    for (double v : f) total += v;
    for (double& v : f) v /= total;
    return f;
}

GaussianKernel gaussian_kernel(double sigma, std::optional<int64_t> radius) {
    if (sigma <= 0) throw std::invalid_argument("gaussian kernel: sigma must be > 0, got " + std::to_string(sigma));
    GaussianKernel k;
    k.sigma = sigma;
    k.radius = resolve_radius(sigma, radius);
    const int64_t side = k.side();
    const std::vector<double> f = factor_profile(sigma, 0, k.radius);
    k.weights.resize(static_cast<size_t>(side * side));
    double total = 0;
    for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x) {
            const double v = f[static_cast<size_t>(y)] * f[static_cast<size_t>(x)];
            k.weights[static_cast<size_t>(y * side + x)] = v;
            total += v;
        }
    for (double& v : k.weights) v /= total;
    return k;
}

DerivativeOperator derivative_kernel(double sigma, int m, int n, std::optional<int64_t> radius) {
    if (sigma <= 0)
        throw std::invalid_argument("derivative kernel: sigma must be > 0, got " + std::to_string(sigma));
    if (m < 0 || n < 0 || m + n < 1 || m + n > 2)
        throw std::invalid_argument("derivative kernel: unsupported order (" + std::to_string(m) + "," +
                                    std::to_string(n) + "); need 1 <= m+n <= 2");
    DerivativeOperator op;
    op.sigma = sigma;
    op.m = m;
    op.n = n;
    op.radius = resolve_radius(sigma, radius);
    const int64_t r = op.radius;
    const int64_t side = op.side();
    const std::vector<double> fx = factor_profile(sigma, m, r);
    const std::vector<double> fy = factor_profile(sigma, n, r);
    const double norm2d = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
    op.weights.resize(static_cast<size_t>(side * side));
    for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x)
            op.weights[static_cast<size_t>(y * side + x)] =
                fy[static_cast<size_t>(y)] * fx[static_cast<size_t>(x)] * norm2d;

    // Zero-sum correction. Odd-parity kernels cancel pairwise by construction;
    // mean subtraction is only needed (and only preserves parity) for the pure
    // second-order kernels. Their first moments are zero by symmetry.
    if (m % 2 == 0 && n % 2 == 0) {
        double mean = 0;
        for (double v : op.weights) mean += v;
        mean /= static_cast<double>(op.weights.size());
        for (double& v : op.weights) v -= mean;
    }

    // Scale so the convolution response to the matching monomial is exact.
    double resp = 0;
    for (int64_t y = -r; y <= r; ++y)
        for (int64_t x = -r; x <= r; ++x) {
            const double w = op.weights[static_cast<size_t>((y + r) * side + (x + r))];
            if (m == 1 && n == 0) resp += w * static_cast<double>(-x);
            if (m == 0 && n == 1) resp += w * static_cast<double>(-y);
            if (m == 2 && n == 0) resp += w * static_cast<double>(x * x) / 2.0;
            if (m == 0 && n == 2) resp += w * static_cast<double>(y * y) / 2.0;
            if (m == 1 && n == 1) resp += w * static_cast<double>(x * y);
        }
    for (double& v : op.weights) v /= resp;
    return op;
}

}  // namespace gssd::scalespace
