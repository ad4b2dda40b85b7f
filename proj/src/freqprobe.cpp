#include "gssd/freqprobe.hpp"

#include <cmath>
#include <cstdio>
#include <mutex>
#include <stdexcept>

namespace gssd::freq {

double max_bin_distance(int64_t h, int64_t w) {
    return std::hypot(static_cast<double>(h / 2), static_cast<double>(w / 2));
}

FrequencyBand band_of(double radius, int64_t image_side) {
    if (radius < 0) throw std::invalid_argument("band_of: radius must be >= 0");
    const double scale = static_cast<double>(image_side) / 224.0;
    if (radius < 7.0 * scale) return FrequencyBand::UltraLow;
    if (radius < 28.0 * scale) return FrequencyBand::Low;
    if (radius < 56.0 * scale) return FrequencyBand::Medium;
    return FrequencyBand::High;
}

std::string band_name(FrequencyBand b) {
    switch (b) {
        case FrequencyBand::UltraLow: return "ultra-low";
        case FrequencyBand::Low: return "low";
        case FrequencyBand::Medium: return "medium";
        case FrequencyBand::High: return "high";
    }
    return "?";
}

Tensor<float> rescale_and_crop(const Tensor<float>& image, double factor) {
    if (factor < 1.0)
        throw std::invalid_argument("rescale_and_crop: factor must be >= 1, got " + std::to_string(factor));
    if (factor == 1.0) return image;
    const Shape s = image.shape();
    const int64_t UH = std::llround(static_cast<double>(s.h) * factor);
    const int64_t UW = std::llround(static_cast<double>(s.w) * factor);
    const int64_t oy = (UH - s.h) / 2;
    const int64_t ox = (UW - s.w) / 2;
    Tensor<float> out(s);
    const int64_t P = s.plane();
    parallel_for(s.n * s.c, [&](int64_t p) {
        const float* src = image.data() + p * P;
        float* dst = out.data() + p * P;
        for (int64_t y = 0; y < s.h; ++y) {
            const double sy = (static_cast<double>(y + oy) + 0.5) / factor - 0.5;
            const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sy)), 0, s.h - 1);
            const int64_t y1 = std::min<int64_t>(y0 + 1, s.h - 1);
            const double fy = std::clamp(sy - static_cast<double>(y0), 0.0, 1.0);
            for (int64_t x = 0; x < s.w; ++x) {
                const double sx = (static_cast<double>(x + ox) + 0.5) / factor - 0.5;
                const int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sx)), 0, s.w - 1);
                const int64_t x1 = std::min<int64_t>(x0 + 1, s.w - 1);
                const double fx = std::clamp(sx - static_cast<double>(x0), 0.0, 1.0);
                const double v = (1 - fy) * ((1 - fx) * src[y0 * s.w + x0] + fx * src[y0 * s.w + x1]) +
                                 fy * ((1 - fx) * src[y1 * s.w + x0] + fx * src[y1 * s.w + x1]);
                dst[y * s.w + x] = static_cast<float>(v);
            }
        }
    });
    return out;
}

std::vector<SensitivityCurve> sensitivity_sweep(const Classifier& model, const data::Dataset& dataset,
                                                const std::vector<double>& radii, PassType pass,
                                                Level level, const SweepOptions& options) {
    const int64_t N = dataset.size();
    if (N == 0) throw std::invalid_argument("sensitivity_sweep: empty dataset");
    if (radii.empty()) throw std::invalid_argument("sensitivity_sweep: empty radii");
    for (size_t i = 1; i < radii.size(); ++i)
        if (radii[i] <= radii[i - 1])
            throw std::invalid_argument("sensitivity_sweep: radii must be strictly increasing");

    const Shape s = dataset.images.shape();
    const int64_t R = static_cast<int64_t>(radii.size());
    const int64_t E = level == Level::Overall ? 1 : level == Level::Class ? dataset.num_classes : N;

    std::vector<std::vector<int64_t>> correct(static_cast<size_t>(R),
                                              std::vector<int64_t>(static_cast<size_t>(E), 0));
    std::vector<int64_t> totals(static_cast<size_t>(E), 0);
    for (int64_t i = 0; i < N; ++i) {
        const int64_t e = level == Level::Overall ? 0
                          : level == Level::Class ? dataset.labels[static_cast<size_t>(i)]
                                                  : i;
        ++totals[static_cast<size_t>(e)];
    }

    auto rowp = fft_plan(s.w);
    auto colp = fft_plan(s.h);
    const int64_t P = s.plane();
    const double maxdist = max_bin_distance(s.h, s.w);
    const int64_t batch = std::max<int64_t>(1, options.batch_size);
    const int64_t nbatches = (N + batch - 1) / batch;

    std::mutex merge_mu;

    parallel_for_chunks(nbatches, [&](int64_t b0, int64_t b1) {
        std::vector<std::vector<int64_t>> local(static_cast<size_t>(R),
                                                std::vector<int64_t>(static_cast<size_t>(E), 0));
        std::vector<PredictionRecord> local_log;
        for (int64_t bi = b0; bi < b1; ++bi) {
            const int64_t i0 = bi * batch;
            const int64_t i1 = std::min(N, i0 + batch);
            const int64_t B = i1 - i0;
            // Forward spectra once per image; reused across radii.
            std::vector<cplx> spectra(static_cast<size_t>(B * s.c * P));
            for (int64_t j = 0; j < B * s.c; ++j)
                detail::plane_fft(dataset.images.data() + (i0 * s.c + j) * P, spectra.data() + j * P, s.h,
                                  s.w, *rowp, *colp);

            Tensor<float> filtered(Shape{B, s.c, s.h, s.w});
            for (int64_t ri = 0; ri < R; ++ri) {
                const IdealFilter filter{radii[static_cast<size_t>(ri)], pass};
                const bool identity = pass == PassType::Low && filter.radius >= maxdist;
                for (int64_t j = 0; j < B * s.c; ++j) {
                    float* dst = filtered.data() + j * P;
                    if (identity) {
                        const float* src = dataset.images.data() + (i0 * s.c + j) * P;
                        std::copy(src, src + P, dst);
                    } else {
                        detail::plane_masked_ifft(spectra.data() + j * P, dst, s.h, s.w, *rowp, *colp,
                                                  filter);
                    }
                }
                // Re-normalize before classification.
                for (int64_t j = 0; j < B; ++j)
                    for (int64_t c = 0; c < s.c; ++c) {
                        float* p = filtered.data() + (j * s.c + c) * P;
                        const float m = dataset.norm.mean[static_cast<size_t>(c)];
                        const float sd = dataset.norm.stddev[static_cast<size_t>(c)];
                        for (int64_t k = 0; k < P; ++k) p[k] = (p[k] - m) / sd;
                    }
                const std::vector<int> pred = model.predict(filtered);
                for (int64_t j = 0; j < B; ++j) {
                    const int label = dataset.labels[static_cast<size_t>(i0 + j)];
                    const int64_t e = level == Level::Overall ? 0 : level == Level::Class ? label : i0 + j;
                    if (pred[static_cast<size_t>(j)] == label)
                        ++local[static_cast<size_t>(ri)][static_cast<size_t>(e)];
                    if (options.prediction_log != nullptr)
                        local_log.push_back(
                            {radii[static_cast<size_t>(ri)], i0 + j, label, pred[static_cast<size_t>(j)]});
                }
            }
        }
        std::lock_guard<std::mutex> lock(merge_mu);
        for (int64_t ri = 0; ri < R; ++ri)
            for (int64_t e = 0; e < E; ++e)
                correct[static_cast<size_t>(ri)][static_cast<size_t>(e)] +=
                    local[static_cast<size_t>(ri)][static_cast<size_t>(e)];
        if (options.prediction_log != nullptr)
            options.prediction_log->insert(options.prediction_log->end(), local_log.begin(),
                                           local_log.end());
    });

    if (options.prediction_log != nullptr)
        std::sort(options.prediction_log->begin(), options.prediction_log->end(),
                  [](const PredictionRecord& a, const PredictionRecord& b) {
                      return std::tie(a.radius, a.sample_id) < std::tie(b.radius, b.sample_id);
                  });

    std::vector<SensitivityCurve> curves(static_cast<size_t>(E));
    for (int64_t e = 0; e < E; ++e) {
        SensitivityCurve& c = curves[static_cast<size_t>(e)];
        c.level = level;
        c.pass = pass;
        if (level == Level::Class) c.class_id = static_cast<int>(e);
        if (level == Level::Sample) c.sample_id = e;
        c.points.reserve(static_cast<size_t>(R));
        for (int64_t ri = 0; ri < R; ++ri)
            c.points.push_back({radii[static_cast<size_t>(ri)],
                                correct[static_cast<size_t>(ri)][static_cast<size_t>(e)],
                                totals[static_cast<size_t>(e)]});
    }
    return curves;
}

std::optional<double> half_max_radius(const SensitivityCurve& curve) {
    if (curve.points.empty() || curve.points.back().n_total == 0) return std::nullopt;
    const double target = 0.5 * curve.points.back().accuracy();
    if (curve.points.front().accuracy() >= target) return curve.points.front().radius;
    for (size_t i = 1; i < curve.points.size(); ++i) {
        const double a0 = curve.points[i - 1].accuracy();
        const double a1 = curve.points[i].accuracy();
        if (a1 >= target) {
            const double r0 = curve.points[i - 1].radius;
            const double r1 = curve.points[i].radius;
            return r0 + (target - a0) * (r1 - r0) / (a1 - a0);
        }
    }
    return std::nullopt;
}

std::string level_name(Level level) {
    switch (level) {
        case Level::Overall: return "overall";
        case Level::Class: return "class";
        case Level::Sample: return "sample";
    }
    return "?";
}

std::string pass_name(PassType pass) { return pass == PassType::Low ? "low" : "high"; }

void write_curves_csv(std::ostream& os, const std::vector<SensitivityCurve>& curves) {
    os << "level,class_id,sample_id,pass_type,radius,n_correct,n_total,accuracy\n";
    char buf[64];
    for (const auto& c : curves) {
        for (const auto& p : c.points) {
            os << level_name(c.level) << ",";
            if (c.class_id >= 0) os << c.class_id;
            os << ",";
            if (c.sample_id >= 0) os << c.sample_id;
            os << "," << pass_name(c.pass) << ",";
            std::snprintf(buf, sizeof(buf), "%.6g", p.radius);
            os << buf << "," << p.n_correct << "," << p.n_total << ",";
            std::snprintf(buf, sizeof(buf), "%.10g", p.accuracy());
            os << buf << "\n";
        }
    }
}

void write_curve_svg(std::ostream& os, const SensitivityCurve& curve) {
    const int W = 480, H = 320, ML = 48, MB = 36, MT = 16, MR = 16;
    double rmax = 1.0;
    for (const auto& p : curve.points) rmax = std::max(rmax, p.radius);
    auto px = [&](double r) { return ML + (W - ML - MR) * (r / rmax); };
    auto py = [&](double a) { return H - MB - (H - MB - MT) * a; };
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << ML << "\" y1=\"" << py(0) << "\" x2=\"" << W - MR << "\" y2=\"" << py(0)
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ML << "\" y1=\"" << py(0) << "\" x2=\"" << ML << "\" y2=\"" << MT
       << "\" stroke=\"black\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (const auto& p : curve.points) os << px(p.radius) << "," << py(p.accuracy()) << " ";
    os << "\"/>\n";
    os << "<text x=\"" << (W / 2) << "\" y=\"" << (H - 8) << "\" font-size=\"12\">radius</text>\n";
    os << "<text x=\"8\" y=\"" << (H / 2) << "\" font-size=\"12\">acc</text>\n";
    os << "</svg>\n";
}

}  // namespace gssd::freq
