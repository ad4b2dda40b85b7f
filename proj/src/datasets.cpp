#include "gssd/datasets.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gssd/digest.hpp"
#include "gssd/errors.hpp"
#include "gssd/rng.hpp"

namespace gssd::data {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

uint32_t be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;
constexpr int64_t kCifarRecord = 2 + 3 * 32 * 32;

}  // namespace

Dataset load_mnist(const std::string& images_path, const std::string& labels_path) {
    const std::vector<uint8_t> ib = read_file(images_path);
    const std::vector<uint8_t> lb = read_file(labels_path);

    if (ib.size() < 16) throw DataError(images_path + ": truncated IDX header (" + std::to_string(ib.size()) + " bytes)");
    if (lb.size() < 8) throw DataError(labels_path + ": truncated IDX header (" + std::to_string(lb.size()) + " bytes)");
    const uint32_t im = be32(ib.data());
    const uint32_t lm = be32(lb.data());
    if (im != kIdxImagesMagic)
        throw DataError(images_path + ": image magic mismatch, expected 2051 (0x00000803), got " + std::to_string(im));
    if (lm != kIdxLabelsMagic)
        throw DataError(labels_path + ": label magic mismatch, expected 2049 (0x00000801), got " + std::to_string(lm));

    const int64_t n = be32(ib.data() + 4);
    const int64_t rows = be32(ib.data() + 8);
    const int64_t cols = be32(ib.data() + 12);
    const int64_t nl = be32(lb.data() + 4);
    if (n != nl)
        throw DataError("image/label count mismatch: " + std::to_string(n) + " images vs " +
                        std::to_string(nl) + " labels");
    if (static_cast<int64_t>(ib.size()) != 16 + n * rows * cols)
        throw DataError(images_path + ": truncated payload, expected " + std::to_string(16 + n * rows * cols) +
                        " bytes, got " + std::to_string(ib.size()));
    if (static_cast<int64_t>(lb.size()) != 8 + n)
        throw DataError(labels_path + ": truncated payload, expected " + std::to_string(8 + n) +
                        " bytes, got " + std::to_string(lb.size()));

    Dataset d;
    d.name = "mnist";
    d.num_classes = 10;
    d.images = Tensor<float>(Shape{n, 1, rows, cols});
    d.labels.resize(static_cast<size_t>(n));
    float* out = d.images.data();
    const uint8_t* px = ib.data() + 16;
    for (int64_t i = 0; i < n * rows * cols; ++i) out[i] = static_cast<float>(px[i]) / 255.0f;
    for (int64_t i = 0; i < n; ++i) {
        const int lab = lb[static_cast<size_t>(8 + i)];
        if (lab < 0 || lab > 9) throw DataError(labels_path + ": label " + std::to_string(lab) + " out of range");
        d.labels[static_cast<size_t>(i)] = lab;
    }
    d.source_digest = sha256_hex(ib) + "+" + sha256_hex(lb);
    return d;
}

Dataset load_cifar100(const std::string& path, const std::optional<std::vector<int>>& subset_classes) {
    const std::vector<uint8_t> bytes = read_file(path);
    if (bytes.size() % kCifarRecord != 0)
        throw DataError(path + ": size " + std::to_string(bytes.size()) + " is not a multiple of the " +
                        std::to_string(kCifarRecord) + "-byte record length");
    if (subset_classes.has_value() && subset_classes->empty())
        throw DataError("cifar100: empty class subset");

    std::vector<int> remap(100, -1);
    if (subset_classes.has_value()) {
        for (size_t i = 0; i < subset_classes->size(); ++i) {
            const int c = (*subset_classes)[i];
            if (c < 0 || c > 99) throw DataError("cifar100: subset class " + std::to_string(c) + " out of range");
            remap[static_cast<size_t>(c)] = static_cast<int>(i);
        }
    }

    const int64_t total = static_cast<int64_t>(bytes.size()) / kCifarRecord;
    std::vector<int64_t> keep;
    keep.reserve(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) {
        const int fine = bytes[static_cast<size_t>(i * kCifarRecord + 1)];
        if (!subset_classes.has_value() || remap[static_cast<size_t>(fine)] >= 0) keep.push_back(i);
    }

    Dataset d;
    d.name = "cifar100";
    d.num_classes = subset_classes.has_value() ? static_cast<int>(subset_classes->size()) : 100;
    const int64_t n = static_cast<int64_t>(keep.size());
    d.images = Tensor<float>(Shape{n, 3, 32, 32});
    d.labels.resize(static_cast<size_t>(n));
    float* out = d.images.data();
    for (int64_t j = 0; j < n; ++j) {
        const uint8_t* rec = bytes.data() + keep[static_cast<size_t>(j)] * kCifarRecord;
        const int fine = rec[1];
        d.labels[static_cast<size_t>(j)] = subset_classes.has_value() ? remap[static_cast<size_t>(fine)] : fine;
        for (int64_t k = 0; k < 3 * 32 * 32; ++k)
            out[j * 3 * 32 * 32 + k] = static_cast<float>(rec[2 + k]) / 255.0f;
    }
    d.source_digest = sha256_hex(bytes);
    return d;
}

Normalization compute_normalization(const Dataset& d) {
    const Shape s = d.images.shape();
    Normalization n;
    n.mean.assign(static_cast<size_t>(s.c), 0.0f);
    n.stddev.assign(static_cast<size_t>(s.c), 1.0f);
    const int64_t per = s.n * s.plane();
    for (int64_t c = 0; c < s.c; ++c) {
        double acc = 0;
        for (int64_t b = 0; b < s.n; ++b) {
            const float* p = d.images.data() + (b * s.c + c) * s.plane();
            for (int64_t i = 0; i < s.plane(); ++i) acc += p[i];
        }
        const double mean = acc / static_cast<double>(per);
        double sq = 0;
        for (int64_t b = 0; b < s.n; ++b) {
            const float* p = d.images.data() + (b * s.c + c) * s.plane();
            for (int64_t i = 0; i < s.plane(); ++i) {
                const double dd = p[i] - mean;
                sq += dd * dd;
            }
        }
        double sd = std::sqrt(sq / static_cast<double>(per));
        if (sd == 0.0) sd = 1.0;
        n.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
        n.stddev[static_cast<size_t>(c)] = static_cast<float>(sd);
    }
    return n;
}

Normalization read_stats_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open stats file " + path);
    Normalization n;
    std::string line;
    while (std::getline(f, line)) {
        std::istringstream is(line);
        std::string key;
        is >> key;
        std::vector<float>* dst = key == "mean" ? &n.mean : key == "std" ? &n.stddev : nullptr;
        if (dst == nullptr) continue;
        float v;
        while (is >> v) dst->push_back(v);
    }
    if (n.mean.empty() || n.mean.size() != n.stddev.size())
        throw DataError("malformed stats file " + path);
    return n;
}

void write_stats_file(const std::string& path, const Normalization& n) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write stats file " + path);
    f.precision(9);
    f << "mean";
    for (float v : n.mean) f << " " << v;
    f << "\nstd";
    for (float v : n.stddev) f << " " << v;
    f << "\n";
}

Normalization load_or_compute_stats(const Dataset& d, const std::string& dir) {
    const std::string path = dir + "/" + d.name + "." + d.split + ".stats";
    if (std::filesystem::exists(path)) return read_stats_file(path);
    Normalization n = compute_normalization(d);
    write_stats_file(path, n);
    return n;
}

std::vector<int64_t> batch_order(int64_t n, const BatchPlan& plan) {
    if (plan.batch_size < 1)
        throw DataError("batch size must be >= 1, got " + std::to_string(plan.batch_size));
    return seeded_permutation(n, plan.seed, plan.epoch);
}

Batch gather_batch(const Dataset& d, const std::vector<int64_t>& order, int64_t begin, int64_t end,
                   bool flip, uint64_t* flip_rng_state) {
    const Shape s = d.images.shape();
    const int64_t bsz = end - begin;
    Batch batch;
    batch.images = Tensor<float>(Shape{bsz, s.c, s.h, s.w});
    batch.labels.resize(static_cast<size_t>(bsz));
    for (int64_t j = 0; j < bsz; ++j) {
        const int64_t src = order[static_cast<size_t>(begin + j)];
        batch.labels[static_cast<size_t>(j)] = d.labels[static_cast<size_t>(src)];
        bool mirrored = false;
        if (flip && flip_rng_state != nullptr) {
            SplitMix64 rng(0);
            rng.state = *flip_rng_state;
            mirrored = (rng.next() & 1ull) == 1ull;
            *flip_rng_state = rng.state;
        }
        for (int64_t c = 0; c < s.c; ++c) {
            const float* sp = d.images.data() + (src * s.c + c) * s.plane();
            float* dp = batch.images.data() + (j * s.c + c) * s.plane();
            const float m = d.norm.mean[static_cast<size_t>(c)];
            const float sd = d.norm.stddev[static_cast<size_t>(c)];
            for (int64_t y = 0; y < s.h; ++y)
                for (int64_t x = 0; x < s.w; ++x) {
                    const int64_t sx = mirrored ? s.w - 1 - x : x;
                    dp[y * s.w + x] = (sp[y * s.w + sx] - m) / sd;
                }
        }
    }
    return batch;
}

Dataset make_sinusoid_dataset(int num_classes, int64_t per_class, int64_t side,
                              const std::vector<double>& frequencies, uint64_t /*seed*/) {
    if (static_cast<int>(frequencies.size()) != num_classes)
        throw DataError("sinusoid dataset: need one frequency per class");
    Dataset d;
    d.name = "sinusoid";
    d.split = "test";
    d.num_classes = num_classes;
    const int64_t n = num_classes * per_class;
    d.images = Tensor<float>(Shape{n, 1, side, side});
    d.labels.resize(static_cast<size_t>(n));
    for (int k = 0; k < num_classes; ++k) {
        // Amplitudes increase with the class index so that a fully low-passed
        // image (constant 0.5) is always nearest the class-0 centroid; the
        // per-class collapse under the LPF is then deterministic. The spread
        // is wide enough that the ordering survives bilinear attenuation of
        // the higher frequencies under rescale_and_crop(2).
        const double amp = 0.1 + 0.15 * k;
        for (int64_t r = 0; r < per_class; ++r) {
            const int64_t idx = k * per_class + r;
            d.labels[static_cast<size_t>(idx)] = k;
            float* p = d.images.data() + idx * side * side;
            for (int64_t y = 0; y < side; ++y)
                for (int64_t x = 0; x < side; ++x)
                    p[y * side + x] = static_cast<float>(
                        0.5 + amp * std::sin(2.0 * std::numbers::pi * frequencies[static_cast<size_t>(k)] *
                                             static_cast<double>(x) / static_cast<double>(side)));
        }
    }
    d.norm = compute_normalization(d);
    d.source_digest = "synthetic";
    return d;
}

}  // namespace gssd::data
