#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gssd/tensor.hpp"

namespace gssd::data {

struct Normalization {
    std::vector<float> mean;
    std::vector<float> stddev;
};

// Images are kept raw in [0,1]; normalization is applied per batch (and by
// the frequency probe after filtering).
struct Dataset {
    std::string name;
    std::string split;
    Tensor<float> images;  // (N, C, H, W)
    std::vector<int> labels;
    int num_classes = 0;
    Normalization norm;
    std::string source_digest;  // hex digest of the source file bytes

    int64_t size() const { return images.shape().n; }
};

// IDX-format MNIST (big-endian magic 0x803 images / 0x801 labels).
Dataset load_mnist(const std::string& images_path, const std::string& labels_path);

// CIFAR-100 binary: per record <coarse label><fine label><3072 channel-major
// RGB bytes>. An explicit subset keeps only the listed fine labels and
// re-indexes them densely in list order.
Dataset load_cifar100(const std::string& path,
                      const std::optional<std::vector<int>>& subset_classes = std::nullopt);

// Per-channel mean/std over a (training) dataset.
Normalization compute_normalization(const Dataset& d);

// Sidecar cache "<dir>/<name>.<split>.stats". Reads it when present,
// otherwise computes from `d` and writes it.
Normalization load_or_compute_stats(const Dataset& d, const std::string& dir);
Normalization read_stats_file(const std::string& path);
void write_stats_file(const std::string& path, const Normalization& n);

struct BatchPlan {
    uint64_t seed = 0;
    int64_t batch_size = 128;
    int64_t epoch = 0;
};

struct Batch {
    Tensor<float> images;  // normalized
    std::vector<int> labels;
};

// Epoch ordering: Fisher-Yates permutation from SplitMix64(stream_seed(seed,
// epoch)); see rng.hpp and README.
std::vector<int64_t> batch_order(int64_t n, const BatchPlan& plan);

// Gathers a normalized batch for the given dataset indices. With flip=true an
// extra per-image draw from `rng_state` mirrors the image horizontally with
// probability 1/2 (CIFAR augmentation flag).
Batch gather_batch(const Dataset& d, const std::vector<int64_t>& order, int64_t begin, int64_t end,
                   bool flip = false, uint64_t* flip_rng_state = nullptr);

// Synthetic probe dataset: class k is the pure vertical sinusoid
// sin(2*pi*f_k*x/W) rendered into [0,1]; frequencies are distinct per class.
Dataset make_sinusoid_dataset(int num_classes, int64_t per_class, int64_t side,
                              const std::vector<double>& frequencies, uint64_t seed);

}  // namespace gssd::data
