#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gssd/config.hpp"
#include "gssd/datasets.hpp"
#include "gssd/freqprobe.hpp"
#include "gssd/network.hpp"

namespace gssd::train {

struct DataSpec {
    std::string dataset = "mnist";  // mnist | cifar100 | sinusoid
    std::string data_dir = "data";
    std::optional<std::vector<int>> subset_classes;  // cifar100 only
    int64_t limit_train = 0;  // 0 = all
    int64_t limit_test = 0;
    int64_t sinusoid_per_class = 16;
};

// Loads (train, test). Normalization is computed on the training split (and
// cached in a sidecar next to the data); the test split reuses it.
std::pair<data::Dataset, data::Dataset> load_data(const DataSpec& spec);

struct TrainSettings {
    int64_t epochs = 30;
    int64_t batch_size = 128;
    double base_lr = 0.05;
    int64_t warmup_epochs = 5;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double label_smoothing = 0.1;
    uint64_t seed = 1;
    bool deterministic = false;
    bool flip_augment = false;
};

struct EpochLog {
    int64_t epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double test_accuracy = 0;
    double seconds = 0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    double final_test_accuracy = 0;
};

double evaluate(net::Model<float>& model, const data::Dataset& dataset, int64_t batch_size = 256);

TrainResult train_model(net::Model<float>& model, const data::Dataset& train_set,
                        const data::Dataset& test_set, const TrainSettings& settings,
                        std::ostream* progress = nullptr);

// Full training job: lockfile guard on out_dir, checkpoint + manifest written
// atomically at the end.
struct JobSpec {
    net::NetworkConfig net;
    DataSpec data;
    TrainSettings train;
    std::string out_dir;
    config::KeyValues config_snapshot;  // verbatim config dump for the manifest
};

struct JobResult {
    std::string checkpoint_path;
    std::string manifest_path;
    std::string checkpoint_digest;
    TrainResult result;
};

JobResult run_train_job(const JobSpec& job, std::ostream* progress = nullptr);

// Classifier adapters for the frequency probe.
class ModelClassifier : public freq::Classifier {
public:
    explicit ModelClassifier(net::Model<float>& model, int64_t batch_size = 256)
        : model_(model), batch_size_(batch_size) {}
    std::vector<int> predict(const Tensor<float>& normalized_images) const override;

private:
    net::Model<float>& model_;
    int64_t batch_size_;
};

// Nearest-centroid baseline fit on normalized training images.
class CentroidClassifier : public freq::Classifier {
public:
    explicit CentroidClassifier(const data::Dataset& train_set);
    std::vector<int> predict(const Tensor<float>& normalized_images) const override;

private:
    int num_classes_;
    Shape image_shape_;
    std::vector<float> centroids_;  // (K, C*H*W)
};

std::vector<int> argmax_classes(const Tensor<float>& logits);

}  // namespace gssd::train
