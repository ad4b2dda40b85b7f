#include "gssd/train.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gssd/errors.hpp"
#include "gssd/optim.hpp"
#include "gssd/parallel.hpp"

namespace gssd::train {

namespace {

data::Dataset limit_dataset(data::Dataset d, int64_t limit) {
    if (limit <= 0 || limit >= d.size()) return d;
    const Shape s = d.images.shape();
    data::Dataset out = d;
    out.images = Tensor<float>(Shape{limit, s.c, s.h, s.w});
    std::copy(d.images.data(), d.images.data() + limit * s.c * s.plane(), out.images.data());
    out.labels.assign(d.labels.begin(), d.labels.begin() + limit);
    return out;
}

}  // namespace

std::pair<data::Dataset, data::Dataset> load_data(const DataSpec& spec) {
    data::Dataset train_set, test_set;
    if (spec.dataset == "mnist") {
        const std::string dir = spec.data_dir + "/mnist";
        train_set = data::load_mnist(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
        train_set.split = "train";
        test_set = data::load_mnist(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
        test_set.split = "test";
        train_set.norm = data::load_or_compute_stats(train_set, dir);
        test_set.norm = train_set.norm;
    } else if (spec.dataset == "cifar100") {
        const std::string dir = spec.data_dir + "/cifar100";
        train_set = data::load_cifar100(dir + "/train.bin", spec.subset_classes);
        test_set = data::load_cifar100(dir + "/test.bin", spec.subset_classes);
        if (spec.subset_classes.has_value()) {
            std::string tag = "_sub";
            for (int c : *spec.subset_classes) tag += "-" + std::to_string(c);
            train_set.name += tag;
            test_set.name += tag;
        }
        train_set.split = "train";
        test_set.split = "test";
        train_set.norm = data::load_or_compute_stats(train_set, dir);
        test_set.norm = train_set.norm;
    } else if (spec.dataset == "sinusoid") {
        train_set = data::make_sinusoid_dataset(3, spec.sinusoid_per_class, 32, {4.0, 8.0, 12.0}, 0);
        train_set.split = "train";
        test_set = train_set;
        test_set.split = "test";
    } else {
        throw ConfigError("unknown dataset \"" + spec.dataset + "\" (expected mnist, cifar100 or sinusoid)");
    }
    train_set = limit_dataset(std::move(train_set), spec.limit_train);
    test_set = limit_dataset(std::move(test_set), spec.limit_test);
    return {std::move(train_set), std::move(test_set)};
}

std::vector<int> argmax_classes(const Tensor<float>& logits) {
    const Shape s = logits.shape();
    std::vector<int> out(static_cast<size_t>(s.n));
    for (int64_t b = 0; b < s.n; ++b) {
        const float* row = logits.data() + b * s.c;
        int best = 0;
        for (int64_t k = 1; k < s.c; ++k)
            if (row[k] > row[best]) best = static_cast<int>(k);
        out[static_cast<size_t>(b)] = best;
    }
    return out;
}

double evaluate(net::Model<float>& model, const data::Dataset& dataset, int64_t batch_size) {
    const int64_t n = dataset.size();
    if (n == 0) throw DataError("evaluate: empty dataset");
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    int64_t correct = 0;
    NoGradGuard ng;
    for (int64_t i = 0; i < n; i += batch_size) {
        const int64_t end = std::min(n, i + batch_size);
        data::Batch batch = data::gather_batch(dataset, order, i, end);
        Tensor<float> logits = model.forward(batch.images, false);
        const std::vector<int> pred = argmax_classes(logits);
        for (size_t j = 0; j < pred.size(); ++j)
            if (pred[j] == batch.labels[j]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train_model(net::Model<float>& model, const data::Dataset& train_set,
                        const data::Dataset& test_set, const TrainSettings& settings,
                        std::ostream* progress) {
    if (settings.epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(settings.epochs));
    const int64_t n = train_set.size();
    if (n == 0) throw DataError("train: empty training set");

    SgdOptimizer<float> opt(static_cast<float>(settings.momentum), static_cast<float>(settings.weight_decay));
    for (auto& p : model.parameters()) opt.register_param(p.value, p.decay_exempt);
    // The schedule type requires 0 < warmup < total; clamp for short runs and
    // fall back to a constant base rate for single-epoch smoke runs.
    const int64_t warmup = std::min(settings.warmup_epochs, settings.epochs - 1);
    std::optional<LrSchedule> sched;
    if (warmup >= 1)
        sched.emplace(settings.base_lr, static_cast<int>(warmup), static_cast<int>(settings.epochs));

    TrainResult result;
    // Separate stream for augmentation draws; 0x464C4950 is "FLIP".
    uint64_t flip_state = stream_seed(settings.seed ^ 0x464C4950ull, -1);

    for (int64_t epoch = 0; epoch < settings.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = sched.has_value() ? lr_at(*sched, static_cast<int>(epoch)) : settings.base_lr;
        const std::vector<int64_t> order =
            data::batch_order(n, {settings.seed, settings.batch_size, epoch});
        double loss_sum = 0;
        for (int64_t i = 0; i < n; i += settings.batch_size) {
            const int64_t end = std::min(n, i + settings.batch_size);
            data::Batch batch = data::gather_batch(train_set, order, i, end, settings.flip_augment,
                                                   settings.flip_augment ? &flip_state : nullptr);
            Tensor<float> logits = model.forward(batch.images, true);
            Tensor<float> loss = ops::cross_entropy_smoothed(
                logits, batch.labels, static_cast<float>(settings.label_smoothing));
            opt.zero_grad();
            backward(loss);
            opt.step(static_cast<float>(lr));
            loss_sum += static_cast<double>(loss.data()[0]) * static_cast<double>(end - i);
        }
        const double train_loss = loss_sum / static_cast<double>(n);
        const double acc = evaluate(model, test_set);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back({epoch, lr, train_loss, acc, seconds});
        result.final_test_accuracy = acc;
        if (progress != nullptr) {
            std::ostringstream os;
            os.precision(6);
            os << "epoch=" << epoch << " lr=" << lr << " loss=" << train_loss << " acc=" << acc << "\n";
            (*progress) << os.str() << std::flush;
        }
    }
    return result;
}

namespace {

struct LockFile {
    std::string path;
    int fd = -1;

    explicit LockFile(const std::string& dir) : path(dir + "/.gssd.lock") {
        fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0)
            throw ConfigError("out_dir " + dir + " is locked by another run (remove " + path +
                              " if stale)");
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] ssize_t w = ::write(fd, pid.data(), pid.size());
    }
    ~LockFile() {
        if (fd >= 0) {
            ::close(fd);
            ::unlink(path.c_str());
        }
    }
};

}  // namespace

JobResult run_train_job(const JobSpec& job, std::ostream* progress) {
    std::filesystem::create_directories(job.out_dir);
    LockFile lock(job.out_dir);

    auto [train_set, test_set] = load_data(job.data);
    net::Model<float> model = net::build_model<float>(job.net, job.train.seed);
    TrainResult result = train_model(model, train_set, test_set, job.train, progress);

    JobResult out;
    out.checkpoint_path = job.out_dir + "/checkpoint.gssd";
    out.manifest_path = job.out_dir + "/manifest.txt";
    Checkpoint ckpt = model.to_checkpoint();
    save_checkpoint(ckpt, out.checkpoint_path);
    out.checkpoint_digest = checkpoint_digest(ckpt);
    out.result = result;

    std::ostringstream mf;
    mf << "gssd-manifest v1\n";
    mf << "seed = " << job.train.seed << "\n";
    mf << "deterministic = " << (job.train.deterministic ? "true" : "false") << "\n";
    mf << "threads = " << worker_count() << "\n";
    mf << "dataset.train.n = " << train_set.size() << "\n";
    mf << "dataset.train.digest = " << train_set.source_digest << "\n";
    mf << "dataset.test.n = " << test_set.size() << "\n";
    mf << "dataset.test.digest = " << test_set.source_digest << "\n";
    for (const auto& [k, v] : job.config_snapshot) mf << "config." << k << " = " << v << "\n";
    mf.precision(10);
    for (const auto& e : result.log)
        mf << "epoch " << e.epoch << ": lr=" << e.lr << " loss=" << e.train_loss
           << " acc=" << e.test_accuracy << " seconds=" << e.seconds << "\n";
    mf.precision(17);
    mf << "final.test_accuracy = " << result.final_test_accuracy << "\n";
    mf << "checkpoint.digest = " << out.checkpoint_digest << "\n";

    const std::string tmp = out.manifest_path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw DataError("cannot write manifest " + tmp);
        f << mf.str();
    }
    std::filesystem::rename(tmp, out.manifest_path);
    return out;
}

std::vector<int> ModelClassifier::predict(const Tensor<float>& normalized_images) const {
    NoGradGuard ng;
    const Shape s = normalized_images.shape();
    std::vector<int> out;
    out.reserve(static_cast<size_t>(s.n));
    for (int64_t i = 0; i < s.n; i += batch_size_) {
        const int64_t end = std::min(s.n, i + batch_size_);
        Tensor<float> chunk(Shape{end - i, s.c, s.h, s.w});
        std::copy(normalized_images.data() + i * s.c * s.plane(),
                  normalized_images.data() + end * s.c * s.plane(), chunk.data());
        Tensor<float> logits = model_.forward(chunk, false);
        const std::vector<int> pred = argmax_classes(logits);
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

CentroidClassifier::CentroidClassifier(const data::Dataset& train_set) {
    num_classes_ = train_set.num_classes;
    image_shape_ = train_set.images.shape();
    const int64_t D = image_shape_.c * image_shape_.plane();
    centroids_.assign(static_cast<size_t>(num_classes_ * D), 0.0f);
    std::vector<int64_t> counts(static_cast<size_t>(num_classes_), 0);
    std::vector<double> acc(static_cast<size_t>(num_classes_ * D), 0.0);
    for (int64_t i = 0; i < train_set.size(); ++i) {
        const int label = train_set.labels[static_cast<size_t>(i)];
        ++counts[static_cast<size_t>(label)];
        const float* img = train_set.images.data() + i * D;
        for (int64_t c = 0; c < image_shape_.c; ++c) {
            const float m = train_set.norm.mean[static_cast<size_t>(c)];
            const float sd = train_set.norm.stddev[static_cast<size_t>(c)];
            for (int64_t k = 0; k < image_shape_.plane(); ++k) {
                const int64_t j = c * image_shape_.plane() + k;
                acc[static_cast<size_t>(label * D + j)] += (img[j] - m) / sd;
            }
        }
    }
    for (int k = 0; k < num_classes_; ++k)
        for (int64_t j = 0; j < D; ++j)
            centroids_[static_cast<size_t>(k * D + j)] =
                counts[static_cast<size_t>(k)] == 0
                    ? 0.0f
                    : static_cast<float>(acc[static_cast<size_t>(k * D + j)] /
                                         static_cast<double>(counts[static_cast<size_t>(k)]));
}

std::vector<int> CentroidClassifier::predict(const Tensor<float>& normalized_images) const {
    const Shape s = normalized_images.shape();
    const int64_t D = s.c * s.plane();
    std::vector<int> out(static_cast<size_t>(s.n));
    for (int64_t i = 0; i < s.n; ++i) {
        const float* img = normalized_images.data() + i * D;
        int best = 0;
        double best_d = 0;
        for (int k = 0; k < num_classes_; ++k) {
            const float* c = centroids_.data() + static_cast<int64_t>(k) * D;
            double d = 0;
            for (int64_t j = 0; j < D; ++j) {
                const double diff = static_cast<double>(img[j]) - static_cast<double>(c[j]);
                d += diff * diff;
            }
            if (k == 0 || d < best_d) {
                best_d = d;
                best = k;
            }
        }
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

}  // namespace gssd::train
