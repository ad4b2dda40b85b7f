// gssd: train / evaluate the scale-space derivative networks and probe their
// frequency and scale sensitivity.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gssd/checkpoint.hpp"
#include "gssd/config.hpp"
#include "gssd/datasets.hpp"
#include "gssd/errors.hpp"
#include "gssd/freqprobe.hpp"
#include "gssd/network.hpp"
#include "gssd/parallel.hpp"
#include "gssd/scalespace.hpp"
#include "gssd/train.hpp"

namespace {

using namespace gssd;

// Exit codes: 0 success, 1 usage, 2 config, 3 data, 4 checkpoint, 5 internal.
enum ExitCode : int { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kCheckpoint = 4, kInternal = 5 };

struct DatasetFlags {
    std::string dataset = "mnist";
    std::string data_dir = "data";
    std::string split = "test";
    int64_t limit = 0;
    std::vector<int> subset;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--dataset", dataset, "mnist | cifar100 | sinusoid")->capture_default_str();
        cmd->add_option("--data-dir", data_dir, "directory holding mnist/ and cifar100/")
            ->capture_default_str();
        cmd->add_option("--split", split, "train | test")->capture_default_str();
        cmd->add_option("--limit", limit, "probe only the first N samples (0 = all)");
        cmd->add_option("--subset-classes", subset, "CIFAR-100 fine labels to keep");
    }

    train::DataSpec to_spec() const {
        train::DataSpec spec;
        spec.dataset = dataset;
        spec.data_dir = data_dir;
        if (!subset.empty()) spec.subset_classes = subset;
        if (split == "train")
            spec.limit_train = limit;
        else
            spec.limit_test = limit;
        return spec;
    }

    // Returns (selected split, train split) — the train split feeds centroid
    // fitting and carries the normalization statistics.
    std::pair<data::Dataset, data::Dataset> load() const {
        if (split != "train" && split != "test")
            throw ConfigError("unknown split \"" + split + "\" (expected train or test)");
        auto [train_set, test_set] = train::load_data(to_spec());
        if (split == "train") return {train_set, train_set};
        return {test_set, train_set};
    }
};

std::vector<double> parse_radii(const std::string& text) {
    double a = 0, b = 0, c = 0;
    char extra = 0;
    if (std::sscanf(text.c_str(), "%lf:%lf:%lf%c", &a, &b, &c, &extra) != 3)
        throw ConfigError("radii must be start:stop:step, got \"" + text + "\"");
    if (c <= 0) throw ConfigError("radii step must be > 0");
    if (b < a) throw ConfigError("radii stop must be >= start");
    std::vector<double> out;
    for (int64_t i = 0;; ++i) {
        const double r = a + static_cast<double>(i) * c;
        if (r > b + 1e-9 * c) break;
        out.push_back(r);
    }
    if (out.empty()) throw ConfigError("empty radii range \"" + text + "\"");
    return out;
}

net::Model<float> load_model_checked(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    return net::model_from_checkpoint<float>(ckpt);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    f << text;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, int64_t seed_override,
              bool has_seed, int64_t epochs_override, bool has_epochs, bool deterministic,
              int threads) {
    config::KeyValues kv = config::load_file(config_path);

    train::JobSpec job;
    job.net = net::config_from_keyvalues(kv);
    job.data.dataset = config::get_or(kv, "dataset", "mnist");
    job.data.data_dir = config::get_or(kv, "data_dir", "data");
    job.data.limit_train = config::get_int_or(kv, "limit_train", 0);
    job.data.limit_test = config::get_int_or(kv, "limit_test", 0);
    if (auto s = config::get(kv, "subset_classes")) {
        std::vector<int> subset;
        std::istringstream is(*s);
        std::string item;
        while (std::getline(is, item, ',')) subset.push_back(std::stoi(item));
        job.data.subset_classes = subset;
    }
    job.train.epochs = config::get_int_or(kv, "epochs", 30);
    job.train.batch_size = config::get_int_or(kv, "batch_size", 128);
    job.train.base_lr = config::get_double_or(kv, "base_lr", 0.05);
    job.train.warmup_epochs = config::get_int_or(kv, "warmup_epochs", 5);
    job.train.momentum = config::get_double_or(kv, "momentum", 0.9);
    job.train.weight_decay = config::get_double_or(kv, "weight_decay", 1e-4);
    job.train.label_smoothing = config::get_double_or(kv, "label_smoothing", 0.1);
    job.train.flip_augment = config::get_bool_or(kv, "flip_augment", false);
    job.train.seed = static_cast<uint64_t>(config::get_int_or(kv, "seed", 1));

    if (has_seed) job.train.seed = static_cast<uint64_t>(seed_override);
    if (has_epochs) job.train.epochs = epochs_override;
    job.train.deterministic = deterministic;
    if (job.train.epochs < 1)
        throw ConfigError("epochs must be >= 1, got " + std::to_string(job.train.epochs));
    if (job.train.batch_size < 1)
        throw ConfigError("batch_size must be >= 1, got " + std::to_string(job.train.batch_size));

    if (deterministic)
        set_worker_count(1);
    else if (threads > 0)
        set_worker_count(threads);

    // Snapshot of the effective settings; rerunning from it reproduces the
    // checkpoint digest in deterministic mode.
    kv["seed"] = std::to_string(job.train.seed);
    kv["epochs"] = std::to_string(job.train.epochs);
    kv["deterministic"] = job.train.deterministic ? "true" : "false";
    job.config_snapshot = kv;
    job.out_dir = out_dir;

    train::JobResult res = train::run_train_job(job, &std::cout);
    std::cout << "checkpoint=" << res.checkpoint_path << " digest=" << res.checkpoint_digest
              << " acc=" << res.result.final_test_accuracy << "\n";
    return kOk;
}

int cmd_eval(const std::string& checkpoint_path, const DatasetFlags& flags,
             const std::string& expect_arch) {
    net::Model<float> model = load_model_checked(checkpoint_path);
    if (!expect_arch.empty() && expect_arch != net::arch_name(model.config.arch))
        throw CheckpointError("architecture mismatch: checkpoint has \"" +
                              net::config_to_string(model.config) + "\", expected arch \"" +
                              expect_arch + "\"");
    auto [dataset, train_split] = flags.load();
    if (dataset.num_classes != model.config.num_classes)
        throw CheckpointError("architecture mismatch: checkpoint classifies " +
                              std::to_string(model.config.num_classes) + " classes (\"" +
                              net::config_to_string(model.config) + "\"), dataset \"" + dataset.name +
                              "\" has " + std::to_string(dataset.num_classes));
    const double acc = train::evaluate(model, dataset);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", acc);
    std::cout << "top1=" << buf << " n=" << dataset.size() << "\n";
    return kOk;
}

struct ProbeArgs {
    std::string checkpoint;
    std::string classifier = "model";  // model | centroid
    DatasetFlags data;
    std::string radii_text = "0:20:2";
    std::string out;
    std::string svg_dir;
    std::string predictions;
    int64_t batch_size = 256;
    int threads = 0;
};

std::unique_ptr<freq::Classifier> make_classifier(const ProbeArgs& args, net::Model<float>*& model_out,
                                                  const data::Dataset& train_split) {
    if (args.classifier == "centroid") return std::make_unique<train::CentroidClassifier>(train_split);
    if (args.classifier != "model")
        throw ConfigError("unknown classifier \"" + args.classifier + "\" (expected model or centroid)");
    if (args.checkpoint.empty()) throw ConfigError("probe: a checkpoint is required unless --classifier centroid");
    auto model = std::make_unique<net::Model<float>>(load_model_checked(args.checkpoint));
    model_out = model.get();
    struct Holder : freq::Classifier {
        std::unique_ptr<net::Model<float>> model;
        train::ModelClassifier inner;
        explicit Holder(std::unique_ptr<net::Model<float>> m) : model(std::move(m)), inner(*model) {}
        std::vector<int> predict(const Tensor<float>& x) const override { return inner.predict(x); }
    };
    return std::make_unique<Holder>(std::move(model));
}

int cmd_probe_freq(const ProbeArgs& args, const std::string& pass_text, const std::string& level_text) {
    if (args.threads > 0) set_worker_count(args.threads);
    const std::vector<double> radii = parse_radii(args.radii_text);
    const freq::PassType pass = pass_text == "high" ? freq::PassType::High : freq::PassType::Low;
    if (pass_text != "low" && pass_text != "high")
        throw ConfigError("unknown pass \"" + pass_text + "\" (expected low or high)");
    freq::Level level;
    if (level_text == "overall")
        level = freq::Level::Overall;
    else if (level_text == "class")
        level = freq::Level::Class;
    else if (level_text == "sample")
        level = freq::Level::Sample;
    else
        throw ConfigError("unknown level \"" + level_text + "\" (expected overall, class or sample)");

    auto [dataset, train_split] = args.data.load();
    net::Model<float>* model = nullptr;
    auto classifier = make_classifier(args, model, train_split);
    if (model != nullptr && dataset.num_classes != model->config.num_classes)
        throw CheckpointError("architecture mismatch: checkpoint classifies " +
                              std::to_string(model->config.num_classes) + " classes, dataset has " +
                              std::to_string(dataset.num_classes));

    freq::SweepOptions opt;
    opt.batch_size = args.batch_size;
    std::vector<freq::PredictionRecord> predictions;
    if (!args.predictions.empty()) opt.prediction_log = &predictions;

    const std::vector<freq::SensitivityCurve> curves =
        freq::sensitivity_sweep(*classifier, dataset, radii, pass, level, opt);

    std::ostringstream csv;
    freq::write_curves_csv(csv, curves);
    write_text_file(args.out, csv.str());

    if (!args.predictions.empty()) {
        std::ostringstream ps;
        ps << "radius,sample_id,label,predicted\n";
        for (const auto& r : predictions)
            ps << r.radius << "," << r.sample_id << "," << r.label << "," << r.predicted << "\n";
        write_text_file(args.predictions, ps.str());
    }
    if (!args.svg_dir.empty()) {
        std::filesystem::create_directories(args.svg_dir);
        for (const auto& c : curves) {
            std::ostringstream name;
            name << args.svg_dir << "/curve_" << freq::level_name(c.level);
            if (c.class_id >= 0) name << "_class" << c.class_id;
            if (c.sample_id >= 0) name << "_sample" << c.sample_id;
            name << ".svg";
            std::ostringstream svg;
            freq::write_curve_svg(svg, c);
            write_text_file(name.str(), svg.str());
        }
    }
    std::cout << "curves=" << curves.size() << " radii=" << radii.size() << " out=" << args.out << "\n";
    return kOk;
}

int cmd_probe_scale(const ProbeArgs& args, const std::vector<double>& factors,
                    const std::string& out_dir) {
    if (args.threads > 0) set_worker_count(args.threads);
    if (factors.empty()) throw ConfigError("probe-scale: need at least one factor");
    for (double f : factors)
        if (f < 1.0) throw ConfigError("probe-scale: factors must be >= 1, got " + std::to_string(f));
    const std::vector<double> radii = parse_radii(args.radii_text);

    auto [dataset, train_split] = args.data.load();
    net::Model<float>* model = nullptr;
    auto classifier = make_classifier(args, model, train_split);

    std::filesystem::create_directories(out_dir);
    std::ostringstream summary;
    summary << "factor,half_max_radius\n";
    for (double f : factors) {
        data::Dataset scaled = dataset;
        scaled.images = freq::rescale_and_crop(dataset.images, f);
        // The centroid baseline is refit on the rescaled train split; a
        // fixed-frequency centroid cannot recognize rescaled sinusoids.
        std::unique_ptr<freq::Classifier> per_factor;
        const freq::Classifier* active = classifier.get();
        if (args.classifier == "centroid") {
            data::Dataset scaled_train = train_split;
            scaled_train.images = freq::rescale_and_crop(train_split.images, f);
            per_factor = std::make_unique<train::CentroidClassifier>(scaled_train);
            active = per_factor.get();
        }
        freq::SweepOptions opt;
        opt.batch_size = args.batch_size;
        const std::vector<freq::SensitivityCurve> curves = freq::sensitivity_sweep(
            *active, scaled, radii, freq::PassType::Low, freq::Level::Overall, opt);
        std::ostringstream csv;
        freq::write_curves_csv(csv, curves);
        std::ostringstream name;
        name.precision(6);
        name << out_dir << "/curves_factor" << f << ".csv";
        write_text_file(name.str(), csv.str());
        const std::optional<double> hm = freq::half_max_radius(curves.front());
        summary.precision(10);
        summary << f << ",";
        if (hm.has_value()) summary << *hm;
        summary << "\n";
    }
    write_text_file(out_dir + "/summary.csv", summary.str());
    std::cout << "factors=" << factors.size() << " out=" << out_dir << "/summary.csv\n";
    return kOk;
}

void dump_grid(std::ostream& os, const std::vector<double>& w, int64_t side) {
    char buf[40];
    for (int64_t y = 0; y < side; ++y) {
        for (int64_t x = 0; x < side; ++x) {
            std::snprintf(buf, sizeof(buf), "%.17g", w[static_cast<size_t>(y * side + x)]);
            os << (x ? " " : "") << buf;
        }
        os << "\n";
    }
}

int cmd_kernels(double sigma, int64_t radius, const std::string& order) {
    std::optional<int64_t> r;
    if (radius > 0) r = radius;
    std::ostream& os = std::cout;
    if (order.empty()) {
        const auto g = scalespace::gaussian_kernel(sigma, r);
        os << "# gaussian sigma=" << sigma << " radius=" << g.radius << "\n";
        dump_grid(os, g.weights, g.side());
        for (const auto& [m, n] : std::vector<std::pair<int, int>>{{1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 2}}) {
            const auto d = scalespace::derivative_kernel(sigma, m, n, r);
            os << "# derivative m=" << m << " n=" << n << " sigma=" << sigma << " radius=" << d.radius
               << "\n";
            dump_grid(os, d.weights, d.side());
        }
    } else {
        int m = 0, n = 0;
        if (std::sscanf(order.c_str(), "%d,%d", &m, &n) != 2)
            throw ConfigError("order must be m,n (e.g. 1,0), got \"" + order + "\"");
        const auto d = scalespace::derivative_kernel(sigma, m, n, r);
        os << "# derivative m=" << m << " n=" << n << " sigma=" << sigma << " radius=" << d.radius << "\n";
        dump_grid(os, d.weights, d.side());
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian scale-space derivative networks: train, evaluate, probe"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    std::string config_path, out_dir;
    int64_t seed = 0, epochs = 0;
    bool deterministic = false;
    int threads = 0;
    train_cmd->add_option("config", config_path, "config file (key = value lines)")->required();
    train_cmd->add_option("out_dir", out_dir, "output directory")->required();
    auto* seed_opt = train_cmd->add_option("--seed", seed, "override config seed");
    auto* epochs_opt = train_cmd->add_option("--epochs", epochs, "override config epochs");
    train_cmd->add_flag("--deterministic", deterministic, "single worker, fixed reduction order");
    train_cmd->add_option("--device-threads", threads, "worker count (also GSSD_THREADS)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, expect_arch;
    DatasetFlags eval_flags;
    eval_cmd->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--expect-arch", expect_arch, "fail unless the checkpoint arch matches");
    eval_flags.add_to(eval_cmd);

    // probe-freq
    auto* pf_cmd = app.add_subcommand("probe-freq", "LPF/HPF sensitivity sweep");
    ProbeArgs pf;
    std::string pf_pass = "low", pf_level = "overall";
    pf_cmd->add_option("checkpoint", pf.checkpoint, "checkpoint file");
    pf_cmd->add_option("--classifier", pf.classifier, "model | centroid")->capture_default_str();
    pf.data.add_to(pf_cmd);
    pf_cmd->add_option("--pass", pf_pass, "low | high")->capture_default_str();
    pf_cmd->add_option("--radii", pf.radii_text, "start:stop:step")->capture_default_str();
    pf_cmd->add_option("--level", pf_level, "overall | class | sample")->capture_default_str();
    pf_cmd->add_option("--out", pf.out, "curve CSV path")->required();
    pf_cmd->add_option("--svg", pf.svg_dir, "also write one SVG per curve into this directory");
    pf_cmd->add_option("--predictions", pf.predictions, "write per-sample predicted labels CSV");
    pf_cmd->add_option("--batch-size", pf.batch_size, "probe batch size");
    pf_cmd->add_option("--device-threads", pf.threads, "worker count");

    // probe-scale
    auto* ps_cmd = app.add_subcommand("probe-scale", "rescale-and-crop LPF sweeps");
    ProbeArgs ps;
    std::vector<double> factors{1.0, 2.0};
    std::string ps_out = "probe-scale-out";
    ps_cmd->add_option("checkpoint", ps.checkpoint, "checkpoint file");
    ps_cmd->add_option("--classifier", ps.classifier, "model | centroid")->capture_default_str();
    ps.data.add_to(ps_cmd);
    ps_cmd->add_option("--factors", factors, "rescale factors (>= 1)")->capture_default_str();
    ps_cmd->add_option("--radii", ps.radii_text, "start:stop:step")->capture_default_str();
    ps_cmd->add_option("--out", ps_out, "output directory")->capture_default_str();
    ps_cmd->add_option("--batch-size", ps.batch_size, "probe batch size");
    ps_cmd->add_option("--device-threads", ps.threads, "worker count");

    // kernels
    auto* k_cmd = app.add_subcommand("kernels", "dump fixed kernels as plain-text grids");
    double k_sigma = 1.0;
    int64_t k_radius = 0;
    std::string k_order;
    k_cmd->add_option("--sigma", k_sigma, "kernel scale")->capture_default_str();
    k_cmd->add_option("--radius", k_radius, "truncation radius (default ceil(3 sigma))");
    k_cmd->add_option("--order", k_order, "only this derivative order, as m,n");

    // digest
    auto* d_cmd = app.add_subcommand("digest", "hex hash of a checkpoint's canonical serialization");
    std::string d_path;
    d_cmd->add_option("checkpoint", d_path, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
        if (app.got_subcommand(train_cmd))
            return cmd_train(config_path, out_dir, seed, seed_opt->count() > 0, epochs,
                             epochs_opt->count() > 0, deterministic, threads);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(eval_ckpt, eval_flags, expect_arch);
        if (app.got_subcommand(pf_cmd)) return cmd_probe_freq(pf, pf_pass, pf_level);
        if (app.got_subcommand(ps_cmd)) return cmd_probe_scale(ps, factors, ps_out);
        if (app.got_subcommand(k_cmd)) return cmd_kernels(k_sigma, k_radius, k_order);
        if (app.got_subcommand(d_cmd)) {
            std::cout << gssd::checkpoint_digest_file(d_path) << "\n";
            return kOk;
        }
        return kUsage;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kCheckpoint;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInternal;
    }
}
