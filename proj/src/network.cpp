#include "gssd/network.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "gssd/errors.hpp"

namespace gssd::net {

std::vector<int64_t> apply_width_multiplier(const std::vector<int64_t>& widths, double multiplier) {
    if (!(multiplier > 0)) throw ConfigError("width multiplier must be > 0");
    std::vector<int64_t> out;
    out.reserve(widths.size());
    for (int64_t w : widths) {
        int64_t v = std::llround(static_cast<double>(w) * multiplier);
        if (v % 2 != 0) ++v;
        if (v < 2) v = 2;
        out.push_back(v);
    }
    return out;
}

namespace {

struct PresetDef {
    int64_t stem_width;
    std::vector<std::pair<int64_t, int64_t>> blocks;  // (out_width, stride)
};

PresetDef preset_def(const std::string& preset) {
    if (preset == "mini")
        return {16, {{32, 2}, {32, 1}, {64, 2}, {64, 1}, {128, 2}, {128, 1}}};
    if (preset == "mobilenetv1-width")
        return {32,
                {{64, 1},
                 {128, 2},
                 {128, 1},
                 {256, 2},
                 {256, 1},
                 {512, 2},
                 {512, 1},
                 {512, 1},
                 {512, 1},
                 {512, 1},
                 {512, 1},
                 {1024, 2},
                 {1024, 1}}};
    throw ConfigError("unknown preset \"" + preset + "\" (expected mini or mobilenetv1-width)");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void resolve_config(NetworkConfig& cfg) {
    if (cfg.num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (cfg.input_channels < 1) throw ConfigError("input_channels must be >= 1");
    if (!(cfg.sigma_block > 0) || !(cfg.sigma_stem > 0))
        throw ConfigError("sigma_block and sigma_stem must be > 0");
    const PresetDef def = preset_def(cfg.preset);
    std::vector<int64_t> widths{def.stem_width};
    for (const auto& [w, s] : def.blocks) widths.push_back(w);
    widths = apply_width_multiplier(widths, cfg.width_multiplier);
    cfg.stem_width = widths[0];
    cfg.blocks.clear();
    int64_t in = widths[0];
    for (size_t i = 0; i < def.blocks.size(); ++i) {
        BlockSpec b;
        b.in_ch = in;
        b.out_ch = widths[i + 1];
        b.stride = def.blocks[i].second;
        if (b.in_ch % 2 != 0)
            throw ConfigError("block " + std::to_string(i) + ": channel count " + std::to_string(b.in_ch) +
                              " is odd; the half-split needs even widths");
        cfg.blocks.push_back(b);
        in = b.out_ch;
    }
}

std::string arch_name(Arch a) { return a == Arch::Gssdnet ? "gssdnet" : "vanilla"; }
std::string orders_name(DerivOrders o) { return o == DerivOrders::FirstOnly ? "first" : "second"; }

NetworkConfig config_from_keyvalues(const config::KeyValues& kv) {
    NetworkConfig cfg;
    const std::string arch = config::get_or(kv, "arch", "gssdnet");
    if (arch == "gssdnet")
        cfg.arch = Arch::Gssdnet;
    else if (arch == "vanilla")
        cfg.arch = Arch::Vanilla;
    else
        throw ConfigError("unknown arch \"" + arch + "\" (expected gssdnet or vanilla)");
    const std::string orders = config::get_or(kv, "derivative_orders", "second");
    if (orders == "first")
        cfg.orders = DerivOrders::FirstOnly;
    else if (orders == "second")
        cfg.orders = DerivOrders::FirstAndSecond;
    else
        throw ConfigError("unknown derivative_orders \"" + orders + "\" (expected first or second)");
    cfg.width_multiplier = config::get_double_or(kv, "width_multiplier", 1.0);
    cfg.preset = config::get_or(kv, "preset", "mini");
    cfg.num_classes = config::get_int_or(kv, "num_classes", 10);
    cfg.input_channels = config::get_int_or(kv, "input_channels", 1);
    cfg.sigma_block = config::get_double_or(kv, "sigma_block", 1.0);
    cfg.sigma_stem = config::get_double_or(kv, "sigma_stem", 1.0);
    resolve_config(cfg);
    return cfg;
}

config::KeyValues config_to_keyvalues(const NetworkConfig& cfg) {
    config::KeyValues kv;
    kv["arch"] = arch_name(cfg.arch);
    kv["derivative_orders"] = orders_name(cfg.orders);
    kv["width_multiplier"] = format_double(cfg.width_multiplier);
    kv["preset"] = cfg.preset;
    kv["num_classes"] = std::to_string(cfg.num_classes);
    kv["input_channels"] = std::to_string(cfg.input_channels);
    kv["sigma_block"] = format_double(cfg.sigma_block);
    kv["sigma_stem"] = format_double(cfg.sigma_stem);
    return kv;
}

std::string config_to_string(const NetworkConfig& cfg) {
    const config::KeyValues kv = config_to_keyvalues(cfg);
    std::ostringstream os;
    bool first = true;
    for (const auto& [k, v] : kv) {
        if (!first) os << ";";
        os << k << "=" << v;
        first = false;
    }
    return os.str();
}

NetworkConfig config_from_string(const std::string& text) {
    config::KeyValues kv;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ';')) {
        const size_t eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed config string: \"" + item + "\"");
        kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return config_from_keyvalues(kv);
}

std::vector<FixedOp> operator_set(DerivOrders orders) {
    if (orders == DerivOrders::FirstOnly) return {FixedOp::Blur, FixedOp::Dx, FixedOp::Dy};
    return {FixedOp::Blur, FixedOp::Dx, FixedOp::Dy, FixedOp::Dxx, FixedOp::Dxy, FixedOp::Dyy};
}

FixedOp operator_for_channel(int64_t channel, DerivOrders orders) {
    const std::vector<FixedOp> set = operator_set(orders);
    return set[static_cast<size_t>(channel % static_cast<int64_t>(set.size()))];
}

namespace {

std::pair<int, int> op_orders(FixedOp op) {
    switch (op) {
        case FixedOp::Blur: return {0, 0};
        case FixedOp::Dx: return {1, 0};
        case FixedOp::Dy: return {0, 1};
        case FixedOp::Dxx: return {2, 0};
        case FixedOp::Dxy: return {1, 1};
        case FixedOp::Dyy: return {0, 2};
    }
    return {0, 0};
}

// Kernel grid for one bank channel, flipped so that correlation-style conv2d
// performs a true convolution (matters for the odd-order operators).
std::vector<double> bank_grid(FixedOp op, double sigma) {
    std::vector<double> w;
    if (op == FixedOp::Blur) {
        w = scalespace::gaussian_kernel(sigma).weights;
    } else {
        const auto [m, n] = op_orders(op);
        w = scalespace::derivative_kernel(sigma, m, n).weights;
    }
    std::vector<double> flipped(w.rbegin(), w.rend());
    return flipped;
}

template <class T>
Tensor<T> build_bank(int64_t half_channels, DerivOrders orders, double sigma) {
    const int64_t radius = scalespace::auto_radius(sigma);
    const int64_t side = 2 * radius + 1;
    Tensor<T> bank(Shape{half_channels, 1, side, side});
    for (int64_t c = 0; c < half_channels; ++c) {
        const std::vector<double> grid = bank_grid(operator_for_channel(c, orders), sigma);
        for (int64_t i = 0; i < side * side; ++i)
            bank.data()[c * side * side + i] = static_cast<T>(grid[static_cast<size_t>(i)]);
    }
    return bank;
}

template <class T>
void init_uniform(Tensor<T>& t, SplitMix64& rng, int64_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<T>(rng.next_symmetric(limit));
}

template <class T>
void push_bn_params(std::vector<Param<T>>& out, const std::string& prefix, BatchNormLayer<T>& bn) {
    out.push_back({prefix + ".gamma", bn.gamma, true});
    out.push_back({prefix + ".beta", bn.beta, true});
}

template <class T>
void add_tensor_entry(Checkpoint& ckpt, const std::string& name, const Tensor<T>& t) {
    const Shape s = t.shape();
    auto& e = ckpt.add(name, {static_cast<uint32_t>(s.n), static_cast<uint32_t>(s.c),
                              static_cast<uint32_t>(s.h), static_cast<uint32_t>(s.w)});
    for (int64_t i = 0; i < t.numel(); ++i) e.values[static_cast<size_t>(i)] = static_cast<float>(t.data()[i]);
}

template <class T>
void add_vector_entry(Checkpoint& ckpt, const std::string& name, const std::vector<T>& v) {
    auto& e = ckpt.add(name, {1, 1, 1, static_cast<uint32_t>(v.size())});
    for (size_t i = 0; i < v.size(); ++i) e.values[i] = static_cast<float>(v[i]);
}

template <class T>
void read_tensor_entry(const Checkpoint& ckpt, const std::string& name, Tensor<T>& t) {
    const CheckpointEntry* e = ckpt.find(name);
    if (e == nullptr) throw CheckpointError("checkpoint is missing entry \"" + name + "\"");
    const Shape s = t.shape();
    const std::array<uint32_t, 4> want{static_cast<uint32_t>(s.n), static_cast<uint32_t>(s.c),
                                       static_cast<uint32_t>(s.h), static_cast<uint32_t>(s.w)};
    if (e->extents != want)
        throw CheckpointError("checkpoint entry \"" + name + "\" has extents (" +
                              std::to_string(e->extents[0]) + "," + std::to_string(e->extents[1]) + "," +
                              std::to_string(e->extents[2]) + "," + std::to_string(e->extents[3]) +
                              "), expected " + to_string(s));
    for (size_t i = 0; i < e->values.size(); ++i) t.data()[static_cast<int64_t>(i)] = static_cast<T>(e->values[i]);
}

template <class T>
void read_vector_entry(const Checkpoint& ckpt, const std::string& name, std::vector<T>& v) {
    const CheckpointEntry* e = ckpt.find(name);
    if (e == nullptr) throw CheckpointError("checkpoint is missing entry \"" + name + "\"");
    if (e->values.size() != v.size())
        throw CheckpointError("checkpoint entry \"" + name + "\" has " + std::to_string(e->values.size()) +
                              " values, expected " + std::to_string(v.size()));
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(e->values[i]);
}

}  // namespace

template <class T>
std::vector<Shape> Model<T>::activation_shapes(Shape input) const {
    std::vector<Shape> shapes;
    auto down = [](int64_t v) { return (v + 1) / 2; };
    Shape cur{input.n, config.stem_width, down(input.h), down(input.w)};
    shapes.push_back(cur);
    for (const BlockSpec& b : config.blocks) {
        if (b.stride == 2) {
            cur.h = down(cur.h);
            cur.w = down(cur.w);
        }
        cur.c = b.out_ch;
        shapes.push_back(cur);
    }
    return shapes;
}

template <class T>
std::vector<Param<T>> Model<T>::parameters() {
    std::vector<Param<T>> out;
    if (config.arch == Arch::Gssdnet) {
        out.push_back({"stem.pw.weight", gssd_stem->pw_weight, false});
        push_bn_params(out, "stem.bn", gssd_stem->bn);
        for (size_t i = 0; i < gssd_blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i);
            out.push_back({p + ".pw.weight", gssd_blocks[i].pw_weight, false});
            push_bn_params(out, p + ".bn", gssd_blocks[i].bn);
        }
    } else {
        out.push_back({"stem.conv.weight", vanilla_stem->conv_weight, false});
        push_bn_params(out, "stem.bn", vanilla_stem->bn);
        for (size_t i = 0; i < vanilla_blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i);
            out.push_back({p + ".dw.weight", vanilla_blocks[i].dw_weight, false});
            push_bn_params(out, p + ".bn1", vanilla_blocks[i].bn1);
            out.push_back({p + ".pw.weight", vanilla_blocks[i].pw_weight, false});
            push_bn_params(out, p + ".bn2", vanilla_blocks[i].bn2);
        }
    }
    out.push_back({"head.fc.weight", head.fc_weight, false});
    out.push_back({"head.fc.bias", head.fc_bias, true});
    return out;
}

template <class T>
int64_t Model<T>::learnable_parameter_count() {
    int64_t total = 0;
    for (const auto& p : parameters()) total += p.value.numel();
    return total;
}

int64_t expected_parameter_count(const NetworkConfig& cfg) {
    int64_t total = 0;
    if (cfg.arch == Arch::Gssdnet) {
        total += cfg.stem_width * cfg.input_channels;  // stem pointwise
        total += 2 * cfg.stem_width;                   // stem bn
        for (const BlockSpec& b : cfg.blocks) total += b.out_ch * b.in_ch + 2 * b.out_ch;
    } else {
        total += cfg.stem_width * cfg.input_channels * 9;
        total += 2 * cfg.stem_width;
        for (const BlockSpec& b : cfg.blocks)
            total += b.in_ch * 9 + 2 * b.in_ch + b.out_ch * b.in_ch + 2 * b.out_ch;
    }
    const int64_t last = cfg.blocks.empty() ? cfg.stem_width : cfg.blocks.back().out_ch;
    total += cfg.num_classes * last + cfg.num_classes;  // head
    return total;
}

template <class T>
Checkpoint Model<T>::to_checkpoint() {
    Checkpoint ckpt;
    for (auto& p : parameters()) add_tensor_entry(ckpt, p.name, p.value);
    auto add_bn_state = [&](const std::string& prefix, BatchNormLayer<T>& bn) {
        add_vector_entry(ckpt, prefix + ".running_mean", bn.state.running_mean);
        add_vector_entry(ckpt, prefix + ".running_var", bn.state.running_var);
    };
    if (config.arch == Arch::Gssdnet) {
        add_bn_state("stem.bn", gssd_stem->bn);
        add_vector_entry(ckpt, "stem.blur.kernel1d", gssd_stem->blur1d);
        for (size_t i = 0; i < gssd_blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i);
            add_bn_state(p + ".bn", gssd_blocks[i].bn);
            add_tensor_entry(ckpt, p + ".bank.kernels", gssd_blocks[i].bank);
        }
    } else {
        add_bn_state("stem.bn", vanilla_stem->bn);
        for (size_t i = 0; i < vanilla_blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i);
            add_bn_state(p + ".bn1", vanilla_blocks[i].bn1);
            add_bn_state(p + ".bn2", vanilla_blocks[i].bn2);
        }
    }
    const std::string cfgstr = config_to_string(config);
    auto& meta = ckpt.add("__config__", {static_cast<uint32_t>(cfgstr.size()), 1, 1, 1});
    for (size_t i = 0; i < cfgstr.size(); ++i) meta.values[i] = static_cast<float>(static_cast<uint8_t>(cfgstr[i]));
    return ckpt;
}

template <class T>
void Model<T>::load_tensors(const Checkpoint& ckpt) {
    for (auto& p : parameters()) read_tensor_entry(ckpt, p.name, p.value);
    auto read_bn_state = [&](const std::string& prefix, BatchNormLayer<T>& bn) {
        read_vector_entry(ckpt, prefix + ".running_mean", bn.state.running_mean);
        read_vector_entry(ckpt, prefix + ".running_var", bn.state.running_var);
    };
    if (config.arch == Arch::Gssdnet) {
        read_bn_state("stem.bn", gssd_stem->bn);
        read_vector_entry(ckpt, "stem.blur.kernel1d", gssd_stem->blur1d);
        for (size_t i = 0; i < gssd_blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i);
            read_bn_state(p + ".bn", gssd_blocks[i].bn);
            read_tensor_entry(ckpt, p + ".bank.kernels", gssd_blocks[i].bank);
        }
    } else {
        read_bn_state("stem.bn", vanilla_stem->bn);
        for (size_t i = 0; i < vanilla_blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i);
            read_bn_state(p + ".bn1", vanilla_blocks[i].bn1);
            read_bn_state(p + ".bn2", vanilla_blocks[i].bn2);
        }
    }
}

template <class T>
Model<T> build_model(const NetworkConfig& cfg_in, uint64_t seed) {
    NetworkConfig cfg = cfg_in;
    if (cfg.blocks.empty()) resolve_config(cfg);
    for (size_t i = 0; i < cfg.blocks.size(); ++i)
        if (cfg.blocks[i].in_ch % 2 != 0)
            throw ConfigError("block " + std::to_string(i) + ": channel count " +
                              std::to_string(cfg.blocks[i].in_ch) + " is odd; the half-split needs even widths");
    Model<T> model;
    model.config = cfg;
    SplitMix64 rng(stream_seed(seed, -1));

    if (cfg.arch == Arch::Gssdnet) {
        GssdStem<T> stem;
        stem.blur1d = scalespace::detail::cast_weights<T>(scalespace::gaussian_profile_1d(cfg.sigma_stem));
        stem.pw_weight = Tensor<T>(Shape{cfg.stem_width, cfg.input_channels, 1, 1});
        init_uniform(stem.pw_weight, rng, cfg.input_channels);
        stem.pw_weight.set_requires_grad(true);
        stem.bn.init(cfg.stem_width);
        model.gssd_stem = std::move(stem);
        for (const BlockSpec& spec : cfg.blocks) {
            GssdBlock<T> b;
            b.spec = spec;
            b.bank_radius = scalespace::auto_radius(cfg.sigma_block);
            b.bank = build_bank<T>(spec.in_ch / 2, cfg.orders, cfg.sigma_block);
            b.pw_weight = Tensor<T>(Shape{spec.out_ch, spec.in_ch, 1, 1});
            init_uniform(b.pw_weight, rng, spec.in_ch);
            b.pw_weight.set_requires_grad(true);
            b.bn.init(spec.out_ch);
            model.gssd_blocks.push_back(std::move(b));
        }
    } else {
        VanillaStem<T> stem;
        stem.conv_weight = Tensor<T>(Shape{cfg.stem_width, cfg.input_channels, 3, 3});
        init_uniform(stem.conv_weight, rng, cfg.input_channels * 9);
        stem.conv_weight.set_requires_grad(true);
        stem.bn.init(cfg.stem_width);
        model.vanilla_stem = std::move(stem);
        for (const BlockSpec& spec : cfg.blocks) {
            VanillaBlock<T> b;
            b.spec = spec;
            b.dw_weight = Tensor<T>(Shape{spec.in_ch, 1, 3, 3});
            init_uniform(b.dw_weight, rng, 9);
            b.dw_weight.set_requires_grad(true);
            b.bn1.init(spec.in_ch);
            b.pw_weight = Tensor<T>(Shape{spec.out_ch, spec.in_ch, 1, 1});
            init_uniform(b.pw_weight, rng, spec.in_ch);
            b.pw_weight.set_requires_grad(true);
            b.bn2.init(spec.out_ch);
            model.vanilla_blocks.push_back(std::move(b));
        }
    }
    const int64_t last = cfg.blocks.empty() ? cfg.stem_width : cfg.blocks.back().out_ch;
    model.head.fc_weight = Tensor<T>(Shape{cfg.num_classes, last, 1, 1});
    init_uniform(model.head.fc_weight, rng, last);
    model.head.fc_weight.set_requires_grad(true);
    model.head.fc_bias = Tensor<T>(Shape{1, cfg.num_classes, 1, 1}, T(0));
    model.head.fc_bias.set_requires_grad(true);
    return model;
}

NetworkConfig config_from_checkpoint(const Checkpoint& ckpt) {
    const CheckpointEntry* meta = ckpt.find("__config__");
    if (meta == nullptr) throw CheckpointError("checkpoint has no __config__ entry");
    std::string text;
    text.reserve(meta->values.size());
    for (float v : meta->values) text.push_back(static_cast<char>(static_cast<uint8_t>(v)));
    return config_from_string(text);
}

template <class T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt) {
    Model<T> model = build_model<T>(config_from_checkpoint(ckpt), 0);
    model.load_tensors(ckpt);
    return model;
}

template class Model<float>;
template class Model<double>;
template Model<float> build_model<float>(const NetworkConfig&, uint64_t);
template Model<double> build_model<double>(const NetworkConfig&, uint64_t);
template Model<float> model_from_checkpoint<float>(const Checkpoint&);
template Model<double> model_from_checkpoint<double>(const Checkpoint&);

}  // namespace gssd::net
