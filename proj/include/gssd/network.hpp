#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gssd/checkpoint.hpp"
#include "gssd/config.hpp"
#include "gssd/ops.hpp"
#include "gssd/rng.hpp"
#include "gssd/scalespace.hpp"
#include "gssd/tensor.hpp"

namespace gssd::net {

enum class Arch { Gssdnet, Vanilla };
enum class DerivOrders { FirstOnly, FirstAndSecond };

struct BlockSpec {
    int64_t in_ch = 0;
    int64_t out_ch = 0;
    int64_t stride = 1;
};

struct NetworkConfig {
    Arch arch = Arch::Gssdnet;
    double width_multiplier = 1.0;
    DerivOrders orders = DerivOrders::FirstAndSecond;
    std::string preset = "mini";  // mini | mobilenetv1-width
    int64_t num_classes = 10;
    int64_t input_channels = 1;
    double sigma_block = 1.0;
    double sigma_stem = 1.0;

    // Resolved from preset x width_multiplier by resolve_config().
    int64_t stem_width = 0;
    std::vector<BlockSpec> blocks;
};

// round(width * multiplier), rounded up to the nearest even integer, min 2.
std::vector<int64_t> apply_width_multiplier(const std::vector<int64_t>& widths, double multiplier);

// Fills stem_width/blocks from the preset and multiplier; validates parities.
void resolve_config(NetworkConfig& cfg);

NetworkConfig config_from_keyvalues(const config::KeyValues& kv);
config::KeyValues config_to_keyvalues(const NetworkConfig& cfg);
// Canonical single-line form stored in checkpoints.
std::string config_to_string(const NetworkConfig& cfg);
NetworkConfig config_from_string(const std::string& text);

std::string arch_name(Arch a);
std::string orders_name(DerivOrders o);

// Fixed operator identities in bank order.
enum class FixedOp { Blur, Dx, Dy, Dxx, Dxy, Dyy };
std::vector<FixedOp> operator_set(DerivOrders orders);
// Channel -> operator assignment: cyclic over the set by channel index.
FixedOp operator_for_channel(int64_t channel, DerivOrders orders);

template <class T>
struct Param {
    std::string name;
    Tensor<T> value;
    bool decay_exempt = false;
};

template <class T>
struct BatchNormLayer {
    Tensor<T> gamma;  // (1, C, 1, 1)
    Tensor<T> beta;
    ops::BatchNormState<T> state;

    void init(int64_t channels) {
        gamma = Tensor<T>(Shape{1, channels, 1, 1}, T(1));
        beta = Tensor<T>(Shape{1, channels, 1, 1}, T(0));
        gamma.set_requires_grad(true);
        beta.set_requires_grad(true);
        state.running_mean.assign(static_cast<size_t>(channels), T(0));
        state.running_var.assign(static_cast<size_t>(channels), T(1));
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        return ops::batchnorm(x, gamma, beta, state, training, T(0.9), T(1e-5));
    }
};

// Gaussian blur (replicate padding) -> stride-2 sampling -> pointwise -> BN
// -> ReLU. The blur path is literally scalespace::blur followed by
// subsample2.
template <class T>
struct GssdStem {
    std::vector<T> blur1d;
    Tensor<T> pw_weight;
    BatchNormLayer<T> bn;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        Tensor<T> y = ops::separable_conv2d(x, blur1d, Padding::Replicate);
        y = ops::subsample2(y);
        y = ops::pointwise_conv(y, pw_weight);
        return ops::relu(bn.forward(y, training));
    }
};

// Learnable 3x3 stride-2 convolution -> BN -> ReLU.
template <class T>
struct VanillaStem {
    Tensor<T> conv_weight;  // (w0, in, 3, 3)
    BatchNormLayer<T> bn;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        Tensor<T> y = ops::conv2d(x, conv_weight, 2, 1);
        return ops::relu(bn.forward(y, training));
    }
};

// Half the channels pass through the fixed Gaussian/derivative bank, the
// other half is passed through unchanged (plain subsampling under stride 2);
// mixing is left to the learned pointwise convolution.
template <class T>
struct GssdBlock {
    BlockSpec spec;
    Tensor<T> bank;  // (C/2, 1, side, side) fixed kernels, off-tape
    int64_t bank_radius = 0;
    Tensor<T> pw_weight;
    BatchNormLayer<T> bn;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        const int64_t C = spec.in_ch;
        Tensor<T> front = ops::channel_slice(x, 0, C / 2);
        Tensor<T> back = ops::channel_slice(x, C / 2, C);
        Tensor<T> filtered = ops::conv2d(front, bank, spec.stride, bank_radius, C / 2);
        Tensor<T> passed = spec.stride == 2 ? ops::subsample2(back) : back;
        Tensor<T> y = ops::concat_channels(filtered, passed);
        y = ops::pointwise_conv(y, pw_weight);
        return ops::relu(bn.forward(y, training));
    }
};

// Learnable 3x3 depthwise -> BN -> ReLU -> pointwise -> BN -> ReLU.
template <class T>
struct VanillaBlock {
    BlockSpec spec;
    Tensor<T> dw_weight;  // (C, 1, 3, 3)
    BatchNormLayer<T> bn1;
    Tensor<T> pw_weight;
    BatchNormLayer<T> bn2;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        Tensor<T> y = ops::depthwise_conv2d(x, dw_weight, spec.stride, 1);
        y = ops::relu(bn1.forward(y, training));
        y = ops::pointwise_conv(y, pw_weight);
        return ops::relu(bn2.forward(y, training));
    }
};

template <class T>
struct Head {
    Tensor<T> fc_weight;  // (K, C, 1, 1)
    Tensor<T> fc_bias;    // (1, K, 1, 1)

    Tensor<T> forward(const Tensor<T>& x) {
        return ops::linear(ops::global_avg_pool(x), fc_weight, fc_bias);
    }
};

template <class T>
class Model {
public:
    NetworkConfig config;
    std::optional<GssdStem<T>> gssd_stem;
    std::optional<VanillaStem<T>> vanilla_stem;
    std::vector<GssdBlock<T>> gssd_blocks;
    std::vector<VanillaBlock<T>> vanilla_blocks;
    Head<T> head;

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        Tensor<T> y = x;
        if (config.arch == Arch::Gssdnet) {
            y = gssd_stem->forward(y, training);
            for (auto& b : gssd_blocks) y = b.forward(y, training);
        } else {
            y = vanilla_stem->forward(y, training);
            for (auto& b : vanilla_blocks) y = b.forward(y, training);
        }
        return head.forward(y);
    }

    // Activation shapes after the stem and each block (for the shape-parity
    // checks); pure shape arithmetic.
    std::vector<Shape> activation_shapes(Shape input) const;

    std::vector<Param<T>> parameters();
    int64_t learnable_parameter_count();

    Checkpoint to_checkpoint();
    void load_tensors(const Checkpoint& ckpt);
};

template <class T>
Model<T> build_model(const NetworkConfig& cfg, uint64_t seed);

// Rebuild a model from checkpoint metadata (__config__ entry).
NetworkConfig config_from_checkpoint(const Checkpoint& ckpt);
template <class T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt);

// Closed-form learnable parameter count for a resolved config.
int64_t expected_parameter_count(const NetworkConfig& cfg);

extern template class Model<float>;
extern template class Model<double>;
extern template Model<float> build_model<float>(const NetworkConfig&, uint64_t);
extern template Model<double> build_model<double>(const NetworkConfig&, uint64_t);
extern template Model<float> model_from_checkpoint<float>(const Checkpoint&);
extern template Model<double> model_from_checkpoint<double>(const Checkpoint&);

}  // namespace gssd::net
