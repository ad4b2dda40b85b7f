#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "gssd/kernels.hpp"
#include "gssd/tensor.hpp"

namespace gssd {

// SGD with momentum and coupled weight decay:
//   v <- mu*v + g + lambda*w   (lambda = 0 for decay-exempt parameters)
//   w <- w - lr*v
template <class T>
class SgdOptimizer {
public:
    SgdOptimizer(T momentum, T weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    // Registration order is fixed; one shape-matched momentum buffer each.
    void register_param(Tensor<T> param, bool decay_exempt) {
        params_.push_back(std::move(param));
        exempt_.push_back(decay_exempt);
        buffers_.emplace_back(params_.back().numel(), T(0));
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step(T lr) {
        const auto& kt = kernels::table<T>();
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<T>& p = params_[i];
            if (!p.has_grad())
                throw std::logic_error("sgd_step: parameter " + std::to_string(i) + " has no gradient");
            kt.sgd_update(p.data(), buffers_[i].data(), p.grad_view().data(), momentum_,
                          exempt_[i] ? T(0) : weight_decay_, lr, p.numel());
        }
    }

    size_t size() const { return params_.size(); }
    const std::vector<T>& momentum_buffer(size_t i) const { return buffers_[i]; }

private:
    T momentum_;
    T weight_decay_;
    std::vector<Tensor<T>> params_;
    std::vector<bool> exempt_;
    std::vector<std::vector<T>> buffers_;
};

// Linear warmup to base over `warmup_epochs`, then cosine decay to zero at
// `total_epochs`. lr(warmup-1) = lr(warmup) = base, which makes the curve
// continuous at the boundary.
struct LrSchedule {
    double base_lr = 0.2;
    int warmup_epochs = 5;
    int total_epochs = 100;

    LrSchedule(double base, int warmup, int total)
        : base_lr(base), warmup_epochs(warmup), total_epochs(total) {
        if (!(warmup > 0 && warmup < total))
            throw std::invalid_argument("lr schedule: need 0 < warmup_epochs < total_epochs, got " +
                                        std::to_string(warmup) + "/" + std::to_string(total));
    }
};

inline double lr_at(const LrSchedule& s, int epoch) {
    if (epoch < 0 || epoch >= s.total_epochs)
        throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) + " outside [0," +
                                    std::to_string(s.total_epochs) + ")");
    if (epoch < s.warmup_epochs)
        return s.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(s.warmup_epochs);
    const double t = static_cast<double>(epoch - s.warmup_epochs) /
                     static_cast<double>(s.total_epochs - s.warmup_epochs);
    return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace gssd
