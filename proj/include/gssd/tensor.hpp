#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "gssd/shape.hpp"

namespace gssd {

template <class T>
struct AutogradNode;

// Shared storage behind Tensor. `grad` is allocated lazily; `producer` links
// the tensor into the tape when it was made by a differentiable operation.
template <class T>
struct TensorData {
    Shape shape{};
    std::vector<T> values;
    bool requires_grad = false;
    std::vector<T> grad;
    std::shared_ptr<AutogradNode<T>> producer;

    bool on_tape() const { return requires_grad || producer != nullptr; }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }
};

template <class T>
struct AutogradNode {
    const char* op = "";
    std::vector<std::shared_ptr<TensorData<T>>> inputs;
    std::weak_ptr<TensorData<T>> output;
    // Reads output.grad, accumulates into the grads of the inputs it needs.
    std::function<void(TensorData<T>&)> apply;
};

// Dense 4-D tensor with value semantics on the handle (copies share storage,
// like the usual ML-framework convention).
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() : data_(std::make_shared<TensorData<T>>()) {}

    explicit Tensor(Shape s, T fill = T(0)) : data_(std::make_shared<TensorData<T>>()) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw std::invalid_argument("tensor: negative extent in shape " + to_string(s));
        data_->shape = s;
        data_->values.assign(static_cast<size_t>(s.numel()), fill);
    }

    static Tensor zeros(Shape s) { return Tensor(s, T(0)); }
    static Tensor full(Shape s, T v) { return Tensor(s, v); }

    static Tensor from(Shape s, std::vector<T> values) {
        if (static_cast<int64_t>(values.size()) != s.numel())
            throw std::invalid_argument("tensor: data length " + std::to_string(values.size()) +
                                        " does not match shape " + to_string(s));
        Tensor t;
        t.data_->shape = s;
        t.data_->values = std::move(values);
        return t;
    }

    const Shape& shape() const { return data_->shape; }
    int64_t numel() const { return data_->shape.numel(); }

    T* data() { return data_->values.data(); }
    const T* data() const { return data_->values.data(); }
    std::vector<T>& values() { return data_->values; }
    const std::vector<T>& values() const { return data_->values; }

    T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data_->values[static_cast<size_t>(data_->shape.index(n, c, h, w))];
    }
    T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_->values[static_cast<size_t>(data_->shape.index(n, c, h, w))];
    }

    Tensor& set_requires_grad(bool v = true) {
        data_->requires_grad = v;
        return *this;
    }
    bool requires_grad() const { return data_->requires_grad; }
    bool on_tape() const { return data_->on_tape(); }

    bool has_grad() const { return !data_->grad.empty(); }
    std::vector<T>& grad() {
        data_->ensure_grad();
        return data_->grad;
    }
    const std::vector<T>& grad_view() const { return data_->grad; }
    void zero_grad() {
        if (!data_->grad.empty()) data_->grad.assign(data_->grad.size(), T(0));
    }

    // Deep copy of values only (off-tape).
    Tensor clone_detached() const {
        Tensor t;
        t.data_->shape = data_->shape;
        t.data_->values = data_->values;
        return t;
    }

    std::shared_ptr<TensorData<T>>& handle() { return data_; }
    const std::shared_ptr<TensorData<T>>& handle() const { return data_; }

private:
    std::shared_ptr<TensorData<T>> data_;
};

// Thread-local tape switch; evaluation wraps forward passes in NoGradGuard.
bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {
void set_grad_enabled(bool);
}

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
// repeated calls; the gradients of intermediate (node-produced) tensors are
// scratch space and are reset at the start of every sweep.
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                    to_string(loss.shape()));
    auto root = loss.handle();
    if (!root->producer) {
        root->ensure_grad();
        root->grad[0] += T(1);
        return;
    }

    // Post-order DFS over producer links, then replay reversed.
    std::vector<AutogradNode<T>*> order;
    std::unordered_set<AutogradNode<T>*> visited;
    std::vector<std::pair<AutogradNode<T>*, size_t>> stack;
    stack.emplace_back(root->producer.get(), 0);
    visited.insert(root->producer.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            AutogradNode<T>* child = node->inputs[next].get() ? node->inputs[next]->producer.get() : nullptr;
            ++next;
            if (child != nullptr && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (AutogradNode<T>* node : order) {
        if (auto out = node->output.lock()) {
            out->ensure_grad();
            std::fill(out->grad.begin(), out->grad.end(), T(0));
        }
    }
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        AutogradNode<T>* node = *it;
        auto out = node->output.lock();
        if (!out) throw std::logic_error("backward: tape output expired");
        node->apply(*out);
    }
}

namespace detail {

// Attaches a tape node to `out` when autograd is active and any input is on
// the tape. `apply` must accumulate into input grads (ensure_grad first).
template <class T>
void attach_node(Tensor<T>& out, const char* op,
                 std::vector<std::shared_ptr<TensorData<T>>> inputs,
                 std::function<void(TensorData<T>&)> apply) {
    if (!grad_enabled()) return;
    bool any = false;
    for (const auto& in : inputs)
        if (in && in->on_tape()) {
            any = true;
            break;
        }
    if (!any) return;
    auto node = std::make_shared<AutogradNode<T>>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->output = out.handle();
    node->apply = std::move(apply);
    out.handle()->producer = std::move(node);
}

}  // namespace detail

}  // namespace gssd
