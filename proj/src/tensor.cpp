#include "gssd/tensor.hpp"

namespace gssd {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

namespace detail {
void set_grad_enabled(bool v) { g_grad_enabled = v; }
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

}  // namespace gssd
