// Reverse-mode gradients against central finite differences at double
// precision (relative error < 1e-4, with a unit floor for near-zero
// gradients).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gssd/ops.hpp"
#include "testutil.hpp"

using namespace gssd;

namespace {

// Project a tensor to a scalar with fixed random coefficients; gives every
// output element a distinct weight so structural mistakes cannot cancel.
double project(const Tensor<double>& t, const std::vector<double>& coeff) {
    double s = 0;
    for (int64_t i = 0; i < t.numel(); ++i) s += coeff[static_cast<size_t>(i)] * t.data()[i];
    return s;
}

Tensor<double> project_loss(const Tensor<double>& t, const std::vector<double>& coeff) {
    Tensor<double> c = Tensor<double>::from(t.shape(), coeff);
    return ops::sum(ops::mul(t, c));
}

// Runs forward() once on the tape, backprops, then finite-difference checks
// d loss / d param for every listed parameter.
template <class Forward>
void check_gradients(std::vector<Tensor<double>> params, Forward forward, int samples,
                     uint64_t seed, double tol = 1e-4) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tensor<double> out = forward();
    const auto coeff = testutil::random_vector<double>(static_cast<size_t>(out.numel()), seed ^ 0xC0FFEE);
    Tensor<double> loss = project_loss(out, coeff);
    backward(loss);
    auto loss_value = [&]() {
        NoGradGuard ng;
        return project(forward(), coeff);
    };
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const double worst = testutil::finite_diff_check(params[pi], params[pi].grad_view(), loss_value,
                                                         samples, seed + pi);
        INFO("param ", pi, " worst rel err ", worst);
        CHECK(worst < tol);
    }
}

}  // namespace

TEST_CASE("backward basics: sum and x*x") {
    Tensor<double> x = testutil::random_tensor<double>(Shape{1, 1, 2, 3}, 1);
    x.set_requires_grad(true);
    Tensor<double> s = ops::sum(x);
    backward(s);
    for (auto g : x.grad()) CHECK(g == 1.0);

    Tensor<double> y = testutil::random_tensor<double>(Shape{1, 2, 2, 2}, 2);
    y.set_requires_grad(true);
    Tensor<double> s2 = ops::sum(ops::mul(y, y));
    backward(s2);
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(y.grad()[static_cast<size_t>(i)] == doctest::Approx(2 * y.data()[i]));
}

TEST_CASE("repeated backward accumulates; non-scalar root rejected") {
    Tensor<double> x(Shape{1, 1, 1, 4}, 2.0);
    x.set_requires_grad(true);
    Tensor<double> s = ops::sum(x);
    backward(s);
    backward(s);
    for (auto g : x.grad()) CHECK(g == 2.0);

    Tensor<double> nonscalar(Shape{1, 1, 1, 4}, 1.0);
    nonscalar.set_requires_grad(true);
    Tensor<double> y = ops::relu(nonscalar);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("relu subgradient example") {
    Tensor<double> x = Tensor<double>::from(Shape{1, 1, 1, 2}, {-1.0, 2.0});
    x.set_requires_grad(true);
    backward(ops::sum(ops::relu(x)));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("conv2d gradients (input and weights, stride 1 and 2, groups)") {
    {
        Tensor<double> x = testutil::random_tensor<double>(Shape{2, 3, 6, 6}, 11);
        Tensor<double> w = testutil::random_tensor<double>(Shape{4, 3, 3, 3}, 12);
        check_gradients({x, w}, [&] { return ops::conv2d(x, w, 1, 1); }, 24, 100);
    }
    {
        Tensor<double> x = testutil::random_tensor<double>(Shape{1, 4, 7, 7}, 13);
        Tensor<double> w = testutil::random_tensor<double>(Shape{4, 2, 3, 3}, 14);
        check_gradients({x, w}, [&] { return ops::conv2d(x, w, 2, 1, 2); }, 24, 200);
    }
    {
        Tensor<double> x = testutil::random_tensor<double>(Shape{1, 2, 8, 8}, 15);
        Tensor<double> w = testutil::random_tensor<double>(Shape{2, 1, 7, 7}, 16);
        check_gradients({x, w}, [&] { return ops::conv2d(x, w, 2, 3, 2); }, 24, 300);
    }
}

TEST_CASE("pointwise and linear gradients") {
    Tensor<double> x = testutil::random_tensor<double>(Shape{2, 4, 5, 5}, 21);
    Tensor<double> w = testutil::random_tensor<double>(Shape{3, 4, 1, 1}, 22);
    check_gradients({x, w}, [&] { return ops::pointwise_conv(x, w); }, 24, 400);

    Tensor<double> xf = testutil::random_tensor<double>(Shape{3, 6, 1, 1}, 23);
    Tensor<double> fw = testutil::random_tensor<double>(Shape{4, 6, 1, 1}, 24);
    Tensor<double> fb = testutil::random_tensor<double>(Shape{1, 4, 1, 1}, 25);
    check_gradients({xf, fw, fb}, [&] { return ops::linear(xf, fw, fb); }, 16, 500);
}

TEST_CASE("batchnorm gradients in training and eval mode") {
    Tensor<double> x = testutil::random_tensor<double>(Shape{3, 2, 4, 4}, 31);
    Tensor<double> g = testutil::random_tensor<double>(Shape{1, 2, 1, 1}, 32, 0.5, 1.5);
    Tensor<double> b = testutil::random_tensor<double>(Shape{1, 2, 1, 1}, 33, -0.5, 0.5);
    for (bool training : {true, false}) {
        ops::BatchNormState<double> st;
        st.running_mean.assign(2, 0.1);
        st.running_var.assign(2, 0.8);
        // keep running statistics frozen between finite-difference probes
        auto fwd = [&] {
            ops::BatchNormState<double> local = st;
            return ops::batchnorm(x, g, b, local, training);
        };
        check_gradients({x, g, b}, fwd, 20, training ? 600 : 700);
    }
}

TEST_CASE("pool, loss and structural op gradients") {
    Tensor<double> x = testutil::random_tensor<double>(Shape{2, 3, 4, 4}, 41);
    check_gradients({x}, [&] { return ops::global_avg_pool(x); }, 16, 800);

    Tensor<double> z = testutil::random_tensor<double>(Shape{4, 7, 1, 1}, 42, -2, 2);
    const std::vector<int> labels{1, 0, 6, 3};
    check_gradients({z}, [&] { return ops::cross_entropy_smoothed(z, labels, 0.1); }, 20, 900);

    Tensor<double> s = testutil::random_tensor<double>(Shape{2, 6, 5, 5}, 43);
    check_gradients({s},
                    [&] {
                        Tensor<double> a = ops::channel_slice(s, 0, 3);
                        Tensor<double> b = ops::channel_slice(s, 3, 6);
                        return ops::concat_channels(ops::subsample2(a), ops::subsample2(b));
                    },
                    20, 1000);
}

TEST_CASE("relu gradient on random data") {
    Tensor<double> x = testutil::random_tensor<double>(Shape{2, 3, 5, 5}, 44, -1.0, 1.0);
    check_gradients({x}, [&] { return ops::relu(x); }, 24, 1100);
}

TEST_CASE("separable blur gradients, replicate and zero padding") {
    const std::vector<double> k{0.05, 0.25, 0.4, 0.25, 0.05};
    for (Padding pad : {Padding::Replicate, Padding::Zero}) {
        Tensor<double> x = testutil::random_tensor<double>(Shape{2, 2, 6, 6}, 45);
        check_gradients({x}, [&] { return ops::separable_conv2d(x, k, pad); }, 24,
                        pad == Padding::Zero ? 1200 : 1300);
    }
}

TEST_CASE("gradient flows through a fixed-kernel half-split block") {
    // A miniature of the derivative block: fixed bank on the front half,
    // identity pass-through on the back half, learned pointwise mixing.
    Tensor<double> x = testutil::random_tensor<double>(Shape{2, 4, 6, 6}, 51);
    Tensor<double> bank = testutil::random_tensor<double>(Shape{2, 1, 3, 3}, 52);  // off-tape constants
    Tensor<double> pw = testutil::random_tensor<double>(Shape{6, 4, 1, 1}, 53);
    for (int64_t stride : {1, 2}) {
        auto fwd = [&] {
            Tensor<double> front = ops::channel_slice(x, 0, 2);
            Tensor<double> back = ops::channel_slice(x, 2, 4);
            Tensor<double> f = ops::conv2d(front, bank, stride, 1, 2);
            Tensor<double> p = stride == 2 ? ops::subsample2(back) : back;
            return ops::pointwise_conv(ops::concat_channels(f, p), pw);
        };
        check_gradients({x, pw}, fwd, 24, 1400 + stride);
    }
    CHECK_FALSE(bank.on_tape());
}
