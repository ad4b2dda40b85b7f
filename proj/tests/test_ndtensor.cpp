// Tensor core: operation semantics against independent oracles, optimizer
// recursions, schedules, checkpoint container.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gssd/checkpoint.hpp"
#include "gssd/errors.hpp"
#include "gssd/ops.hpp"
#include "gssd/optim.hpp"
#include "testutil.hpp"

using namespace gssd;

namespace {

// Direct six-nested-loop convolution, the reference for conv2d.
template <class T>
Tensor<T> conv2d_oracle(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, int64_t pad,
                        int64_t groups) {
    const Shape xs = x.shape(), ws = w.shape();
    const int64_t OH = (xs.h + 2 * pad - ws.h) / stride + 1;
    const int64_t OW = (xs.w + 2 * pad - ws.w) / stride + 1;
    const int64_t cpg = xs.c / groups, opg = ws.n / groups;
    Tensor<T> out(Shape{xs.n, ws.n, OH, OW});
    for (int64_t b = 0; b < xs.n; ++b)
        for (int64_t oc = 0; oc < ws.n; ++oc)
            for (int64_t oh = 0; oh < OH; ++oh)
                for (int64_t ow = 0; ow < OW; ++ow) {
                    T acc = 0;
                    const int64_t g = oc / opg;
                    for (int64_t icl = 0; icl < cpg; ++icl)
                        for (int64_t kh = 0; kh < ws.h; ++kh)
                            for (int64_t kw = 0; kw < ws.w; ++kw) {
                                const int64_t ih = oh * stride + kh - pad;
                                const int64_t iw = ow * stride + kw - pad;
                                if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) continue;
                                acc += x.at(b, g * cpg + icl, ih, iw) * w.at(oc, icl, kh, kw);
                            }
                    out.at(b, oc, oh, ow) = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("tensor shape contract") {
    CHECK_THROWS_AS(Tensor<float>::from(Shape{1, 1, 2, 2}, {1.0f, 2.0f}), std::invalid_argument);
    Tensor<float> t(Shape{2, 3, 4, 5});
    CHECK(t.numel() == 120);
    CHECK(t.shape().index(1, 2, 3, 4) == 119);
}

TEST_CASE("conv2d sum-of-ones and identity") {
    Tensor<double> ones(Shape{1, 1, 3, 3}, 1.0);
    Tensor<double> kernel(Shape{1, 1, 3, 3}, 1.0);
    Tensor<double> out = ops::conv2d(ones, kernel, 1, 0);
    CHECK(out.shape() == Shape{1, 1, 1, 1});
    CHECK(out.data()[0] == doctest::Approx(9.0));

    // identity kernel: single 1 at center, padding = radius
    Tensor<double> x = testutil::random_tensor<double>(Shape{2, 3, 6, 7}, 42);
    Tensor<double> id(Shape{3, 1, 3, 3}, 0.0);
    for (int64_t c = 0; c < 3; ++c) id.at(c, 0, 1, 1) = 1.0;
    Tensor<double> y = ops::conv2d(x, id, 1, 1, 3);
    CHECK(testutil::max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d matches the six-nested-loop oracle") {
    struct Case {
        Shape xs, ws;
        int64_t stride, pad, groups;
    };
    const Case cases[] = {
        {{2, 3, 8, 8}, {4, 3, 3, 3}, 1, 0, 1},
        {{4, 8, 16, 16}, {6, 8, 3, 3}, 1, 1, 1},
        {{2, 4, 9, 11}, {4, 1, 3, 3}, 2, 1, 4},
        {{1, 6, 10, 10}, {9, 2, 5, 5}, 2, 2, 3},
        {{2, 2, 7, 7}, {2, 1, 7, 7}, 2, 3, 2},
        {{1, 1, 8, 8}, {1, 1, 3, 3}, 3, 1, 1},
    };
    for (const auto& c : cases) {
        Tensor<double> x = testutil::random_tensor<double>(c.xs, 7 * c.ws.n + c.stride);
        Tensor<double> w = testutil::random_tensor<double>(c.ws, 13 * c.ws.n + c.pad);
        Tensor<double> got = ops::conv2d(x, w, c.stride, c.pad, c.groups);
        Tensor<double> want = conv2d_oracle(x, w, c.stride, c.pad, c.groups);
        CHECK(got.shape() == want.shape());
        CHECK(testutil::max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("conv2d rejects mismatched shapes with a named dimension") {
    Tensor<float> x(Shape{1, 5, 4, 4});
    Tensor<float> w(Shape{2, 2, 3, 3});
    CHECK_THROWS_WITH_AS(ops::conv2d(x, w, 1, 1, 2),
                         doctest::Contains("input channels 5 not divisible by groups 2"),
                         std::invalid_argument);
    Tensor<float> x2(Shape{1, 4, 4, 4});
    CHECK_THROWS_WITH_AS(ops::conv2d(x2, w, 1, 1, 1),
                         doctest::Contains("weight in-channels 2 != input channels per group 4"),
                         std::invalid_argument);
    CHECK_THROWS_AS(ops::conv2d(x2, w, 0, 1, 2), std::invalid_argument);
    Tensor<float> big(Shape{1, 4, 2, 2});
    Tensor<float> wbig(Shape{2, 4, 5, 5});
    CHECK_THROWS_AS(ops::conv2d(big, wbig, 1, 0, 1), std::invalid_argument);
}

TEST_CASE("depthwise_conv2d") {
    // identity kernels reproduce the input
    Tensor<double> x = testutil::random_tensor<double>(Shape{1, 2, 5, 5}, 3);
    Tensor<double> id(Shape{2, 1, 3, 3}, 0.0);
    id.at(0, 0, 1, 1) = 1.0;
    id.at(1, 0, 1, 1) = 1.0;
    CHECK(testutil::max_abs_diff(ops::depthwise_conv2d(x, id, 1, 1), x) == 0.0);

    // an all-zero kernel annihilates its channel only
    Tensor<double> z = id.clone_detached();
    z.at(0, 0, 1, 1) = 0.0;
    Tensor<double> out = ops::depthwise_conv2d(x, z, 1, 1);
    for (int64_t i = 0; i < 25; ++i) CHECK(out.data()[i] == 0.0);
    CHECK(out.at(0, 1, 2, 2) == x.at(0, 1, 2, 2));

    // bitwise equality with grouped conv2d
    Tensor<double> k = testutil::random_tensor<double>(Shape{2, 1, 3, 3}, 5);
    Tensor<double> a = ops::depthwise_conv2d(x, k, 2, 1);
    Tensor<double> b = ops::conv2d(x, k, 2, 1, 2);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);

    Tensor<double> bad(Shape{3, 1, 3, 3});
    CHECK_THROWS_WITH_AS(ops::depthwise_conv2d(x, bad, 1, 1),
                         doctest::Contains("kernel count 3 != channel count 2"), std::invalid_argument);
}

TEST_CASE("pointwise_conv") {
    Tensor<double> x = testutil::random_tensor<double>(Shape{2, 3, 4, 4}, 11);
    Tensor<double> id(Shape{3, 3, 1, 1}, 0.0);
    for (int64_t c = 0; c < 3; ++c) id.at(c, c, 0, 0) = 1.0;
    CHECK(testutil::max_abs_diff(ops::pointwise_conv(x, id), x) == 0.0);

    // single output channel of ones sums the input channels
    Tensor<double> sumw(Shape{1, 3, 1, 1}, 1.0);
    Tensor<double> s = ops::pointwise_conv(x, sumw);
    for (int64_t p = 0; p < 16; ++p) {
        double want = x.data()[p] + x.data()[16 + p] + x.data()[32 + p];
        CHECK(s.data()[p] == doctest::Approx(want).epsilon(1e-14));
    }

    // per-pixel matrix multiply oracle
    Tensor<double> w = testutil::random_tensor<double>(Shape{5, 3, 1, 1}, 13);
    Tensor<double> got = ops::pointwise_conv(x, w);
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t oc = 0; oc < 5; ++oc)
            for (int64_t h = 0; h < 4; ++h)
                for (int64_t ww = 0; ww < 4; ++ww) {
                    double want = 0;
                    for (int64_t ic = 0; ic < 3; ++ic) want += w.at(oc, ic, 0, 0) * x.at(b, ic, h, ww);
                    CHECK(std::abs(got.at(b, oc, h, ww) - want) < 1e-12);
                }

    Tensor<double> wbad(Shape{5, 4, 1, 1});
    CHECK_THROWS_AS(ops::pointwise_conv(x, wbad), std::invalid_argument);
}

TEST_CASE("batchnorm training normalizes and tracks running statistics") {
    const int64_t C = 3;
    Tensor<double> x = testutil::random_tensor<double>(Shape{4, C, 6, 6}, 21, -2.0, 5.0);
    Tensor<double> gamma(Shape{1, C, 1, 1}, 1.0);
    Tensor<double> beta(Shape{1, C, 1, 1}, 0.0);
    ops::BatchNormState<double> st;
    st.running_mean.assign(C, 0.0);
    st.running_var.assign(C, 1.0);
    Tensor<double> y = ops::batchnorm(x, gamma, beta, st, true);

    const int64_t N = 4 * 36;
    for (int64_t c = 0; c < C; ++c) {
        double mean = 0, var = 0;
        for (int64_t b = 0; b < 4; ++b)
            for (int64_t i = 0; i < 36; ++i) mean += y.data()[(b * C + c) * 36 + i];
        mean /= N;
        for (int64_t b = 0; b < 4; ++b)
            for (int64_t i = 0; i < 36; ++i) {
                const double d = y.data()[(b * C + c) * 36 + i] - mean;
                var += d * d;
            }
        var /= N;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }

    // constant channel collapses to beta
    Tensor<double> cx(Shape{2, 1, 3, 3}, 7.5);
    Tensor<double> g1(Shape{1, 1, 1, 1}, 2.0), b1(Shape{1, 1, 1, 1}, 0.25);
    ops::BatchNormState<double> st1;
    st1.running_mean.assign(1, 0.0);
    st1.running_var.assign(1, 1.0);
    Tensor<double> cy = ops::batchnorm(cx, g1, b1, st1, true);
    for (int64_t i = 0; i < cy.numel(); ++i) CHECK(cy.data()[i] == doctest::Approx(0.25).epsilon(1e-9));

    // running-statistics recursion over two steps against a scalar oracle
    ops::BatchNormState<double> st2;
    st2.running_mean.assign(1, 0.0);
    st2.running_var.assign(1, 1.0);
    Tensor<double> xa = testutil::random_tensor<double>(Shape{3, 1, 2, 2}, 31);
    double bm = 0, bv = 0;
    for (int64_t i = 0; i < xa.numel(); ++i) bm += xa.data()[i];
    bm /= static_cast<double>(xa.numel());
    for (int64_t i = 0; i < xa.numel(); ++i) bv += (xa.data()[i] - bm) * (xa.data()[i] - bm);
    bv /= static_cast<double>(xa.numel());
    double rm = 0.0, rv = 1.0;
    for (int step = 0; step < 2; ++step) {
        ops::batchnorm(xa, g1, b1, st2, true);
        rm = 0.9 * rm + 0.1 * bm;
        rv = 0.9 * rv + 0.1 * bv;
    }
    CHECK(st2.running_mean[0] == doctest::Approx(rm).epsilon(1e-12));
    CHECK(st2.running_var[0] == doctest::Approx(rv).epsilon(1e-12));

    // eval mode is a fixed affine map per channel, so mixing commutes with it
    Tensor<double> x1 = testutil::random_tensor<double>(Shape{2, 1, 3, 3}, 41);
    Tensor<double> x2 = testutil::random_tensor<double>(Shape{2, 1, 3, 3}, 43);
    Tensor<double> mix(Shape{2, 1, 3, 3});
    for (int64_t i = 0; i < mix.numel(); ++i) mix.data()[i] = 0.3 * x1.data()[i] + 0.7 * x2.data()[i];
    Tensor<double> e1 = ops::batchnorm(x1, g1, b1, st2, false);
    Tensor<double> e2 = ops::batchnorm(x2, g1, b1, st2, false);
    Tensor<double> em = ops::batchnorm(mix, g1, b1, st2, false);
    for (int64_t i = 0; i < mix.numel(); ++i)
        CHECK(em.data()[i] == doctest::Approx(0.3 * e1.data()[i] + 0.7 * e2.data()[i]).epsilon(1e-10));

    Tensor<double> empty(Shape{0, 1, 3, 3});
    CHECK_THROWS_AS(ops::batchnorm(empty, g1, b1, st2, true), std::invalid_argument);
}

TEST_CASE("relu") {
    Tensor<float> x = Tensor<float>::from(Shape{1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f});
    Tensor<float> y = ops::relu(x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == 0.0f);
    CHECK(y.data()[2] == 2.0f);
    Tensor<float> neg(Shape{2, 2, 2, 2}, -3.0f);
    Tensor<float> z = ops::relu(neg);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == 0.0f);
}

TEST_CASE("global_avg_pool") {
    Tensor<double> c(Shape{2, 3, 4, 4}, 1.25);
    Tensor<double> p = ops::global_avg_pool(c);
    CHECK(p.shape() == Shape{2, 3, 1, 1});
    for (int64_t i = 0; i < p.numel(); ++i) CHECK(p.data()[i] == doctest::Approx(1.25));

    Tensor<double> q = Tensor<double>::from(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(ops::global_avg_pool(q).data()[0] == doctest::Approx(2.5));

    Tensor<double> r = testutil::random_tensor<double>(Shape{3, 2, 5, 7}, 51);
    Tensor<double> pr = ops::global_avg_pool(r);
    for (int64_t b = 0; b < 3; ++b)
        for (int64_t ch = 0; ch < 2; ++ch) {
            double want = 0;
            for (int64_t h = 0; h < 5; ++h)
                for (int64_t w = 0; w < 7; ++w) want += r.at(b, ch, h, w);
            want /= 35.0;
            CHECK(std::abs(pr.at(b, ch, 0, 0) - want) < 1e-12);
        }
}

TEST_CASE("cross_entropy_smoothed") {
    const int64_t K = 10;
    // uniform logits, eps = 0: loss = log K
    Tensor<double> u(Shape{2, K, 1, 1}, 0.37);
    Tensor<double> l0 = ops::cross_entropy_smoothed(u, {3, 7}, 0.0);
    CHECK(l0.data()[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));

    // random logits vs direct summation with targets 0.91 / 0.01 (K=10, eps=0.1)
    Tensor<double> z = testutil::random_tensor<double>(Shape{3, K, 1, 1}, 61, -2, 2);
    const std::vector<int> labels{0, 4, 9};
    Tensor<double> loss = ops::cross_entropy_smoothed(z, labels, 0.1);
    double want = 0;
    for (int64_t b = 0; b < 3; ++b) {
        double mx = z.data()[b * K];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, z.data()[b * K + k]);
        double se = 0;
        for (int64_t k = 0; k < K; ++k) se += std::exp(z.data()[b * K + k] - mx);
        for (int64_t k = 0; k < K; ++k) {
            const double logp = z.data()[b * K + k] - mx - std::log(se);
            const double t = (k == labels[static_cast<size_t>(b)]) ? 0.91 : 0.01;
            want -= t * logp;
        }
    }
    want /= 3.0;
    CHECK(loss.data()[0] == doctest::Approx(want).epsilon(1e-10));

    CHECK_THROWS_AS(ops::cross_entropy_smoothed(z, {0, 4, 10}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(ops::cross_entropy_smoothed(z, labels, 1.0), std::invalid_argument);
}

TEST_CASE("sgd optimizer") {
    // mu=0, lambda=0, lr=1, w=1, g=0.5 -> 0.5
    Tensor<float> w(Shape{1, 1, 1, 1}, 1.0f);
    w.set_requires_grad(true);
    w.grad()[0] = 0.5f;
    SgdOptimizer<float> opt(0.0f, 0.0f);
    opt.register_param(w, false);
    opt.step(1.0f);
    CHECK(w.data()[0] == doctest::Approx(0.5f));

    // decay-exempt parameter with zero grad never moves, a decaying one does
    Tensor<float> bias(Shape{1, 1, 1, 1}, 2.0f);
    Tensor<float> weight(Shape{1, 1, 1, 1}, 2.0f);
    bias.set_requires_grad(true);
    weight.set_requires_grad(true);
    bias.grad()[0] = 0.0f;
    weight.grad()[0] = 0.0f;
    SgdOptimizer<float> opt2(0.9f, 0.01f);
    opt2.register_param(bias, true);
    opt2.register_param(weight, false);
    for (int i = 0; i < 5; ++i) opt2.step(0.1f);
    CHECK(bias.data()[0] == 2.0f);
    CHECK(weight.data()[0] != 2.0f);

    // momentum recursion on a scalar quadratic against a hand-rolled oracle
    Tensor<double> p(Shape{1, 1, 1, 1}, 1.0);
    p.set_requires_grad(true);
    SgdOptimizer<double> opt3(0.9, 0.0);
    opt3.register_param(p, false);
    double wref = 1.0, vref = 0.0;
    for (int s = 0; s < 3; ++s) {
        const double g = 2.0 * wref;
        p.zero_grad();
        p.grad()[0] = 2.0 * p.data()[0];
        opt3.step(0.1);
        vref = 0.9 * vref + g;
        wref -= 0.1 * vref;
    }
    CHECK(p.data()[0] == doctest::Approx(wref).epsilon(1e-12));
}

TEST_CASE("lr schedule") {
    LrSchedule s(0.2, 5, 100);
    CHECK(lr_at(s, 4) == doctest::Approx(0.2));
    CHECK(lr_at(s, 5) == doctest::Approx(0.2));
    CHECK(lr_at(s, 4) == lr_at(s, 5));  // continuity at the warmup/cosine boundary
    CHECK(lr_at(s, 0) == doctest::Approx(0.04));
    // frozen from an independent evaluation of 0.2*0.5*(1+cos(pi*94/95))
    CHECK(lr_at(s, 99) == doctest::Approx(5.467426590739511e-05).epsilon(1e-12));
    CHECK(lr_at(s, 99) >= 0.0);
    CHECK_THROWS_AS(lr_at(s, 100), std::invalid_argument);
    CHECK_THROWS_AS(lr_at(s, -1), std::invalid_argument);
    CHECK_THROWS_AS(LrSchedule(0.2, 10, 10), std::invalid_argument);
    CHECK_THROWS_AS(LrSchedule(0.2, 0, 10), std::invalid_argument);
}

TEST_CASE("checkpoint container round trip and canonical digest") {
    Checkpoint a;
    auto& e1 = a.add("weights/w1", {2, 3, 1, 1});
    for (size_t i = 0; i < e1.values.size(); ++i) e1.values[i] = static_cast<float>(i) * 0.5f;
    auto& e2 = a.add("alpha", {1, 4, 1, 1});
    for (size_t i = 0; i < e2.values.size(); ++i) e2.values[i] = -1.0f;

    const std::string path =
        (std::filesystem::temp_directory_path() / "gssd_test_ckpt.bin").string();
    save_checkpoint(a, path);
    Checkpoint b = load_checkpoint(path);
    CHECK(b.entries.size() == 2);
    const CheckpointEntry* w1 = b.find("weights/w1");
    REQUIRE(w1 != nullptr);
    CHECK(w1->extents == std::array<uint32_t, 4>{2, 3, 1, 1});
    CHECK(w1->values[3] == 1.5f);

    // digest is insertion-order independent (entries are canonicalized)
    Checkpoint c;
    auto& f2 = c.add("alpha", {1, 4, 1, 1});
    f2.values = a.entries[1].values;
    auto& f1 = c.add("weights/w1", {2, 3, 1, 1});
    f1.values = a.entries[0].values;
    CHECK(checkpoint_digest(a) == checkpoint_digest(c));
    CHECK(checkpoint_digest(a) == checkpoint_digest_file(path));

    c.entries[1].values[0] += 1.0f;
    CHECK(checkpoint_digest(a) != checkpoint_digest(c));

    // truncated file / bad magic rejected with format diagnostics
    std::vector<uint8_t> bytes = serialize_checkpoint(a);
    bytes.resize(bytes.size() - 7);
    CHECK_THROWS_AS(parse_checkpoint(bytes), CheckpointError);
    bytes[0] = 'X';
    CHECK_THROWS_AS(parse_checkpoint(bytes), CheckpointError);
    std::filesystem::remove(path);
}
