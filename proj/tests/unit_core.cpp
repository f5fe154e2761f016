// Exercises the reverse-mode tape against two independent references:
// scalar-loop reimplementations of the structured ops, and central finite
// differences of the scalar loss for every gradient path.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "volseg/autodiff.hpp"
#include "volseg/rng.hpp"

using volseg::Rng;
using volseg::Tensor;
using volseg::ad::NodeId;
using volseg::ad::Stride3;
using volseg::ad::Tape;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

/// Scalar probe loss: fixed random linear functional of the output, so every
/// output element influences the loss with a distinct weight.
NodeId dot_loss(Tape& t, NodeId y, const Tensor& coeff) {
    const Tensor& vy = t.value(y);
    REQUIRE(vy.numel() == coeff.numel());
    double acc = 0.0;
    for (int64_t i = 0; i < vy.numel(); ++i) acc += coeff[i] * vy[i];
    NodeId self = t.custom(Tensor::scalar(acc), {y}, nullptr);
    t.node(self).backward = [self, y, coeff](Tape& tp) {
        if (!tp.requires_grad(y)) return;
        const double g = tp.node(self).grad[0];
        Tensor& pg = tp.grad_buffer(y);
        for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += g * coeff[i];
    };
    return self;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::fabs(a[i] - b[i]));
    return worst;
}

/// Direct six-loop conv3d used as the oracle for the im2col/GEMM path.
Tensor conv3d_reference(const Tensor& x, const Tensor& w, const Tensor& b,
                        Stride3 stride, Stride3 pad) {
    const int64_t n = x.dim(0), ci = x.dim(1), z = x.dim(2), y = x.dim(3), xx = x.dim(4);
    const int64_t co = w.dim(0), kz = w.dim(2), ky = w.dim(3), kx = w.dim(4);
    const int64_t oz = (z + 2 * pad[0] - kz) / stride[0] + 1;
    const int64_t oy = (y + 2 * pad[1] - ky) / stride[1] + 1;
    const int64_t ox = (xx + 2 * pad[2] - kx) / stride[2] + 1;
    Tensor out({n, co, oz, oy, ox});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < co; ++c)
            for (int64_t az = 0; az < oz; ++az)
                for (int64_t ay = 0; ay < oy; ++ay)
                    for (int64_t ax = 0; ax < ox; ++ax) {
                        double acc = b.empty() ? 0.0 : b[c];
                        for (int64_t ic = 0; ic < ci; ++ic)
                            for (int64_t fz = 0; fz < kz; ++fz)
                                for (int64_t fy = 0; fy < ky; ++fy)
                                    for (int64_t fx = 0; fx < kx; ++fx) {
                                        const int64_t iz = az * stride[0] - pad[0] + fz;
                                        const int64_t iy = ay * stride[1] - pad[1] + fy;
                                        const int64_t ix = ax * stride[2] - pad[2] + fx;
                                        if (iz < 0 || iz >= z || iy < 0 || iy >= y ||
                                            ix < 0 || ix >= xx)
                                            continue;
                                        acc += x[x.at5(i, ic, iz, iy, ix)] *
                                               w[w.at5(c, ic, fz, fy, fx)];
                                    }
                        out[out.at5(i, c, az, ay, ax)] = acc;
                    }
    return out;
}

constexpr double kFdStep = 1e-5;
constexpr double kGradTol = 1e-6;

}  // namespace

TEST_CASE("conv3d forward matches direct summation") {
    Rng rng(41);
    const Tensor x = random_tensor({2, 3, 5, 6, 7}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3, 3}, rng, 0.3);
    const Tensor b = random_tensor({4}, rng);

    for (auto [stride, pad] : std::vector<std::pair<Stride3, Stride3>>{
             {{1, 1, 1}, {1, 1, 1}},
             {{1, 2, 2}, {1, 1, 1}},
             {{2, 2, 2}, {1, 1, 1}},
             {{1, 1, 1}, {0, 0, 0}}}) {
        Tape t;
        NodeId out = t.conv3d(t.constant(x), t.constant(w), t.constant(b), stride, pad);
        Tensor ref = conv3d_reference(x, w, b, stride, pad);
        CHECK(t.value(out).same_shape(ref));
        CHECK(max_abs_diff(t.value(out), ref) < 1e-12);
    }
}

TEST_CASE("conv3d pointwise fast path matches direct summation") {
    Rng rng(42);
    const Tensor x = random_tensor({2, 5, 3, 4, 4}, rng);
    const Tensor w = random_tensor({3, 5, 1, 1, 1}, rng);
    const Tensor b = random_tensor({3}, rng);
    Tape t;
    NodeId out = t.conv3d(t.constant(x), t.constant(w), t.constant(b),
                          {1, 1, 1}, {0, 0, 0});
    Tensor ref = conv3d_reference(x, w, b, {1, 1, 1}, {0, 0, 0});
    CHECK(max_abs_diff(t.value(out), ref) < 1e-12);
}

TEST_CASE("conv3d gradients match finite differences") {
    Rng rng(43);
    const Tensor x0 = random_tensor({2, 2, 3, 4, 5}, rng);
    const Tensor w0 = random_tensor({3, 2, 3, 3, 3}, rng, 0.3);
    const Tensor b0 = random_tensor({3}, rng);
    const Stride3 stride{1, 2, 2}, pad{1, 1, 1};
    Rng crng(7);
    Tensor coeff;

    auto run = [&](const Tensor& x, const Tensor& w, const Tensor& b,
                   Tensor* gx, Tensor* gw, Tensor* gb) {
        Tape t;
        NodeId xn = t.leaf(x, true), wn = t.leaf(w, true), bn = t.leaf(b, true);
        NodeId out = t.conv3d(xn, wn, bn, stride, pad);
        if (coeff.empty()) coeff = random_tensor(t.value(out).shape(), crng);
        NodeId loss = dot_loss(t, out, coeff);
        t.backward(loss);
        if (gx) *gx = t.grad(xn);
        if (gw) *gw = t.grad(wn);
        if (gb) *gb = t.grad(bn);
        return t.value(loss)[0];
    };

    Tensor gx, gw, gb;
    run(x0, w0, b0, &gx, &gw, &gb);

    Tensor fd_x = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(p, w0, b0, nullptr, nullptr, nullptr); },
        x0, kFdStep);
    Tensor fd_w = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(x0, p, b0, nullptr, nullptr, nullptr); },
        w0, kFdStep);
    Tensor fd_b = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(x0, w0, p, nullptr, nullptr, nullptr); },
        b0, kFdStep);

    CHECK(volseg::ad::max_relative_error(gx, fd_x, 1e-6) < kGradTol);
    CHECK(volseg::ad::max_relative_error(gw, fd_w, 1e-6) < kGradTol);
    CHECK(volseg::ad::max_relative_error(gb, fd_b, 1e-6) < kGradTol);
}

TEST_CASE("conv3d_transpose forward scatters disjoint blocks") {
    Rng rng(44);
    const Stride3 stride{1, 2, 2};
    const Tensor x = random_tensor({2, 3, 2, 3, 3}, rng);
    const Tensor w = random_tensor({3, 2, 1, 2, 2}, rng);
    const Tensor b = random_tensor({2}, rng);
    Tape t;
    NodeId out = t.conv3d_transpose(t.constant(x), t.constant(w), t.constant(b), stride);
    const Tensor& o = t.value(out);
    REQUIRE(o.shape() == std::vector<int64_t>{2, 2, 2, 6, 6});

    // Direct oracle: out[n,co, iz*sz+fz, iy*sy+fy, ix*sx+fx] = b + sum_ci x*w.
    double worst = 0.0;
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t iz = 0; iz < 2; ++iz)
                for (int64_t iy = 0; iy < 3; ++iy)
                    for (int64_t ix = 0; ix < 3; ++ix)
                        for (int64_t fz = 0; fz < stride[0]; ++fz)
                            for (int64_t fy = 0; fy < stride[1]; ++fy)
                                for (int64_t fx = 0; fx < stride[2]; ++fx) {
                                    double acc = b[c];
                                    for (int64_t ic = 0; ic < 3; ++ic)
                                        acc += x[x.at5(i, ic, iz, iy, ix)] *
                                               w[w.at5(ic, c, fz, fy, fx)];
                                    const double got = o[o.at5(
                                        i, c, iz * stride[0] + fz,
                                        iy * stride[1] + fy, ix * stride[2] + fx)];
                                    worst = std::max(worst, std::fabs(got - acc));
                                }
    CHECK(worst < 1e-12);
}

TEST_CASE("conv3d_transpose gradients match finite differences") {
    Rng rng(45);
    const Stride3 stride{2, 2, 2};
    const Tensor x0 = random_tensor({2, 3, 2, 2, 3}, rng);
    const Tensor w0 = random_tensor({3, 2, 2, 2, 2}, rng);
    const Tensor b0 = random_tensor({2}, rng);
    Rng crng(8);
    Tensor coeff;

    auto run = [&](const Tensor& x, const Tensor& w, const Tensor& b,
                   Tensor* gx, Tensor* gw, Tensor* gb) {
        Tape t;
        NodeId xn = t.leaf(x, true), wn = t.leaf(w, true), bn = t.leaf(b, true);
        NodeId out = t.conv3d_transpose(xn, wn, bn, stride);
        if (coeff.empty()) coeff = random_tensor(t.value(out).shape(), crng);
        NodeId loss = dot_loss(t, out, coeff);
        t.backward(loss);
        if (gx) *gx = t.grad(xn);
        if (gw) *gw = t.grad(wn);
        if (gb) *gb = t.grad(bn);
        return t.value(loss)[0];
    };

    Tensor gx, gw, gb;
    run(x0, w0, b0, &gx, &gw, &gb);
    Tensor fd_x = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(p, w0, b0, nullptr, nullptr, nullptr); },
        x0, kFdStep);
    Tensor fd_w = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(x0, p, b0, nullptr, nullptr, nullptr); },
        w0, kFdStep);
    Tensor fd_b = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(x0, w0, p, nullptr, nullptr, nullptr); },
        b0, kFdStep);
    CHECK(volseg::ad::max_relative_error(gx, fd_x, 1e-6) < kGradTol);
    CHECK(volseg::ad::max_relative_error(gw, fd_w, 1e-6) < kGradTol);
    CHECK(volseg::ad::max_relative_error(gb, fd_b, 1e-6) < kGradTol);
}

TEST_CASE("instance_norm standardizes each sample-channel slab") {
    Rng rng(46);
    const Tensor x = random_tensor({2, 3, 2, 3, 3}, rng, 4.0);
    Tape t;
    NodeId out = t.instance_norm(t.constant(x), t.constant(Tensor::full({3}, 1.0)),
                                 t.constant(Tensor({3})), 1e-5);
    const Tensor& o = t.value(out);
    const int64_t sp = 2 * 3 * 3;
    for (int64_t i = 0; i < 2 * 3; ++i) {
        double mean = 0.0, var = 0.0;
        for (int64_t v = 0; v < sp; ++v) mean += o[i * sp + v];
        mean /= sp;
        for (int64_t v = 0; v < sp; ++v) {
            const double d = o[i * sp + v] - mean;
            var += d * d;
        }
        var /= sp;
        CHECK(std::fabs(mean) < 1e-12);
        CHECK(std::fabs(var - 1.0) < 1e-4);  // eps shifts variance slightly below 1
    }
}

TEST_CASE("instance_norm gradients match finite differences") {
    Rng rng(47);
    const Tensor x0 = random_tensor({2, 2, 2, 3, 3}, rng, 2.0);
    const Tensor g0 = random_tensor({2}, rng);
    const Tensor b0 = random_tensor({2}, rng);
    Rng crng(9);
    Tensor coeff;

    auto run = [&](const Tensor& x, const Tensor& g, const Tensor& b,
                   Tensor* gx, Tensor* gg, Tensor* gb) {
        Tape t;
        NodeId xn = t.leaf(x, true), gn = t.leaf(g, true), bn = t.leaf(b, true);
        NodeId out = t.instance_norm(xn, gn, bn, 1e-5);
        if (coeff.empty()) coeff = random_tensor(t.value(out).shape(), crng);
        NodeId loss = dot_loss(t, out, coeff);
        t.backward(loss);
        if (gx) *gx = t.grad(xn);
        if (gg) *gg = t.grad(gn);
        if (gb) *gb = t.grad(bn);
        return t.value(loss)[0];
    };

    Tensor gx, gg, gb;
    run(x0, g0, b0, &gx, &gg, &gb);
    Tensor fd_x = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(p, g0, b0, nullptr, nullptr, nullptr); },
        x0, kFdStep);
    Tensor fd_g = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(x0, p, b0, nullptr, nullptr, nullptr); },
        g0, kFdStep);
    Tensor fd_b = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(x0, g0, p, nullptr, nullptr, nullptr); },
        b0, kFdStep);
    CHECK(volseg::ad::max_relative_error(gx, fd_x, 1e-6) < kGradTol);
    CHECK(volseg::ad::max_relative_error(gg, fd_g, 1e-6) < kGradTol);
    CHECK(volseg::ad::max_relative_error(gb, fd_b, 1e-6) < kGradTol);
}

TEST_CASE("feature_norm gradients match finite differences") {
    Rng rng(48);
    const Tensor x0 = random_tensor({3, 8}, rng, 2.0);
    const Tensor g0 = random_tensor({8}, rng);
    const Tensor b0 = random_tensor({8}, rng);
    Rng crng(10);
    Tensor coeff;

    auto run = [&](const Tensor& x, const Tensor& g, const Tensor& b,
                   Tensor* gx, Tensor* gg, Tensor* gb) {
        Tape t;
        NodeId xn = t.leaf(x, true), gn = t.leaf(g, true), bn = t.leaf(b, true);
        NodeId out = t.feature_norm(xn, gn, bn, 1e-5);
        if (coeff.empty()) coeff = random_tensor(t.value(out).shape(), crng);
        NodeId loss = dot_loss(t, out, coeff);
        t.backward(loss);
        if (gx) *gx = t.grad(xn);
        if (gg) *gg = t.grad(gn);
        if (gb) *gb = t.grad(bn);
        return t.value(loss)[0];
    };

    Tensor gx, gg, gb;
    run(x0, g0, b0, &gx, &gg, &gb);
    Tensor fd_x = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(p, g0, b0, nullptr, nullptr, nullptr); },
        x0, kFdStep);
    Tensor fd_g = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(x0, p, b0, nullptr, nullptr, nullptr); },
        g0, kFdStep);
    Tensor fd_b = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(x0, g0, p, nullptr, nullptr, nullptr); },
        b0, kFdStep);
    CHECK(volseg::ad::max_relative_error(gx, fd_x, 1e-6) < kGradTol);
    CHECK(volseg::ad::max_relative_error(gg, fd_g, 1e-6) < kGradTol);
    CHECK(volseg::ad::max_relative_error(gb, fd_b, 1e-6) < kGradTol);
}

TEST_CASE("elementwise and pooling op gradients match finite differences") {
    Rng rng(49);
    const Tensor x0 = random_tensor({2, 3, 2, 2, 2}, rng);
    const Tensor y0 = random_tensor({2, 3, 2, 2, 2}, rng);
    const Tensor w0 = random_tensor({4, 6}, rng);  // pooled 2x3 concat -> 6 features
    Rng crng(11);
    Tensor coeff;

    // Chain touches concat, add, sub, affine, leaky_relu, pool, linear,
    // sigmoid, channel_scale and weighted_sum in a single graph.
    auto run = [&](const Tensor& x, const Tensor& y, const Tensor& w, Tensor* gx,
                   Tensor* gy, Tensor* gw) {
        Tape t;
        NodeId xn = t.leaf(x, true), yn = t.leaf(y, true), wn = t.leaf(w, true);
        NodeId s = t.add(xn, yn);
        NodeId d = t.sub(xn, yn);
        NodeId act = t.leaky_relu(t.affine(s, 1.5, -0.25), 0.01);
        NodeId cat = t.concat_channels(act, d);             // [2,6,2,2,2]
        NodeId pooled = t.global_avg_pool(cat);             // [2,6]
        NodeId lin = t.linear(pooled, wn);                  // [2,4]
        NodeId gate = t.sigmoid(lin);
        // Reuse the first three gate columns as per-channel scales.
        Tensor gv({2, 3});
        for (int64_t i = 0; i < 2; ++i)
            for (int64_t c = 0; c < 3; ++c) gv[i * 3 + c] = t.value(gate)[i * 4 + c];
        NodeId gate3 = t.custom(gv, {gate}, nullptr);
        t.node(gate3).backward = [gate3, gate](Tape& tp) {
            if (!tp.requires_grad(gate)) return;
            const Tensor& g = tp.node(gate3).grad;
            Tensor& pg = tp.grad_buffer(gate);
            for (int64_t i = 0; i < 2; ++i)
                for (int64_t c = 0; c < 3; ++c) pg[i * 4 + c] += g[i * 3 + c];
        };
        NodeId scaled = t.channel_scale(xn, gate3);
        if (coeff.empty()) coeff = random_tensor(t.value(scaled).shape(), crng);
        NodeId l1 = dot_loss(t, scaled, coeff);
        NodeId l2 = dot_loss(t, gate, Tensor::full({2, 4}, 0.125));
        NodeId loss = t.weighted_sum({l1, l2}, {0.75, 0.25});
        t.backward(loss);
        if (gx) *gx = t.grad(xn);
        if (gy) *gy = t.grad(yn);
        if (gw) *gw = t.grad(wn);
        return t.value(loss)[0];
    };

    Tensor gx, gy, gw;
    run(x0, y0, w0, &gx, &gy, &gw);
    Tensor fd_x = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(p, y0, w0, nullptr, nullptr, nullptr); },
        x0, kFdStep);
    Tensor fd_y = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(x0, p, w0, nullptr, nullptr, nullptr); },
        y0, kFdStep);
    Tensor fd_w = volseg::ad::finite_difference(
        [&](const Tensor& p) { return run(x0, y0, p, nullptr, nullptr, nullptr); },
        w0, kFdStep);
    CHECK(volseg::ad::max_relative_error(gx, fd_x, 1e-6) < kGradTol);
    CHECK(volseg::ad::max_relative_error(gy, fd_y, 1e-6) < kGradTol);
    CHECK(volseg::ad::max_relative_error(gw, fd_w, 1e-6) < kGradTol);
}

TEST_CASE("frozen leaves are skipped by backward") {
    Rng rng(50);
    const Tensor x = random_tensor({1, 2, 3, 4, 4}, rng);
    const Tensor w1 = random_tensor({3, 2, 3, 3, 3}, rng, 0.3);
    const Tensor b1 = random_tensor({3}, rng);
    const Tensor w2 = random_tensor({2, 3, 1, 1, 1}, rng);
    const Tensor b2 = random_tensor({2}, rng);

    Tape t;
    NodeId xn = t.constant(x);
    NodeId w1n = t.leaf(w1, false), b1n = t.leaf(b1, false);  // frozen stage
    NodeId h = t.conv3d(xn, w1n, b1n, {1, 1, 1}, {1, 1, 1});
    NodeId w2n = t.leaf(w2, true), b2n = t.leaf(b2, true);
    NodeId out = t.conv3d(h, w2n, b2n, {1, 1, 1}, {0, 0, 0});
    NodeId loss = dot_loss(t, out, Tensor::full(t.value(out).shape(), 0.01));
    t.backward(loss);

    // Trainable parameters accumulate; frozen ones never get an accumulator.
    CHECK(!t.node(w2n).grad.empty());
    CHECK(!t.node(b2n).grad.empty());
    CHECK(t.node(w1n).grad.empty());
    CHECK(t.node(b1n).grad.empty());
    CHECK(t.node(h).grad.empty());
    CHECK_FALSE(t.requires_grad(h));

    double gsum = 0.0;
    for (int64_t i = 0; i < t.grad(w2n).numel(); ++i)
        gsum += std::fabs(t.grad(w2n)[i]);
    CHECK(gsum > 0.0);
}

TEST_CASE("identical seeds give bitwise-identical gradients") {
    auto run = [](Tensor* gw) {
        Rng rng(51);
        const Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
        const Tensor w = random_tensor({2, 2, 3, 3, 3}, rng, 0.3);
        const Tensor b = random_tensor({2}, rng);
        Tape t;
        NodeId xn = t.constant(x);
        NodeId wn = t.leaf(w, true), bn = t.leaf(b, true);
        NodeId out = t.conv3d(xn, wn, bn, {1, 2, 2}, {1, 1, 1});
        NodeId act = t.leaky_relu(out, 0.01);
        NodeId loss = dot_loss(t, act, Tensor::full(t.value(act).shape(), 0.02));
        t.backward(loss);
        *gw = t.grad(wn);
        return t.value(loss)[0];
    };
    Tensor g1, g2;
    const double l1 = run(&g1);
    const double l2 = run(&g2);
    CHECK(l1 == l2);
    CHECK(volseg::bitwise_equal(g1, g2));
}
