#include <catch2/catch_amalgamated.hpp>

#include "spikegate/conv.hpp"

using namespace spikegate;

namespace {

// Brute-force convolution oracle: six explicit loops, zero padding.
Tensor conv_oracle(const Tensor& x, const Tensor& w, int stride, int pad) {
    const int ci = x.dim(0), hi = x.dim(1), wi = x.dim(2);
    const int co = w.dim(0), k = w.dim(2);
    const int ho = (hi + 2 * pad - k) / stride + 1;
    const int wo = (wi + 2 * pad - k) / stride + 1;
    Tensor y({co, ho, wo});
    for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (int ic = 0; ic < ci; ++ic)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            int iy = oy * stride + ky - pad;
                            int ix = ox * stride + kx - pad;
                            double xv = (iy >= 0 && iy < hi && ix >= 0 && ix < wi)
                                            ? x.at(ic, iy, ix)
                                            : 0.0;
                            acc += w[((static_cast<std::size_t>(oc) * ci + ic) * k + ky) * k + kx] *
                                   xv;
                        }
                y.at(oc, oy, ox) = acc;
            }
    return y;
}

// Scalar loss for finite-difference checks: weighted sum of all outputs.
double block_loss(const Block& out, const Block& weights) {
    double acc = 0.0;
    for (std::size_t b = 0; b < out.size(); ++b)
        for (std::size_t t = 0; t < out[b].size(); ++t)
            for (std::size_t i = 0; i < out[b][t].size(); ++i)
                acc += out[b][t][i] * weights[b][t][i];
    return acc;
}

Block random_block(Rng& rng, int b, int t, std::vector<int> shape, double stddev = 1.0) {
    Block blk = make_block(b, t, shape);
    for (auto& seq : blk)
        for (auto& x : seq) fill_normal(x, rng, stddev);
    return blk;
}

}  // namespace

TEST_CASE("conv matches the six-loop oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        ConvSpec spec{1, 1, 3, 1, 0, 1, false};
        spec.in_ch = 1 + static_cast<int>(rng.below(3));
        spec.out_ch = 1 + static_cast<int>(rng.below(3));
        spec.stride = 1 + static_cast<int>(rng.below(2));
        spec.pad = static_cast<int>(rng.below(2));
        Conv2d conv(spec, rng);
        Tensor x({spec.in_ch, 6, 6});
        fill_normal(x, rng, 1.0);
        Tensor y = conv.forward(x);
        Tensor ref = conv_oracle(x, conv.weights(), spec.stride, spec.pad);
        REQUIRE(y.shape() == ref.shape());
        for (std::size_t i = 0; i < y.size(); ++i)
            REQUIRE(y[i] == Catch::Approx(ref[i]).epsilon(1e-12).margin(1e-12));
    }
}

TEST_CASE("conv 3x3 on 4x4 single channel against the oracle") {
    Rng rng(1);
    ConvSpec spec{1, 1, 3, 1, -1, 1, false};
    Conv2d conv(spec, rng);
    Tensor x({1, 4, 4});
    fill_normal(x, rng, 1.0);
    Tensor y = conv.forward(x);
    Tensor ref = conv_oracle(x, conv.weights(), 1, 1);
    for (std::size_t i = 0; i < y.size(); ++i)
        REQUIRE(y[i] == Catch::Approx(ref[i]).epsilon(1e-12).margin(1e-12));
}

TEST_CASE("ConvBnPool identity and zero configurations") {
    Rng rng(2);

    SECTION("1x1 identity kernel, BN off, pool 1 passes input through") {
        ConvSpec spec{2, 2, 1, 1, 0, 1, false};
        ConvBnPool layer(spec, rng);
        layer.conv().weights().fill(0.0);
        layer.conv().kernel_at(0, 0, 0, 0) = 1.0;
        layer.conv().kernel_at(1, 1, 0, 0) = 1.0;
        Block in = random_block(rng, 1, 2, {2, 3, 3});
        Block out = layer.forward_block(in, false);
        for (std::size_t t = 0; t < 2; ++t)
            for (std::size_t i = 0; i < in[0][t].size(); ++i)
                REQUIRE(out[0][t][i] == in[0][t][i]);
    }
    SECTION("zero kernels give zero output") {
        ConvSpec spec{2, 3, 3, 1, -1, 1, false};
        ConvBnPool layer(spec, rng);
        layer.conv().weights().fill(0.0);
        Block in = random_block(rng, 2, 2, {2, 4, 4});
        Block out = layer.forward_block(in, false);
        for (auto& seq : out)
            for (auto& x : seq) REQUIRE(x.max_abs() == 0.0);
    }
    SECTION("pool window larger than the feature map fails") {
        ConvSpec spec{1, 1, 3, 1, 0, 4, false};
        REQUIRE_THROWS_AS(spec.out_hw(5), ShapeError);
    }
}

TEST_CASE("avg_pool forward/backward agree with direct computation") {
    Rng rng(3);
    Tensor x({2, 4, 4});
    fill_normal(x, rng, 1.0);
    Tensor y = avg_pool(x, 2);
    REQUIRE(y.shape() == std::vector<int>{2, 2, 2});
    REQUIRE(y.at(0, 0, 0) ==
            Catch::Approx((x.at(0, 0, 0) + x.at(0, 0, 1) + x.at(0, 1, 0) + x.at(0, 1, 1)) / 4.0));
    Tensor dy({2, 2, 2});
    fill_normal(dy, rng, 1.0);
    Tensor dx = avg_pool_backward(dy, 2, x.shape());
    REQUIRE(dx.at(0, 1, 1) == Catch::Approx(dy.at(0, 0, 0) / 4.0));
}

TEST_CASE("BatchNorm training statistics normalize the block") {
    Rng rng(4);
    BatchNorm bn(3);
    Block x = random_block(rng, 3, 2, {3, 5, 5}, 2.5);
    Block orig = x;
    bn.forward_block(x, true);
    // per-channel mean ~0, var ~1 after normalization with unit gamma
    for (int ch = 0; ch < 3; ++ch) {
        double mean = 0.0, var = 0.0;
        long n = 0;
        for (auto& seq : x)
            for (auto& t : seq) {
                const int hw = t.dim(1) * t.dim(2);
                for (int i = 0; i < hw; ++i) {
                    mean += t[static_cast<std::size_t>(ch) * hw + i];
                    ++n;
                }
            }
        mean /= n;
        for (auto& seq : x)
            for (auto& t : seq) {
                const int hw = t.dim(1) * t.dim(2);
                for (int i = 0; i < hw; ++i) {
                    double d = t[static_cast<std::size_t>(ch) * hw + i] - mean;
                    var += d * d;
                }
            }
        var /= n;
        REQUIRE(mean == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(var == Catch::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("ConvBnPool backward matches finite differences") {
    Rng rng(5);
    ConvSpec spec{2, 3, 3, 1, -1, 2, true};
    ConvBnPool layer(spec, rng);
    Block in = random_block(rng, 2, 2, {2, 4, 4});
    Block out = layer.forward_block(in, true);
    Block cot = random_block(rng, 2, 2, out[0][0].shape());

    std::vector<ParamRef> params;
    layer.collect_params("l", params);
    zero_grads(params);
    Block din = layer.backward_block(cot);

    auto loss_of = [&]() {
        Block o = layer.forward_block(in, true);
        return block_loss(o, cot);
    };

    const double eps = 1e-6;
    SECTION("input gradient") {
        for (int probe = 0; probe < 12; ++probe) {
            std::size_t b = rng.below(2), t = rng.below(2), i = rng.below(in[0][0].size());
            double saved = in[b][t][i];
            in[b][t][i] = saved + eps;
            double lp = loss_of();
            in[b][t][i] = saved - eps;
            double lm = loss_of();
            in[b][t][i] = saved;
            double fd = (lp - lm) / (2 * eps);
            REQUIRE(din[b][t][i] == Catch::Approx(fd).epsilon(1e-4).margin(1e-7));
        }
    }
    SECTION("parameter gradients") {
        for (int probe = 0; probe < 12; ++probe) {
            std::size_t pi = rng.below(params.size());
            if (!params[pi].trainable) continue;
            Tensor& w = *params[pi].value;
            std::size_t si = rng.below(w.size());
            double saved = w[si];
            w[si] = saved + eps;
            double lp = loss_of();
            w[si] = saved - eps;
            double lm = loss_of();
            w[si] = saved;
            double fd = (lp - lm) / (2 * eps);
            REQUIRE((*params[pi].grad)[si] == Catch::Approx(fd).epsilon(1e-4).margin(1e-7));
        }
    }
}

TEST_CASE("Linear backward matches finite differences") {
    Rng rng(6);
    Linear fc(12, 5, rng);
    Tensor x({12}), cot({5});
    fill_normal(x, rng, 1.0);
    fill_normal(cot, rng, 1.0);
    std::vector<ParamRef> params;
    fc.collect_params("fc", params);
    zero_grads(params);
    Tensor dx = fc.backward(x, cot);

    auto loss_of = [&]() {
        Tensor y = fc.forward(x);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * cot[i];
        return acc;
    };
    const double eps = 1e-6;
    for (int probe = 0; probe < 10; ++probe) {
        std::size_t i = rng.below(x.size());
        double saved = x[i];
        x[i] = saved + eps;
        double lp = loss_of();
        x[i] = saved - eps;
        double lm = loss_of();
        x[i] = saved;
        REQUIRE(dx[i] == Catch::Approx((lp - lm) / (2 * eps)).epsilon(1e-6).margin(1e-9));
    }
}
