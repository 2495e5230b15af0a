#include <cmath>
#include <vector>

#include "doctest.h"
#include "msfcn/nn_ops.hpp"
#include "test_helpers.hpp"

using namespace msfcn;

using Shape = std::vector<uint32_t>;

TEST_SUITE("nn_ops") {

TEST_CASE("conv3d validates channels and bias extent") {
    Rng rng(1);
    ConvParams p;
    p.weight = tensor_fill<float>({4, 3, 1, 3, 3}, 0.1f);
    p.bias = tensor_zeros<float>({4});
    p.ph = p.pw = 1;
    Tensor x = tensor_zeros<float>({2, 1, 8, 8});  // 2 channels, weights expect 3
    check_throws_containing<ShapeError>([&] { conv3d(x, p); }, "channels");
    p.bias = tensor_zeros<float>({3});
    Tensor ok = tensor_zeros<float>({3, 1, 8, 8});
    CHECK_THROWS_AS(conv3d(ok, p), ShapeError);  // bias extent != cout
}

TEST_CASE("rank-4 input behaves exactly like a singleton batch") {
    Rng rng(2);
    ConvParams p;
    p.weight = tensor_zeros<float>({2, 3, 1, 3, 3});
    p.bias = tensor_zeros<float>({2});
    for (auto& v : p.weight.data) v = float(rng.uniform(-1, 1));
    for (auto& v : p.bias.data) v = float(rng.uniform(-1, 1));
    p.ph = p.pw = 1;

    Tensor x4 = tensor_zeros<float>({3, 2, 6, 6});
    for (auto& v : x4.data) v = float(rng.uniform(-1, 1));
    Tensor x5 = reshape(x4, {1, 3, 2, 6, 6});

    Tensor y4 = conv3d(x4, p);
    Tensor y5 = conv3d(x5, p);
    CHECK(y4.shape == Shape{2, 2, 6, 6});
    CHECK(y5.shape == Shape{1, 2, 2, 6, 6});
    CHECK(y4.data == y5.data);
}

TEST_CASE("transposed conv upsamples h,w by 2 with kernel (1,2,2) stride (1,2,2)") {
    Rng rng(3);
    ConvParams p;
    p.weight = tensor_zeros<float>({4, 2, 1, 2, 2});  // (cin,cout,...)
    p.bias = tensor_zeros<float>({2});
    for (auto& v : p.weight.data) v = float(rng.uniform(-1, 1));
    p.sh = p.sw = 2;
    Tensor x = tensor_zeros<float>({1, 4, 3, 5, 6});
    for (auto& v : x.data) v = float(rng.uniform(-1, 1));
    Tensor y = transposed_conv3d(x, p);
    CHECK(y.shape == Shape{1, 2, 3, 10, 12});
}

TEST_CASE("batchnorm train mode uses population statistics") {
    // Channel sees values {1,3}: mean 2, population variance 1 (divisor N).
    // Sample variance (divisor N-1) would be 2 and give 0.707 instead.
    auto p = make_batchnorm<float>(1);
    Tensor x = tensor_zeros<float>({1, 1, 1, 1, 2});
    x.data = {1.0f, 3.0f};
    Tensor y = batchnorm(x, p, Mode::train);
    const double istd = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(std::abs(double(y.data[0]) + istd) < 1e-6);
    CHECK(std::abs(double(y.data[1]) - istd) < 1e-6);

    // running <- 0.9*init + 0.1*batch
    CHECK(std::abs(double(p.running_mean.data[0]) - 0.2) < 1e-7);
    CHECK(std::abs(double(p.running_var.data[0]) - 1.0) < 1e-7);

    // second pass folds in again: 0.9*0.2 + 0.1*2 = 0.38
    batchnorm(x, p, Mode::train);
    CHECK(std::abs(double(p.running_mean.data[0]) - 0.38) < 1e-7);
}

TEST_CASE("batchnorm gamma/beta scale and shift") {
    auto p = make_batchnorm<float>(2);
    p.gamma.data = {2.0f, 0.5f};
    p.beta.data = {1.0f, -1.0f};
    Tensor x = tensor_zeros<float>({1, 2, 1, 1, 2});
    x.data = {1.0f, 3.0f, 10.0f, 14.0f};
    Tensor y = batchnorm(x, p, Mode::train);
    const double istd = 1.0 / std::sqrt(1.0 + 1e-5);    // ch0 var 1
    const double istd2 = 1.0 / std::sqrt(4.0 + 1e-5);   // ch1 var 4
    CHECK(std::abs(double(y.data[0]) - (2.0 * -istd + 1.0)) < 1e-5);
    CHECK(std::abs(double(y.data[1]) - (2.0 * istd + 1.0)) < 1e-5);
    CHECK(std::abs(double(y.data[2]) - (0.5 * (-2.0 * istd2) - 1.0)) < 1e-5);
    CHECK(std::abs(double(y.data[3]) - (0.5 * (2.0 * istd2) - 1.0)) < 1e-5);
}

TEST_CASE("batchnorm eval mode applies running stats and leaves them alone") {
    auto p = make_batchnorm<float>(1);
    p.running_mean.data = {2.0f};
    p.running_var.data = {4.0f};
    p.gamma.data = {3.0f};
    p.beta.data = {0.5f};
    Tensor x = tensor_zeros<float>({1, 1, 1, 1, 2});
    x.data = {2.0f, 4.0f};
    Tensor y = batchnorm(x, p, Mode::eval);
    const double istd = 1.0 / std::sqrt(4.0 + 1e-5);
    CHECK(std::abs(double(y.data[0]) - 0.5) < 1e-5);                  // (2-2)*... + 0.5
    CHECK(std::abs(double(y.data[1]) - (3.0 * 2.0 * istd + 0.5)) < 1e-5);
    CHECK(p.running_mean.data[0] == 2.0f);  // untouched
    CHECK(p.running_var.data[0] == 4.0f);

    // eval twice: bit-identical
    Tensor y2 = batchnorm(x, p, Mode::eval);
    CHECK(y.data == y2.data);
}

TEST_CASE("batchnorm train mode needs at least two values per channel") {
    auto p = make_batchnorm<float>(1);
    Tensor x = tensor_fill<float>({1, 1, 1, 1, 1}, 3.0f);
    CHECK_THROWS_AS(batchnorm(x, p, Mode::train), ShapeError);
    CHECK_NOTHROW(batchnorm(x, p, Mode::eval));
    auto p3 = make_batchnorm<float>(3);
    CHECK_THROWS_AS(batchnorm(x, p3, Mode::eval), ShapeError);  // channel mismatch
}

TEST_CASE("batchnorm backward reduces gamma/beta grads over the stat pool") {
    auto p = make_batchnorm<float>(1);
    Tensor x = tensor_zeros<float>({1, 1, 1, 1, 4});
    x.data = {1, 2, 3, 4};
    BnCache<float> cache;
    batchnorm(x, p, Mode::train, &cache);
    Tensor gy = tensor_zeros<float>({1, 1, 1, 1, 4});
    gy.data = {1, 0, 0, 1};
    Tensor dx, dg, db;
    batchnorm_backward(cache, p, gy, &dx, &dg, &db);
    CHECK(std::abs(double(db.data[0]) - 2.0) < 1e-6);  // sum of gy
    double want_dg = 0.0;
    for (int i = 0; i < 4; ++i) want_dg += double(gy.data[i]) * double(cache.xhat.data[i]);
    CHECK(std::abs(double(dg.data[0]) - want_dg) < 1e-6);
    // dx of batchnorm always sums to ~0 over the pool (projection property)
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += double(dx.data[i]);
    CHECK(std::abs(s) < 1e-6);
}

TEST_CASE("activations and their output-based derivatives") {
    Tensor x = tensor_zeros<float>({4});
    x.data = {-1.0f, 0.0f, 2.0f, -0.5f};
    Tensor yr = activation(x, Act::relu);
    CHECK(yr.data == std::vector<float>{0, 0, 2, 0});
    Tensor gy = tensor_fill<float>({4}, 1.0f);
    Tensor dr = activation_backward(yr, Act::relu, gy);
    CHECK(dr.data == std::vector<float>{0, 0, 1, 0});  // grad 0 at the kink

    Tensor ys = activation(x, Act::sigmoid);
    CHECK(std::abs(double(ys.data[1]) - 0.5) < 1e-7);
    CHECK(std::abs(double(ys.data[2]) - 1.0 / (1.0 + std::exp(-2.0))) < 1e-6);
    Tensor ds = activation_backward(ys, Act::sigmoid, gy);
    for (int i = 0; i < 4; ++i)
        CHECK(std::abs(double(ds.data[i]) - double(ys.data[i]) * (1.0 - double(ys.data[i]))) <
              1e-6);
}

TEST_CASE("maxpool op validates even extents and halves h,w") {
    Tensor x = tensor_zeros<float>({1, 2, 3, 4, 6});
    std::vector<uint32_t> am;
    Tensor y = maxpool_122(x, &am);
    CHECK(y.shape == Shape{1, 2, 3, 2, 3});
    CHECK(am.size() == y.size());
    Tensor odd = tensor_zeros<float>({1, 2, 3, 5, 6});
    CHECK_THROWS_AS(maxpool_122(odd, &am), ShapeError);
}

TEST_CASE("global average pool and its backward") {
    Tensor x = tensor_zeros<float>({1, 2, 1, 2, 2});
    x.data = {1, 2, 3, 4, 4, 4, 4, 4};
    Tensor y = global_avg_pool(x);
    CHECK(y.shape == Shape{1, 2});
    CHECK(std::abs(double(y.data[0]) - 2.5) < 1e-7);
    CHECK(std::abs(double(y.data[1]) - 4.0) < 1e-7);

    Tensor gy = tensor_zeros<float>({1, 2});
    gy.data = {1.0f, 2.0f};
    Tensor dx = global_avg_pool_backward(x.shape, gy);
    for (int i = 0; i < 4; ++i) CHECK(dx.data[i] == 0.25f);
    for (int i = 4; i < 8; ++i) CHECK(dx.data[i] == 0.5f);

    // rank-4 input pools to (c)
    Tensor x4 = tensor_fill<float>({3, 1, 2, 2}, 2.0f);
    CHECK(global_avg_pool(x4).shape == Shape{3});
}

TEST_CASE("add and channel_scale_residual") {
    Tensor a = tensor_fill<float>({1, 1, 1, 1, 2}, 1.0f);
    Tensor b = tensor_fill<float>({1, 1, 1, 1, 2}, 2.0f);
    CHECK(add(a, b).data == std::vector<float>{3, 3});
    Tensor c = tensor_zeros<float>({1, 1, 1, 2, 1});
    CHECK_THROWS_AS(add(a, c), ShapeError);

    Tensor x = tensor_zeros<float>({1, 2, 1, 1, 2});
    x.data = {1, 2, 3, 4};
    Tensor alpha = tensor_zeros<float>({1, 2});
    alpha.data = {0.5f, -1.0f};  // scales become 1.5 and 0
    Tensor y = channel_scale_residual(x, alpha);
    CHECK(y.data == std::vector<float>{1.5f, 3.0f, 0.0f, 0.0f});

    Tensor gy = tensor_fill<float>({1, 2, 1, 1, 2}, 1.0f);
    Tensor dx, da;
    channel_scale_residual_backward(x, alpha, gy, &dx, &da);
    CHECK(dx.data == std::vector<float>{1.5f, 1.5f, 0.0f, 0.0f});
    CHECK(da.data == std::vector<float>{3.0f, 7.0f});  // sum gy*x per channel
}

TEST_CASE("reshape preserves data and rejects bad counts") {
    Tensor x = tensor_zeros<float>({2, 3});
    for (int i = 0; i < 6; ++i) x.data[i] = float(i);
    Tensor y = reshape(x, {3, 2});
    CHECK(y.shape == Shape{3, 2});
    CHECK(y.data == x.data);
    CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
}

TEST_CASE("softmax over channels sums to one and survives extreme logits") {
    Rng rng(7);
    Tensor l = tensor_zeros<float>({2, 4, 3, 5});
    for (auto& v : l.data) v = float(rng.uniform(-8, 8));
    Tensor p = softmax_channels(l);
    const size_t hw = 15;
    for (size_t n = 0; n < 2; ++n)
        for (size_t px = 0; px < hw; ++px) {
            double s = 0.0;
            for (size_t k = 0; k < 4; ++k) s += double(p.data[n * 4 * hw + k * hw + px]);
            CHECK(std::abs(s - 1.0) < 1e-6);
        }

    Tensor big = tensor_zeros<float>({2, 1, 1});
    big.data = {1000.0f, 0.0f};
    Tensor pb = softmax_channels(big);
    CHECK(std::isfinite(double(pb.data[0])));
    CHECK(std::abs(double(pb.data[0]) - 1.0) < 1e-6);
    CHECK(std::abs(double(pb.data[1]) - 0.0) < 1e-6);

    Tensor one = tensor_zeros<float>({1, 2, 2});
    CHECK_THROWS_AS(softmax_channels(one), ShapeError);  // K < 2
    Tensor r2 = tensor_zeros<float>({2, 2});
    CHECK_THROWS_AS(softmax_channels(r2), ShapeError);
}

TEST_CASE("argmax over channels breaks ties toward the lower class id") {
    Tensor s = tensor_zeros<float>({3, 1, 2});
    // pixel 0: scores {0.5, 0.5, 0.1} -> class 0; pixel 1: {0.1, 0.2, 0.9} -> 2
    s.data = {0.5f, 0.1f, 0.5f, 0.2f, 0.1f, 0.9f};
    LabelMap lm = argmax_channels(s);
    CHECK(lm.data == std::vector<uint16_t>{0, 2});
}

TEST_CASE("cross entropy of uniform logits is ln K") {
    Tensor l = tensor_zeros<float>({1, 4, 1, 1});
    std::vector<LabelMap> y = {LabelMap(1, 1, 0)};
    auto ce = cross_entropy(l, y);
    CHECK(ce.pixels == 1);
    CHECK(std::abs(ce.loss - std::log(4.0)) < 1e-9);
    // grad = softmax - onehot over 1 pixel
    CHECK(std::abs(double(ce.dlogits.data[0]) - (-0.75)) < 1e-6);
    for (int k = 1; k < 4; ++k) CHECK(std::abs(double(ce.dlogits.data[k]) - 0.25) < 1e-6);
    // per-pixel grad sums to zero
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += double(ce.dlogits.data[k]);
    CHECK(std::abs(s) < 1e-7);
}

TEST_CASE("cross entropy skips ignored pixels and normalizes by live count") {
    Tensor l = tensor_zeros<float>({1, 2, 1, 2});
    l.data = {2.0f, 0.0f, 0.0f, 1.0f};  // K-major: class0 {2,0}, class1 {0,1}
    LabelMap lm(1, 2, 0);
    lm.at(0, 1) = kIgnoreLabel;
    auto ce = cross_entropy(l, std::vector<LabelMap>{lm});
    CHECK(ce.pixels == 1);
    // pixel 0 logits (2,0), truth 0: loss = log(e^2+e^0) - 2
    const double want = std::log(std::exp(2.0) + 1.0) - 2.0;
    CHECK(std::abs(ce.loss - want) < 1e-6);
    CHECK(ce.dlogits.data[1] == 0.0f);  // ignored pixel gets no gradient
    CHECK(ce.dlogits.data[3] == 0.0f);

    LabelMap all_ig(1, 2, kIgnoreLabel);
    CHECK_THROWS_AS(cross_entropy(l, std::vector<LabelMap>{all_ig}), DataError);
    LabelMap bad(1, 2, 5);  // label >= K
    CHECK_THROWS_AS(cross_entropy(l, std::vector<LabelMap>{bad}), DataError);
    LabelMap wrong(2, 2, 0);
    CHECK_THROWS_AS(cross_entropy(l, std::vector<LabelMap>{wrong}), ShapeError);
}

TEST_CASE("cross entropy stays finite on saturated logits") {
    Tensor l = tensor_zeros<float>({1, 2, 1, 1});
    l.data = {1000.0f, 0.0f};
    LabelMap lm0(1, 1, 0), lm1(1, 1, 1);
    auto good = cross_entropy(l, std::vector<LabelMap>{lm0});
    CHECK(std::isfinite(good.loss));
    CHECK(std::abs(good.loss) < 1e-6);
    auto bad = cross_entropy(l, std::vector<LabelMap>{lm1});
    CHECK(std::isfinite(bad.loss));
    CHECK(std::abs(bad.loss - 1000.0) < 1e-6);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(11);
    TensorT<double> l = tensor_zeros<double>({1, 3, 2, 2});
    for (auto& v : l.data) v = rng.uniform(-2, 2);
    LabelMap lm(2, 2, 0);
    lm.data = {0, 2, kIgnoreLabel, 1};
    auto ce = cross_entropy(l, std::vector<LabelMap>{lm});
    const double h = 1e-6;
    for (size_t i = 0; i < l.size(); ++i) {
        TensorT<double> lp = l, lmn = l;
        lp.data[i] += h;
        lmn.data[i] -= h;
        const double num = (cross_entropy(lp, std::vector<LabelMap>{lm}).loss -
                            cross_entropy(lmn, std::vector<LabelMap>{lm}).loss) /
                           (2 * h);
        CHECK(std::abs(num - ce.dlogits.data[i]) < 1e-6);
    }
}

TEST_CASE("rank-3 cross entropy matches the singleton batch") {
    Rng rng(13);
    Tensor l = tensor_zeros<float>({3, 2, 2});
    for (auto& v : l.data) v = float(rng.uniform(-1, 1));
    LabelMap lm(2, 2, 0);
    lm.data = {0, 1, 2, 1};
    auto a = cross_entropy(l, lm);
    auto b = cross_entropy(reshape(l, {1, 3, 2, 2}), std::vector<LabelMap>{lm});
    CHECK(a.loss == b.loss);
    CHECK(a.dlogits.data == b.dlogits.data);
    CHECK(a.dlogits.shape == Shape{3, 2, 2});
}

}  // TEST_SUITE
