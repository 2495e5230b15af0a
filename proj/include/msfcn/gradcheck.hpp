#pragma once

// Finite-difference gradient verification. Everything here instantiates the
// op/block/network templates at double: float's ~7 digits cannot separate a
// wrong gradient from central-difference truncation at h=1e-4, doubles can.

#include "msfcn/network.hpp"

namespace msfcn {

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0;
    double tol = 1e-3;
    bool pass = false;
};

inline TensorT<double> rand_tensor(Rng& rng, std::vector<uint32_t> shape, double lo = -1.0,
                                   double hi = 1.0) {
    TensorT<double> t(std::move(shape), 0.0);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

inline double dot(const TensorT<double>& a, const TensorT<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

// Central differences, h = 1e-4. Error is |analytic - numeric| scaled by
// max(1, |analytic|, |numeric|), maxed over every element of every tensor.
template <typename F>
double fd_max_rel_err(const std::vector<TensorT<double>*>& values,
                      const std::vector<const TensorT<double>*>& analytic, F&& f,
                      double h = 1e-4) {
    if (values.size() != analytic.size()) throw ShapeError("fd_max_rel_err: list size mismatch");
    double worst = 0;
    for (size_t vi = 0; vi < values.size(); ++vi) {
        TensorT<double>& v = *values[vi];
        const TensorT<double>& a = *analytic[vi];
        if (v.size() != a.size()) throw ShapeError("fd_max_rel_err: analytic shape mismatch");
        for (size_t i = 0; i < v.size(); ++i) {
            const double keep = v.data[i];
            v.data[i] = keep + h;
            const double fp = f();
            v.data[i] = keep - h;
            const double fm = f();
            v.data[i] = keep;
            const double num = (fp - fm) / (2 * h);
            const double err = std::abs(a.data[i] - num) /
                               std::max({1.0, std::abs(a.data[i]), std::abs(num)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

namespace gradcheck_detail {

template <typename T>
void collect_conv(ConvLayerT<T>& l, std::vector<TensorT<T>*>& vals,
                  std::vector<const TensorT<T>*>& grads) {
    vals.push_back(&l.p.weight);
    grads.push_back(&l.gweight);
    vals.push_back(&l.p.bias);
    grads.push_back(&l.gbias);
}

template <typename T>
void collect_cba(ConvBnActT<T>& l, std::vector<TensorT<T>*>& vals,
                 std::vector<const TensorT<T>*>& grads) {
    collect_conv(l.conv, vals, grads);
    if (l.has_bn) {
        vals.push_back(&l.bn.p.gamma);
        grads.push_back(&l.bn.ggamma);
        vals.push_back(&l.bn.p.beta);
        grads.push_back(&l.bn.gbeta);
    }
}

inline GradCheckCase finish(const std::string& name, double err, double tol = 1e-3) {
    return {name, err, tol, err <= tol};
}

// Fresh layers carry zero biases, which parks a relu pre-activation exactly on
// its kink wherever every input channel was relu-dead (y = 0*w + bias = 0).
// The gradient there is a subgradient — the tape picks 0, central differences
// measure proj/2 — so the composite checks move every bias off zero first and
// difference at h = 1e-6, where a surviving kink must sit within 1e-6 of the
// evaluation point to contaminate the estimate.
constexpr double kCompositeH = 1e-6;

inline void nudge_bias(Rng& rng, TensorT<double>& bias) {
    for (auto& v : bias.data)
        v = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 0.3);
}

}  // namespace gradcheck_detail

inline GradCheckCase check_conv3d(uint64_t seed, bool strided) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    ConvLayerT<double> L =
        strided ? make_conv_layer<double>(rng, false, 3, 4, 1, 3, 3, 1, 2, 2, 0, 1, 1)
                : make_conv_layer<double>(rng, false, 3, 4, 3, 3, 3, 1, 1, 1, 1, 1, 1);
    TensorT<double> x = rand_tensor(rng, {2, 3, 4, 6, 6});
    TensorT<double> y = conv3d(x, L.p);
    TensorT<double> proj = rand_tensor(rng, y.shape);
    TensorT<double> dx, dw, db;
    conv3d_backward(x, L.p, proj, &dx, &dw, &db);
    auto f = [&]() { return dot(proj, conv3d(x, L.p)); };
    const double err =
        fd_max_rel_err({&x, &L.p.weight, &L.p.bias}, {&dx, &dw, &db}, f);
    return finish(strided ? "conv3d/k133_s122" : "conv3d/k333_s111_p111", err);
}

inline GradCheckCase check_tconv3d(uint64_t seed) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    ConvLayerT<double> L = make_conv_layer<double>(rng, true, 4, 3, 1, 2, 2, 1, 2, 2, 0, 0, 0);
    TensorT<double> x = rand_tensor(rng, {2, 4, 3, 5, 5});
    TensorT<double> y = transposed_conv3d(x, L.p);
    TensorT<double> proj = rand_tensor(rng, y.shape);
    TensorT<double> dx, dw, db;
    transposed_conv3d_backward(x, L.p, proj, &dx, &dw, &db);
    auto f = [&]() { return dot(proj, transposed_conv3d(x, L.p)); };
    const double err =
        fd_max_rel_err({&x, &L.p.weight, &L.p.bias}, {&dx, &dw, &db}, f);
    return finish("tconv3d/k122_s122", err);
}

inline GradCheckCase check_batchnorm(uint64_t seed) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    BatchNormParamsT<double> p = make_batchnorm<double>(3);
    for (auto& v : p.gamma.data) v = rng.uniform(0.5, 1.5);
    for (auto& v : p.beta.data) v = rng.uniform(-0.5, 0.5);
    TensorT<double> x = rand_tensor(rng, {2, 3, 2, 4, 4});
    BnCache<double> cache;
    TensorT<double> y = batchnorm(x, p, Mode::train, &cache);
    TensorT<double> proj = rand_tensor(rng, y.shape);
    TensorT<double> dx, dg, db;
    batchnorm_backward(cache, p, proj, &dx, &dg, &db);
    auto f = [&]() {
        return dot(proj, batchnorm(x, p, Mode::train, static_cast<BnCache<double>*>(nullptr)));
    };
    const double err = fd_max_rel_err({&x, &p.gamma, &p.beta}, {&dx, &dg, &db}, f);
    return finish("batchnorm/train", err);
}

inline GradCheckCase check_activation(uint64_t seed, Act a) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    TensorT<double> x = rand_tensor(rng, {3, 2, 4, 4});
    if (a == Act::relu) {
        // keep clear of the kink at 0 — FD straddling it measures the wrong slope
        for (auto& v : x.data)
            while (std::abs(v) < 0.1) v = rng.uniform(-1.0, 1.0);
    }
    TensorT<double> y = activation(x, a);
    TensorT<double> proj = rand_tensor(rng, y.shape);
    TensorT<double> dx = activation_backward(y, a, proj);
    auto f = [&]() { return dot(proj, activation(x, a)); };
    const double err = fd_max_rel_err({&x}, {&dx}, f);
    return finish(a == Act::relu ? "act/relu" : "act/sigmoid", err);
}

inline GradCheckCase check_maxpool(uint64_t seed) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    // Values pairwise separated by >= 2e-3 so +-1e-4 probes cannot flip argmax.
    TensorT<double> x({2, 3, 2, 4, 4}, 0.0);
    std::vector<size_t> perm(x.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    for (size_t i = 0; i < x.size(); ++i)
        x.data[i] = double(perm[i]) * 0.01 + rng.uniform(0.0, 0.004);
    std::vector<uint32_t> argmax;
    TensorT<double> y = maxpool_122(x, &argmax);
    TensorT<double> proj = rand_tensor(rng, y.shape);
    TensorT<double> dx = maxpool_122_backward(argmax, x.shape, proj);
    auto f = [&]() {
        std::vector<uint32_t> am;
        return dot(proj, maxpool_122(x, &am));
    };
    const double err = fd_max_rel_err({&x}, {&dx}, f);
    return finish("pool/max122", err);
}

inline GradCheckCase check_gap(uint64_t seed) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    TensorT<double> x = rand_tensor(rng, {2, 3, 2, 4, 4});
    TensorT<double> y = global_avg_pool(x);
    TensorT<double> proj = rand_tensor(rng, y.shape);
    TensorT<double> dx = global_avg_pool_backward(x.shape, proj);
    auto f = [&]() { return dot(proj, global_avg_pool(x)); };
    const double err = fd_max_rel_err({&x}, {&dx}, f);
    return finish("pool/gap", err);
}

inline GradCheckCase check_softmax_ce(uint64_t seed) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    TensorT<double> logits = rand_tensor(rng, {2, 4, 4, 4}, -2.0, 2.0);
    std::vector<LabelMap> labels;
    for (int n = 0; n < 2; ++n) {
        LabelMap lm(4, 4, 0);
        for (auto& v : lm.data) {
            const uint64_t d = rng.below(5);
            v = d == 4 ? kIgnoreLabel : uint16_t(d);  // ~1/5 ignored pixels
        }
        labels.push_back(lm);
    }
    bool any_live = false;
    for (const auto& lm : labels)
        for (uint16_t v : lm.data) any_live = any_live || v != kIgnoreLabel;
    if (!any_live) labels[0].data[0] = 1;
    CeOut<double> ce = cross_entropy(logits, labels);
    auto f = [&]() { return cross_entropy(logits, labels).loss; };
    const double err = fd_max_rel_err({&logits}, {&ce.dlogits}, f);
    return finish("softmax_ce", err);
}

inline GradCheckCase check_mscb(uint64_t seed) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    MscbT<double> blk = make_mscb<double>(rng, 3, 6, 3, 3);
    nudge_bias(rng, blk.top_a.conv.p.bias);
    nudge_bias(rng, blk.top_b.conv.p.bias);
    nudge_bias(rng, blk.bottom.conv.p.bias);
    nudge_bias(rng, blk.fuse.conv.p.bias);
    TensorT<double> x = rand_tensor(rng, {2, 3, 2, 6, 6});

    TapeT<double> tape;
    Flow<double> xf = input_flow(&tape, x);
    Flow<double> y = blk.forward(&tape, xf, Mode::train);
    TensorT<double> proj = rand_tensor(rng, y.v().shape);
    tape.grad(y.node) = proj;
    tape.run_backward();

    std::vector<TensorT<double>*> vals{&x};
    std::vector<const TensorT<double>*> grads{&tape.grad(xf.node)};
    collect_cba(blk.top_a, vals, grads);
    collect_cba(blk.top_b, vals, grads);
    collect_cba(blk.bottom, vals, grads);
    collect_cba(blk.fuse, vals, grads);

    auto f = [&]() {
        return dot(proj, blk.forward(nullptr, make_flow(x), Mode::train).v());
    };
    const double err = fd_max_rel_err(vals, grads, f, kCompositeH);
    return finish("block/mscb", err);
}

inline GradCheckCase check_cab(uint64_t seed) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    CabT<double> blk = make_cab<double>(rng, 4, 4);
    nudge_bias(rng, blk.squeeze.p.bias);
    nudge_bias(rng, blk.excite.p.bias);
    nudge_bias(rng, blk.out.p.bias);
    TensorT<double> enc = rand_tensor(rng, {2, 4, 2, 6, 6});
    TensorT<double> dec = rand_tensor(rng, {2, 4, 2, 6, 6});

    TapeT<double> tape;
    Flow<double> ef = input_flow(&tape, enc);
    Flow<double> df = input_flow(&tape, dec);
    Flow<double> y = blk.forward(&tape, ef, df, Mode::train);
    TensorT<double> proj = rand_tensor(rng, y.v().shape);
    tape.grad(y.node) = proj;
    tape.run_backward();

    std::vector<TensorT<double>*> vals{&enc, &dec};
    std::vector<const TensorT<double>*> grads{&tape.grad(ef.node), &tape.grad(df.node)};
    collect_conv(blk.squeeze, vals, grads);
    collect_conv(blk.excite, vals, grads);
    collect_conv(blk.out, vals, grads);

    auto f = [&]() {
        return dot(proj, blk.forward(nullptr, make_flow(enc), make_flow(dec), Mode::train).v());
    };
    const double err = fd_max_rel_err(vals, grads, f, kCompositeH);
    return finish("block/cab", err);
}

inline GradCheckCase check_gpm(uint64_t seed) {
    using namespace gradcheck_detail;
    Rng rng(seed);
    GpmT<double> blk = make_gpm<double>(rng, 4);
    nudge_bias(rng, blk.in_conv.p.bias);
    nudge_bias(rng, blk.gate.p.bias);
    nudge_bias(rng, blk.out_conv.p.bias);
    TensorT<double> x = rand_tensor(rng, {2, 4, 2, 5, 5});

    TapeT<double> tape;
    Flow<double> xf = input_flow(&tape, x);
    Flow<double> y = blk.forward(&tape, xf, Mode::train);
    TensorT<double> proj = rand_tensor(rng, y.v().shape);
    tape.grad(y.node) = proj;
    tape.run_backward();

    std::vector<TensorT<double>*> vals{&x};
    std::vector<const TensorT<double>*> grads{&tape.grad(xf.node)};
    collect_conv(blk.in_conv, vals, grads);
    collect_conv(blk.gate, vals, grads);
    collect_conv(blk.out_conv, vals, grads);

    auto f = [&]() { return dot(proj, blk.forward(nullptr, make_flow(x), Mode::train).v()); };
    const double err = fd_max_rel_err(vals, grads, f, kCompositeH);
    return finish("block/gpm", err);
}

inline GradCheckCase check_end_to_end(uint64_t seed) {
    using namespace gradcheck_detail;
    NetworkConfig cfg;
    cfg.in_channels = 2;
    cfg.time_steps = 2;
    cfg.num_classes = 3;
    cfg.channels = {3, 6};
    cfg.mscb_ck_div = 2;
    cfg.cab_reduction = 4;
    cfg.seed = seed;
    NetworkT<double> net = build_network<double>(cfg);
    Rng brng(seed + 29);
    for (auto& p : net.params())
        if (p.name.ends_with(".bias")) nudge_bias(brng, *p.value);

    Rng rng(seed + 17);
    TensorT<double> x = rand_tensor(rng, {1, 2, 2, 8, 8});
    std::vector<LabelMap> labels;
    LabelMap lm(8, 8, 0);
    for (auto& v : lm.data) {
        const uint64_t d = rng.below(4);
        v = d == 3 ? kIgnoreLabel : uint16_t(d);
    }
    labels.push_back(lm);

    TapeT<double> tape;
    Flow<double> logits = net.forward(&tape, x, Mode::train);
    CeOut<double> ce = cross_entropy(logits.v(), labels);
    tape.grad(logits.node) = ce.dlogits;
    tape.run_backward();

    std::vector<TensorT<double>*> vals;
    std::vector<const TensorT<double>*> grads;
    std::vector<TensorT<double>> grad_copies;
    auto refs = net.params();
    grad_copies.reserve(refs.size());
    for (auto& p : refs) grad_copies.push_back(*p.grad);
    for (size_t i = 0; i < refs.size(); ++i) {
        vals.push_back(refs[i].value);
        grads.push_back(&grad_copies[i]);
    }

    auto f = [&]() {
        return cross_entropy(net.forward(nullptr, x, Mode::train).v(), labels).loss;
    };
    const double err = fd_max_rel_err(vals, grads, f, kCompositeH);
    return finish("net/e2e_2stage", err);
}

inline std::vector<GradCheckCase> run_gradcheck_suite(uint64_t seed) {
    std::vector<GradCheckCase> out;
    out.push_back(check_conv3d(seed, false));
    out.push_back(check_conv3d(seed, true));
    out.push_back(check_tconv3d(seed));
    out.push_back(check_batchnorm(seed));
    out.push_back(check_activation(seed, Act::relu));
    out.push_back(check_activation(seed, Act::sigmoid));
    out.push_back(check_maxpool(seed));
    out.push_back(check_gap(seed));
    out.push_back(check_softmax_ce(seed));
    out.push_back(check_mscb(seed));
    out.push_back(check_cab(seed));
    out.push_back(check_gpm(seed));
    out.push_back(check_end_to_end(seed));
    return out;
}

}  // namespace msfcn
