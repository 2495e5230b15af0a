#pragma once

#include "msfcn/autodiff.hpp"
#include "msfcn/common.hpp"

namespace msfcn {

// Uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in)) with fan_in counting the
// input taps of one filter. Bias starts at zero. Draw order is the weight's
// storage order, so a fixed seed pins every parameter bit.
template <typename T>
ConvLayerT<T> make_conv_layer(Rng& rng, bool transposed, int cin, int cout, int kt, int kh, int kw,
                              int st, int sh, int sw, int pt, int ph, int pw) {
    ConvLayerT<T> l;
    l.transposed = transposed;
    const std::vector<uint32_t> wshape =
        transposed ? std::vector<uint32_t>{uint32_t(cin), uint32_t(cout), uint32_t(kt),
                                           uint32_t(kh), uint32_t(kw)}
                   : std::vector<uint32_t>{uint32_t(cout), uint32_t(cin), uint32_t(kt),
                                           uint32_t(kh), uint32_t(kw)};
    l.p.weight = tensor_zeros<T>(wshape);
    const double bound = std::sqrt(6.0 / (double(cin) * kt * kh * kw));
    for (auto& v : l.p.weight.data) v = T(rng.uniform(-bound, bound));
    l.p.bias = tensor_zeros<T>({uint32_t(cout)});
    l.p.st = st; l.p.sh = sh; l.p.sw = sw;
    l.p.pt = pt; l.p.ph = ph; l.p.pw = pw;
    l.gweight = tensor_zeros<T>(wshape);
    l.gbias = tensor_zeros<T>({uint32_t(cout)});
    return l;
}

template <typename T>
ConvLayerT<T> make_conv1x1(Rng& rng, int cin, int cout) {
    return make_conv_layer<T>(rng, false, cin, cout, 1, 1, 1, 1, 1, 1, 0, 0, 0);
}

// conv -> batchnorm -> activation, the workhorse sequence. bypass_norm is a
// test hook that swaps the BN for identity so conv arithmetic can be probed
// in isolation (receptive-field tests).
template <typename T>
struct ConvBnActT {
    ConvLayerT<T> conv;
    BnLayerT<T> bn;
    bool has_bn = true;
    bool has_act = true;
    Act act = Act::relu;

    Flow<T> forward(TapeT<T>* tape, const Flow<T>& x, Mode mode, bool bypass_norm = false) {
        Flow<T> y = conv_flow(tape, x, conv);
        if (has_bn && !bypass_norm) y = batchnorm_flow(tape, y, bn, mode);
        if (has_act) y = act_flow(tape, y, act);
        return y;
    }
};

template <typename T>
ConvBnActT<T> make_conv_bn_act(Rng& rng, int cin, int cout, int kt, int kh, int kw) {
    ConvBnActT<T> l;
    l.conv = make_conv_layer<T>(rng, false, cin, cout, kt, kh, kw, 1, 1, 1, kt / 2, kh / 2, kw / 2);
    l.bn = make_bn_layer<T>(uint32_t(cout));
    return l;
}

// Multi-scale convolution block. Two parallel branches over the same input —
// a stacked pair of kxk convs (5x5-equivalent receptive field) and a single
// kxk conv — summed and fused by a 1x1x1 conv. All three convs carry BN+ReLU,
// and so does the fusion. `ck` is the internal branch width.
template <typename T>
struct MscbT {
    ConvBnActT<T> top_a, top_b, bottom, fuse;
    bool bypass_norm = false;

    Flow<T> forward(TapeT<T>* tape, const Flow<T>& x, Mode mode) {
        Flow<T> a = top_a.forward(tape, x, mode, bypass_norm);
        a = top_b.forward(tape, a, mode, bypass_norm);
        Flow<T> b = bottom.forward(tape, x, mode, bypass_norm);
        Flow<T> s = add_flow(tape, a, b);
        return fuse.forward(tape, s, mode, bypass_norm);
    }
};

template <typename T>
MscbT<T> make_mscb(Rng& rng, int cin, int cout, int ck, int kt) {
    if (ck < 1) throw ConfigError("mscb: branch width must be >= 1");
    MscbT<T> m;
    m.top_a = make_conv_bn_act<T>(rng, cin, ck, kt, 3, 3);
    m.top_b = make_conv_bn_act<T>(rng, ck, ck, kt, 3, 3);
    m.bottom = make_conv_bn_act<T>(rng, cin, ck, kt, 3, 3);
    m.fuse = make_conv_bn_act<T>(rng, ck, cout, 1, 1, 1);
    return m;
}

// Channel attention block. Encoder skip and decoder features are concatenated,
// squeezed to a per-channel descriptor by global average pooling, passed
// through a bottleneck pair of 1x1x1 convs (ReLU then sigmoid) to produce
// channel weights, applied multiplicatively with a skip (x*a + x), and fused
// down to the stage width by a final 1x1x1 conv.
template <typename T>
struct CabT {
    ConvLayerT<T> squeeze, excite, out;

    Flow<T> forward(TapeT<T>* tape, const Flow<T>& enc, const Flow<T>& dec, Mode /*mode*/) {
        Flow<T> cat = concat_flow(tape, enc, dec);
        const auto& cs = cat.v().shape;
        std::vector<uint32_t> vec5 =
            cs.size() == 5 ? std::vector<uint32_t>{cs[0], cs[1], 1, 1, 1}
                           : std::vector<uint32_t>{cs[0], 1, 1, 1};
        Flow<T> g = gap_flow(tape, cat);
        std::vector<uint32_t> vshape = g.v().shape;
        Flow<T> s = act_flow(tape, conv_flow(tape, reshape_flow(tape, g, vec5), squeeze), Act::relu);
        Flow<T> e = act_flow(tape, conv_flow(tape, s, excite), Act::sigmoid);
        Flow<T> alpha = reshape_flow(tape, e, vshape);
        Flow<T> rw = scale_residual_flow(tape, cat, alpha);
        return act_flow(tape, conv_flow(tape, rw, out), Act::relu);
    }
};

template <typename T>
CabT<T> make_cab(Rng& rng, int c, int reduction) {
    CabT<T> b;
    const int cat = 2 * c;
    const int mid = std::max(1, cat / std::max(1, reduction));
    b.squeeze = make_conv1x1<T>(rng, cat, mid);
    b.excite = make_conv1x1<T>(rng, mid, cat);
    b.out = make_conv1x1<T>(rng, cat, c);
    return b;
}

// Global pooling module at the bottom of the encoder: a 1x1x1 conv, a gate
// built from globally pooled features (1x1x1 conv + sigmoid), multiplicative
// reweighting with skip, and a closing 1x1x1 conv. Channel count is preserved.
template <typename T>
struct GpmT {
    ConvLayerT<T> in_conv, gate, out_conv;

    Flow<T> forward(TapeT<T>* tape, const Flow<T>& x, Mode /*mode*/) {
        Flow<T> f = act_flow(tape, conv_flow(tape, x, in_conv), Act::relu);
        const auto& fs = f.v().shape;
        std::vector<uint32_t> vec5 =
            fs.size() == 5 ? std::vector<uint32_t>{fs[0], fs[1], 1, 1, 1}
                           : std::vector<uint32_t>{fs[0], 1, 1, 1};
        Flow<T> g = gap_flow(tape, f);
        std::vector<uint32_t> vshape = g.v().shape;
        Flow<T> a =
            act_flow(tape, conv_flow(tape, reshape_flow(tape, g, vec5), gate), Act::sigmoid);
        Flow<T> alpha = reshape_flow(tape, a, vshape);
        Flow<T> rw = scale_residual_flow(tape, f, alpha);
        return act_flow(tape, conv_flow(tape, rw, out_conv), Act::relu);
    }
};

template <typename T>
GpmT<T> make_gpm(Rng& rng, int c) {
    GpmT<T> g;
    g.in_conv = make_conv1x1<T>(rng, c, c);
    g.gate = make_conv1x1<T>(rng, c, c);
    g.out_conv = make_conv1x1<T>(rng, c, c);
    return g;
}

}  // namespace msfcn
