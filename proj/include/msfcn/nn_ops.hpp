#pragma once

#include <cmath>
#include <vector>

#include "msfcn/kernels.hpp"
#include "msfcn/tensor.hpp"

namespace msfcn {

enum class Mode { train, eval };

// Conv parameter bundle. Weight layout is (cout,cin,kt,kh,kw) for forward
// convolution and (cin,cout,kt,kh,kw) for transposed convolution — the
// transposed layout mirrors the roles so that tconv's input-gradient IS a
// plain conv3d with the same buffer.
template <typename T>
struct ConvParamsT {
    TensorT<T> weight;
    TensorT<T> bias;
    int st = 1, sh = 1, sw = 1;
    int pt = 0, ph = 0, pw = 0;
};
using ConvParams = ConvParamsT<float>;

namespace detail {

// Accepts (c,t,h,w) or (b,c,t,h,w); returns extents with b=1 for rank 4.
inline void batch_view(const std::vector<uint32_t>& s, int& b, int& c, int& t, int& h, int& w) {
    if (s.size() == 5) {
        b = int(s[0]); c = int(s[1]); t = int(s[2]); h = int(s[3]); w = int(s[4]);
    } else if (s.size() == 4) {
        b = 1; c = int(s[0]); t = int(s[1]); h = int(s[2]); w = int(s[3]);
    } else {
        throw ShapeError("expected rank 4 (c,t,h,w) or rank 5 (b,c,t,h,w), got " + shape_str(s));
    }
}

inline std::vector<uint32_t> like_rank(const std::vector<uint32_t>& in, int b, int c, int t, int h,
                                       int w) {
    if (in.size() == 5) return {uint32_t(b), uint32_t(c), uint32_t(t), uint32_t(h), uint32_t(w)};
    return {uint32_t(c), uint32_t(t), uint32_t(h), uint32_t(w)};
}

}  // namespace detail

template <typename T>
ConvGeom conv_geom_for(const TensorT<T>& x, const ConvParamsT<T>& p, bool transposed) {
    int b, c, t, h, w;
    detail::batch_view(x.shape, b, c, t, h, w);
    if (p.weight.rank() != 5) throw ShapeError("conv weight must be rank 5");
    const int d0 = int(p.weight.shape[0]), d1 = int(p.weight.shape[1]);
    const int kt = int(p.weight.shape[2]), kh = int(p.weight.shape[3]), kw = int(p.weight.shape[4]);
    const int cin = transposed ? d0 : d1;
    const int cout = transposed ? d1 : d0;
    if (cin != c)
        throw ShapeError("conv: input has " + std::to_string(c) + " channels, weights expect " +
                         std::to_string(cin));
    if (p.bias.size() != size_t(cout)) throw ShapeError("conv: bias extent != out channels");
    return transposed ? make_tconv_geom(b, c, t, h, w, cout, kt, kh, kw, p.st, p.sh, p.sw, p.pt,
                                        p.ph, p.pw)
                      : make_conv_geom(b, c, t, h, w, cout, kt, kh, kw, p.st, p.sh, p.sw, p.pt,
                                       p.ph, p.pw);
}

template <typename T>
TensorT<T> conv3d(const TensorT<T>& x, const ConvParamsT<T>& p) {
    const ConvGeom g = conv_geom_for(x, p, false);
    TensorT<T> y(detail::like_rank(x.shape, g.b, g.cout, g.to, g.ho, g.wo), T(0));
    kern::conv3d_fwd(x.data.data(), p.weight.data.data(), p.bias.data.data(), y.data.data(), g);
    return y;
}

template <typename T>
void conv3d_backward(const TensorT<T>& x, const ConvParamsT<T>& p, const TensorT<T>& gy,
                     TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db) {
    const ConvGeom g = conv_geom_for(x, p, false);
    if (gy.size() != size_t(g.b) * g.cout * g.out_plane())
        throw ShapeError("conv3d_backward: grad size mismatch");
    if (dx) {
        *dx = TensorT<T>(x.shape, T(0));
        kern::conv3d_bwd_x(p.weight.data.data(), gy.data.data(), dx->data.data(), g);
    }
    if (dw) {
        *dw = TensorT<T>(p.weight.shape, T(0));
        kern::conv3d_bwd_wgt(x.data.data(), gy.data.data(), dw->data.data(), g);
    }
    if (db) {
        *db = TensorT<T>(p.bias.shape, T(0));
        kern::conv3d_bwd_bias(gy.data.data(), db->data.data(), g.b, g.cout, g.out_plane());
    }
}

template <typename T>
TensorT<T> transposed_conv3d(const TensorT<T>& x, const ConvParamsT<T>& p) {
    const ConvGeom g = conv_geom_for(x, p, true);
    TensorT<T> y(detail::like_rank(x.shape, g.b, g.cout, g.to, g.ho, g.wo), T(0));
    kern::tconv3d_fwd(x.data.data(), p.weight.data.data(), p.bias.data.data(), y.data.data(), g);
    return y;
}

template <typename T>
void transposed_conv3d_backward(const TensorT<T>& x, const ConvParamsT<T>& p, const TensorT<T>& gy,
                                TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db) {
    const ConvGeom g = conv_geom_for(x, p, true);
    if (gy.size() != size_t(g.b) * g.cout * g.out_plane())
        throw ShapeError("transposed_conv3d_backward: grad size mismatch");
    if (dx) {
        // Gradient w.r.t. input of a transposed conv is a forward conv over gy
        // with the very same weight buffer: layout (cin,cout,k...) reads as
        // (cout',cin',k...) once the roles flip.
        ConvGeom cg = make_conv_geom(g.b, g.cout, g.to, g.ho, g.wo, g.cin, g.kt, g.kh, g.kw, g.st,
                                     g.sh, g.sw, g.pt, g.ph, g.pw);
        if (cg.to != g.t || cg.ho != g.h || cg.wo != g.w)
            throw ShapeError("transposed_conv3d_backward: adjoint geometry mismatch");
        *dx = TensorT<T>(x.shape, T(0));
        kern::conv3d_fwd(gy.data.data(), p.weight.data.data(), static_cast<const T*>(nullptr),
                         dx->data.data(), cg);
    }
    if (dw) {
        *dw = TensorT<T>(p.weight.shape, T(0));
        kern::tconv3d_bwd_wgt(x.data.data(), gy.data.data(), dw->data.data(), g);
    }
    if (db) {
        *db = TensorT<T>(p.bias.shape, T(0));
        kern::conv3d_bwd_bias(gy.data.data(), db->data.data(), g.b, g.cout, g.out_plane());
    }
}

// --- batch normalization ----------------------------------------------------

template <typename T>
struct BatchNormParamsT {
    TensorT<T> gamma, beta;               // learnable, (c)
    TensorT<T> running_mean, running_var; // buffers, (c)
    T epsilon = T(1e-5);
    T momentum = T(0.1);                  // running <- (1-m)*running + m*batch
};
using BatchNormParams = BatchNormParamsT<float>;

template <typename T>
BatchNormParamsT<T> make_batchnorm(uint32_t c) {
    BatchNormParamsT<T> p;
    p.gamma = tensor_fill<T>({c}, T(1));
    p.beta = tensor_zeros<T>({c});
    p.running_mean = tensor_zeros<T>({c});
    p.running_var = tensor_fill<T>({c}, T(1));
    return p;
}

template <typename T>
struct BnCache {
    TensorT<T> xhat;
    std::vector<T> inv_std;
};

// Train mode: normalize by batch statistics (population variance, divisor N)
// and fold them into the running estimates. Eval mode: running stats only, no
// state is touched. Statistics pool over batch, t, h and w per channel.
template <typename T>
TensorT<T> batchnorm(const TensorT<T>& x, BatchNormParamsT<T>& p, Mode mode,
                     BnCache<T>* cache = nullptr) {
    int b, c, t, h, w;
    detail::batch_view(x.shape, b, c, t, h, w);
    if (p.gamma.size() != size_t(c))
        throw ShapeError("batchnorm: params sized for " + std::to_string(p.gamma.size()) +
                         " channels, input has " + std::to_string(c));
    const size_t plane = size_t(t) * h * w;
    const size_t n_per_c = size_t(b) * plane;
    TensorT<T> y(x.shape, T(0));

    if (mode == Mode::train) {
        if (n_per_c < 2)
            throw ShapeError("batchnorm: train mode needs >= 2 values per channel, got " +
                             std::to_string(n_per_c));
        if (cache) {
            cache->xhat = TensorT<T>(x.shape, T(0));
            cache->inv_std.assign(size_t(c), T(0));
        }
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < c; ++ci) {
            double sum = 0.0, sq = 0.0;
            for (int n = 0; n < b; ++n) {
                const T* xp = x.data.data() + (size_t(n) * c + ci) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    sum += double(xp[i]);
                    sq += double(xp[i]) * double(xp[i]);
                }
            }
            const double mean = sum / double(n_per_c);
            const double var = sq / double(n_per_c) - mean * mean;
            const double istd = 1.0 / std::sqrt(var + double(p.epsilon));
            for (int n = 0; n < b; ++n) {
                const T* xp = x.data.data() + (size_t(n) * c + ci) * plane;
                T* yp = y.data.data() + (size_t(n) * c + ci) * plane;
                T* xh = cache ? cache->xhat.data.data() + (size_t(n) * c + ci) * plane : nullptr;
                for (size_t i = 0; i < plane; ++i) {
                    const T xhat = T((double(xp[i]) - mean) * istd);
                    if (xh) xh[i] = xhat;
                    yp[i] = p.gamma.data[ci] * xhat + p.beta.data[ci];
                }
            }
            if (cache) cache->inv_std[ci] = T(istd);
            p.running_mean.data[ci] =
                (T(1) - p.momentum) * p.running_mean.data[ci] + p.momentum * T(mean);
            p.running_var.data[ci] =
                (T(1) - p.momentum) * p.running_var.data[ci] + p.momentum * T(var);
        }
    } else {
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < c; ++ci) {
            const T istd = T(1) / std::sqrt(p.running_var.data[ci] + p.epsilon);
            const T mean = p.running_mean.data[ci];
            const T scale = p.gamma.data[ci] * istd;
            const T shift = p.beta.data[ci] - scale * mean;
            for (int n = 0; n < b; ++n) {
                const T* xp = x.data.data() + (size_t(n) * c + ci) * plane;
                T* yp = y.data.data() + (size_t(n) * c + ci) * plane;
                for (size_t i = 0; i < plane; ++i) yp[i] = scale * xp[i] + shift;
            }
        }
    }
    return y;
}

// dx = gamma*istd * (g - mean(g) - xhat*mean(g*xhat)), means over the stat pool.
template <typename T>
void batchnorm_backward(const BnCache<T>& cache, const BatchNormParamsT<T>& p,
                        const TensorT<T>& gy, TensorT<T>* dx, TensorT<T>* dgamma,
                        TensorT<T>* dbeta) {
    int b, c, t, h, w;
    detail::batch_view(cache.xhat.shape, b, c, t, h, w);
    const size_t plane = size_t(t) * h * w;
    const size_t n_per_c = size_t(b) * plane;
    if (dx) *dx = TensorT<T>(cache.xhat.shape, T(0));
    if (dgamma) *dgamma = tensor_zeros<T>({uint32_t(c)});
    if (dbeta) *dbeta = tensor_zeros<T>({uint32_t(c)});
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < c; ++ci) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int n = 0; n < b; ++n) {
            const size_t base = (size_t(n) * c + ci) * plane;
            for (size_t i = 0; i < plane; ++i) {
                sum_g += double(gy.data[base + i]);
                sum_gx += double(gy.data[base + i]) * double(cache.xhat.data[base + i]);
            }
        }
        if (dgamma) dgamma->data[ci] = T(sum_gx);
        if (dbeta) dbeta->data[ci] = T(sum_g);
        if (dx) {
            const double mg = sum_g / double(n_per_c);
            const double mgx = sum_gx / double(n_per_c);
            const double k = double(p.gamma.data[ci]) * double(cache.inv_std[ci]);
            for (int n = 0; n < b; ++n) {
                const size_t base = (size_t(n) * c + ci) * plane;
                for (size_t i = 0; i < plane; ++i)
                    dx->data[base + i] =
                        T(k * (double(gy.data[base + i]) - mg -
                               double(cache.xhat.data[base + i]) * mgx));
            }
        }
    }
}

// --- activations -------------------------------------------------------------

enum class Act { relu, sigmoid };

template <typename T>
TensorT<T> activation(const TensorT<T>& x, Act a) {
    TensorT<T> y(x.shape, T(0));
    const size_t n = x.size();
    if (a == Act::relu) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < (long long)n; ++i)
            y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    } else {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < (long long)n; ++i)
            y.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
    }
    return y;
}

// Both derivatives are cheap functions of the *output*: relu' = [y > 0],
// sigmoid' = y(1-y). relu at exactly 0 takes gradient 0.
template <typename T>
TensorT<T> activation_backward(const TensorT<T>& y, Act a, const TensorT<T>& gy) {
    if (y.shape != gy.shape) throw ShapeError("activation_backward: shape mismatch");
    TensorT<T> dx(y.shape, T(0));
    const size_t n = y.size();
    if (a == Act::relu) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < (long long)n; ++i)
            dx.data[i] = y.data[i] > T(0) ? gy.data[i] : T(0);
    } else {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < (long long)n; ++i)
            dx.data[i] = gy.data[i] * y.data[i] * (T(1) - y.data[i]);
    }
    return dx;
}

// --- pooling -----------------------------------------------------------------

template <typename T>
TensorT<T> maxpool_122(const TensorT<T>& x, std::vector<uint32_t>* argmax) {
    int b, c, t, h, w;
    detail::batch_view(x.shape, b, c, t, h, w);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("maxpool(1,2,2): h and w must be even, got " + std::to_string(h) + "x" +
                         std::to_string(w));
    TensorT<T> y(detail::like_rank(x.shape, b, c, t, h / 2, w / 2), T(0));
    argmax->assign(y.size(), 0);
    kern::maxpool122_fwd(x.data.data(), y.data.data(), argmax->data(), b * c, t, h, w);
    return y;
}

template <typename T>
TensorT<T> maxpool_122_backward(const std::vector<uint32_t>& argmax,
                                const std::vector<uint32_t>& in_shape, const TensorT<T>& gy) {
    int b, c, t, h, w;
    detail::batch_view(in_shape, b, c, t, h, w);
    TensorT<T> dx(in_shape, T(0));
    kern::maxpool122_bwd(gy.data.data(), argmax.data(), dx.data.data(), b * c, t, h, w);
    return dx;
}

// (b,c,t,h,w) -> (b,c); (c,t,h,w) -> (c)
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
    int b, c, t, h, w;
    detail::batch_view(x.shape, b, c, t, h, w);
    const size_t plane = size_t(t) * h * w;
    TensorT<T> y(x.rank() == 5 ? std::vector<uint32_t>{uint32_t(b), uint32_t(c)}
                               : std::vector<uint32_t>{uint32_t(c)},
                 T(0));
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < b; ++n) {
        for (int ci = 0; ci < c; ++ci) {
            const T* xp = x.data.data() + (size_t(n) * c + ci) * plane;
            double acc = 0.0;
            for (size_t i = 0; i < plane; ++i) acc += double(xp[i]);
            y.data[size_t(n) * c + ci] = T(acc / double(plane));
        }
    }
    return y;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const std::vector<uint32_t>& in_shape, const TensorT<T>& gy) {
    int b, c, t, h, w;
    detail::batch_view(in_shape, b, c, t, h, w);
    const size_t plane = size_t(t) * h * w;
    TensorT<T> dx(in_shape, T(0));
    for (int n = 0; n < b; ++n)
        for (int ci = 0; ci < c; ++ci) {
            const T v = gy.data[size_t(n) * c + ci] / T(plane);
            T* dp = dx.data.data() + (size_t(n) * c + ci) * plane;
            for (size_t i = 0; i < plane; ++i) dp[i] = v;
        }
    return dx;
}

// --- elementwise -------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape != b.shape)
        throw ShapeError("add: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    TensorT<T> y(a.shape, T(0));
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)a.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    return y;
}

// y = x * alpha + x with alpha broadcast per channel; alpha is (b,c) for
// rank-5 x, (c) for rank-4. This is the attention reweight-and-skip step.
template <typename T>
TensorT<T> channel_scale_residual(const TensorT<T>& x, const TensorT<T>& alpha) {
    int b, c, t, h, w;
    detail::batch_view(x.shape, b, c, t, h, w);
    if (alpha.size() != size_t(b) * c) throw ShapeError("channel_scale_residual: alpha size");
    const size_t plane = size_t(t) * h * w;
    TensorT<T> y(x.shape, T(0));
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < b; ++n)
        for (int ci = 0; ci < c; ++ci) {
            const T s = alpha.data[size_t(n) * c + ci] + T(1);
            const T* xp = x.data.data() + (size_t(n) * c + ci) * plane;
            T* yp = y.data.data() + (size_t(n) * c + ci) * plane;
            for (size_t i = 0; i < plane; ++i) yp[i] = s * xp[i];
        }
    return y;
}

template <typename T>
void channel_scale_residual_backward(const TensorT<T>& x, const TensorT<T>& alpha,
                                     const TensorT<T>& gy, TensorT<T>* dx, TensorT<T>* dalpha) {
    int b, c, t, h, w;
    detail::batch_view(x.shape, b, c, t, h, w);
    const size_t plane = size_t(t) * h * w;
    if (dx) *dx = TensorT<T>(x.shape, T(0));
    if (dalpha) *dalpha = TensorT<T>(alpha.shape, T(0));
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < b; ++n)
        for (int ci = 0; ci < c; ++ci) {
            const size_t base = (size_t(n) * c + ci) * plane;
            const T s = alpha.data[size_t(n) * c + ci] + T(1);
            double acc = 0.0;
            for (size_t i = 0; i < plane; ++i) {
                if (dx) dx->data[base + i] = s * gy.data[base + i];
                acc += double(gy.data[base + i]) * double(x.data[base + i]);
            }
            if (dalpha) dalpha->data[size_t(n) * c + ci] = T(acc);
        }
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<uint32_t> new_shape) {
    validate_shape(new_shape);
    if (shape_numel(new_shape) != x.size())
        throw ShapeError("reshape: element count mismatch " + shape_str(x.shape) + " -> " +
                         shape_str(new_shape));
    TensorT<T> y;
    y.shape = std::move(new_shape);
    y.data = x.data;
    return y;
}

// --- classification head ------------------------------------------------------

// Per-pixel softmax over the channel axis; (K,h,w) or (b,K,h,w).
template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& logits) {
    size_t bsz = 1, koff = 0;
    if (logits.rank() == 4) {
        bsz = logits.shape[0];
        koff = 1;
    } else if (logits.rank() != 3) {
        throw ShapeError("softmax_channels: expected (K,h,w) or (b,K,h,w)");
    }
    const size_t K = logits.shape[koff];
    if (K < 2) throw ShapeError("softmax_channels: need K >= 2 classes");
    const size_t hw = size_t(logits.shape[koff + 1]) * logits.shape[koff + 2];
    TensorT<T> y(logits.shape, T(0));
#pragma omp parallel for collapse(2) schedule(static)
    for (long long n = 0; n < (long long)bsz; ++n) {
        for (long long px = 0; px < (long long)hw; ++px) {
            const size_t base = size_t(n) * K * hw + px;
            T mx = logits.data[base];
            for (size_t k = 1; k < K; ++k) mx = std::max(mx, logits.data[base + k * hw]);
            double denom = 0.0;
            for (size_t k = 0; k < K; ++k) denom += std::exp(double(logits.data[base + k * hw] - mx));
            for (size_t k = 0; k < K; ++k)
                y.data[base + k * hw] =
                    T(std::exp(double(logits.data[base + k * hw] - mx)) / denom);
        }
    }
    return y;
}

// Argmax over channels; ties take the lowest class id.
template <typename T>
LabelMap argmax_channels(const TensorT<T>& scores) {
    if (scores.rank() != 3) throw ShapeError("argmax_channels: expected (K,h,w)");
    const size_t K = scores.shape[0], hw = size_t(scores.shape[1]) * scores.shape[2];
    LabelMap lm(scores.shape[1], scores.shape[2], 0);
    for (size_t px = 0; px < hw; ++px) {
        size_t best = 0;
        T bv = scores.data[px];
        for (size_t k = 1; k < K; ++k)
            if (scores.data[px + k * hw] > bv) {
                bv = scores.data[px + k * hw];
                best = k;
            }
        lm.data[px] = uint16_t(best);
    }
    return lm;
}

// Mean cross-entropy over non-ignored pixels, with the gradient w.r.t. logits.
// Computed through log-sum-exp so a saturated softmax cannot produce log(0).
template <typename T>
struct CeOut {
    double loss = 0.0;
    TensorT<T> dlogits;
    size_t pixels = 0;
};

template <typename T>
CeOut<T> cross_entropy(const TensorT<T>& logits, const std::vector<LabelMap>& labels) {
    if (logits.rank() != 4) throw ShapeError("cross_entropy: expected (b,K,h,w) logits");
    const size_t bsz = logits.shape[0], K = logits.shape[1];
    const uint32_t h = logits.shape[2], w = logits.shape[3];
    if (labels.size() != bsz) throw ShapeError("cross_entropy: batch/labels count mismatch");
    if (K < 2) throw ShapeError("cross_entropy: need K >= 2 classes");
    const size_t hw = size_t(h) * w;

    size_t live = 0;
    for (size_t n = 0; n < bsz; ++n) {
        if (labels[n].h != h || labels[n].w != w)
            throw ShapeError("cross_entropy: label map extents mismatch logits");
        for (uint16_t v : labels[n].data) {
            if (v == kIgnoreLabel) continue;
            if (v >= K)
                throw DataError("cross_entropy: label " + std::to_string(v) + " >= K=" +
                                std::to_string(K));
            ++live;
        }
    }
    if (live == 0) throw DataError("cross_entropy: every pixel is ignored");

    CeOut<T> out;
    out.pixels = live;
    out.dlogits = TensorT<T>(logits.shape, T(0));
    double loss = 0.0;
    const double inv_n = 1.0 / double(live);
    for (size_t n = 0; n < bsz; ++n) {
        const size_t nb = n * K * hw;
        for (size_t px = 0; px < hw; ++px) {
            const uint16_t yv = labels[n].data[px];
            if (yv == kIgnoreLabel) continue;
            double mx = double(logits.data[nb + px]);
            for (size_t k = 1; k < K; ++k) mx = std::max(mx, double(logits.data[nb + px + k * hw]));
            double denom = 0.0;
            for (size_t k = 0; k < K; ++k)
                denom += std::exp(double(logits.data[nb + px + k * hw]) - mx);
            const double lse = mx + std::log(denom);
            loss += lse - double(logits.data[nb + px + size_t(yv) * hw]);
            for (size_t k = 0; k < K; ++k) {
                const double pk = std::exp(double(logits.data[nb + px + k * hw]) - lse);
                out.dlogits.data[nb + px + k * hw] =
                    T((pk - (k == size_t(yv) ? 1.0 : 0.0)) * inv_n);
            }
        }
    }
    out.loss = loss * inv_n;
    return out;
}

template <typename T>
CeOut<T> cross_entropy(const TensorT<T>& logits, const LabelMap& label) {
    if (logits.rank() != 3) throw ShapeError("cross_entropy: expected (K,h,w) logits");
    TensorT<T> batched = reshape(logits, {1u, logits.shape[0], logits.shape[1], logits.shape[2]});
    CeOut<T> out = cross_entropy(batched, std::vector<LabelMap>{label});
    out.dlogits = reshape(out.dlogits, logits.shape);
    return out;
}

}  // namespace msfcn
