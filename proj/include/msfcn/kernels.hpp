#pragma once

// Convolution / pooling kernels. Two flavors live here:
//
//   msfcn::kern  - production kernels, OpenMP-parallel across independent
//                  output elements. Inside one output element the reduction
//                  order is fixed (channel, then kt, kh, kw ascending), so
//                  results are bit-identical run to run at any thread count.
//   msfcn::ref   - straight-line serial loops kept as the readable reference;
//                  the unit tests and tools/bench_kernels compare against it.
//
// The fast kernels put the output-width loop innermost over contiguous rows so
// the compiler can vectorize across output elements; each element still owns
// its private accumulator chain, which is what keeps the order guarantee.

#include <algorithm>
#include <cstdint>

#include "msfcn/tensor.hpp"

namespace msfcn {

struct ConvGeom {
    int b = 1;                      // batch
    int cin = 0, t = 0, h = 0, w = 0;
    int cout = 0, kt = 0, kh = 0, kw = 0;
    int st = 1, sh = 1, sw = 1;
    int pt = 0, ph = 0, pw = 0;
    int to = 0, ho = 0, wo = 0;     // output extents

    size_t in_plane() const { return size_t(t) * h * w; }
    size_t out_plane() const { return size_t(to) * ho * wo; }
    size_t ksize() const { return size_t(kt) * kh * kw; }
};

inline int conv_out_extent(int in, int k, int s, int p, const char* axis) {
    if (k > in + 2 * p)
        throw ShapeError(std::string("conv kernel extent ") + std::to_string(k) + " exceeds padded " +
                         axis + " extent " + std::to_string(in + 2 * p));
    return (in + 2 * p - k) / s + 1;
}

inline ConvGeom make_conv_geom(int b, int cin, int t, int h, int w, int cout, int kt, int kh,
                               int kw, int st, int sh, int sw, int pt, int ph, int pw) {
    ConvGeom g{b, cin, t, h, w, cout, kt, kh, kw, st, sh, sw, pt, ph, pw, 0, 0, 0};
    if (b < 1 || cin < 1 || cout < 1) throw ShapeError("conv: channel/batch extents must be >= 1");
    if (kt < 1 || kh < 1 || kw < 1) throw ShapeError("conv: kernel extents must be >= 1");
    if (st < 1 || sh < 1 || sw < 1) throw ShapeError("conv: strides must be >= 1");
    if (pt < 0 || ph < 0 || pw < 0) throw ShapeError("conv: padding must be >= 0");
    g.to = conv_out_extent(t, kt, st, pt, "t");
    g.ho = conv_out_extent(h, kh, sh, ph, "h");
    g.wo = conv_out_extent(w, kw, sw, pw, "w");
    return g;
}

// Transposed conv: same struct, but (t,h,w) are the small input map and
// (to,ho,wo) the expanded output: (in-1)*s - 2p + k.
inline ConvGeom make_tconv_geom(int b, int cin, int t, int h, int w, int cout, int kt, int kh,
                                int kw, int st, int sh, int sw, int pt, int ph, int pw) {
    ConvGeom g{b, cin, t, h, w, cout, kt, kh, kw, st, sh, sw, pt, ph, pw, 0, 0, 0};
    if (b < 1 || cin < 1 || cout < 1) throw ShapeError("tconv: channel/batch extents must be >= 1");
    if (kt < 1 || kh < 1 || kw < 1) throw ShapeError("tconv: kernel extents must be >= 1");
    if (st < 1 || sh < 1 || sw < 1) throw ShapeError("tconv: strides must be >= 1");
    if (pt < 0 || ph < 0 || pw < 0) throw ShapeError("tconv: padding must be >= 0");
    g.to = (t - 1) * st - 2 * pt + kt;
    g.ho = (h - 1) * sh - 2 * ph + kh;
    g.wo = (w - 1) * sw - 2 * pw + kw;
    if (g.to < 1 || g.ho < 1 || g.wo < 1)
        throw ShapeError("tconv: output extent collapsed to zero (padding too large)");
    return g;
}

// Range of loop index v such that 0 <= v*s + off < in. Used both for "which
// output columns read a valid input column" (conv) and the reverse (tconv).
inline void conv_axis_range(int off, int s, int in, int out, int& lo, int& hi) {
    lo = off >= 0 ? 0 : (-off + s - 1) / s;
    const int top = in - 1 - off;
    hi = top < 0 ? 0 : std::min(out, top / s + 1);
    if (hi < lo) hi = lo;
}

namespace kern {

// y[n,j,to,ho,wo] = bias[j] + sum_{m,p,q,r} W[j,m,p,q,r] * x[n,m,ti,hi,wi]
// with (ti,hi,wi) = (to*st-pt+p, ho*sh-ph+q, wo*sw-pw+r); out-of-range taps
// read zero. Weights layout (cout,cin,kt,kh,kw). bias may be null.
template <typename T>
void conv3d_fwd(const T* x, const T* wgt, const T* bias, T* y, const ConvGeom& g) {
    const size_t xp = g.in_plane(), yp = g.out_plane(), ks = g.ksize();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < g.b; ++n) {
        for (int j = 0; j < g.cout; ++j) {
            const T* wj = wgt + size_t(j) * g.cin * ks;
            T* yj = y + (size_t(n) * g.cout + j) * yp;
            const T bj = bias ? bias[j] : T(0);
            for (int to = 0; to < g.to; ++to) {
                for (int ho = 0; ho < g.ho; ++ho) {
                    T* yrow = yj + (size_t(to) * g.ho + ho) * g.wo;
                    for (int wo = 0; wo < g.wo; ++wo) yrow[wo] = bj;
                    for (int m = 0; m < g.cin; ++m) {
                        const T* xm = x + (size_t(n) * g.cin + m) * xp;
                        const T* wm = wj + size_t(m) * ks;
                        for (int p = 0; p < g.kt; ++p) {
                            const int ti = to * g.st - g.pt + p;
                            if (ti < 0 || ti >= g.t) continue;
                            for (int q = 0; q < g.kh; ++q) {
                                const int hi = ho * g.sh - g.ph + q;
                                if (hi < 0 || hi >= g.h) continue;
                                const T* xrow = xm + (size_t(ti) * g.h + hi) * g.w;
                                const T* wrow = wm + (size_t(p) * g.kh + q) * g.kw;
                                for (int r = 0; r < g.kw; ++r) {
                                    const T wv = wrow[r];
                                    const int off = r - g.pw;
                                    int lo, hi2;
                                    conv_axis_range(off, g.sw, g.w, g.wo, lo, hi2);
                                    const T* xq = xrow + off;
                                    if (g.sw == 1) {
                                        for (int wo = lo; wo < hi2; ++wo) yrow[wo] += wv * xq[wo];
                                    } else {
                                        for (int wo = lo; wo < hi2; ++wo)
                                            yrow[wo] += wv * xq[size_t(wo) * g.sw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_bwd_bias(const T* gy, T* db, int b, int cout, size_t plane) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < cout; ++j) {
        T acc(0);
        for (int n = 0; n < b; ++n) {
            const T* gj = gy + (size_t(n) * cout + j) * plane;
            for (size_t i = 0; i < plane; ++i) acc += gj[i];
        }
        db[j] = acc;
    }
}

// dW[j,m,p,q,r] = sum_{n,to,ho,wo} gy[n,j,...] * x[n,m,ti,hi,wi]
template <typename T>
void conv3d_bwd_wgt(const T* x, const T* gy, T* dw, const ConvGeom& g) {
    const size_t xp = g.in_plane(), yp = g.out_plane(), ks = g.ksize();
#pragma omp parallel for collapse(2) schedule(static)
    for (int j = 0; j < g.cout; ++j) {
        for (int m = 0; m < g.cin; ++m) {
            T* dwm = dw + (size_t(j) * g.cin + m) * ks;
            for (int p = 0; p < g.kt; ++p) {
                for (int q = 0; q < g.kh; ++q) {
                    for (int r = 0; r < g.kw; ++r) {
                        const int off = r - g.pw;
                        int lo, hi2;
                        conv_axis_range(off, g.sw, g.w, g.wo, lo, hi2);
                        T acc(0);
                        for (int n = 0; n < g.b; ++n) {
                            const T* xm = x + (size_t(n) * g.cin + m) * xp;
                            const T* gj = gy + (size_t(n) * g.cout + j) * yp;
                            for (int to = 0; to < g.to; ++to) {
                                const int ti = to * g.st - g.pt + p;
                                if (ti < 0 || ti >= g.t) continue;
                                for (int ho = 0; ho < g.ho; ++ho) {
                                    const int hi = ho * g.sh - g.ph + q;
                                    if (hi < 0 || hi >= g.h) continue;
                                    const T* xrow = xm + (size_t(ti) * g.h + hi) * g.w + off;
                                    const T* grow = gj + (size_t(to) * g.ho + ho) * g.wo;
                                    for (int wo = lo; wo < hi2; ++wo)
                                        acc += grow[wo] * xrow[size_t(wo) * g.sw];
                                }
                            }
                        }
                        dwm[(size_t(p) * g.kh + q) * g.kw + r] = acc;
                    }
                }
            }
        }
    }
}

// dx[n,m,ti,hi,wi] = sum_{j,p,q,r | to= (ti+pt-p)/st etc. valid} W[j,m,...] * gy[n,j,to,ho,wo]
template <typename T>
void conv3d_bwd_x(const T* wgt, const T* gy, T* dx, const ConvGeom& g) {
    const size_t xp = g.in_plane(), yp = g.out_plane(), ks = g.ksize();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < g.b; ++n) {
        for (int m = 0; m < g.cin; ++m) {
            T* dxm = dx + (size_t(n) * g.cin + m) * xp;
            for (size_t i = 0; i < xp; ++i) dxm[i] = T(0);
            for (int j = 0; j < g.cout; ++j) {
                const T* gj = gy + (size_t(n) * g.cout + j) * yp;
                const T* wm = wgt + (size_t(j) * g.cin + m) * ks;
                for (int p = 0; p < g.kt; ++p) {
                    for (int to = 0; to < g.to; ++to) {
                        const int ti = to * g.st - g.pt + p;
                        if (ti < 0 || ti >= g.t) continue;
                        for (int q = 0; q < g.kh; ++q) {
                            for (int ho = 0; ho < g.ho; ++ho) {
                                const int hi = ho * g.sh - g.ph + q;
                                if (hi < 0 || hi >= g.h) continue;
                                T* drow = dxm + (size_t(ti) * g.h + hi) * g.w;
                                const T* grow = gj + (size_t(to) * g.ho + ho) * g.wo;
                                const T* wrow = wm + (size_t(p) * g.kh + q) * g.kw;
                                for (int r = 0; r < g.kw; ++r) {
                                    const T wv = wrow[r];
                                    const int off = r - g.pw;
                                    int lo, hi2;
                                    conv_axis_range(off, g.sw, g.w, g.wo, lo, hi2);
                                    T* dq = drow + off;
                                    if (g.sw == 1) {
                                        for (int wo = lo; wo < hi2; ++wo) dq[wo] += wv * grow[wo];
                                    } else {
                                        for (int wo = lo; wo < hi2; ++wo)
                                            dq[size_t(wo) * g.sw] += wv * grow[wo];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// Note on order: for a fixed dx element the (j,p,q,r) visit order above is
// j, p, to, q, ho, r — but each (ti,hi) pair pins to/ho once p/q are chosen,
// so per element the contribution order is still (j,p,q,r) ascending.

// Transposed conv forward, gather form. Weights layout (cin,cout,kt,kh,kw):
// y[n,j,o] = bias[j] + sum_{m,tap} [s | o+p-tap] V[m,j,tap] * x[n,m,(o+p-tap)/s]
template <typename T>
void tconv3d_fwd(const T* x, const T* wgt, const T* bias, T* y, const ConvGeom& g) {
    const size_t xp = g.in_plane(), yp = g.out_plane(), ks = g.ksize();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < g.b; ++n) {
        for (int j = 0; j < g.cout; ++j) {
            T* yj = y + (size_t(n) * g.cout + j) * yp;
            const T bj = bias ? bias[j] : T(0);
            for (size_t i = 0; i < yp; ++i) yj[i] = bj;
            for (int m = 0; m < g.cin; ++m) {
                const T* xm = x + (size_t(n) * g.cin + m) * xp;
                const T* wm = wgt + (size_t(m) * g.cout + j) * ks;
                for (int p = 0; p < g.kt; ++p) {
                    for (int ti = 0; ti < g.t; ++ti) {
                        const int to = ti * g.st - g.pt + p;
                        if (to < 0 || to >= g.to) continue;
                        for (int q = 0; q < g.kh; ++q) {
                            for (int hi = 0; hi < g.h; ++hi) {
                                const int ho = hi * g.sh - g.ph + q;
                                if (ho < 0 || ho >= g.ho) continue;
                                const T* xrow = xm + (size_t(ti) * g.h + hi) * g.w;
                                T* yrow = yj + (size_t(to) * g.ho + ho) * g.wo;
                                const T* wrow = wm + (size_t(p) * g.kh + q) * g.kw;
                                for (int r = 0; r < g.kw; ++r) {
                                    const T wv = wrow[r];
                                    const int off = r - g.pw;
                                    int lo, hi2;
                                    conv_axis_range(off, g.sw, g.wo, g.w, lo, hi2);
                                    T* yq = yrow + off;
                                    if (g.sw == 1) {
                                        for (int wi = lo; wi < hi2; ++wi) yq[wi] += wv * xrow[wi];
                                    } else {
                                        for (int wi = lo; wi < hi2; ++wi)
                                            yq[size_t(wi) * g.sw] += wv * xrow[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// dV[m,j,p,q,r] = sum_{n,ti,hi,wi} x[n,m,...] * gy[n,j, ti*st-pt+p, ...]
template <typename T>
void tconv3d_bwd_wgt(const T* x, const T* gy, T* dw, const ConvGeom& g) {
    const size_t xp = g.in_plane(), yp = g.out_plane(), ks = g.ksize();
#pragma omp parallel for collapse(2) schedule(static)
    for (int m = 0; m < g.cin; ++m) {
        for (int j = 0; j < g.cout; ++j) {
            T* dwm = dw + (size_t(m) * g.cout + j) * ks;
            for (int p = 0; p < g.kt; ++p) {
                for (int q = 0; q < g.kh; ++q) {
                    for (int r = 0; r < g.kw; ++r) {
                        const int off = r - g.pw;
                        int lo, hi2;
                        conv_axis_range(off, g.sw, g.wo, g.w, lo, hi2);
                        T acc(0);
                        for (int n = 0; n < g.b; ++n) {
                            const T* xm = x + (size_t(n) * g.cin + m) * xp;
                            const T* gj = gy + (size_t(n) * g.cout + j) * yp;
                            for (int ti = 0; ti < g.t; ++ti) {
                                const int to = ti * g.st - g.pt + p;
                                if (to < 0 || to >= g.to) continue;
                                for (int hi = 0; hi < g.h; ++hi) {
                                    const int ho = hi * g.sh - g.ph + q;
                                    if (ho < 0 || ho >= g.ho) continue;
                                    const T* xrow = xm + (size_t(ti) * g.h + hi) * g.w;
                                    const T* grow =
                                        gj + (size_t(to) * g.ho + ho) * g.wo + off;
                                    for (int wi = lo; wi < hi2; ++wi)
                                        acc += xrow[wi] * grow[size_t(wi) * g.sw];
                                }
                            }
                        }
                        dwm[(size_t(p) * g.kh + q) * g.kw + r] = acc;
                    }
                }
            }
        }
    }
}

// Max pooling with kernel (1,2,2), stride (1,2,2). argmax stores the flat
// offset of the winner inside its (t,h,w) volume; ties take the first scanned
// (row-major) candidate.
template <typename T>
void maxpool122_fwd(const T* x, T* y, uint32_t* argmax, int bc, int t, int h, int w) {
    const int ho = h / 2, wo = w / 2;
    const size_t xp = size_t(t) * h * w, yp = size_t(t) * ho * wo;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < bc; ++c) {
        const T* xc = x + size_t(c) * xp;
        T* yc = y + size_t(c) * yp;
        uint32_t* ac = argmax + size_t(c) * yp;
        for (int ti = 0; ti < t; ++ti) {
            for (int i = 0; i < ho; ++i) {
                for (int j = 0; j < wo; ++j) {
                    const size_t base = (size_t(ti) * h + 2 * i) * w + 2 * j;
                    size_t best = base;
                    T bv = xc[base];
                    const size_t cand[3] = {base + 1, base + w, base + w + 1};
                    for (size_t k : cand) {
                        if (xc[k] > bv) {
                            bv = xc[k];
                            best = k;
                        }
                    }
                    yc[(size_t(ti) * ho + i) * wo + j] = bv;
                    ac[(size_t(ti) * ho + i) * wo + j] = static_cast<uint32_t>(best);
                }
            }
        }
    }
}

template <typename T>
void maxpool122_bwd(const T* gy, const uint32_t* argmax, T* dx, int bc, int t, int h, int w) {
    const int ho = h / 2, wo = w / 2;
    const size_t xp = size_t(t) * h * w, yp = size_t(t) * ho * wo;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < bc; ++c) {
        T* dxc = dx + size_t(c) * xp;
        for (size_t i = 0; i < xp; ++i) dxc[i] = T(0);
        const T* gc = gy + size_t(c) * yp;
        const uint32_t* ac = argmax + size_t(c) * yp;
        for (size_t i = 0; i < yp; ++i) dxc[ac[i]] += gc[i];
    }
}

}  // namespace kern

namespace ref {

// Reference kernels: the direct transcription of the definitions, serial.
// Slow on purpose — these exist to check the fast path, not to run nets.

template <typename T>
void conv3d_fwd(const T* x, const T* wgt, const T* bias, T* y, const ConvGeom& g) {
    const size_t xp = g.in_plane(), yp = g.out_plane(), ks = g.ksize();
    for (int n = 0; n < g.b; ++n)
        for (int j = 0; j < g.cout; ++j)
            for (int to = 0; to < g.to; ++to)
                for (int ho = 0; ho < g.ho; ++ho)
                    for (int wo = 0; wo < g.wo; ++wo) {
                        T acc = bias ? bias[j] : T(0);
                        for (int m = 0; m < g.cin; ++m)
                            for (int p = 0; p < g.kt; ++p)
                                for (int q = 0; q < g.kh; ++q)
                                    for (int r = 0; r < g.kw; ++r) {
                                        const int ti = to * g.st - g.pt + p;
                                        const int hi = ho * g.sh - g.ph + q;
                                        const int wi = wo * g.sw - g.pw + r;
                                        if (ti < 0 || ti >= g.t || hi < 0 || hi >= g.h ||
                                            wi < 0 || wi >= g.w)
                                            continue;
                                        acc += wgt[((size_t(j) * g.cin + m) * ks) +
                                                   (size_t(p) * g.kh + q) * g.kw + r] *
                                               x[(size_t(n) * g.cin + m) * xp +
                                                 (size_t(ti) * g.h + hi) * g.w + wi];
                                    }
                        y[(size_t(n) * g.cout + j) * yp + (size_t(to) * g.ho + ho) * g.wo + wo] =
                            acc;
                    }
}

// Scatter-form transposed conv: walk the input, smear each value through the
// kernel. Algebraically the adjoint of conv3d_fwd's read pattern.
template <typename T>
void tconv3d_fwd(const T* x, const T* wgt, const T* bias, T* y, const ConvGeom& g) {
    const size_t xp = g.in_plane(), yp = g.out_plane(), ks = g.ksize();
    for (int n = 0; n < g.b; ++n)
        for (int j = 0; j < g.cout; ++j) {
            T* yj = y + (size_t(n) * g.cout + j) * yp;
            for (size_t i = 0; i < yp; ++i) yj[i] = bias ? bias[j] : T(0);
        }
    for (int n = 0; n < g.b; ++n)
        for (int m = 0; m < g.cin; ++m)
            for (int ti = 0; ti < g.t; ++ti)
                for (int hi = 0; hi < g.h; ++hi)
                    for (int wi = 0; wi < g.w; ++wi) {
                        const T xv = x[(size_t(n) * g.cin + m) * xp +
                                       (size_t(ti) * g.h + hi) * g.w + wi];
                        for (int j = 0; j < g.cout; ++j)
                            for (int p = 0; p < g.kt; ++p)
                                for (int q = 0; q < g.kh; ++q)
                                    for (int r = 0; r < g.kw; ++r) {
                                        const int to = ti * g.st - g.pt + p;
                                        const int ho = hi * g.sh - g.ph + q;
                                        const int wo = wi * g.sw - g.pw + r;
                                        if (to < 0 || to >= g.to || ho < 0 || ho >= g.ho ||
                                            wo < 0 || wo >= g.wo)
                                            continue;
                                        y[(size_t(n) * g.cout + j) * yp +
                                          (size_t(to) * g.ho + ho) * g.wo + wo] +=
                                            wgt[(size_t(m) * g.cout + j) * ks +
                                                (size_t(p) * g.kh + q) * g.kw + r] *
                                            xv;
                                    }
                    }
}

}  // namespace ref
}  // namespace msfcn
