#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "msfcn/common.hpp"

namespace msfcn {

constexpr uint16_t kIgnoreLabel = 65535;

inline std::string shape_str(const std::vector<uint32_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

inline void validate_shape(const std::vector<uint32_t>& shape) {
    if (shape.empty() || shape.size() > 5)
        throw ShapeError("tensor rank must be 1..5, got " + std::to_string(shape.size()));
    for (uint32_t e : shape)
        if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
}

inline size_t shape_numel(const std::vector<uint32_t>& shape) {
    size_t n = 1;
    for (uint32_t e : shape) n *= e;
    return n;
}

// Dense row-major tensor, rank 1..5. Axis convention throughout:
// (c,t,h,w) for a single volume, (b,c,t,h,w) batched, (K,h,w) for score maps.
template <typename T>
struct TensorT {
    std::vector<uint32_t> shape;
    std::vector<T> data;

    TensorT() = default;
    TensorT(std::vector<uint32_t> s, T fill) : shape(std::move(s)) {
        validate_shape(shape);
        data.assign(shape_numel(shape), fill);
    }

    size_t size() const { return data.size(); }
    uint32_t extent(size_t axis) const { return shape.at(axis); }
    size_t rank() const { return shape.size(); }
};

using Tensor = TensorT<float>;

template <typename T>
TensorT<T> tensor_fill(std::vector<uint32_t> shape, T value) {
    return TensorT<T>(std::move(shape), value);
}

template <typename T>
TensorT<T> tensor_zeros(std::vector<uint32_t> shape) {
    return TensorT<T>(std::move(shape), T(0));
}

template <typename T, typename U>
TensorT<T> tensor_cast(const TensorT<U>& x) {
    TensorT<T> out(x.shape, T(0));
    for (size_t i = 0; i < x.size(); ++i) out.data[i] = static_cast<T>(x.data[i]);
    return out;
}

// The channel axis sits 4 axes from the right: axis 0 of (c,t,h,w), axis 1 of
// (b,c,t,h,w). Rank <= 3 degenerates to axis 0 (plain vectors of channels).
inline size_t channel_axis(size_t rank) { return rank >= 4 ? rank - 4 : 0; }

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != b.rank())
        throw ShapeError("concat_channels: rank mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    const size_t ax = channel_axis(a.rank());
    for (size_t i = 0; i < a.rank(); ++i)
        if (i != ax && a.shape[i] != b.shape[i])
            throw ShapeError("concat_channels: extents differ off the channel axis: " +
                             shape_str(a.shape) + " vs " + shape_str(b.shape));

    std::vector<uint32_t> oshape = a.shape;
    oshape[ax] += b.shape[ax];
    TensorT<T> out(oshape, T(0));

    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < ax; ++i) outer *= a.shape[i];
    for (size_t i = ax + 1; i < a.rank(); ++i) inner *= a.shape[i];
    const size_t ca = a.shape[ax], cb = b.shape[ax];
    for (size_t o = 0; o < outer; ++o) {
        T* dst = out.data.data() + o * (ca + cb) * inner;
        const T* pa = a.data.data() + o * ca * inner;
        const T* pb = b.data.data() + o * cb * inner;
        std::copy(pa, pa + ca * inner, dst);
        std::copy(pb, pb + cb * inner, dst + ca * inner);
    }
    return out;
}

// Inverse of concat_channels: splits grad flowing into a concat result.
template <typename T>
void split_channels(const TensorT<T>& x, size_t ca, TensorT<T>& a, TensorT<T>& b) {
    const size_t ax = channel_axis(x.rank());
    if (ca == 0 || ca >= x.shape[ax]) throw ShapeError("split_channels: bad split point");
    std::vector<uint32_t> sa = x.shape, sb = x.shape;
    sa[ax] = static_cast<uint32_t>(ca);
    sb[ax] = x.shape[ax] - static_cast<uint32_t>(ca);
    a = TensorT<T>(sa, T(0));
    b = TensorT<T>(sb, T(0));
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < ax; ++i) outer *= x.shape[i];
    for (size_t i = ax + 1; i < x.rank(); ++i) inner *= x.shape[i];
    const size_t cb = sb[ax];
    for (size_t o = 0; o < outer; ++o) {
        const T* src = x.data.data() + o * (ca + cb) * inner;
        std::copy(src, src + ca * inner, a.data.data() + o * ca * inner);
        std::copy(src + ca * inner, src + (ca + cb) * inner, b.data.data() + o * cb * inner);
    }
}

// Zero-pads the trailing (h,w) axes up to (th,tw); content lands top-left.
template <typename T>
TensorT<T> pad_spatial(const TensorT<T>& x, uint32_t th, uint32_t tw) {
    if (x.rank() < 2) throw ShapeError("pad_spatial: need rank >= 2");
    const uint32_t h = x.shape[x.rank() - 2], w = x.shape[x.rank() - 1];
    if (th < h || tw < w)
        throw ShapeError("pad_spatial: target " + std::to_string(th) + "x" + std::to_string(tw) +
                         " smaller than input " + std::to_string(h) + "x" + std::to_string(w));
    std::vector<uint32_t> oshape = x.shape;
    oshape[x.rank() - 2] = th;
    oshape[x.rank() - 1] = tw;
    TensorT<T> out(oshape, T(0));
    const size_t planes = x.size() / (size_t(h) * w);
    for (size_t pl = 0; pl < planes; ++pl)
        for (uint32_t i = 0; i < h; ++i)
            std::copy(x.data.begin() + (pl * h + i) * w, x.data.begin() + (pl * h + i) * w + w,
                      out.data.begin() + (pl * th + i) * tw);
    return out;
}

template <typename T>
TensorT<T> crop_spatial(const TensorT<T>& x, uint32_t th, uint32_t tw) {
    if (x.rank() < 2) throw ShapeError("crop_spatial: need rank >= 2");
    const uint32_t h = x.shape[x.rank() - 2], w = x.shape[x.rank() - 1];
    if (th > h || tw > w) throw ShapeError("crop_spatial: target exceeds input");
    std::vector<uint32_t> oshape = x.shape;
    oshape[x.rank() - 2] = th;
    oshape[x.rank() - 1] = tw;
    TensorT<T> out(oshape, T(0));
    const size_t planes = x.size() / (size_t(h) * w);
    for (size_t pl = 0; pl < planes; ++pl)
        for (uint32_t i = 0; i < th; ++i)
            std::copy(x.data.begin() + (pl * h + i) * w, x.data.begin() + (pl * h + i) * w + tw,
                      out.data.begin() + (pl * th + i) * tw);
    return out;
}

// Per-pixel class labels. 65535 marks "no ground truth here" (padding, voids);
// those pixels are skipped by the loss and every metric.
struct LabelMap {
    uint32_t h = 0, w = 0;
    std::vector<uint16_t> data;

    LabelMap() = default;
    LabelMap(uint32_t hh, uint32_t ww, uint16_t fill) : h(hh), w(ww) {
        if (h == 0 || w == 0) throw ShapeError("LabelMap: zero extent");
        data.assign(size_t(h) * w, fill);
    }
    uint16_t& at(uint32_t i, uint32_t j) { return data[size_t(i) * w + j]; }
    uint16_t at(uint32_t i, uint32_t j) const { return data[size_t(i) * w + j]; }
    size_t size() const { return data.size(); }
};

inline LabelMap pad_label(const LabelMap& x, uint32_t th, uint32_t tw) {
    if (th < x.h || tw < x.w) throw ShapeError("pad_label: target smaller than input");
    LabelMap out(th, tw, kIgnoreLabel);
    for (uint32_t i = 0; i < x.h; ++i)
        std::copy(x.data.begin() + size_t(i) * x.w, x.data.begin() + size_t(i) * x.w + x.w,
                  out.data.begin() + size_t(i) * tw);
    return out;
}

inline void validate_labels(const LabelMap& lm, uint32_t num_classes) {
    for (uint16_t v : lm.data)
        if (v >= num_classes && v != kIgnoreLabel)
            throw DataError("label value " + std::to_string(v) + " outside [0," +
                            std::to_string(num_classes) + ") and not ignore");
}

}  // namespace msfcn
