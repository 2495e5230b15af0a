#pragma once

#include <functional>
#include <memory>

#include "msfcn/nn_ops.hpp"

namespace msfcn {

template <typename T>
void axpy(TensorT<T>& dst, const TensorT<T>& src) {
    if (dst.size() != src.size()) throw ShapeError("axpy: size mismatch");
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

// Reverse-mode tape. Forward helpers below record one closure per op; running
// the closures in reverse order propagates gradients from any seeded node.
// Pass a null tape to run forward-only (eval) with zero bookkeeping.
template <typename T>
class TapeT {
public:
    int push_node(const std::vector<uint32_t>& shape) {
        grads_.emplace_back(shape, T(0));
        return int(grads_.size()) - 1;
    }
    TensorT<T>& grad(int id) { return grads_.at(size_t(id)); }
    void push_op(std::function<void(TapeT<T>&)> f) { ops_.push_back(std::move(f)); }
    void run_backward() {
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
    }
    void reset() {
        grads_.clear();
        ops_.clear();
    }

private:
    std::vector<TensorT<T>> grads_;
    std::vector<std::function<void(TapeT<T>&)>> ops_;
};
using Tape = TapeT<float>;

// A value moving through the net: the activation plus its tape node (-1 means
// "no gradient wanted", e.g. the input image during training).
template <typename T>
struct Flow {
    std::shared_ptr<const TensorT<T>> val;
    int node = -1;
    const TensorT<T>& v() const { return *val; }
};

template <typename T>
Flow<T> make_flow(TensorT<T> v, int node = -1) {
    return {std::make_shared<const TensorT<T>>(std::move(v)), node};
}

template <typename T>
Flow<T> input_flow(TapeT<T>* tape, TensorT<T> v) {
    Flow<T> f = make_flow(std::move(v));
    if (tape) f.node = tape->push_node(f.v().shape);
    return f;
}

// Layer storage: parameter values plus matching grad buffers. The grad
// buffers are zeroed by the optimizer step, not by the tape.
template <typename T>
struct ConvLayerT {
    ConvParamsT<T> p;
    TensorT<T> gweight, gbias;
    bool transposed = false;
};

template <typename T>
struct BnLayerT {
    BatchNormParamsT<T> p;
    TensorT<T> ggamma, gbeta;
};

template <typename T>
BnLayerT<T> make_bn_layer(uint32_t c) {
    BnLayerT<T> l;
    l.p = make_batchnorm<T>(c);
    l.ggamma = tensor_zeros<T>({c});
    l.gbeta = tensor_zeros<T>({c});
    return l;
}

// --- taped ops. Each returns the forward value and, when a tape is given,
// --- records the matching adjoint step.

template <typename T>
Flow<T> conv_flow(TapeT<T>* tape, const Flow<T>& x, ConvLayerT<T>& layer) {
    TensorT<T> yv = layer.transposed ? transposed_conv3d(x.v(), layer.p) : conv3d(x.v(), layer.p);
    Flow<T> y = make_flow(std::move(yv));
    if (!tape) return y;
    y.node = tape->push_node(y.v().shape);
    auto xval = x.val;
    const int xid = x.node, yid = y.node;
    ConvLayerT<T>* lp = &layer;
    tape->push_op([xval, xid, yid, lp](TapeT<T>& tp) {
        const TensorT<T>& gy = tp.grad(yid);
        TensorT<T> dx, dw, db;
        if (lp->transposed)
            transposed_conv3d_backward(*xval, lp->p, gy, xid >= 0 ? &dx : nullptr, &dw, &db);
        else
            conv3d_backward(*xval, lp->p, gy, xid >= 0 ? &dx : nullptr, &dw, &db);
        axpy(lp->gweight, dw);
        axpy(lp->gbias, db);
        if (xid >= 0) axpy(tp.grad(xid), dx);
    });
    return y;
}

template <typename T>
Flow<T> batchnorm_flow(TapeT<T>* tape, const Flow<T>& x, BnLayerT<T>& layer, Mode mode) {
    if (!tape) {
        return make_flow(batchnorm(x.v(), layer.p, mode, static_cast<BnCache<T>*>(nullptr)));
    }
    auto cache = std::make_shared<BnCache<T>>();
    Flow<T> y = make_flow(batchnorm(x.v(), layer.p, mode, cache.get()));
    if (mode != Mode::train)
        throw ShapeError("batchnorm_flow: taped backward requires train mode");
    y.node = tape->push_node(y.v().shape);
    const int xid = x.node, yid = y.node;
    BnLayerT<T>* lp = &layer;
    tape->push_op([cache, xid, yid, lp](TapeT<T>& tp) {
        TensorT<T> dx, dg, db;
        batchnorm_backward(*cache, lp->p, tp.grad(yid), xid >= 0 ? &dx : nullptr, &dg, &db);
        axpy(lp->ggamma, dg);
        axpy(lp->gbeta, db);
        if (xid >= 0) axpy(tp.grad(xid), dx);
    });
    return y;
}

template <typename T>
Flow<T> act_flow(TapeT<T>* tape, const Flow<T>& x, Act a) {
    Flow<T> y = make_flow(activation(x.v(), a));
    if (!tape || x.node < 0) return y;
    y.node = tape->push_node(y.v().shape);
    auto yval = y.val;
    const int xid = x.node, yid = y.node;
    tape->push_op([yval, xid, yid, a](TapeT<T>& tp) {
        axpy(tp.grad(xid), activation_backward(*yval, a, tp.grad(yid)));
    });
    return y;
}

template <typename T>
Flow<T> maxpool_flow(TapeT<T>* tape, const Flow<T>& x) {
    auto argmax = std::make_shared<std::vector<uint32_t>>();
    Flow<T> y = make_flow(maxpool_122(x.v(), argmax.get()));
    if (!tape || x.node < 0) return y;
    y.node = tape->push_node(y.v().shape);
    auto in_shape = x.v().shape;
    const int xid = x.node, yid = y.node;
    tape->push_op([argmax, in_shape, xid, yid](TapeT<T>& tp) {
        axpy(tp.grad(xid), maxpool_122_backward(*argmax, in_shape, tp.grad(yid)));
    });
    return y;
}

template <typename T>
Flow<T> gap_flow(TapeT<T>* tape, const Flow<T>& x) {
    Flow<T> y = make_flow(global_avg_pool(x.v()));
    if (!tape || x.node < 0) return y;
    y.node = tape->push_node(y.v().shape);
    auto in_shape = x.v().shape;
    const int xid = x.node, yid = y.node;
    tape->push_op([in_shape, xid, yid](TapeT<T>& tp) {
        axpy(tp.grad(xid), global_avg_pool_backward(in_shape, tp.grad(yid)));
    });
    return y;
}

template <typename T>
Flow<T> concat_flow(TapeT<T>* tape, const Flow<T>& a, const Flow<T>& b) {
    Flow<T> y = make_flow(concat_channels(a.v(), b.v()));
    if (!tape || (a.node < 0 && b.node < 0)) return y;
    y.node = tape->push_node(y.v().shape);
    const size_t ca = a.v().shape[channel_axis(a.v().rank())];
    const int aid = a.node, bid = b.node, yid = y.node;
    tape->push_op([ca, aid, bid, yid](TapeT<T>& tp) {
        TensorT<T> ga, gb;
        split_channels(tp.grad(yid), ca, ga, gb);
        if (aid >= 0) axpy(tp.grad(aid), ga);
        if (bid >= 0) axpy(tp.grad(bid), gb);
    });
    return y;
}

template <typename T>
Flow<T> add_flow(TapeT<T>* tape, const Flow<T>& a, const Flow<T>& b) {
    Flow<T> y = make_flow(add(a.v(), b.v()));
    if (!tape || (a.node < 0 && b.node < 0)) return y;
    y.node = tape->push_node(y.v().shape);
    const int aid = a.node, bid = b.node, yid = y.node;
    tape->push_op([aid, bid, yid](TapeT<T>& tp) {
        if (aid >= 0) axpy(tp.grad(aid), tp.grad(yid));
        if (bid >= 0) axpy(tp.grad(bid), tp.grad(yid));
    });
    return y;
}

template <typename T>
Flow<T> scale_residual_flow(TapeT<T>* tape, const Flow<T>& x, const Flow<T>& alpha) {
    Flow<T> y = make_flow(channel_scale_residual(x.v(), alpha.v()));
    if (!tape || (x.node < 0 && alpha.node < 0)) return y;
    y.node = tape->push_node(y.v().shape);
    auto xval = x.val, aval = alpha.val;
    const int xid = x.node, aid = alpha.node, yid = y.node;
    tape->push_op([xval, aval, xid, aid, yid](TapeT<T>& tp) {
        TensorT<T> dx, da;
        channel_scale_residual_backward(*xval, *aval, tp.grad(yid),
                                        xid >= 0 ? &dx : nullptr, aid >= 0 ? &da : nullptr);
        if (xid >= 0) axpy(tp.grad(xid), dx);
        if (aid >= 0) axpy(tp.grad(aid), da);
    });
    return y;
}

template <typename T>
Flow<T> reshape_flow(TapeT<T>* tape, const Flow<T>& x, std::vector<uint32_t> new_shape) {
    Flow<T> y = make_flow(reshape(x.v(), new_shape));
    if (!tape || x.node < 0) return y;
    y.node = tape->push_node(y.v().shape);
    const int xid = x.node, yid = y.node;
    tape->push_op([xid, yid](TapeT<T>& tp) {
        TensorT<T>& gx = tp.grad(xid);
        const TensorT<T>& gy = tp.grad(yid);
        for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += gy.data[i];
    });
    return y;
}

}  // namespace msfcn
