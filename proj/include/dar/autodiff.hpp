#pragma once

// Tape-based reverse-mode differentiation over dense tensors. A Tape is
// built per forward pass (define-by-run); backward() walks the nodes in
// reverse creation order, which is a valid reverse-topological order.
//
// Matrix products map onto Eigen; everything else is explicit loops with
// fixed accumulation order so repeated runs are bitwise reproducible.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "dar/tensor.hpp"

namespace dar {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Named, persistent trainable tensor. Gradients accumulate across a tape's
// backward pass and are consumed by the optimizer.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor<T>::zeros(value.shape);
    }
    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

template <typename T>
class ParamStore {
public:
    Parameter<T>* create(const std::string& name, Tensor<T> init) {
        check_arg(find(name) == nullptr, "duplicate parameter name: " + name);
        params_.push_back(std::make_unique<Parameter<T>>(name, std::move(init)));
        return params_.back().get();
    }

    Parameter<T>* find(const std::string& name) const {
        for (const auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    const std::vector<std::unique_ptr<Parameter<T>>>& all() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
};

template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    const Tensor<T>& value() const { return tape->val(id); }
    const std::vector<int64_t>& shape() const { return tape->val(id).shape; }
};

template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // empty until touched in backward
        std::function<void()> backward;
        bool needs_grad = false;
    };

    bool grad_enabled = true;

    Var<T> push(Tensor<T> v, bool needs_grad) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = grad_enabled && needs_grad;
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    void set_backward(int id, std::function<void()> fn) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.needs_grad) n.backward = std::move(fn);
    }

    Tensor<T>& val(int id) { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor<T>& cval(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.data.empty(); }

    Tensor<T>& grad(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
        return n.grad;
    }

    void backward(Var<T> loss) {
        check_arg(loss.tape == this, "backward: var from another tape");
        check_arg(cval(loss.id).numel() == 1, "backward: loss must be scalar");
        grad(loss.id).data[0] = T(1);
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.backward && !n.grad.data.empty()) n.backward();
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// graph inputs

template <typename T>
Var<T> constant(Tape<T>& tape, Tensor<T> v) {
    return tape.push(std::move(v), false);
}

// Leaf backed by a Parameter; backward adds the node gradient into the
// parameter's persistent accumulator.
template <typename T>
Var<T> leaf(Tape<T>& tape, Parameter<T>* p) {
    Tape<T>* tp = &tape;
    Var<T> out = tape.push(p->value, true);
    int id = out.id;
    tape.set_backward(id, [tp, p, id]() {
        const Tensor<T>& g = tp->grad(id);
        for (size_t i = 0; i < g.data.size(); ++i) p->grad.data[i] += g.data[i];
    });
    return out;
}

// Forward copy, no gradient flow (stop-gradient).
template <typename T>
Var<T> detach(Var<T> x) {
    return x.tape->push(x.value(), false);
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>* tp = a.tape;
    check_arg(a.value().same_shape(b.value()), "add: shape mismatch");
    Tensor<T> out = a.value();
    const T* pb = b.value().ptr();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += pb[i];
    Var<T> o = tp->push(std::move(out), tp->needs_grad(a.id) || tp->needs_grad(b.id));
    tp->set_backward(o.id, [tp, a, b, o]() {
        const Tensor<T>& g = tp->grad(o.id);
        if (tp->needs_grad(a.id)) {
            Tensor<T>& ga = tp->grad(a.id);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        }
        if (tp->needs_grad(b.id)) {
            Tensor<T>& gb = tp->grad(b.id);
            for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
        }
    });
    return o;
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    Tape<T>* tp = a.tape;
    check_arg(a.value().same_shape(b.value()), "sub: shape mismatch");
    Tensor<T> out = a.value();
    const T* pb = b.value().ptr();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= pb[i];
    Var<T> o = tp->push(std::move(out), tp->needs_grad(a.id) || tp->needs_grad(b.id));
    tp->set_backward(o.id, [tp, a, b, o]() {
        const Tensor<T>& g = tp->grad(o.id);
        if (tp->needs_grad(a.id)) {
            Tensor<T>& ga = tp->grad(a.id);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        }
        if (tp->needs_grad(b.id)) {
            Tensor<T>& gb = tp->grad(b.id);
            for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
        }
    });
    return o;
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    Tape<T>* tp = a.tape;
    check_arg(a.value().same_shape(b.value()), "mul: shape mismatch");
    Tensor<T> out = a.value();
    const T* pb = b.value().ptr();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= pb[i];
    Var<T> o = tp->push(std::move(out), tp->needs_grad(a.id) || tp->needs_grad(b.id));
    tp->set_backward(o.id, [tp, a, b, o]() {
        const Tensor<T>& g = tp->grad(o.id);
        const T* pa = tp->val(a.id).ptr();
        const T* pbv = tp->val(b.id).ptr();
        if (tp->needs_grad(a.id)) {
            Tensor<T>& ga = tp->grad(a.id);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * pbv[i];
        }
        if (tp->needs_grad(b.id)) {
            Tensor<T>& gb = tp->grad(b.id);
            for (size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * pa[i];
        }
    });
    return o;
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
    Tape<T>* tp = x.tape;
    Tensor<T> out = x.value();
    for (auto& v : out.data) v *= c;
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, c]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * c;
    });
    return o;
}

template <typename T>
Var<T> add_scalar(Var<T> x, T c) {
    Tape<T>* tp = x.tape;
    Tensor<T> out = x.value();
    for (auto& v : out.data) v += c;
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
    });
    return o;
}

template <typename T>
Var<T> silu(Var<T> x) {
    Tape<T>* tp = x.tape;
    Tensor<T> out = x.value();
    for (auto& v : out.data) {
        T s = T(1) / (T(1) + std::exp(-v));
        v = v * s;
    }
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o]() {
        const Tensor<T>& g = tp->grad(o.id);
        const Tensor<T>& xv = tp->val(x.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (size_t i = 0; i < g.data.size(); ++i) {
            T v = xv.data[i];
            T s = T(1) / (T(1) + std::exp(-v));
            gx.data[i] += g.data[i] * (s + v * s * (T(1) - s));
        }
    });
    return o;
}

// ---------------------------------------------------------------------------
// broadcasting adds

// x: [..., C], b: [C]
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
    Tape<T>* tp = x.tape;
    const int64_t C = b.value().numel();
    check_arg(x.value().shape.back() == C, "add_bias: channel mismatch");
    Tensor<T> out = x.value();
    const T* pb = b.value().ptr();
    const int64_t rows = out.numel() / C;
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < C; ++c) out.data[static_cast<size_t>(r * C + c)] += pb[c];
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id) || tp->needs_grad(b.id));
    tp->set_backward(o.id, [tp, x, b, o, rows, C]() {
        const Tensor<T>& g = tp->grad(o.id);
        if (tp->needs_grad(x.id)) {
            Tensor<T>& gx = tp->grad(x.id);
            for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
        }
        if (tp->needs_grad(b.id)) {
            Tensor<T>& gb = tp->grad(b.id);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < C; ++c) gb.data[static_cast<size_t>(c)] += g.data[static_cast<size_t>(r * C + c)];
        }
    });
    return o;
}

// x: [B, Tdim, C], r: [B, C]; r broadcast across the token axis
template <typename T>
Var<T> add_rows(Var<T> x, Var<T> r) {
    Tape<T>* tp = x.tape;
    check_arg(x.value().rank() == 3 && r.value().rank() == 2, "add_rows: rank mismatch");
    const int64_t B = x.value().dim(0), Tn = x.value().dim(1), C = x.value().dim(2);
    check_arg(r.value().dim(0) == B && r.value().dim(1) == C, "add_rows: shape mismatch");
    Tensor<T> out = x.value();
    const T* pr = r.value().ptr();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < Tn; ++t)
            for (int64_t c = 0; c < C; ++c)
                out.data[static_cast<size_t>((b * Tn + t) * C + c)] += pr[b * C + c];
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id) || tp->needs_grad(r.id));
    tp->set_backward(o.id, [tp, x, r, o, B, Tn, C]() {
        const Tensor<T>& g = tp->grad(o.id);
        if (tp->needs_grad(x.id)) {
            Tensor<T>& gx = tp->grad(x.id);
            for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
        }
        if (tp->needs_grad(r.id)) {
            Tensor<T>& gr = tp->grad(r.id);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t t = 0; t < Tn; ++t)
                    for (int64_t c = 0; c < C; ++c)
                        gr.data[static_cast<size_t>(b * C + c)] += g.data[static_cast<size_t>((b * Tn + t) * C + c)];
        }
    });
    return o;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Var<T> reshape(Var<T> x, std::vector<int64_t> shape) {
    Tape<T>* tp = x.tape;
    Tensor<T> out = x.value().reshaped(shape);
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
    });
    return o;
}

// [B, Tdim, H*hd] -> [B*H, Tdim, hd]
template <typename T>
Var<T> split_heads(Var<T> x, int64_t H) {
    Tape<T>* tp = x.tape;
    check_arg(x.value().rank() == 3, "split_heads: expected rank-3");
    const int64_t B = x.value().dim(0), Tn = x.value().dim(1), C = x.value().dim(2);
    check_arg(C % H == 0, "split_heads: channels not divisible by heads");
    const int64_t hd = C / H;
    Tensor<T> out({B * H, Tn, hd});
    const T* px = x.value().ptr();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t t = 0; t < Tn; ++t)
                std::copy_n(px + (b * Tn + t) * C + h * hd, hd,
                            out.ptr() + ((b * H + h) * Tn + t) * hd);
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, B, H, Tn, hd]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        const int64_t C = H * hd;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t t = 0; t < Tn; ++t)
                    for (int64_t c = 0; c < hd; ++c)
                        gx.data[static_cast<size_t>((b * Tn + t) * C + h * hd + c)] +=
                            g.data[static_cast<size_t>(((b * H + h) * Tn + t) * hd + c)];
    });
    return o;
}

// [B*H, Tdim, hd] -> [B, Tdim, H*hd]
template <typename T>
Var<T> merge_heads(Var<T> x, int64_t H) {
    Tape<T>* tp = x.tape;
    check_arg(x.value().rank() == 3, "merge_heads: expected rank-3");
    const int64_t BH = x.value().dim(0), Tn = x.value().dim(1), hd = x.value().dim(2);
    check_arg(BH % H == 0, "merge_heads: bad head count");
    const int64_t B = BH / H, C = H * hd;
    Tensor<T> out({B, Tn, C});
    const T* px = x.value().ptr();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t t = 0; t < Tn; ++t)
                std::copy_n(px + ((b * H + h) * Tn + t) * hd, hd,
                            out.ptr() + (b * Tn + t) * C + h * hd);
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, B, H, Tn, hd]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        const int64_t C = H * hd;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t t = 0; t < Tn; ++t)
                    for (int64_t c = 0; c < hd; ++c)
                        gx.data[static_cast<size_t>(((b * H + h) * Tn + t) * hd + c)] +=
                            g.data[static_cast<size_t>((b * Tn + t) * C + h * hd + c)];
    });
    return o;
}

// rows [start, start+len) along axis 1 of [B, Tdim, C]
template <typename T>
Var<T> slice_rows(Var<T> x, int64_t start, int64_t len) {
    Tape<T>* tp = x.tape;
    check_arg(x.value().rank() == 3, "slice_rows: expected rank-3");
    const int64_t B = x.value().dim(0), Tn = x.value().dim(1), C = x.value().dim(2);
    check_range(start >= 0 && start + len <= Tn, "slice_rows: out of range");
    Tensor<T> out({B, len, C});
    const T* px = x.value().ptr();
    for (int64_t b = 0; b < B; ++b)
        std::copy_n(px + (b * Tn + start) * C, len * C, out.ptr() + b * len * C);
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, start, len, B, Tn, C]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < len * C; ++i)
                gx.data[static_cast<size_t>((b * Tn + start) * C + i)] += g.data[static_cast<size_t>(b * len * C + i)];
    });
    return o;
}

// per-batch row slices of equal length: out[b] = x[b, starts[b] : starts[b]+len)
template <typename T>
Var<T> slice_rows_per_batch(Var<T> x, std::vector<int64_t> starts, int64_t len) {
    Tape<T>* tp = x.tape;
    check_arg(x.value().rank() == 3, "slice_rows_per_batch: expected rank-3");
    const int64_t B = x.value().dim(0), Tn = x.value().dim(1), C = x.value().dim(2);
    check_arg(static_cast<int64_t>(starts.size()) == B, "slice_rows_per_batch: starts size");
    for (int64_t s : starts) check_range(s >= 0 && s + len <= Tn, "slice_rows_per_batch: out of range");
    Tensor<T> out({B, len, C});
    const T* px = x.value().ptr();
    for (int64_t b = 0; b < B; ++b)
        std::copy_n(px + (b * Tn + starts[static_cast<size_t>(b)]) * C, len * C, out.ptr() + b * len * C);
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, starts, len, B, Tn, C]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < len * C; ++i)
                gx.data[static_cast<size_t>((b * Tn + starts[static_cast<size_t>(b)]) * C + i)] +=
                    g.data[static_cast<size_t>(b * len * C + i)];
    });
    return o;
}

// columns [start, start+len) along the last axis of [B, Tdim, C]
template <typename T>
Var<T> slice_cols(Var<T> x, int64_t start, int64_t len) {
    Tape<T>* tp = x.tape;
    check_arg(x.value().rank() == 3, "slice_cols: expected rank-3");
    const int64_t B = x.value().dim(0), Tn = x.value().dim(1), C = x.value().dim(2);
    check_range(start >= 0 && start + len <= C, "slice_cols: out of range");
    Tensor<T> out({B, Tn, len});
    const T* px = x.value().ptr();
    for (int64_t r = 0; r < B * Tn; ++r)
        std::copy_n(px + r * C + start, len, out.ptr() + r * len);
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, start, len, B, Tn, C]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (int64_t r = 0; r < B * Tn; ++r)
            for (int64_t c = 0; c < len; ++c)
                gx.data[static_cast<size_t>(r * C + start + c)] += g.data[static_cast<size_t>(r * len + c)];
    });
    return o;
}

// concatenate along axis 1: [B, Ta, C] ++ [B, Tb, C]
template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
    Tape<T>* tp = a.tape;
    check_arg(a.value().rank() == 3 && b.value().rank() == 3, "concat_rows: expected rank-3");
    const int64_t B = a.value().dim(0), Ta = a.value().dim(1), C = a.value().dim(2);
    const int64_t Tb = b.value().dim(1);
    check_arg(b.value().dim(0) == B && b.value().dim(2) == C, "concat_rows: shape mismatch");
    Tensor<T> out({B, Ta + Tb, C});
    for (int64_t bb = 0; bb < B; ++bb) {
        std::copy_n(a.value().ptr() + bb * Ta * C, Ta * C, out.ptr() + bb * (Ta + Tb) * C);
        std::copy_n(b.value().ptr() + bb * Tb * C, Tb * C, out.ptr() + bb * (Ta + Tb) * C + Ta * C);
    }
    Var<T> o = tp->push(std::move(out), tp->needs_grad(a.id) || tp->needs_grad(b.id));
    tp->set_backward(o.id, [tp, a, b, o, B, Ta, Tb, C]() {
        const Tensor<T>& g = tp->grad(o.id);
        if (tp->needs_grad(a.id)) {
            Tensor<T>& ga = tp->grad(a.id);
            for (int64_t bb = 0; bb < B; ++bb)
                for (int64_t i = 0; i < Ta * C; ++i)
                    ga.data[static_cast<size_t>(bb * Ta * C + i)] += g.data[static_cast<size_t>(bb * (Ta + Tb) * C + i)];
        }
        if (tp->needs_grad(b.id)) {
            Tensor<T>& gb = tp->grad(b.id);
            for (int64_t bb = 0; bb < B; ++bb)
                for (int64_t i = 0; i < Tb * C; ++i)
                    gb.data[static_cast<size_t>(bb * Tb * C + i)] +=
                        g.data[static_cast<size_t>(bb * (Ta + Tb) * C + Ta * C + i)];
        }
    });
    return o;
}

// [R, C] -> [B, R, C], the same matrix repeated per batch entry
template <typename T>
Var<T> tile_batch(Var<T> x, int64_t B) {
    Tape<T>* tp = x.tape;
    check_arg(x.value().rank() == 2, "tile_batch: expected rank-2");
    const int64_t R = x.value().dim(0), C = x.value().dim(1);
    Tensor<T> out({B, R, C});
    for (int64_t b = 0; b < B; ++b)
        std::copy_n(x.value().ptr(), R * C, out.ptr() + b * R * C);
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, B, R, C]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < R * C; ++i)
                gx.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(b * R * C + i)];
    });
    return o;
}

// table: [V, C], ids flat; out: [len(ids), C]. Backward scatter-adds.
template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<int64_t> ids) {
    Tape<T>* tp = table.tape;
    check_arg(table.value().rank() == 2, "gather_rows: table must be rank-2");
    const int64_t V = table.value().dim(0), C = table.value().dim(1);
    for (int64_t id : ids) check_range(id >= 0 && id < V, "gather_rows: id out of range");
    const int64_t M = static_cast<int64_t>(ids.size());
    Tensor<T> out({M, C});
    for (int64_t i = 0; i < M; ++i)
        std::copy_n(table.value().ptr() + ids[static_cast<size_t>(i)] * C, C, out.ptr() + i * C);
    Var<T> o = tp->push(std::move(out), tp->needs_grad(table.id));
    tp->set_backward(o.id, [tp, table, o, ids, C]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gt = tp->grad(table.id);
        for (size_t i = 0; i < ids.size(); ++i)
            for (int64_t c = 0; c < C; ++c)
                gt.data[static_cast<size_t>(ids[i] * C + c)] += g.data[i * static_cast<size_t>(C) + static_cast<size_t>(c)];
    });
    return o;
}

// ---------------------------------------------------------------------------
// linear algebra

// x: [..., K] treated as [R, K]; w: [K, N] -> [..., N]
template <typename T>
Var<T> matmul(Var<T> x, Var<T> w) {
    Tape<T>* tp = x.tape;
    check_arg(w.value().rank() == 2, "matmul: w must be rank-2");
    const int64_t K = w.value().dim(0), N = w.value().dim(1);
    check_arg(x.value().shape.back() == K, "matmul: inner dim mismatch");
    const int64_t R = x.value().numel() / K;
    std::vector<int64_t> out_shape = x.value().shape;
    out_shape.back() = N;
    Tensor<T> out(out_shape);
    {
        ConstMatMap<T> X(x.value().ptr(), R, K);
        ConstMatMap<T> W(w.value().ptr(), K, N);
        MatMap<T> O(out.ptr(), R, N);
        O.noalias() = X * W;
    }
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id) || tp->needs_grad(w.id));
    tp->set_backward(o.id, [tp, x, w, o, R, K, N]() {
        const Tensor<T>& g = tp->grad(o.id);
        ConstMatMap<T> G(g.ptr(), R, N);
        if (tp->needs_grad(x.id)) {
            ConstMatMap<T> W(tp->val(w.id).ptr(), K, N);
            MatMap<T> GX(tp->grad(x.id).ptr(), R, K);
            GX.noalias() += G * W.transpose();
        }
        if (tp->needs_grad(w.id)) {
            ConstMatMap<T> X(tp->val(x.id).ptr(), R, K);
            MatMap<T> GW(tp->grad(w.id).ptr(), K, N);
            GW.noalias() += X.transpose() * G;
        }
    });
    return o;
}

// batched a: [G, M, K] @ b: [G, K, N] -> [G, M, N]
template <typename T>
Var<T> bmm(Var<T> a, Var<T> b) {
    Tape<T>* tp = a.tape;
    check_arg(a.value().rank() == 3 && b.value().rank() == 3, "bmm: expected rank-3");
    const int64_t G = a.value().dim(0), M = a.value().dim(1), K = a.value().dim(2);
    const int64_t N = b.value().dim(2);
    check_arg(b.value().dim(0) == G && b.value().dim(1) == K, "bmm: shape mismatch");
    Tensor<T> out({G, M, N});
    for (int64_t g = 0; g < G; ++g) {
        ConstMatMap<T> A(a.value().ptr() + g * M * K, M, K);
        ConstMatMap<T> B(b.value().ptr() + g * K * N, K, N);
        MatMap<T> O(out.ptr() + g * M * N, M, N);
        O.noalias() = A * B;
    }
    Var<T> o = tp->push(std::move(out), tp->needs_grad(a.id) || tp->needs_grad(b.id));
    tp->set_backward(o.id, [tp, a, b, o, G, M, K, N]() {
        const Tensor<T>& g = tp->grad(o.id);
        for (int64_t gi = 0; gi < G; ++gi) {
            ConstMatMap<T> GO(g.ptr() + gi * M * N, M, N);
            if (tp->needs_grad(a.id)) {
                ConstMatMap<T> B(tp->val(b.id).ptr() + gi * K * N, K, N);
                MatMap<T> GA(tp->grad(a.id).ptr() + gi * M * K, M, K);
                GA.noalias() += GO * B.transpose();
            }
            if (tp->needs_grad(b.id)) {
                ConstMatMap<T> A(tp->val(a.id).ptr() + gi * M * K, M, K);
                MatMap<T> GB(tp->grad(b.id).ptr() + gi * K * N, K, N);
                GB.noalias() += A.transpose() * GO;
            }
        }
    });
    return o;
}

// batched a: [G, M, K] @ b^T where b: [G, N, K] -> [G, M, N]
template <typename T>
Var<T> bmm_nt(Var<T> a, Var<T> b) {
    Tape<T>* tp = a.tape;
    check_arg(a.value().rank() == 3 && b.value().rank() == 3, "bmm_nt: expected rank-3");
    const int64_t G = a.value().dim(0), M = a.value().dim(1), K = a.value().dim(2);
    const int64_t N = b.value().dim(1);
    check_arg(b.value().dim(0) == G && b.value().dim(2) == K, "bmm_nt: shape mismatch");
    Tensor<T> out({G, M, N});
    for (int64_t g = 0; g < G; ++g) {
        ConstMatMap<T> A(a.value().ptr() + g * M * K, M, K);
        ConstMatMap<T> B(b.value().ptr() + g * N * K, N, K);
        MatMap<T> O(out.ptr() + g * M * N, M, N);
        O.noalias() = A * B.transpose();
    }
    Var<T> o = tp->push(std::move(out), tp->needs_grad(a.id) || tp->needs_grad(b.id));
    tp->set_backward(o.id, [tp, a, b, o, G, M, K, N]() {
        const Tensor<T>& g = tp->grad(o.id);
        for (int64_t gi = 0; gi < G; ++gi) {
            ConstMatMap<T> GO(g.ptr() + gi * M * N, M, N);
            if (tp->needs_grad(a.id)) {
                ConstMatMap<T> B(tp->val(b.id).ptr() + gi * N * K, N, K);
                MatMap<T> GA(tp->grad(a.id).ptr() + gi * M * K, M, K);
                GA.noalias() += GO * B;
            }
            if (tp->needs_grad(b.id)) {
                ConstMatMap<T> A(tp->val(a.id).ptr() + gi * M * K, M, K);
                MatMap<T> GB(tp->grad(b.id).ptr() + gi * N * K, N, K);
                GB.noalias() += GO.transpose() * A;
            }
        }
    });
    return o;
}

// ---------------------------------------------------------------------------
// normalization / softmax

// last-dim RMS normalization; gain optional (invalid Var -> no affine)
template <typename T>
Var<T> rmsnorm(Var<T> x, Var<T> gain = Var<T>{}, T eps = T(1e-6)) {
    Tape<T>* tp = x.tape;
    const int64_t C = x.value().shape.back();
    const int64_t R = x.value().numel() / C;
    const bool affine = gain.tape != nullptr;
    if (affine) check_arg(gain.value().numel() == C, "rmsnorm: gain size mismatch");
    Tensor<T> out(x.value().shape);
    Tensor<T> inv_rms({R});
    const T* px = x.value().ptr();
    const T* pg = affine ? gain.value().ptr() : nullptr;
    for (int64_t r = 0; r < R; ++r) {
        T ss = T(0);
        for (int64_t c = 0; c < C; ++c) ss += px[r * C + c] * px[r * C + c];
        T inv = T(1) / std::sqrt(ss / static_cast<T>(C) + eps);
        inv_rms.data[static_cast<size_t>(r)] = inv;
        for (int64_t c = 0; c < C; ++c) {
            T v = px[r * C + c] * inv;
            out.data[static_cast<size_t>(r * C + c)] = affine ? v * pg[c] : v;
        }
    }
    bool ng = tp->needs_grad(x.id) || (affine && tp->needs_grad(gain.id));
    Var<T> o = tp->push(std::move(out), ng);
    tp->set_backward(o.id, [tp, x, gain, o, inv_rms, R, C, affine]() {
        const Tensor<T>& g = tp->grad(o.id);
        const Tensor<T>& xv = tp->val(x.id);
        const T* pg = affine ? tp->val(gain.id).ptr() : nullptr;
        for (int64_t r = 0; r < R; ++r) {
            const T inv = inv_rms.data[static_cast<size_t>(r)];
            // xhat = x*inv; dxhat = g*gain; dx = (dxhat - xhat*mean(dxhat*xhat))*inv
            T dot = T(0);
            for (int64_t c = 0; c < C; ++c) {
                T xhat = xv.data[static_cast<size_t>(r * C + c)] * inv;
                T dxhat = g.data[static_cast<size_t>(r * C + c)] * (affine ? pg[c] : T(1));
                dot += dxhat * xhat;
            }
            dot /= static_cast<T>(C);
            if (tp->needs_grad(x.id)) {
                Tensor<T>& gx = tp->grad(x.id);
                for (int64_t c = 0; c < C; ++c) {
                    T xhat = xv.data[static_cast<size_t>(r * C + c)] * inv;
                    T dxhat = g.data[static_cast<size_t>(r * C + c)] * (affine ? pg[c] : T(1));
                    gx.data[static_cast<size_t>(r * C + c)] += (dxhat - xhat * dot) * inv;
                }
            }
            if (affine && tp->needs_grad(gain.id)) {
                Tensor<T>& gg = tp->grad(gain.id);
                for (int64_t c = 0; c < C; ++c) {
                    T xhat = xv.data[static_cast<size_t>(r * C + c)] * inv;
                    gg.data[static_cast<size_t>(c)] += g.data[static_cast<size_t>(r * C + c)] * xhat;
                }
            }
        }
    });
    return o;
}

// last-dim LayerNorm; gain/bias optional (both or neither)
template <typename T>
Var<T> layernorm(Var<T> x, Var<T> gain = Var<T>{}, Var<T> bias = Var<T>{}, T eps = T(1e-6)) {
    Tape<T>* tp = x.tape;
    const int64_t C = x.value().shape.back();
    const int64_t R = x.value().numel() / C;
    const bool affine = gain.tape != nullptr;
    if (affine) {
        check_arg(bias.tape != nullptr, "layernorm: gain without bias");
        check_arg(gain.value().numel() == C && bias.value().numel() == C, "layernorm: affine size mismatch");
    }
    Tensor<T> out(x.value().shape);
    Tensor<T> inv_std({R});
    Tensor<T> means({R});
    const T* px = x.value().ptr();
    const T* pg = affine ? gain.value().ptr() : nullptr;
    const T* pb = affine ? bias.value().ptr() : nullptr;
    for (int64_t r = 0; r < R; ++r) {
        T mu = T(0);
        for (int64_t c = 0; c < C; ++c) mu += px[r * C + c];
        mu /= static_cast<T>(C);
        T var = T(0);
        for (int64_t c = 0; c < C; ++c) {
            T d = px[r * C + c] - mu;
            var += d * d;
        }
        var /= static_cast<T>(C);
        T inv = T(1) / std::sqrt(var + eps);
        means.data[static_cast<size_t>(r)] = mu;
        inv_std.data[static_cast<size_t>(r)] = inv;
        for (int64_t c = 0; c < C; ++c) {
            T xhat = (px[r * C + c] - mu) * inv;
            out.data[static_cast<size_t>(r * C + c)] = affine ? xhat * pg[c] + pb[c] : xhat;
        }
    }
    bool ng = tp->needs_grad(x.id) || (affine && (tp->needs_grad(gain.id) || tp->needs_grad(bias.id)));
    Var<T> o = tp->push(std::move(out), ng);
    tp->set_backward(o.id, [tp, x, gain, bias, o, inv_std, means, R, C, affine]() {
        const Tensor<T>& g = tp->grad(o.id);
        const Tensor<T>& xv = tp->val(x.id);
        const T* pg = affine ? tp->val(gain.id).ptr() : nullptr;
        for (int64_t r = 0; r < R; ++r) {
            const T inv = inv_std.data[static_cast<size_t>(r)];
            const T mu = means.data[static_cast<size_t>(r)];
            T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
            for (int64_t c = 0; c < C; ++c) {
                T xhat = (xv.data[static_cast<size_t>(r * C + c)] - mu) * inv;
                T dxhat = g.data[static_cast<size_t>(r * C + c)] * (affine ? pg[c] : T(1));
                mean_dxhat += dxhat;
                mean_dxhat_xhat += dxhat * xhat;
            }
            mean_dxhat /= static_cast<T>(C);
            mean_dxhat_xhat /= static_cast<T>(C);
            if (tp->needs_grad(x.id)) {
                Tensor<T>& gx = tp->grad(x.id);
                for (int64_t c = 0; c < C; ++c) {
                    T xhat = (xv.data[static_cast<size_t>(r * C + c)] - mu) * inv;
                    T dxhat = g.data[static_cast<size_t>(r * C + c)] * (affine ? pg[c] : T(1));
                    gx.data[static_cast<size_t>(r * C + c)] += (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv;
                }
            }
            if (affine) {
                if (tp->needs_grad(gain.id)) {
                    Tensor<T>& gg = tp->grad(gain.id);
                    for (int64_t c = 0; c < C; ++c) {
                        T xhat = (xv.data[static_cast<size_t>(r * C + c)] - mu) * inv;
                        gg.data[static_cast<size_t>(c)] += g.data[static_cast<size_t>(r * C + c)] * xhat;
                    }
                }
                if (tp->needs_grad(bias.id)) {
                    Tensor<T>& gb = tp->grad(bias.id);
                    for (int64_t c = 0; c < C; ++c)
                        gb.data[static_cast<size_t>(c)] += g.data[static_cast<size_t>(r * C + c)];
                }
            }
        }
    });
    return o;
}

// rows to unit l2 norm over the last axis
template <typename T>
Var<T> l2_normalize_rows(Var<T> x, T eps = T(1e-12)) {
    Tape<T>* tp = x.tape;
    const int64_t C = x.value().shape.back();
    const int64_t R = x.value().numel() / C;
    Tensor<T> out(x.value().shape);
    Tensor<T> inv_norm({R});
    const T* px = x.value().ptr();
    for (int64_t r = 0; r < R; ++r) {
        T ss = eps;
        for (int64_t c = 0; c < C; ++c) ss += px[r * C + c] * px[r * C + c];
        T inv = T(1) / std::sqrt(ss);
        inv_norm.data[static_cast<size_t>(r)] = inv;
        for (int64_t c = 0; c < C; ++c) out.data[static_cast<size_t>(r * C + c)] = px[r * C + c] * inv;
    }
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, inv_norm, R, C]() {
        const Tensor<T>& g = tp->grad(o.id);
        const Tensor<T>& yv = tp->val(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (int64_t r = 0; r < R; ++r) {
            const T inv = inv_norm.data[static_cast<size_t>(r)];
            T dot = T(0);
            for (int64_t c = 0; c < C; ++c)
                dot += g.data[static_cast<size_t>(r * C + c)] * yv.data[static_cast<size_t>(r * C + c)];
            for (int64_t c = 0; c < C; ++c)
                gx.data[static_cast<size_t>(r * C + c)] +=
                    (g.data[static_cast<size_t>(r * C + c)] - yv.data[static_cast<size_t>(r * C + c)] * dot) * inv;
        }
    });
    return o;
}

// softmax over the last dim of [G, Tq, Tk] with optional additive mask [Tq, Tk]
// (0 where allowed, -inf where forbidden). Throws if a row is fully masked.
template <typename T>
Var<T> softmax_masked(Var<T> scores, const Tensor<T>* mask = nullptr) {
    Tape<T>* tp = scores.tape;
    check_arg(scores.value().rank() == 3, "softmax_masked: expected rank-3");
    const int64_t G = scores.value().dim(0), Tq = scores.value().dim(1), Tk = scores.value().dim(2);
    if (mask) check_arg(mask->rank() == 2 && mask->dim(0) == Tq && mask->dim(1) == Tk, "softmax_masked: mask shape");
    Tensor<T> out({G, Tq, Tk});
    const T* ps = scores.value().ptr();
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (int64_t g = 0; g < G; ++g) {
        for (int64_t q = 0; q < Tq; ++q) {
            const T* row = ps + (g * Tq + q) * Tk;
            const T* mrow = mask ? mask->ptr() + q * Tk : nullptr;
            T mx = neg_inf;
            for (int64_t k = 0; k < Tk; ++k) {
                T v = row[k] + (mrow ? mrow[k] : T(0));
                if (v > mx) mx = v;
            }
            check_runtime(mx != neg_inf, "softmax_masked: fully masked row");
            T sum = T(0);
            T* orow = out.ptr() + (g * Tq + q) * Tk;
            for (int64_t k = 0; k < Tk; ++k) {
                T v = row[k] + (mrow ? mrow[k] : T(0));
                T e = std::exp(v - mx);
                orow[k] = e;
                sum += e;
            }
            T inv = T(1) / sum;
            for (int64_t k = 0; k < Tk; ++k) orow[k] *= inv;
        }
    }
    Var<T> o = tp->push(std::move(out), tp->needs_grad(scores.id));
    tp->set_backward(o.id, [tp, scores, o, G, Tq, Tk]() {
        const Tensor<T>& g = tp->grad(o.id);
        const Tensor<T>& y = tp->val(o.id);
        Tensor<T>& gs = tp->grad(scores.id);
        for (int64_t r = 0; r < G * Tq; ++r) {
            T dot = T(0);
            for (int64_t k = 0; k < Tk; ++k)
                dot += g.data[static_cast<size_t>(r * Tk + k)] * y.data[static_cast<size_t>(r * Tk + k)];
            for (int64_t k = 0; k < Tk; ++k)
                gs.data[static_cast<size_t>(r * Tk + k)] +=
                    (g.data[static_cast<size_t>(r * Tk + k)] - dot) * y.data[static_cast<size_t>(r * Tk + k)];
        }
    });
    return o;
}

// rotary embedding over [G, Tdim, hd]; adjacent channel pairs rotate by
// position-dependent angles given as cos/sin tables [Tdim, hd/2].
template <typename T>
Var<T> rope_apply(Var<T> x, const Tensor<T>& cos_tab, const Tensor<T>& sin_tab) {
    Tape<T>* tp = x.tape;
    check_arg(x.value().rank() == 3, "rope_apply: expected rank-3");
    const int64_t G = x.value().dim(0), Tn = x.value().dim(1), hd = x.value().dim(2);
    check_arg(hd % 2 == 0, "rope_apply: head dim must be even");
    const int64_t P = hd / 2;
    check_arg(cos_tab.rank() == 2 && cos_tab.dim(0) == Tn && cos_tab.dim(1) == P, "rope_apply: cos table shape");
    check_arg(sin_tab.same_shape(cos_tab), "rope_apply: sin table shape");
    Tensor<T> out({G, Tn, hd});
    const T* px = x.value().ptr();
    for (int64_t g = 0; g < G; ++g)
        for (int64_t t = 0; t < Tn; ++t)
            for (int64_t p = 0; p < P; ++p) {
                T c = cos_tab.at2(t, p), s = sin_tab.at2(t, p);
                T x0 = px[(g * Tn + t) * hd + 2 * p];
                T x1 = px[(g * Tn + t) * hd + 2 * p + 1];
                out.data[static_cast<size_t>((g * Tn + t) * hd + 2 * p)] = x0 * c - x1 * s;
                out.data[static_cast<size_t>((g * Tn + t) * hd + 2 * p + 1)] = x0 * s + x1 * c;
            }
    Var<T> o = tp->push(std::move(out), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, cos_tab, sin_tab, G, Tn, hd, P]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (int64_t gi = 0; gi < G; ++gi)
            for (int64_t t = 0; t < Tn; ++t)
                for (int64_t p = 0; p < P; ++p) {
                    T c = cos_tab.at2(t, p), s = sin_tab.at2(t, p);
                    T g0 = g.data[static_cast<size_t>((gi * Tn + t) * hd + 2 * p)];
                    T g1 = g.data[static_cast<size_t>((gi * Tn + t) * hd + 2 * p + 1)];
                    gx.data[static_cast<size_t>((gi * Tn + t) * hd + 2 * p)] += g0 * c + g1 * s;
                    gx.data[static_cast<size_t>((gi * Tn + t) * hd + 2 * p + 1)] += -g0 * s + g1 * c;
                }
    });
    return o;
}

// ---------------------------------------------------------------------------
// reductions / losses

template <typename T>
Var<T> mean_all(Var<T> x) {
    Tape<T>* tp = x.tape;
    const int64_t N = x.value().numel();
    T acc = T(0);
    for (const T& v : x.value().data) acc += v;
    Var<T> o = tp->push(Tensor<T>::scalar(acc / static_cast<T>(N)), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, N]() {
        const T g = tp->grad(o.id).data[0] / static_cast<T>(N);
        Tensor<T>& gx = tp->grad(x.id);
        for (auto& v : gx.data) v += g;
    });
    return o;
}

// mean of squared entries
template <typename T>
Var<T> squared_mean(Var<T> x) {
    Tape<T>* tp = x.tape;
    const int64_t N = x.value().numel();
    T acc = T(0);
    for (const T& v : x.value().data) acc += v * v;
    Var<T> o = tp->push(Tensor<T>::scalar(acc / static_cast<T>(N)), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, N]() {
        const T g = tp->grad(o.id).data[0];
        const Tensor<T>& xv = tp->val(x.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] += g * T(2) * xv.data[i] / static_cast<T>(N);
    });
    return o;
}

// mean squared error against a fixed target
template <typename T>
Var<T> mse_vs(Var<T> x, const Tensor<T>& target) {
    Tape<T>* tp = x.tape;
    check_arg(x.value().same_shape(target), "mse_vs: shape mismatch");
    const int64_t N = x.value().numel();
    T acc = T(0);
    for (int64_t i = 0; i < N; ++i) {
        T d = x.value().data[static_cast<size_t>(i)] - target.data[static_cast<size_t>(i)];
        acc += d * d;
    }
    Var<T> o = tp->push(Tensor<T>::scalar(acc / static_cast<T>(N)), tp->needs_grad(x.id));
    tp->set_backward(o.id, [tp, x, o, target, N]() {
        const T g = tp->grad(o.id).data[0];
        const Tensor<T>& xv = tp->val(x.id);
        Tensor<T>& gx = tp->grad(x.id);
        for (size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] += g * T(2) * (xv.data[i] - target.data[i]) / static_cast<T>(N);
    });
    return o;
}

// mean cross-entropy of logits [M, V] against integer targets; stable log-softmax
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::vector<int64_t> targets) {
    Tape<T>* tp = logits.tape;
    check_arg(logits.value().rank() == 2, "cross_entropy: logits must be rank-2");
    const int64_t M = logits.value().dim(0), V = logits.value().dim(1);
    check_arg(static_cast<int64_t>(targets.size()) == M, "cross_entropy: target count mismatch");
    for (int64_t t : targets) check_range(t >= 0 && t < V, "cross_entropy: target out of vocab");
    Tensor<T> probs({M, V});
    const T* pl = logits.value().ptr();
    T loss = T(0);
    for (int64_t r = 0; r < M; ++r) {
        T mx = pl[r * V];
        for (int64_t c = 1; c < V; ++c) mx = std::max(mx, pl[r * V + c]);
        T sum = T(0);
        for (int64_t c = 0; c < V; ++c) {
            T e = std::exp(pl[r * V + c] - mx);
            probs.data[static_cast<size_t>(r * V + c)] = e;
            sum += e;
        }
        T inv = T(1) / sum;
        for (int64_t c = 0; c < V; ++c) probs.data[static_cast<size_t>(r * V + c)] *= inv;
        T logprob = pl[r * V + targets[static_cast<size_t>(r)]] - mx - std::log(sum);
        loss -= logprob;
    }
    loss /= static_cast<T>(M);
    Var<T> o = tp->push(Tensor<T>::scalar(loss), tp->needs_grad(logits.id));
    tp->set_backward(o.id, [tp, logits, o, probs, targets, M, V]() {
        const T g = tp->grad(o.id).data[0];
        Tensor<T>& gl = tp->grad(logits.id);
        for (int64_t r = 0; r < M; ++r) {
            for (int64_t c = 0; c < V; ++c)
                gl.data[static_cast<size_t>(r * V + c)] += g * probs.data[static_cast<size_t>(r * V + c)] / static_cast<T>(M);
            gl.data[static_cast<size_t>(r * V + targets[static_cast<size_t>(r)])] -= g / static_cast<T>(M);
        }
    });
    return o;
}

}  // namespace dar
