#pragma once

// Vanilla vector quantization with l2-normalized codebook entries: nearest
// neighbor lookup on normalized vectors, stop-gradient VQ/commitment losses
// and the straight-through estimator, plus utilization statistics.

#include "dar/autodiff.hpp"

namespace dar {

inline constexpr double kCommitWeight = 0.25;

template <typename T>
struct Codebook {
    Tensor<T> entries;  // [n_e, d_e], rows kept at unit l2 norm

    Codebook(int64_t n_e, int64_t d_e) : entries({n_e, d_e}) {
        check_arg(n_e >= 2, "Codebook: n_e must be >= 2");
        check_arg(d_e >= 1, "Codebook: d_e must be >= 1");
    }

    static Codebook random(int64_t n_e, int64_t d_e, Rng& rng) {
        Codebook cb(n_e, d_e);
        cb.entries = Tensor<T>::randn({n_e, d_e}, rng);
        cb.renormalize();
        return cb;
    }

    int64_t size() const { return entries.dim(0); }
    int64_t dim() const { return entries.dim(1); }

    void renormalize() { normalize_rows_inplace(entries); }

    static void normalize_rows_inplace(Tensor<T>& t) {
        const int64_t C = t.shape.back();
        const int64_t R = t.numel() / C;
        for (int64_t r = 0; r < R; ++r) {
            T ss = T(1e-12);
            for (int64_t c = 0; c < C; ++c) ss += t.data[static_cast<size_t>(r * C + c)] * t.data[static_cast<size_t>(r * C + c)];
            T inv = T(1) / std::sqrt(ss);
            for (int64_t c = 0; c < C; ++c) t.data[static_cast<size_t>(r * C + c)] *= inv;
        }
    }
};

template <typename T>
struct QuantizationResult {
    std::vector<int64_t> indices;
    Tensor<T> quantized;  // [M, d_e], exact copies of selected (normalized) rows
    T vq_loss = T(0);
    T commit_loss = T(0);
};

// Nearest normalized codebook row per normalized feature row, ties broken
// toward the lowest index. For unit vectors argmin ||f - z||^2 is argmax
// f.z, computed as one matrix product.
template <typename T>
std::vector<int64_t> nearest_codes(const Tensor<T>& normalized_features, const Tensor<T>& normalized_entries) {
    const int64_t d = normalized_entries.dim(1);
    check_arg(normalized_features.shape.back() == d, "nearest_codes: dimension mismatch");
    const int64_t M = normalized_features.numel() / d;
    const int64_t n_e = normalized_entries.dim(0);
    RowMat<T> dots(M, n_e);
    {
        ConstMatMap<T> F(normalized_features.ptr(), M, d);
        ConstMatMap<T> Z(normalized_entries.ptr(), n_e, d);
        dots.noalias() = F * Z.transpose();
    }
    std::vector<int64_t> idx(static_cast<size_t>(M));
    for (int64_t r = 0; r < M; ++r) {
        int64_t best = 0;
        T best_dot = dots(r, 0);
        for (int64_t c = 1; c < n_e; ++c) {
            if (dots(r, c) > best_dot) {
                best_dot = dots(r, c);
                best = c;
            }
        }
        idx[static_cast<size_t>(r)] = best;
    }
    return idx;
}

template <typename T>
QuantizationResult<T> quantize(const Tensor<T>& features, const Codebook<T>& codebook) {
    const int64_t d = codebook.dim();
    check_arg(features.shape.back() == d, "quantize: dimension mismatch");
    for (const T& v : features.data) check_arg(std::isfinite(static_cast<double>(v)), "quantize: non-finite input");

    Tensor<T> f_norm = features;
    Codebook<T>::normalize_rows_inplace(f_norm);
    Tensor<T> entries = codebook.entries;
    Codebook<T>::normalize_rows_inplace(entries);

    QuantizationResult<T> res;
    res.indices = nearest_codes(f_norm, entries);
    const int64_t M = static_cast<int64_t>(res.indices.size());
    res.quantized = Tensor<T>::zeros({M, d});
    T vq = T(0);
    for (int64_t r = 0; r < M; ++r) {
        const T* z = entries.ptr() + res.indices[static_cast<size_t>(r)] * d;
        std::copy_n(z, d, res.quantized.ptr() + r * d);
        for (int64_t c = 0; c < d; ++c) {
            T diff = f_norm.data[static_cast<size_t>(r * d + c)] - z[c];
            vq += diff * diff;
        }
    }
    res.vq_loss = vq / static_cast<T>(M * d);
    res.commit_loss = res.vq_loss;  // identical value; gradients differ only on the tape path
    return res;
}

// forward value is the quantized tensor verbatim; backward delivers the
// upstream gradient to the features unchanged
template <typename T>
Var<T> straight_through(Var<T> features, Var<T> quantized) {
    check_arg(features.value().same_shape(quantized.value()), "straight_through: shape mismatch");
    Tape<T>* tp = features.tape;
    Var<T> o = tp->push(quantized.value(), tp->needs_grad(features.id));
    tp->set_backward(o.id, [tp, features, o]() {
        const Tensor<T>& g = tp->grad(o.id);
        Tensor<T>& gf = tp->grad(features.id);
        for (size_t i = 0; i < g.data.size(); ++i) gf.data[i] += g.data[i];
    });
    return o;
}

// fraction of codebook rows with nonzero assignment count
inline double codebook_utilization(const std::vector<int64_t>& index_histogram, int64_t n_e) {
    check_arg(static_cast<int64_t>(index_histogram.size()) == n_e, "codebook_utilization: histogram length mismatch");
    int64_t used = 0;
    for (int64_t c : index_histogram) {
        check_arg(c >= 0, "codebook_utilization: negative count");
        if (c > 0) ++used;
    }
    return static_cast<double>(used) / static_cast<double>(n_e);
}

// Training-time quantization on the tape: normalized features are matched
// to normalized codebook rows; the VQ term trains the codebook, the
// commitment term trains the encoder, and the straight-through output
// carries the identity gradient past the discrete step.
template <typename T>
struct VqGraph {
    Var<T> quantized;    // [M, d_e]
    Var<T> vq_loss;      // scalar
    Var<T> commit_loss;  // scalar (unweighted; combine with kCommitWeight)
    std::vector<int64_t> indices;
};

template <typename T>
VqGraph<T> vq_straight_through(Tape<T>& tape, Var<T> features, Parameter<T>* codebook) {
    check_arg(features.value().rank() == 2, "vq_straight_through: features must be [M, d_e]");
    check_arg(features.value().dim(1) == codebook->value.dim(1), "vq_straight_through: dimension mismatch");
    auto f_norm = l2_normalize_rows(features);
    auto entries = l2_normalize_rows(leaf(tape, codebook));
    VqGraph<T> out;
    out.indices = nearest_codes(f_norm.value(), entries.value());
    auto rows = gather_rows(entries, out.indices);
    out.vq_loss = squared_mean(sub(detach(f_norm), rows));
    out.commit_loss = squared_mean(sub(f_norm, detach(rows)));
    out.quantized = straight_through(f_norm, rows);
    return out;
}

}  // namespace dar
