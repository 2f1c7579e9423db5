#pragma once

// Neural building blocks shared by the tokenizer and the AR model:
// attention with configurable masks / QK normalization / rotary modes,
// norm layers, SiLU and SwiGLU MLPs, zero-initialized AdaLN modulation,
// patchify/unpatchify and sinusoidal time features.

#include <optional>

#include "dar/autodiff.hpp"

namespace dar {

// ---------------------------------------------------------------------------
// attention masks (additive: 0 allowed, -inf forbidden)

template <typename T>
Tensor<T> causal_mask(int64_t n) {
    Tensor<T> m({n, n});
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) m.at2(i, j) = j <= i ? T(0) : neg_inf;
    return m;
}

// allowed[i][j] == true lets query i attend to key j; must be square and
// keep the diagonal open.
template <typename T>
Tensor<T> mask_from_bool(const std::vector<std::vector<bool>>& allowed) {
    const int64_t n = static_cast<int64_t>(allowed.size());
    check_arg(n > 0, "mask_from_bool: empty mask");
    Tensor<T> m({n, n});
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (int64_t i = 0; i < n; ++i) {
        check_arg(static_cast<int64_t>(allowed[static_cast<size_t>(i)].size()) == n, "mask_from_bool: not square");
        check_arg(allowed[static_cast<size_t>(i)][static_cast<size_t>(i)], "mask_from_bool: position cannot attend to itself");
        for (int64_t j = 0; j < n; ++j) m.at2(i, j) = allowed[static_cast<size_t>(i)][static_cast<size_t>(j)] ? T(0) : neg_inf;
    }
    return m;
}

// ---------------------------------------------------------------------------
// rotary embedding tables (cos/sin of per-position pair angles, [T, hd/2])

template <typename T>
struct RopeTables {
    Tensor<T> cos;
    Tensor<T> sin;
};

template <typename T>
RopeTables<T> rope_identity(int64_t n, int64_t head_dim) {
    check_arg(head_dim % 2 == 0, "rope_identity: head dim must be even");
    RopeTables<T> t;
    t.cos = Tensor<T>::full({n, head_dim / 2}, T(1));
    t.sin = Tensor<T>::zeros({n, head_dim / 2});
    return t;
}

template <typename T>
RopeTables<T> rope_1d(const std::vector<int64_t>& positions, int64_t head_dim, double base = 10000.0) {
    check_arg(head_dim % 2 == 0, "rope_1d: head dim must be even");
    const int64_t n = static_cast<int64_t>(positions.size());
    const int64_t pairs = head_dim / 2;
    RopeTables<T> t;
    t.cos = Tensor<T>::zeros({n, pairs});
    t.sin = Tensor<T>::zeros({n, pairs});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < pairs; ++j) {
            double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
            double ang = static_cast<double>(positions[static_cast<size_t>(i)]) * freq;
            t.cos.at2(i, j) = static_cast<T>(std::cos(ang));
            t.sin.at2(i, j) = static_cast<T>(std::sin(ang));
        }
    return t;
}

// 2D rotary: the pair budget is split evenly, first half rotated by the row
// coordinate and second half by the column coordinate.
template <typename T>
RopeTables<T> rope_2d(const std::vector<std::pair<int64_t, int64_t>>& positions, int64_t head_dim,
                      double base = 10000.0) {
    check_arg(head_dim % 4 == 0, "rope_2d: head dim must be divisible by 4");
    const int64_t n = static_cast<int64_t>(positions.size());
    const int64_t pairs = head_dim / 2;
    const int64_t axis_pairs = pairs / 2;
    RopeTables<T> t;
    t.cos = Tensor<T>::zeros({n, pairs});
    t.sin = Tensor<T>::zeros({n, pairs});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < pairs; ++j) {
            int64_t axis_j = j < axis_pairs ? j : j - axis_pairs;
            double pos = j < axis_pairs ? static_cast<double>(positions[static_cast<size_t>(i)].first)
                                        : static_cast<double>(positions[static_cast<size_t>(i)].second);
            double freq = std::pow(base, -2.0 * static_cast<double>(axis_j) / static_cast<double>(pairs));
            double ang = pos * freq;
            t.cos.at2(i, j) = static_cast<T>(std::cos(ang));
            t.sin.at2(i, j) = static_cast<T>(std::sin(ang));
        }
    }
    return t;
}

// stack two tables along the position axis
template <typename T>
RopeTables<T> rope_concat(const RopeTables<T>& a, const RopeTables<T>& b) {
    check_arg(a.cos.dim(1) == b.cos.dim(1), "rope_concat: pair dim mismatch");
    const int64_t na = a.cos.dim(0), nb = b.cos.dim(0), p = a.cos.dim(1);
    RopeTables<T> t;
    t.cos = Tensor<T>::zeros({na + nb, p});
    t.sin = Tensor<T>::zeros({na + nb, p});
    std::copy(a.cos.data.begin(), a.cos.data.end(), t.cos.data.begin());
    std::copy(b.cos.data.begin(), b.cos.data.end(), t.cos.data.begin() + na * p);
    std::copy(a.sin.data.begin(), a.sin.data.end(), t.sin.data.begin());
    std::copy(b.sin.data.begin(), b.sin.data.end(), t.sin.data.begin() + na * p);
    return t;
}

// ---------------------------------------------------------------------------
// attention

template <typename T>
struct AttentionSpec {
    int64_t num_heads = 1;
    bool qk_norm = false;
    const Tensor<T>* mask = nullptr;        // additive [Tq, Tk]; null = none
    const RopeTables<T>* rope_q = nullptr;  // null = identity
    const RopeTables<T>* rope_k = nullptr;
};

// q: [B, Tq, C], k/v: [B, Tk, C] already projected; returns [B, Tq, C].
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionSpec<T>& spec) {
    const int64_t C = q.value().dim(2);
    const int64_t H = spec.num_heads;
    check_arg(C % H == 0, "attention: channels not divisible by heads");
    const int64_t hd = C / H;
    auto qh = split_heads(q, H);
    auto kh = split_heads(k, H);
    auto vh = split_heads(v, H);
    if (spec.qk_norm) {
        qh = rmsnorm(qh, Var<T>{}, T(1e-6));
        kh = rmsnorm(kh, Var<T>{}, T(1e-6));
    }
    if (spec.rope_q) qh = rope_apply(qh, spec.rope_q->cos, spec.rope_q->sin);
    if (spec.rope_k) kh = rope_apply(kh, spec.rope_k->cos, spec.rope_k->sin);
    auto scores = scale(bmm_nt(qh, kh), T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd))));
    auto att = softmax_masked(scores, spec.mask);
    auto ctx = bmm(att, vh);
    return merge_heads(ctx, H);
}

// ---------------------------------------------------------------------------
// layers

template <typename T>
struct LinearLayer {
    Parameter<T>* w = nullptr;  // [in, out]
    Parameter<T>* b = nullptr;

    static LinearLayer create(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out, Rng& rng,
                              bool bias = true, T stddev = T(0.02)) {
        LinearLayer l;
        l.w = ps.create(name + ".w", Tensor<T>::randn({in, out}, rng, stddev));
        if (bias) l.b = ps.create(name + ".b", Tensor<T>::zeros({out}));
        return l;
    }

    static LinearLayer create_zero(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out,
                                   bool bias = true) {
        LinearLayer l;
        l.w = ps.create(name + ".w", Tensor<T>::zeros({in, out}));
        if (bias) l.b = ps.create(name + ".b", Tensor<T>::zeros({out}));
        return l;
    }

    Var<T> forward(Tape<T>& tape, Var<T> x) const {
        auto y = matmul(x, leaf(tape, w));
        if (b) y = add_bias(y, leaf(tape, b));
        return y;
    }
};

template <typename T>
struct LayerNormLayer {
    Parameter<T>* gain = nullptr;
    Parameter<T>* bias = nullptr;

    static LayerNormLayer create(ParamStore<T>& ps, const std::string& name, int64_t dim) {
        LayerNormLayer l;
        l.gain = ps.create(name + ".gain", Tensor<T>::full({dim}, T(1)));
        l.bias = ps.create(name + ".bias", Tensor<T>::zeros({dim}));
        return l;
    }

    Var<T> forward(Tape<T>& tape, Var<T> x) const {
        return layernorm(x, leaf(tape, gain), leaf(tape, bias));
    }
};

template <typename T>
struct RMSNormLayer {
    Parameter<T>* gain = nullptr;

    static RMSNormLayer create(ParamStore<T>& ps, const std::string& name, int64_t dim) {
        RMSNormLayer l;
        l.gain = ps.create(name + ".gain", Tensor<T>::full({dim}, T(1)));
        return l;
    }

    Var<T> forward(Tape<T>& tape, Var<T> x) const {
        return rmsnorm(x, leaf(tape, gain));
    }
};

template <typename T>
struct SelfAttentionLayer {
    LinearLayer<T> wq, wk, wv, wo;
    int64_t heads = 1;
    bool qk_norm = false;

    static SelfAttentionLayer create(ParamStore<T>& ps, const std::string& name, int64_t dim, int64_t heads,
                                     bool qk_norm, Rng& rng) {
        SelfAttentionLayer l;
        l.wq = LinearLayer<T>::create(ps, name + ".wq", dim, dim, rng);
        l.wk = LinearLayer<T>::create(ps, name + ".wk", dim, dim, rng);
        l.wv = LinearLayer<T>::create(ps, name + ".wv", dim, dim, rng);
        l.wo = LinearLayer<T>::create(ps, name + ".wo", dim, dim, rng);
        l.heads = heads;
        l.qk_norm = qk_norm;
        return l;
    }

    Var<T> forward(Tape<T>& tape, Var<T> x, const Tensor<T>* mask, const RopeTables<T>* rope) const {
        AttentionSpec<T> spec;
        spec.num_heads = heads;
        spec.qk_norm = qk_norm;
        spec.mask = mask;
        spec.rope_q = rope;
        spec.rope_k = rope;
        auto q = wq.forward(tape, x);
        auto k = wk.forward(tape, x);
        auto v = wv.forward(tape, x);
        return wo.forward(tape, attention(q, k, v, spec));
    }
};

template <typename T>
struct CrossAttentionLayer {
    LinearLayer<T> wq, wk, wv, wo;
    int64_t heads = 1;
    bool qk_norm = false;

    static CrossAttentionLayer create(ParamStore<T>& ps, const std::string& name, int64_t dim, int64_t cond_dim,
                                      int64_t heads, bool qk_norm, Rng& rng) {
        CrossAttentionLayer l;
        l.wq = LinearLayer<T>::create(ps, name + ".wq", dim, dim, rng);
        l.wk = LinearLayer<T>::create(ps, name + ".wk", cond_dim, dim, rng);
        l.wv = LinearLayer<T>::create(ps, name + ".wv", cond_dim, dim, rng);
        l.wo = LinearLayer<T>::create(ps, name + ".wo", dim, dim, rng);
        l.heads = heads;
        l.qk_norm = qk_norm;
        return l;
    }

    Var<T> forward(Tape<T>& tape, Var<T> x, Var<T> cond) const {
        AttentionSpec<T> spec;
        spec.num_heads = heads;
        spec.qk_norm = qk_norm;
        auto q = wq.forward(tape, x);
        auto k = wk.forward(tape, cond);
        auto v = wv.forward(tape, cond);
        return wo.forward(tape, attention(q, k, v, spec));
    }
};

// two-layer MLP with SiLU (tokenizer-side blocks)
template <typename T>
struct SiluMlp {
    LinearLayer<T> fc1, fc2;

    static SiluMlp create(ParamStore<T>& ps, const std::string& name, int64_t dim, int64_t hidden, Rng& rng) {
        SiluMlp m;
        m.fc1 = LinearLayer<T>::create(ps, name + ".fc1", dim, hidden, rng);
        m.fc2 = LinearLayer<T>::create(ps, name + ".fc2", hidden, dim, rng);
        return m;
    }

    Var<T> forward(Tape<T>& tape, Var<T> x) const {
        return fc2.forward(tape, silu(fc1.forward(tape, x)));
    }
};

// gated MLP (AR-side blocks)
template <typename T>
struct SwiGluMlp {
    LinearLayer<T> w_gate, w_up, w_down;

    static SwiGluMlp create(ParamStore<T>& ps, const std::string& name, int64_t dim, int64_t hidden, Rng& rng) {
        SwiGluMlp m;
        m.w_gate = LinearLayer<T>::create(ps, name + ".gate", dim, hidden, rng, /*bias=*/false);
        m.w_up = LinearLayer<T>::create(ps, name + ".up", dim, hidden, rng, /*bias=*/false);
        m.w_down = LinearLayer<T>::create(ps, name + ".down", hidden, dim, rng, /*bias=*/false);
        return m;
    }

    Var<T> forward(Tape<T>& tape, Var<T> x) const {
        auto g = silu(w_gate.forward(tape, x));
        auto u = w_up.forward(tape, x);
        return w_down.forward(tape, mul(g, u));
    }
};

// pre-LN transformer block: LayerNorm + QK-normalized attention + SiLU MLP
template <typename T>
struct TransformerBlock {
    LayerNormLayer<T> ln1, ln2;
    SelfAttentionLayer<T> attn;
    SiluMlp<T> mlp;

    static TransformerBlock create(ParamStore<T>& ps, const std::string& name, int64_t dim, int64_t heads,
                                   Rng& rng) {
        TransformerBlock b;
        b.ln1 = LayerNormLayer<T>::create(ps, name + ".ln1", dim);
        b.ln2 = LayerNormLayer<T>::create(ps, name + ".ln2", dim);
        b.attn = SelfAttentionLayer<T>::create(ps, name + ".attn", dim, heads, /*qk_norm=*/true, rng);
        b.mlp = SiluMlp<T>::create(ps, name + ".mlp", dim, 4 * dim, rng);
        return b;
    }

    Var<T> forward(Tape<T>& tape, Var<T> x, const Tensor<T>* mask, const RopeTables<T>* rope) const {
        x = add(x, attn.forward(tape, ln1.forward(tape, x), mask, rope));
        x = add(x, mlp.forward(tape, ln2.forward(tape, x)));
        return x;
    }
};

// x * (1 + scale) + shift, all [B, Tn, C]
template <typename T>
Var<T> modulate(Var<T> x, Var<T> shift, Var<T> scl) {
    return add(mul(x, add_scalar(scl, T(1))), shift);
}

// Zero-initialized adaptive layer norm wrapper: given a per-token
// conditioning vector, produces gate .. (scale, shift) modulation around a
// sub-block so the whole residual contribution vanishes at initialization.
template <typename T>
struct AdaLnModulation {
    LinearLayer<T> proj;  // cond -> n_chunks * dim, zero-init
    int64_t dim = 0;
    int64_t n_chunks = 0;

    static AdaLnModulation create(ParamStore<T>& ps, const std::string& name, int64_t cond_dim, int64_t dim,
                                  int64_t n_chunks) {
        AdaLnModulation m;
        m.proj = LinearLayer<T>::create_zero(ps, name + ".proj", cond_dim, n_chunks * dim);
        m.dim = dim;
        m.n_chunks = n_chunks;
        return m;
    }

    std::vector<Var<T>> forward(Tape<T>& tape, Var<T> cond) const {
        auto m = proj.forward(tape, silu(cond));
        std::vector<Var<T>> chunks;
        chunks.reserve(static_cast<size_t>(n_chunks));
        for (int64_t i = 0; i < n_chunks; ++i) chunks.push_back(slice_cols(m, i * dim, dim));
        return chunks;
    }
};

// ---------------------------------------------------------------------------
// patchify / unpatchify (plain tensor transforms)

// [B, C, H, W] -> [B, (H/p)*(W/p), p*p*C], row-major patch scan; inside a
// patch the layout is (channel, patch_row, patch_col).
template <typename T>
Tensor<T> patchify(const Tensor<T>& img, int64_t p) {
    check_arg(img.rank() == 4, "patchify: expected [B, C, H, W]");
    const int64_t B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
    check_arg(H % p == 0 && W % p == 0, "patchify: image sides not divisible by patch");
    const int64_t gh = H / p, gw = W / p;
    Tensor<T> out({B, gh * gw, p * p * C});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx) {
                const int64_t tok = gy * gw + gx;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t py = 0; py < p; ++py)
                        for (int64_t px = 0; px < p; ++px)
                            out.at3(b, tok, (c * p + py) * p + px) =
                                img.data[static_cast<size_t>(((b * C + c) * H + gy * p + py) * W + gx * p + px)];
            }
    return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, int64_t p, int64_t C, int64_t H, int64_t W) {
    check_arg(tokens.rank() == 3, "unpatchify: expected [B, P, D]");
    check_arg(H % p == 0 && W % p == 0, "unpatchify: image sides not divisible by patch");
    const int64_t B = tokens.dim(0), gh = H / p, gw = W / p;
    check_arg(tokens.dim(1) == gh * gw && tokens.dim(2) == p * p * C, "unpatchify: token shape mismatch");
    Tensor<T> img({B, C, H, W});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx) {
                const int64_t tok = gy * gw + gx;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t py = 0; py < p; ++py)
                        for (int64_t px = 0; px < p; ++px)
                            img.data[static_cast<size_t>(((b * C + c) * H + gy * p + py) * W + gx * p + px)] =
                                tokens.at3(b, tok, (c * p + py) * p + px);
            }
    return img;
}

// ---------------------------------------------------------------------------
// sinusoidal time features

// geometric frequency ladder from max_freq down; first half sin, second half cos
template <typename T>
Tensor<T> time_embedding(double t, int64_t dim, double max_freq = 1000.0, double base = 10000.0) {
    check_arg(dim % 2 == 0, "time_embedding: dim must be even");
    check_arg(t >= 0.0 && t <= 1.0, "time_embedding: t outside [0,1]");
    const int64_t half = dim / 2;
    Tensor<T> e({dim});
    for (int64_t j = 0; j < half; ++j) {
        double freq = max_freq * std::pow(base, -static_cast<double>(j) / static_cast<double>(half));
        e.data[static_cast<size_t>(j)] = static_cast<T>(std::sin(t * freq));
        e.data[static_cast<size_t>(half + j)] = static_cast<T>(std::cos(t * freq));
    }
    return e;
}

template <typename T>
double time_embedding_max_freq(int64_t, double max_freq = 1000.0) {
    return max_freq;
}

// MLP over sinusoidal features of the diffusion timestep
template <typename T>
struct TimeEmbedMlp {
    LinearLayer<T> fc1, fc2;
    int64_t dim = 0;

    static TimeEmbedMlp create(ParamStore<T>& ps, const std::string& name, int64_t dim, Rng& rng) {
        TimeEmbedMlp m;
        m.fc1 = LinearLayer<T>::create(ps, name + ".fc1", dim, dim, rng);
        m.fc2 = LinearLayer<T>::create(ps, name + ".fc2", dim, dim, rng);
        m.dim = dim;
        return m;
    }

    // per-sample timesteps -> [B, dim]
    Var<T> forward(Tape<T>& tape, const std::vector<double>& ts) const {
        const int64_t B = static_cast<int64_t>(ts.size());
        Tensor<T> feats({B, dim});
        for (int64_t b = 0; b < B; ++b) {
            Tensor<T> e = time_embedding<T>(ts[static_cast<size_t>(b)], dim);
            std::copy(e.data.begin(), e.data.end(), feats.data.begin() + b * dim);
        }
        auto x = constant(tape, std::move(feats));
        return fc2.forward(tape, silu(fc1.forward(tape, x)));
    }
};

}  // namespace dar
