#pragma once

// Decoder-only next-token transformer over tokenizer ids: RMSNorm + SwiGLU
// blocks with 1D rotary attention, class injected as a single prefix token,
// cross-entropy training with label dropout, KV-cache incremental decoding,
// and classifier-free guidance combined on logits.

#include "dar/nn.hpp"
#include "dar/tokenizer.hpp"

namespace dar {

struct ARConfig {
    int64_t layers = 6;
    int64_t dim = 256;
    int64_t heads = 4;
    int64_t codebook_size = 512;  // n_e
    int64_t num_classes = 10;
    int64_t num_tokens = 32;  // N
    double label_drop_prob = 0.1;

    int64_t vocab() const { return codebook_size + num_classes + 1; }
    int64_t null_class_id() const { return codebook_size + num_classes; }
    int64_t max_len() const { return num_tokens + 1; }

    int64_t class_token(int64_t cls) const {
        check_range(cls >= 0 && cls < num_classes, "class id out of range");
        return codebook_size + cls;
    }

    // Llama-style gated hidden size: 2/3 * 4d rounded up to a multiple of 32
    int64_t hidden() const {
        int64_t h = (8 * dim) / 3;
        return ((h + 31) / 32) * 32;
    }

    void validate() const {
        check_arg(dim % heads == 0, "ARConfig: dim not divisible by heads");
        check_arg((dim / heads) % 2 == 0, "ARConfig: head dim must be even");
        check_arg(codebook_size >= 2 && num_classes >= 1 && num_tokens >= 1, "ARConfig: bad sizes");
        check_arg(label_drop_prob >= 0.0 && label_drop_prob < 1.0, "ARConfig: bad label drop prob");
    }
};

struct CFGSchedule {
    enum class Kind { none, constant, linear };
    Kind kind = Kind::none;
    double s = 1.0;        // constant
    double s_start = 1.0;  // linear
    double s_end = 1.0;

    static CFGSchedule none() { return CFGSchedule{}; }

    static CFGSchedule constant(double s) {
        CFGSchedule c;
        c.kind = Kind::constant;
        c.s = s;
        return c;
    }

    static CFGSchedule linear(double a, double b) {
        CFGSchedule c;
        c.kind = Kind::linear;
        c.s_start = a;
        c.s_end = b;
        return c;
    }

    // "none" | "constant:S" | "linear:A:B"
    static CFGSchedule parse(const std::string& text) {
        if (text == "none") return none();
        auto colon = text.find(':');
        check_arg(colon != std::string::npos, "cfg: expected none|constant:S|linear:A:B, got " + text);
        std::string head = text.substr(0, colon);
        std::string rest = text.substr(colon + 1);
        if (head == "constant") return constant(std::stod(rest));
        if (head == "linear") {
            auto c2 = rest.find(':');
            check_arg(c2 != std::string::npos, "cfg: linear needs two values");
            return linear(std::stod(rest.substr(0, c2)), std::stod(rest.substr(c2 + 1)));
        }
        throw std::invalid_argument("cfg: unknown schedule kind " + head);
    }

    bool active() const { return kind != Kind::none; }

    // guidance scale at generated-token position i in [1, N], endpoints inclusive
    double at(int64_t i, int64_t n) const {
        switch (kind) {
            case Kind::none: return 1.0;
            case Kind::constant: return s;
            case Kind::linear:
                if (n <= 1) return s_start;
                return s_start + (s_end - s_start) * static_cast<double>(i - 1) / static_cast<double>(n - 1);
        }
        return 1.0;
    }
};

// l_u + s (l_c - l_u); s = 1 and s = 0 return the inputs untouched so the
// algebraic identities hold at the bit level.
template <typename T>
void cfg_combine(const T* cond, const T* uncond, double s, T* out, int64_t n) {
    if (s == 1.0) {
        std::copy_n(cond, n, out);
        return;
    }
    if (s == 0.0) {
        std::copy_n(uncond, n, out);
        return;
    }
    const T ss = static_cast<T>(s);
    for (int64_t i = 0; i < n; ++i) out[i] = uncond[i] + ss * (cond[i] - uncond[i]);
}

// Per-layer cached keys/values for incremental decoding. Append-only; owned
// by exactly one generation job.
template <typename T>
struct KVCache {
    int64_t batch = 0;
    int64_t heads = 0;
    int64_t head_dim = 0;
    int64_t max_len = 0;
    int64_t cur_len = 0;
    std::vector<Tensor<T>> k;  // per layer [B, H, max_len, hd]
    std::vector<Tensor<T>> v;

    T* k_at(int64_t layer, int64_t b, int64_t h, int64_t pos) {
        return k[static_cast<size_t>(layer)].ptr() + ((b * heads + h) * max_len + pos) * head_dim;
    }
    T* v_at(int64_t layer, int64_t b, int64_t h, int64_t pos) {
        return v[static_cast<size_t>(layer)].ptr() + ((b * heads + h) * max_len + pos) * head_dim;
    }
};

template <typename T>
class ARModel {
public:
    ARConfig cfg;
    ParamStore<T> params;

    explicit ARModel(const ARConfig& config, uint64_t init_seed = 0) : cfg(config) {
        cfg.validate();
        Rng rng(seed_stream(init_seed, 0xA7));
        build(rng);
    }

    // ---- training ---------------------------------------------------------

    struct TrainOut {
        Var<T> logits;  // [B, L, vocab]
        Var<T> ce;      // scalar, mean over the N token positions
    };

    // sequences: each [class_or_null, z_1..z_N]; label dropout applied when
    // drop_rng is provided
    TrainOut forward_train(Tape<T>& tape, const std::vector<std::vector<int64_t>>& sequences,
                           Rng* drop_rng = nullptr) const {
        const int64_t B = static_cast<int64_t>(sequences.size());
        const int64_t L = cfg.max_len();
        check_arg(B > 0, "forward_train: empty batch");
        std::vector<int64_t> flat;
        flat.reserve(static_cast<size_t>(B * L));
        std::vector<int64_t> targets;
        targets.reserve(static_cast<size_t>(B * cfg.num_tokens));
        for (const auto& seq : sequences) {
            check_arg(static_cast<int64_t>(seq.size()) == L, "forward_train: sequence length mismatch");
            for (int64_t id : seq) check_range(id >= 0 && id < cfg.vocab(), "forward_train: id out of vocab");
            int64_t first = seq[0];
            if (drop_rng && cfg.label_drop_prob > 0.0 && drop_rng->uniform() < cfg.label_drop_prob)
                first = cfg.null_class_id();
            flat.push_back(first);
            flat.insert(flat.end(), seq.begin() + 1, seq.end());
            targets.insert(targets.end(), seq.begin() + 1, seq.end());
        }
        auto x = reshape(gather_rows(leaf(tape, tok_embed_), flat), {B, L, cfg.dim});
        for (const auto& blk : blocks_) x = block_forward(tape, blk, x, L);
        x = ln_f_.forward(tape, x);
        auto logits = head_.forward(tape, x);
        // positions 0..N-1 predict tokens 1..N; the class prefix is input-only
        auto pred = slice_rows(logits, 0, cfg.num_tokens);
        auto ce = cross_entropy(reshape(pred, {B * cfg.num_tokens, cfg.vocab()}), targets);
        return TrainOut{logits, ce};
    }

    // full-sequence logits without gradients, [len, vocab]
    Tensor<T> full_logits(const std::vector<int64_t>& sequence) const {
        Tape<T> tape;
        tape.grad_enabled = false;
        const int64_t L = static_cast<int64_t>(sequence.size());
        check_arg(L >= 1 && L <= cfg.max_len(), "full_logits: bad sequence length");
        for (int64_t id : sequence) check_range(id >= 0 && id < cfg.vocab(), "full_logits: id out of vocab");
        auto x = reshape(gather_rows(leaf(tape, tok_embed_), sequence), {1, L, cfg.dim});
        for (const auto& blk : blocks_) x = block_forward(tape, blk, x, L);
        x = ln_f_.forward(tape, x);
        auto logits = head_.forward(tape, x);
        return logits.value().reshaped({L, cfg.vocab()});
    }

    // ---- KV-cache inference ------------------------------------------------

    KVCache<T> make_cache(int64_t batch) const {
        KVCache<T> c;
        c.batch = batch;
        c.heads = cfg.heads;
        c.head_dim = cfg.dim / cfg.heads;
        c.max_len = cfg.max_len();
        for (int64_t l = 0; l < cfg.layers; ++l) {
            c.k.push_back(Tensor<T>::zeros({batch, cfg.heads, c.max_len, c.head_dim}));
            c.v.push_back(Tensor<T>::zeros({batch, cfg.heads, c.max_len, c.head_dim}));
        }
        return c;
    }

    // appends one position per batch row; returns next-prediction logits [B, vocab]
    Tensor<T> cache_step(KVCache<T>& cache, const std::vector<int64_t>& ids) const {
        const int64_t B = cache.batch;
        check_arg(static_cast<int64_t>(ids.size()) == B, "cache_step: id count mismatch");
        check_range(cache.cur_len < cache.max_len, "cache_step: cache length exceeding max_len");
        for (int64_t id : ids) check_range(id >= 0 && id < cfg.vocab(), "cache_step: id out of vocab");
        const int64_t D = cfg.dim, H = cfg.heads, hd = D / H;
        const int64_t pos = cache.cur_len;

        RowMat<T> x(B, D);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < D; ++c)
                x(b, c) = tok_embed_->value.at2(ids[static_cast<size_t>(b)], c);

        RowMat<T> h(B, D), q(B, D), k(B, D), v(B, D), ctx(B, D);
        for (int64_t l = 0; l < cfg.layers; ++l) {
            const Block& blk = blocks_[static_cast<size_t>(l)];
            rms_rows(x, blk.ln1.gain->value, h);
            mat_linear(h, blk.attn.wq, q);
            mat_linear(h, blk.attn.wk, k);
            mat_linear(h, blk.attn.wv, v);
            // rotary at this position, adjacent pairs
            for (int64_t b = 0; b < B; ++b)
                for (int64_t hh = 0; hh < H; ++hh)
                    for (int64_t p = 0; p < hd / 2; ++p) {
                        const T c = rope_.cos.at2(pos, p), s = rope_.sin.at2(pos, p);
                        rotate_pair(q(b, hh * hd + 2 * p), q(b, hh * hd + 2 * p + 1), c, s);
                        rotate_pair(k(b, hh * hd + 2 * p), k(b, hh * hd + 2 * p + 1), c, s);
                    }
            for (int64_t b = 0; b < B; ++b)
                for (int64_t hh = 0; hh < H; ++hh) {
                    std::copy_n(&k(b, hh * hd), hd, cache.k_at(l, b, hh, pos));
                    std::copy_n(&v(b, hh * hd), hd, cache.v_at(l, b, hh, pos));
                }
            // attention over cached positions [0, pos]
            const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));
            std::vector<T> scores(static_cast<size_t>(pos) + 1);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t hh = 0; hh < H; ++hh) {
                    T mx = -std::numeric_limits<T>::infinity();
                    for (int64_t j = 0; j <= pos; ++j) {
                        const T* kj = cache.k_at(l, b, hh, j);
                        T dot = T(0);
                        for (int64_t c = 0; c < hd; ++c) dot += q(b, hh * hd + c) * kj[c];
                        scores[static_cast<size_t>(j)] = dot * inv_sqrt;
                        mx = std::max(mx, scores[static_cast<size_t>(j)]);
                    }
                    T denom = T(0);
                    for (int64_t j = 0; j <= pos; ++j) {
                        scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - mx);
                        denom += scores[static_cast<size_t>(j)];
                    }
                    const T inv = T(1) / denom;
                    for (int64_t c = 0; c < hd; ++c) {
                        T acc = T(0);
                        for (int64_t j = 0; j <= pos; ++j) acc += scores[static_cast<size_t>(j)] * cache.v_at(l, b, hh, j)[c];
                        ctx(b, hh * hd + c) = acc * inv;
                    }
                }
            mat_linear(ctx, blk.attn.wo, h);
            x += h;
            rms_rows(x, blk.ln2.gain->value, h);
            // SwiGLU
            RowMat<T> g(B, cfg.hidden()), u(B, cfg.hidden());
            mat_linear(h, blk.mlp.w_gate, g);
            mat_linear(h, blk.mlp.w_up, u);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < cfg.hidden(); ++c) {
                    const T gv = g(b, c);
                    const T sg = T(1) / (T(1) + std::exp(-gv));
                    g(b, c) = gv * sg * u(b, c);
                }
            RowMat<T> down(B, D);
            mat_linear(g, blk.mlp.w_down, down);
            x += down;
        }
        rms_rows(x, ln_f_.gain->value, h);
        Tensor<T> logits({B, cfg.vocab()});
        {
            ConstMatMap<T> W(head_.w->value.ptr(), D, cfg.vocab());
            MatMap<T> L(logits.ptr(), B, cfg.vocab());
            L.noalias() = h * W;
        }
        ++cache.cur_len;
        return logits;
    }

    // single-sequence incremental API
    Tensor<T> cached_logits(int64_t next_id, KVCache<T>& cache) const {
        check_arg(cache.batch == 1, "cached_logits: expects a batch-1 cache");
        Tensor<T> l = cache_step(cache, {next_id});
        return l.reshaped({cfg.vocab()});
    }

    // ---- generation ---------------------------------------------------------

    TokenSequence generate(int64_t class_id, const CFGSchedule& guidance, Rng& rng) const {
        return generate_with_prefix({}, class_id, guidance, rng);
    }

    // first len(prefix) output ids equal the prefix verbatim; the rest are
    // sampled conditionally with guidance combined on logits
    TokenSequence generate_with_prefix(const std::vector<int64_t>& prefix, int64_t class_id,
                                       const CFGSchedule& guidance, Rng& rng) const {
        const int64_t N = cfg.num_tokens;
        check_arg(static_cast<int64_t>(prefix.size()) <= N, "generate_with_prefix: prefix longer than N");
        for (int64_t id : prefix)
            check_range(id >= 0 && id < cfg.codebook_size, "generate_with_prefix: prefix id out of codebook range");
        TokenSequence seq;
        seq.ids = prefix;
        if (static_cast<int64_t>(prefix.size()) == N) return seq;

        const bool paired = guidance.active();
        const int64_t B = paired ? 2 : 1;
        KVCache<T> cache = make_cache(B);
        auto feed = [&](int64_t cond_id, int64_t uncond_id) {
            std::vector<int64_t> ids(static_cast<size_t>(B));
            ids[0] = cond_id;
            if (paired) ids[1] = uncond_id;
            return cache_step(cache, ids);
        };
        Tensor<T> logits = feed(cfg.class_token(class_id), cfg.null_class_id());
        for (int64_t id : prefix) logits = feed(id, id);

        std::vector<T> combined(static_cast<size_t>(cfg.codebook_size));
        while (static_cast<int64_t>(seq.ids.size()) < N) {
            const int64_t pos = static_cast<int64_t>(seq.ids.size()) + 1;  // 1-based generated position
            const double s = guidance.at(pos, N);
            // sampling support is the codebook sub-vocabulary
            if (paired)
                cfg_combine(logits.ptr(), logits.ptr() + cfg.vocab(), s, combined.data(), cfg.codebook_size);
            else
                std::copy_n(logits.ptr(), cfg.codebook_size, combined.data());
            const int64_t id = sample_categorical(combined, rng);
            seq.ids.push_back(id);
            if (static_cast<int64_t>(seq.ids.size()) < N) logits = feed(id, id);
        }
        return seq;
    }

    Parameter<T>* token_embedding() const { return tok_embed_; }

private:
    struct Block {
        RMSNormLayer<T> ln1, ln2;
        SelfAttentionLayer<T> attn;
        SwiGluMlp<T> mlp;
    };

    Var<T> block_forward(Tape<T>& tape, const Block& blk, Var<T> x, int64_t len) const {
        const Tensor<T>* mask = &mask_;
        Tensor<T> sub_mask;
        RopeTables<T> sub_rope;
        const RopeTables<T>* rope = &rope_;
        if (len != cfg.max_len()) {
            sub_mask = causal_mask<T>(len);
            std::vector<int64_t> pos(static_cast<size_t>(len));
            for (int64_t i = 0; i < len; ++i) pos[static_cast<size_t>(i)] = i;
            sub_rope = rope_1d<T>(pos, cfg.dim / cfg.heads);
            mask = &sub_mask;
            rope = &sub_rope;
        }
        x = add(x, blk.attn.forward(tape, blk.ln1.forward(tape, x), mask, rope));
        x = add(x, blk.mlp.forward(tape, blk.ln2.forward(tape, x)));
        return x;
    }

    static void rotate_pair(T& a, T& b, T c, T s) {
        const T a0 = a, b0 = b;
        a = a0 * c - b0 * s;
        b = a0 * s + b0 * c;
    }

    // y = rmsnorm(x) * gain, row-wise, eps 1e-6
    static void rms_rows(const RowMat<T>& x, const Tensor<T>& gain, RowMat<T>& y) {
        const int64_t B = x.rows(), C = x.cols();
        for (int64_t b = 0; b < B; ++b) {
            T ss = T(0);
            for (int64_t c = 0; c < C; ++c) ss += x(b, c) * x(b, c);
            const T inv = T(1) / std::sqrt(ss / static_cast<T>(C) + T(1e-6));
            for (int64_t c = 0; c < C; ++c) y(b, c) = x(b, c) * inv * gain.data[static_cast<size_t>(c)];
        }
    }

    static void mat_linear(const RowMat<T>& x, const LinearLayer<T>& lin, RowMat<T>& y) {
        ConstMatMap<T> W(lin.w->value.ptr(), lin.w->value.dim(0), lin.w->value.dim(1));
        y.noalias() = x * W;
        if (lin.b) {
            for (int64_t r = 0; r < y.rows(); ++r)
                for (int64_t c = 0; c < y.cols(); ++c) y(r, c) += lin.b->value.data[static_cast<size_t>(c)];
        }
    }

    int64_t sample_categorical(const std::vector<T>& logits, Rng& rng) const {
        T mx = logits[0];
        for (T l : logits) mx = std::max(mx, l);
        double denom = 0.0;
        std::vector<double> e(logits.size());
        for (size_t i = 0; i < logits.size(); ++i) {
            e[i] = std::exp(static_cast<double>(logits[i] - mx));
            denom += e[i];
        }
        const double u = rng.uniform() * denom;
        double acc = 0.0;
        for (size_t i = 0; i < e.size(); ++i) {
            acc += e[i];
            if (u < acc) return static_cast<int64_t>(i);
        }
        return static_cast<int64_t>(e.size()) - 1;
    }

    void build(Rng& rng) {
        tok_embed_ = params.create("ar.embed", Tensor<T>::randn({cfg.vocab(), cfg.dim}, rng, T(0.02)));
        for (int64_t l = 0; l < cfg.layers; ++l) {
            std::string name = "ar.block" + std::to_string(l);
            Block b;
            b.ln1 = RMSNormLayer<T>::create(params, name + ".ln1", cfg.dim);
            b.ln2 = RMSNormLayer<T>::create(params, name + ".ln2", cfg.dim);
            b.attn = SelfAttentionLayer<T>::create(params, name + ".attn", cfg.dim, cfg.heads, /*qk_norm=*/false, rng);
            b.mlp = SwiGluMlp<T>::create(params, name + ".mlp", cfg.dim, cfg.hidden(), rng);
            blocks_.push_back(std::move(b));
        }
        ln_f_ = RMSNormLayer<T>::create(params, "ar.ln_f", cfg.dim);
        head_ = LinearLayer<T>::create(params, "ar.head", cfg.dim, cfg.vocab(), rng, /*bias=*/false);
        mask_ = causal_mask<T>(cfg.max_len());
        std::vector<int64_t> pos(static_cast<size_t>(cfg.max_len()));
        for (int64_t i = 0; i < cfg.max_len(); ++i) pos[static_cast<size_t>(i)] = i;
        rope_ = rope_1d<T>(pos, cfg.dim / cfg.heads);
    }

    Parameter<T>* tok_embed_ = nullptr;
    std::vector<Block> blocks_;
    RMSNormLayer<T> ln_f_;
    LinearLayer<T> head_;
    Tensor<T> mask_;
    RopeTables<T> rope_;
};

}  // namespace dar
