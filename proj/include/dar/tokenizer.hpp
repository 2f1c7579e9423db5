#pragma once

// Sequential diffusion tokenizer: a 1D query-token encoder feeding a vector
// quantizer, causal post-quantization layers producing conditioned tokens
// z', and a pixel-space diffusion transformer predicting flow velocity from
// one token group at a time.

#include <functional>

#include "dar/nn.hpp"
#include "dar/quantizer.hpp"
#include "dar/schedule.hpp"

namespace dar {

struct TokenizerConfig {
    int64_t image_size = 32;
    int64_t channels = 3;
    int64_t patch = 4;             // encoder patch p
    int64_t num_queries = 32;      // N
    int64_t dim = 128;             // encoder width d
    int64_t layers = 4;            // encoder depth L
    int64_t heads = 4;
    int64_t post_quant_layers = 2;
    int64_t decoder_patch = 4;     // p_d
    int64_t decoder_dim = 128;     // d_d
    int64_t decoder_layers = 6;    // L_d
    int64_t decoder_heads = 4;
    int64_t codebook_size = 512;   // n_e
    int64_t code_dim = 8;          // d_e
    int64_t num_groups = 8;        // K
    double beta = 2.0;
    double lambda_lpips = 0.5;  // hook weights; hooks ship inactive
    double lambda_repa = 0.5;

    void validate() const {
        check_arg(image_size % patch == 0, "TokenizerConfig: image_size not divisible by patch");
        check_arg(image_size % decoder_patch == 0, "TokenizerConfig: image_size not divisible by decoder_patch");
        check_arg(num_queries % num_groups == 0, "TokenizerConfig: N not divisible by K");
        check_arg(dim % heads == 0 && decoder_dim % decoder_heads == 0, "TokenizerConfig: dim/heads mismatch");
        check_arg((dim / heads) % 4 == 0, "TokenizerConfig: encoder head dim must be divisible by 4 (2D rope)");
        check_arg((decoder_dim / decoder_heads) % 4 == 0, "TokenizerConfig: decoder head dim must be divisible by 4");
        check_arg(beta > 0.0, "TokenizerConfig: beta must be positive");
    }

    int64_t encoder_patches() const { return (image_size / patch) * (image_size / patch); }
    int64_t decoder_patches() const { return (image_size / decoder_patch) * (image_size / decoder_patch); }
    int64_t group_size() const { return num_queries / num_groups; }
    ConditionSchedule schedule() const { return ConditionSchedule(num_queries, num_groups, beta); }
};

struct TokenSequence {
    std::vector<int64_t> ids;  // length N, values in [0, n_e)
};

// DiT-style block on pixel patch tokens. Cross attention from patch tokens
// to the active condition group plus the time embedding forms the per-token
// AdaLN input; modulation projections start at zero so the block is an
// exact identity at initialization.
template <typename T>
struct DitBlock {
    LayerNormLayer<T> ln_cross;
    CrossAttentionLayer<T> cross;
    AdaLnModulation<T> mod;  // 6 chunks: shift/scale/gate for attn and mlp
    SelfAttentionLayer<T> self_attn;
    SiluMlp<T> mlp;

    static DitBlock create(ParamStore<T>& ps, const std::string& name, int64_t dim, int64_t cond_dim,
                           int64_t heads, Rng& rng) {
        DitBlock b;
        b.ln_cross = LayerNormLayer<T>::create(ps, name + ".ln_cross", dim);
        b.cross = CrossAttentionLayer<T>::create(ps, name + ".cross", dim, cond_dim, heads, /*qk_norm=*/true, rng);
        b.mod = AdaLnModulation<T>::create(ps, name + ".mod", dim, dim, 6);
        b.self_attn = SelfAttentionLayer<T>::create(ps, name + ".attn", dim, heads, /*qk_norm=*/true, rng);
        b.mlp = SiluMlp<T>::create(ps, name + ".mlp", dim, 4 * dim, rng);
        return b;
    }

    Var<T> forward(Tape<T>& tape, Var<T> x, Var<T> cond, Var<T> t_emb, const RopeTables<T>* rope) const {
        auto cvec = add_rows(cross.forward(tape, ln_cross.forward(tape, x), cond), t_emb);
        auto m = mod.forward(tape, cvec);
        auto h = modulate(layernorm(x), m[0], m[1]);
        x = add(x, mul(m[2], self_attn.forward(tape, h, nullptr, rope)));
        auto h2 = modulate(layernorm(x), m[3], m[4]);
        x = add(x, mul(m[5], mlp.forward(tape, h2)));
        return x;
    }
};

template <typename T>
struct TokenizerLoss {
    Var<T> total;
    T fm = T(0);
    T vq = T(0);
    T commit = T(0);
};

// Optional perceptual hook: receives the jump-estimated clean image and the
// reference image, returns a scalar loss term. No reference implementation
// ships; the hook exists so an external feature extractor can be plugged in.
template <typename T>
using PerceptualHook = std::function<Var<T>(Tape<T>&, Var<T> /*x1_estimate [B,C,H,W]*/, const Tensor<T>& /*image*/)>;

template <typename T>
class SequentialDiffusionTokenizer {
public:
    TokenizerConfig cfg;
    ParamStore<T> params;

    PerceptualHook<T> lpips_hook;  // inactive unless set
    PerceptualHook<T> repa_hook;

    explicit SequentialDiffusionTokenizer(const TokenizerConfig& config, uint64_t init_seed = 0)
        : cfg(config) {
        cfg.validate();
        Rng rng(seed_stream(init_seed, 0x70CE));
        build(rng);
    }

    // ---- encoder ------------------------------------------------------

    // raw pre-quantization query features, [B, N, d_e]
    Var<T> encode_features(Tape<T>& tape, const Tensor<T>& images) const {
        check_arg(images.rank() == 4 && images.dim(1) == cfg.channels && images.dim(2) == cfg.image_size &&
                      images.dim(3) == cfg.image_size,
                  "encode: image dimensions do not match config");
        const int64_t B = images.dim(0);
        auto patches = constant(tape, patchify(images, cfg.patch));
        auto x_img = patch_embed_.forward(tape, patches);
        auto q = tile_batch(leaf(tape, queries_), B);
        auto x = concat_rows(x_img, q);
        for (const auto& blk : enc_blocks_) x = blk.forward(tape, x, &enc_mask_, &enc_rope_);
        x = enc_ln_out_.forward(tape, x);
        auto qs = slice_rows(x, cfg.encoder_patches(), cfg.num_queries);
        return to_code_.forward(tape, qs);
    }

    struct EncodeResult {
        std::vector<TokenSequence> sequences;
        Tensor<T> pre_quant;  // [B, N, d_e]
    };

    EncodeResult encode(const Tensor<T>& images) const {
        Tape<T> tape;
        tape.grad_enabled = false;
        auto feats = encode_features(tape, images);
        EncodeResult res;
        res.pre_quant = feats.value();
        Tensor<T> f_norm = res.pre_quant;
        Codebook<T>::normalize_rows_inplace(f_norm);
        Tensor<T> entries = normalized_codebook();
        auto idx = nearest_codes(f_norm, entries);
        const int64_t B = images.dim(0), N = cfg.num_queries;
        res.sequences.resize(static_cast<size_t>(B));
        for (int64_t b = 0; b < B; ++b) {
            auto& seq = res.sequences[static_cast<size_t>(b)].ids;
            seq.assign(idx.begin() + b * N, idx.begin() + (b + 1) * N);
        }
        return res;
    }

    // ---- post-quantization causal layers -------------------------------

    // z' from embedded tokens [B, N, d]; position i depends only on inputs <= i
    Var<T> post_quant(Tape<T>& tape, Var<T> embedded) const {
        check_arg(embedded.value().rank() == 3 && embedded.value().dim(1) == cfg.num_queries,
                  "post_quant: sequence length mismatch");
        if (pq_blocks_.empty()) return embedded;
        auto x = embedded;
        for (const auto& blk : pq_blocks_) x = blk.forward(tape, x, &pq_mask_, &pq_rope_);
        return pq_ln_out_.forward(tape, x);
    }

    Var<T> embed_codes(Tape<T>& tape, Var<T> codes) const {
        return code_embed_.forward(tape, codes);
    }

    // ids -> z' values [B, N, d], inference path
    Tensor<T> conditioned_tokens(const std::vector<TokenSequence>& seqs) const {
        const int64_t B = static_cast<int64_t>(seqs.size()), N = cfg.num_queries, de = cfg.code_dim;
        Tensor<T> entries = normalized_codebook();
        Tensor<T> codes({B, N, de});
        for (int64_t b = 0; b < B; ++b) {
            const auto& ids = seqs[static_cast<size_t>(b)].ids;
            check_arg(static_cast<int64_t>(ids.size()) == N, "conditioned_tokens: sequence length mismatch");
            for (int64_t i = 0; i < N; ++i) {
                check_range(ids[static_cast<size_t>(i)] >= 0 && ids[static_cast<size_t>(i)] < cfg.codebook_size,
                            "conditioned_tokens: id out of codebook range");
                std::copy_n(entries.ptr() + ids[static_cast<size_t>(i)] * de, de, codes.ptr() + (b * N + i) * de);
            }
        }
        Tape<T> tape;
        tape.grad_enabled = false;
        auto z = post_quant(tape, embed_codes(tape, constant(tape, std::move(codes))));
        return z.value();
    }

    // ---- diffusion decoder ---------------------------------------------

    // velocity in patch-token form, [B, P_d, p_d*p_d*C]
    Var<T> velocity_tokens(Tape<T>& tape, const Tensor<T>& x_t, const std::vector<double>& ts,
                           Var<T> cond_group) const {
        check_arg(x_t.rank() == 4 && x_t.dim(2) == cfg.image_size && x_t.dim(3) == cfg.image_size,
                  "velocity: state shape mismatch");
        check_arg(cond_group.value().rank() == 3 && cond_group.value().dim(1) == cfg.group_size(),
                  "velocity: conditioning group size mismatch");
        check_arg(static_cast<int64_t>(ts.size()) == x_t.dim(0), "velocity: timestep count mismatch");
        auto cond = cond_proj_.forward(tape, cond_group);
        auto x = dec_patch_embed_.forward(tape, constant(tape, patchify(x_t, cfg.decoder_patch)));
        auto t_emb = time_mlp_.forward(tape, ts);
        for (const auto& blk : dec_blocks_) x = blk.forward(tape, x, cond, t_emb, &dec_rope_);
        // final layer: modulated norm then zero-initialized projection
        const int64_t B = x_t.dim(0);
        auto t_tokens = add_rows(constant(tape, Tensor<T>::zeros({B, cfg.decoder_patches(), cfg.decoder_dim})), t_emb);
        auto fmod = final_mod_.forward(tape, t_tokens);
        auto h = modulate(layernorm(x), fmod[0], fmod[1]);
        return final_proj_.forward(tape, h);
    }

    // single-timestep inference wrapper returning an image-shaped velocity
    Tensor<T> velocity(const Tensor<T>& x_t, double t, const Tensor<T>& cond_tokens) const {
        Tape<T> tape;
        tape.grad_enabled = false;
        const int64_t B = x_t.dim(0);
        std::vector<double> ts(static_cast<size_t>(B), t);
        auto v = velocity_tokens(tape, x_t, ts, constant(tape, cond_tokens));
        return unpatchify(v.value(), cfg.decoder_patch, cfg.channels, cfg.image_size, cfg.image_size);
    }

    // ---- training loss ---------------------------------------------------

    TokenizerLoss<T> tokenizer_loss(Tape<T>& tape, const Tensor<T>& images, Rng& rng) const {
        const int64_t B = images.dim(0);
        const ConditionSchedule sched = cfg.schedule();

        auto feats = encode_features(tape, images);
        auto flat = reshape(feats, {B * cfg.num_queries, cfg.code_dim});
        auto vq = vq_straight_through(tape, flat, codebook_);
        auto zq = reshape(vq.quantized, {B, cfg.num_queries, cfg.code_dim});
        auto zp = post_quant(tape, embed_codes(tape, zq));

        // one (t, x0) pair per image
        std::vector<double> ts(static_cast<size_t>(B));
        std::vector<int64_t> starts(static_cast<size_t>(B));
        for (int64_t b = 0; b < B; ++b) {
            ts[static_cast<size_t>(b)] = rng.uniform();
            starts[static_cast<size_t>(b)] = (group_index(ts[static_cast<size_t>(b)], sched) - 1) * cfg.group_size();
        }
        Tensor<T> noise = Tensor<T>::randn(images.shape, rng);
        Tensor<T> x_t(images.shape);
        Tensor<T> v_target(images.shape);
        const int64_t per_img = images.numel() / B;
        for (int64_t b = 0; b < B; ++b) {
            const T t = static_cast<T>(ts[static_cast<size_t>(b)]);
            for (int64_t i = 0; i < per_img; ++i) {
                const size_t k = static_cast<size_t>(b * per_img + i);
                x_t.data[k] = t * images.data[k] + (T(1) - t) * noise.data[k];
                v_target.data[k] = images.data[k] - noise.data[k];
            }
        }

        auto cond = slice_rows_per_batch(zp, starts, cfg.group_size());
        auto vel = velocity_tokens(tape, x_t, ts, cond);
        auto fm = mse_vs(vel, patchify(v_target, cfg.decoder_patch));

        TokenizerLoss<T> out;
        out.fm = fm.value().data[0];
        out.vq = vq.vq_loss.value().data[0];
        out.commit = vq.commit_loss.value().data[0];
        out.total = add(add(fm, vq.vq_loss), scale(vq.commit_loss, static_cast<T>(kCommitWeight)));
        if (lpips_hook || repa_hook) {
            // jump estimate of the clean image from the predicted velocity
            auto x1_est = jump_estimate_var(tape, x_t, ts, vel);
            if (lpips_hook)
                out.total = add(out.total, scale(lpips_hook(tape, x1_est, images), static_cast<T>(cfg.lambda_lpips)));
            if (repa_hook)
                out.total = add(out.total, scale(repa_hook(tape, x1_est, images), static_cast<T>(cfg.lambda_repa)));
        }
        check_runtime(std::isfinite(static_cast<double>(out.total.value().data[0])),
                      "tokenizer_loss: non-finite loss (divergence)");
        return out;
    }

    // ---- misc -----------------------------------------------------------

    Tensor<T> normalized_codebook() const {
        Tensor<T> entries = codebook_->value;
        Codebook<T>::normalize_rows_inplace(entries);
        return entries;
    }

    Parameter<T>* codebook_param() const { return codebook_; }

    // keeps the stored codebook rows on the unit sphere after optimizer steps
    void renormalize_codebook() { Codebook<T>::normalize_rows_inplace(codebook_->value); }

private:
    Var<T> jump_estimate_var(Tape<T>& tape, const Tensor<T>& x_t, const std::vector<double>& ts, Var<T> vel) const {
        // x1_hat = x_t + (1 - t) v, assembled in patch space
        const int64_t B = x_t.dim(0);
        Tensor<T> xt_tokens = patchify(x_t, cfg.decoder_patch);
        Tensor<T> w({B, cfg.decoder_patches(), vel.value().dim(2)});
        for (int64_t b = 0; b < B; ++b)
            std::fill(w.ptr() + b * w.dim(1) * w.dim(2), w.ptr() + (b + 1) * w.dim(1) * w.dim(2),
                      static_cast<T>(1.0 - ts[static_cast<size_t>(b)]));
        auto scaled = mul(vel, constant(tape, std::move(w)));
        return add(scaled, constant(tape, std::move(xt_tokens)));
    }

    void build(Rng& rng) {
        const int64_t hd = cfg.dim / cfg.heads;
        patch_embed_ = LinearLayer<T>::create(params, "enc.patch_embed", cfg.patch * cfg.patch * cfg.channels,
                                              cfg.dim, rng);
        queries_ = params.create("enc.queries", Tensor<T>::randn({cfg.num_queries, cfg.dim}, rng, T(0.02)));
        for (int64_t l = 0; l < cfg.layers; ++l)
            enc_blocks_.push_back(
                TransformerBlock<T>::create(params, "enc.block" + std::to_string(l), cfg.dim, cfg.heads, rng));
        enc_ln_out_ = LayerNormLayer<T>::create(params, "enc.ln_out", cfg.dim);
        to_code_ = LinearLayer<T>::create(params, "enc.to_code", cfg.dim, cfg.code_dim, rng);

        {
            Rng cb_rng(seed_stream(rng.next_u64(), 0xC0DE));
            Codebook<T> cb = Codebook<T>::random(cfg.codebook_size, cfg.code_dim, cb_rng);
            codebook_ = params.create("codebook", std::move(cb.entries));
        }

        code_embed_ = LinearLayer<T>::create(params, "pq.embed", cfg.code_dim, cfg.dim, rng);
        for (int64_t l = 0; l < cfg.post_quant_layers; ++l)
            pq_blocks_.push_back(
                TransformerBlock<T>::create(params, "pq.block" + std::to_string(l), cfg.dim, cfg.heads, rng));
        if (cfg.post_quant_layers > 0) pq_ln_out_ = LayerNormLayer<T>::create(params, "pq.ln_out", cfg.dim);

        dec_patch_embed_ = LinearLayer<T>::create(params, "dec.patch_embed",
                                                  cfg.decoder_patch * cfg.decoder_patch * cfg.channels,
                                                  cfg.decoder_dim, rng);
        cond_proj_ = LinearLayer<T>::create(params, "dec.cond_proj", cfg.dim, cfg.decoder_dim, rng);
        time_mlp_ = TimeEmbedMlp<T>::create(params, "dec.time_mlp", cfg.decoder_dim, rng);
        for (int64_t l = 0; l < cfg.decoder_layers; ++l)
            dec_blocks_.push_back(DitBlock<T>::create(params, "dec.block" + std::to_string(l), cfg.decoder_dim,
                                                      cfg.decoder_dim, cfg.decoder_heads, rng));
        final_mod_ = AdaLnModulation<T>::create(params, "dec.final_mod", cfg.decoder_dim, cfg.decoder_dim, 2);
        final_proj_ = LinearLayer<T>::create_zero(params, "dec.final_proj", cfg.decoder_dim,
                                                  cfg.decoder_patch * cfg.decoder_patch * cfg.channels);

        // masks and rotary tables
        const int64_t P = cfg.encoder_patches(), N = cfg.num_queries;
        const int64_t total = P + N;
        std::vector<std::vector<bool>> allowed(static_cast<size_t>(total),
                                               std::vector<bool>(static_cast<size_t>(total), false));
        for (int64_t i = 0; i < P; ++i)
            for (int64_t j = 0; j < P; ++j) allowed[static_cast<size_t>(i)][static_cast<size_t>(j)] = true;
        for (int64_t qi = 0; qi < N; ++qi) {
            for (int64_t j = 0; j < P; ++j) allowed[static_cast<size_t>(P + qi)][static_cast<size_t>(j)] = true;
            for (int64_t qj = 0; qj <= qi; ++qj)
                allowed[static_cast<size_t>(P + qi)][static_cast<size_t>(P + qj)] = true;
        }
        enc_mask_ = mask_from_bool<T>(allowed);

        const int64_t gw = cfg.image_size / cfg.patch;
        std::vector<std::pair<int64_t, int64_t>> ppos;
        for (int64_t r = 0; r < gw; ++r)
            for (int64_t c = 0; c < gw; ++c) ppos.emplace_back(r, c);
        enc_rope_ = rope_concat(rope_2d<T>(ppos, hd), rope_identity<T>(N, hd));

        pq_mask_ = causal_mask<T>(N);
        pq_rope_ = rope_identity<T>(N, hd);

        const int64_t dgw = cfg.image_size / cfg.decoder_patch;
        std::vector<std::pair<int64_t, int64_t>> dpos;
        for (int64_t r = 0; r < dgw; ++r)
            for (int64_t c = 0; c < dgw; ++c) dpos.emplace_back(r, c);
        dec_rope_ = rope_2d<T>(dpos, cfg.decoder_dim / cfg.decoder_heads);
    }

    LinearLayer<T> patch_embed_;
    Parameter<T>* queries_ = nullptr;
    std::vector<TransformerBlock<T>> enc_blocks_;
    LayerNormLayer<T> enc_ln_out_;
    LinearLayer<T> to_code_;
    Parameter<T>* codebook_ = nullptr;

    LinearLayer<T> code_embed_;
    std::vector<TransformerBlock<T>> pq_blocks_;
    LayerNormLayer<T> pq_ln_out_;

    LinearLayer<T> dec_patch_embed_;
    LinearLayer<T> cond_proj_;
    TimeEmbedMlp<T> time_mlp_;
    std::vector<DitBlock<T>> dec_blocks_;
    AdaLnModulation<T> final_mod_;
    LinearLayer<T> final_proj_;

    Tensor<T> enc_mask_;
    RopeTables<T> enc_rope_;
    Tensor<T> pq_mask_;
    RopeTables<T> pq_rope_;
    RopeTables<T> dec_rope_;
};

}  // namespace dar
