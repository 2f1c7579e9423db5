#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <memory>

#include "dar/pipeline.hpp"

namespace dar {

// ---------------------------------------------------------------------------
// AdamW

void AdamW::ensure_state(const ParamStore<float>& params) {
    if (!m_.empty()) return;
    for (const auto& p : params.all()) {
        m_.push_back(Tensor<float>::zeros(p->value.shape));
        v_.push_back(Tensor<float>::zeros(p->value.shape));
    }
}

void AdamW::step(ParamStore<float>& params, double lr) {
    ensure_state(params);
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto& all = params.all();
    for (size_t i = 0; i < all.size(); ++i) {
        Parameter<float>& p = *all[i];
        Tensor<float>& m = m_[i];
        Tensor<float>& v = v_[i];
        for (size_t j = 0; j < p.value.data.size(); ++j) {
            const double g = static_cast<double>(p.grad.data[j]);
            const double mj = beta1_ * static_cast<double>(m.data[j]) + (1.0 - beta1_) * g;
            const double vj = beta2_ * static_cast<double>(v.data[j]) + (1.0 - beta2_) * g * g;
            m.data[j] = static_cast<float>(mj);
            v.data[j] = static_cast<float>(vj);
            const double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps_) + weight_decay_ * static_cast<double>(p.value.data[j]);
            p.value.data[j] = static_cast<float>(static_cast<double>(p.value.data[j]) - lr * update);
        }
    }
}

void AdamW::save(CheckpointWriter& w, const ParamStore<float>& params) const {
    const auto& all = params.all();
    check_runtime(m_.size() == all.size() || m_.empty(), "AdamW::save: state/param mismatch");
    w.add_scalar_i64("opt/t", t_);
    for (size_t i = 0; i < m_.size(); ++i) {
        w.add_f32("opt/m/" + all[i]->name, m_[i]);
        w.add_f32("opt/v/" + all[i]->name, v_[i]);
    }
}

void AdamW::load(const CheckpointReader& r, const ParamStore<float>& params) {
    t_ = r.scalar_i64("opt/t");
    m_.clear();
    v_.clear();
    for (const auto& p : params.all()) {
        m_.push_back(r.get("opt/m/" + p->name).as_f32());
        v_.push_back(r.get("opt/v/" + p->name).as_f32());
    }
}

// ---------------------------------------------------------------------------
// EMA

void Ema::update(const ParamStore<float>& params) {
    const auto& all = params.all();
    if (shadow_.empty())
        for (const auto& p : all) shadow_.push_back(Tensor<float>::zeros(p->value.shape));
    const float d = static_cast<float>(decay_);
    for (size_t i = 0; i < all.size(); ++i) {
        const auto& pv = all[i]->value;
        auto& s = shadow_[i];
        for (size_t j = 0; j < s.data.size(); ++j) s.data[j] = d * s.data[j] + (1.0f - d) * pv.data[j];
    }
}

void Ema::copy_to(ParamStore<float>& params) const {
    const auto& all = params.all();
    check_runtime(shadow_.size() == all.size(), "Ema::copy_to: uninitialized");
    for (size_t i = 0; i < all.size(); ++i) all[i]->value = shadow_[i];
}

void Ema::save(CheckpointWriter& w, const ParamStore<float>& params) const {
    const auto& all = params.all();
    for (size_t i = 0; i < shadow_.size(); ++i) w.add_f32("ema/" + all[i]->name, shadow_[i]);
}

void Ema::load(const CheckpointReader& r, const ParamStore<float>& params) {
    shadow_.clear();
    for (const auto& p : params.all())
        if (r.has("ema/" + p->name)) shadow_.push_back(r.get("ema/" + p->name).as_f32());
    check_runtime(shadow_.empty() || shadow_.size() == params.all().size(), "Ema::load: partial state");
}

double lr_at(const OptimizerConfig& oc, int64_t step) {
    if (step < oc.warmup_steps)
        return oc.lr * static_cast<double>(step + 1) / static_cast<double>(oc.warmup_steps);
    const int64_t span = std::max<int64_t>(1, oc.total_steps - oc.warmup_steps);
    double f = static_cast<double>(step - oc.warmup_steps) / static_cast<double>(span);
    if (f > 1.0) f = 1.0;
    return oc.lr + (oc.final_lr - oc.lr) * f;
}

// ---------------------------------------------------------------------------
// metrics

MetricsWriter::MetricsWriter(const std::string& path) : out_(path, std::ios::app) {
    check_runtime(out_.good(), "metrics: cannot open " + path);
}

void MetricsWriter::write(const std::string& json_line) {
    out_ << json_line << "\n";
    out_.flush();
}

// ---------------------------------------------------------------------------
// datasets

Dataset open_dataset(const RunConfig& cfg) {
    Dataset d;
    if (cfg.data.kind == "shapes") {
        auto ds = std::make_shared<ShapesDataset>(cfg.seed, cfg.data.count, cfg.data.num_classes,
                                                  cfg.tokenizer.image_size);
        d.at = [ds](int64_t i) { return ds->at(i); };
        d.size = ds->size();
        d.num_classes = ds->num_classes();
    } else if (cfg.data.kind == "folder") {
        auto ds = std::make_shared<FolderDataset>(cfg.data.path, cfg.tokenizer.image_size);
        d.at = [ds](int64_t i) { return ds->at(i); };
        d.size = ds->size();
        d.num_classes = ds->num_classes();
    } else {
        throw std::invalid_argument("unknown dataset kind: " + cfg.data.kind);
    }
    return d;
}

// ---------------------------------------------------------------------------
// checkpoint glue

void save_params(CheckpointWriter& w, const ParamStore<float>& params, const std::string& prefix) {
    for (const auto& p : params.all()) w.add_f32(prefix + p->name, p->value);
}

void load_params(const CheckpointReader& r, ParamStore<float>& params, const std::string& prefix) {
    for (const auto& p : params.all()) {
        Tensor<float> t = r.get(prefix + p->name).as_f32();
        check_runtime(t.shape == p->value.shape, "checkpoint: shape mismatch for " + p->name);
        p->value = std::move(t);
    }
}

void save_training_state(const std::string& path, const ParamStore<float>& params, const Ema& ema,
                         const AdamW& opt, int64_t step) {
    CheckpointWriter w;
    w.add_scalar_i64("meta/step", step);
    save_params(w, params, "param/");
    ema.save(w, params);
    opt.save(w, params);
    w.save(path);
}

int64_t load_training_state(const std::string& path, ParamStore<float>& params, Ema& ema, AdamW& opt) {
    CheckpointReader r(path);
    load_params(r, params, "param/");
    ema.load(r, params);
    opt.load(r, params);
    return r.scalar_i64("meta/step");
}

void load_model_params(const std::string& path, ParamStore<float>& params, bool use_ema) {
    CheckpointReader r(path);
    load_params(r, params, use_ema ? "ema/" : "param/");
}

// ---------------------------------------------------------------------------
// batching

namespace {

std::vector<int64_t> batch_indices(uint64_t seed, int64_t step, int64_t batch, int64_t dataset_size) {
    Rng rng(seed_stream(seed, static_cast<uint64_t>(step), 0xBA7C));
    std::vector<int64_t> idx(static_cast<size_t>(batch));
    for (auto& i : idx) i = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(dataset_size)));
    return idx;
}

Tensor<float> stack_images(const Dataset& data, const std::vector<int64_t>& idx, std::vector<int64_t>* labels) {
    LabeledImage first = data.at(idx[0]);
    const int64_t C = first.image.dim(0), H = first.image.dim(1), W = first.image.dim(2);
    Tensor<float> batch({static_cast<int64_t>(idx.size()), C, H, W});
    for (size_t b = 0; b < idx.size(); ++b) {
        LabeledImage li = b == 0 ? std::move(first) : data.at(idx[b]);
        std::copy(li.image.data.begin(), li.image.data.end(), batch.data.begin() + static_cast<int64_t>(b) * C * H * W);
        if (labels) labels->push_back(li.label);
    }
    return batch;
}

}  // namespace

// ---------------------------------------------------------------------------
// tokenizer training

TokenizerTrainResult train_tokenizer(const RunConfig& cfg, const std::string& resume_path) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    Dataset data = open_dataset(cfg);
    SequentialDiffusionTokenizer<float> tok(cfg.tokenizer, cfg.seed);
    AdamW opt(cfg.tok_opt.beta1, cfg.tok_opt.beta2, cfg.tok_opt.weight_decay);
    Ema ema(cfg.tok_opt.ema_decay);
    int64_t start_step = 0;
    if (!resume_path.empty()) start_step = load_training_state(resume_path, tok.params, ema, opt);

    MetricsWriter metrics(cfg.out_dir + "/tokenizer_metrics.jsonl");
    const std::string ckpt_path = cfg.out_dir + "/tokenizer.darc";

    std::vector<double> fm_history;
    TokenizerTrainResult res;
    for (int64_t step = start_step; step < cfg.tok_opt.total_steps; ++step) {
        auto idx = batch_indices(cfg.seed, step, cfg.tok_opt.batch_size, data.size);
        Tensor<float> images = stack_images(data, idx, nullptr);
        Rng noise_rng(seed_stream(cfg.seed, static_cast<uint64_t>(step), 0x401));

        Tape<float> tape;
        tok.params.zero_grad();
        TokenizerLoss<float> loss = tok.tokenizer_loss(tape, images, noise_rng);
        tape.backward(loss.total);

        const double lr = lr_at(cfg.tok_opt, step);
        opt.step(tok.params, lr);
        tok.renormalize_codebook();
        ema.update(tok.params);

        fm_history.push_back(static_cast<double>(loss.fm));

        if (step % cfg.tok_opt.log_every == 0 || step + 1 == cfg.tok_opt.total_steps) {
            auto enc = tok.encode(images);
            std::vector<int64_t> hist(static_cast<size_t>(cfg.tokenizer.codebook_size), 0);
            for (const auto& s : enc.sequences)
                for (int64_t id : s.ids) hist[static_cast<size_t>(id)]++;
            nlohmann::json j{{"step", step},
                             {"fm_loss", loss.fm},
                             {"vq_loss", loss.vq},
                             {"commit_loss", loss.commit},
                             {"codebook_utilization", codebook_utilization(hist, cfg.tokenizer.codebook_size)},
                             {"lr", lr}};
            metrics.write(j.dump());
        }
        if ((step + 1) % cfg.tok_opt.checkpoint_every == 0 || step + 1 == cfg.tok_opt.total_steps)
            save_training_state(ckpt_path, tok.params, ema, opt, step + 1);
    }

    const size_t n = fm_history.size();
    const size_t w = std::min<size_t>(100, n);
    double head = 0.0, tail = 0.0;
    for (size_t i = 0; i < w; ++i) head += fm_history[i];
    for (size_t i = n - w; i < n; ++i) tail += fm_history[i];
    res.initial_mean_fm = head / static_cast<double>(w);
    res.trailing_mean_fm = tail / static_cast<double>(w);
    res.steps = cfg.tok_opt.total_steps;
    res.checkpoint_path = ckpt_path;
    return res;
}

// ---------------------------------------------------------------------------
// AR training

EncodedDataset encode_dataset(const SequentialDiffusionTokenizer<float>& tok, const Dataset& data, int64_t limit,
                              int64_t batch) {
    EncodedDataset enc;
    const int64_t n = limit > 0 ? std::min(limit, data.size) : data.size;
    for (int64_t base = 0; base < n; base += batch) {
        const int64_t b = std::min(batch, n - base);
        std::vector<int64_t> idx(static_cast<size_t>(b));
        for (int64_t i = 0; i < b; ++i) idx[static_cast<size_t>(i)] = base + i;
        std::vector<int64_t> labels;
        Tensor<float> images = stack_images(data, idx, &labels);
        auto res = tok.encode(images);
        for (int64_t i = 0; i < b; ++i) {
            enc.sequences.push_back(res.sequences[static_cast<size_t>(i)].ids);
            enc.labels.push_back(labels[static_cast<size_t>(i)]);
        }
    }
    return enc;
}

void save_encoded(const EncodedDataset& enc, int64_t num_tokens, const std::string& path) {
    CheckpointWriter w;
    const int64_t M = static_cast<int64_t>(enc.sequences.size());
    std::vector<int64_t> flat;
    flat.reserve(static_cast<size_t>(M * num_tokens));
    for (const auto& s : enc.sequences) {
        check_arg(static_cast<int64_t>(s.size()) == num_tokens, "save_encoded: ragged sequence");
        flat.insert(flat.end(), s.begin(), s.end());
    }
    w.add_i64("tokens", flat, {M, num_tokens});
    w.add_i64("labels", enc.labels);
    w.save(path);
}

EncodedDataset load_encoded(const std::string& path) {
    CheckpointReader r(path);
    const auto& rec = r.get("tokens");
    check_runtime(rec.dims.size() == 2, "load_encoded: bad tokens record");
    auto flat = rec.as_i64();
    EncodedDataset enc;
    enc.labels = r.get("labels").as_i64();
    const int64_t M = rec.dims[0], N = rec.dims[1];
    for (int64_t i = 0; i < M; ++i)
        enc.sequences.emplace_back(flat.begin() + i * N, flat.begin() + (i + 1) * N);
    return enc;
}

ArTrainResult train_ar(const RunConfig& cfg, const std::string& tokenizer_checkpoint,
                       const std::string& resume_path) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    Dataset data = open_dataset(cfg);

    SequentialDiffusionTokenizer<float> tok(cfg.tokenizer, cfg.seed);
    load_model_params(tokenizer_checkpoint, tok.params, /*use_ema=*/false);

    ARConfig acfg = cfg.ar;
    check_arg(acfg.codebook_size == cfg.tokenizer.codebook_size,
              "train_ar: tokenizer and AR codebook sizes disagree");
    ARModel<float> ar(acfg, cfg.seed);
    AdamW opt(cfg.ar_opt.beta1, cfg.ar_opt.beta2, cfg.ar_opt.weight_decay);
    Ema ema(cfg.ar_opt.ema_decay);
    int64_t start_step = 0;
    if (!resume_path.empty()) start_step = load_training_state(resume_path, ar.params, ema, opt);

    EncodedDataset enc;
    if (cfg.ar_pre_encode) {
        const std::string enc_path = cfg.out_dir + "/encoded_tokens.darc";
        if (fs::exists(enc_path)) {
            enc = load_encoded(enc_path);
        } else {
            enc = encode_dataset(tok, data);
            save_encoded(enc, cfg.tokenizer.num_queries, enc_path);
        }
    }

    MetricsWriter metrics(cfg.out_dir + "/ar_metrics.jsonl");
    const std::string ckpt_path = cfg.out_dir + "/ar.darc";

    ArTrainResult res;
    const int64_t M = cfg.ar_pre_encode ? static_cast<int64_t>(enc.sequences.size()) : data.size;
    for (int64_t step = start_step; step < cfg.ar_opt.total_steps; ++step) {
        auto idx = batch_indices(cfg.seed, step, cfg.ar_opt.batch_size, M);
        std::vector<std::vector<int64_t>> seqs;
        seqs.reserve(idx.size());
        if (cfg.ar_pre_encode) {
            for (int64_t i : idx) {
                std::vector<int64_t> s;
                s.push_back(acfg.class_token(enc.labels[static_cast<size_t>(i)]));
                const auto& ids = enc.sequences[static_cast<size_t>(i)];
                s.insert(s.end(), ids.begin(), ids.end());
                seqs.push_back(std::move(s));
            }
        } else {
            std::vector<int64_t> labels;
            Tensor<float> images = stack_images(data, idx, &labels);
            auto r = tok.encode(images);
            for (size_t i = 0; i < idx.size(); ++i) {
                std::vector<int64_t> s;
                s.push_back(acfg.class_token(labels[i]));
                s.insert(s.end(), r.sequences[i].ids.begin(), r.sequences[i].ids.end());
                seqs.push_back(std::move(s));
            }
        }

        Rng drop_rng(seed_stream(cfg.seed, static_cast<uint64_t>(step), 0xD20));
        Tape<float> tape;
        ar.params.zero_grad();
        auto out = ar.forward_train(tape, seqs, &drop_rng);
        const double ce = static_cast<double>(out.ce.value().data[0]);
        check_runtime(std::isfinite(ce), "train_ar: non-finite loss");
        tape.backward(out.ce);
        const double lr = lr_at(cfg.ar_opt, step);
        opt.step(ar.params, lr);
        ema.update(ar.params);

        if (step == start_step) res.first_ce = ce;
        res.final_ce = ce;

        if (step % cfg.ar_opt.log_every == 0 || step + 1 == cfg.ar_opt.total_steps) {
            // next-token accuracy over the batch
            const auto& logits = out.logits.value();
            const int64_t B = logits.dim(0), V = logits.dim(2), N = acfg.num_tokens;
            int64_t correct = 0, total = 0;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t p = 0; p < N; ++p) {
                    const float* row = logits.ptr() + (b * logits.dim(1) + p) * V;
                    int64_t best = 0;
                    for (int64_t c = 1; c < V; ++c)
                        if (row[c] > row[best]) best = c;
                    correct += best == seqs[static_cast<size_t>(b)][static_cast<size_t>(p + 1)] ? 1 : 0;
                    ++total;
                }
            res.final_accuracy = static_cast<double>(correct) / static_cast<double>(total);
            nlohmann::json j{{"step", step}, {"ce_loss", ce}, {"lr", lr}, {"token_accuracy", res.final_accuracy}};
            metrics.write(j.dump());
        }
        if ((step + 1) % cfg.ar_opt.checkpoint_every == 0 || step + 1 == cfg.ar_opt.total_steps)
            save_training_state(ckpt_path, ar.params, ema, opt, step + 1);
    }
    res.steps = cfg.ar_opt.total_steps;
    res.checkpoint_path = ckpt_path;
    return res;
}

// ---------------------------------------------------------------------------
// sampling adapters

VelocityModel<float> velocity_model(const SequentialDiffusionTokenizer<float>& tok) {
    const int64_t C = tok.cfg.channels, H = tok.cfg.image_size, W = tok.cfg.image_size;
    const int64_t G = tok.cfg.group_size(), D = tok.cfg.dim;
    return [&tok, C, H, W, G, D](const Tensor<float>& x, double t, const Tensor<float>& group) {
        Tensor<float> v = tok.velocity(x.reshaped({1, C, H, W}), t, group.reshaped({1, G, D}));
        return v.reshaped({C, H, W});
    };
}

Tensor<float> decode_tokens(const SequentialDiffusionTokenizer<float>& tok, const TokenSequence& seq,
                            SolverKind solver, uint64_t seed, const PreviewSink<float>& sink) {
    Tensor<float> zp = tok.conditioned_tokens({seq});
    Tensor<float> z2 = zp.reshaped({tok.cfg.num_queries, tok.cfg.dim});
    auto model = velocity_model(tok);
    return sample(z2, model, tok.cfg.num_groups, tok.cfg.beta, solver, seed,
                  {tok.cfg.channels, tok.cfg.image_size, tok.cfg.image_size}, sink);
}

}  // namespace dar
