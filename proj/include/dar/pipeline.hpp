#pragma once

// Training loops (AdamW + EMA + linear warmup/decay), checkpoint glue,
// line-delimited metrics, dataset plumbing, and the tokenizer <-> sampler
// adapters used by the CLI.

#include <fstream>
#include <functional>

#include "dar/ar_model.hpp"
#include "dar/checkpoint.hpp"
#include "dar/config.hpp"
#include "dar/dataset.hpp"
#include "dar/flow_sampler.hpp"
#include "dar/tokenizer.hpp"

namespace dar {

// ---------------------------------------------------------------------------
// optimizer / EMA

class AdamW {
public:
    AdamW(double beta1, double beta2, double weight_decay, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

    void step(ParamStore<float>& params, double lr);

    int64_t steps_taken() const { return t_; }

    void save(CheckpointWriter& w, const ParamStore<float>& params) const;
    void load(const CheckpointReader& r, const ParamStore<float>& params);

private:
    void ensure_state(const ParamStore<float>& params);

    double beta1_, beta2_, weight_decay_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor<float>> m_, v_;
};

class Ema {
public:
    explicit Ema(double decay) : decay_(decay) {}

    void update(const ParamStore<float>& params);
    const std::vector<Tensor<float>>& shadow() const { return shadow_; }
    void copy_to(ParamStore<float>& params) const;

    void save(CheckpointWriter& w, const ParamStore<float>& params) const;
    void load(const CheckpointReader& r, const ParamStore<float>& params);

private:
    double decay_;
    std::vector<Tensor<float>> shadow_;
};

// linear warmup to lr, then linear decay to final_lr over the remaining steps
double lr_at(const OptimizerConfig& oc, int64_t step);

// ---------------------------------------------------------------------------
// metrics (one JSON object per line, append-only)

class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path);
    void write(const std::string& json_line);

private:
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// datasets

struct Dataset {
    std::function<LabeledImage(int64_t)> at;
    int64_t size = 0;
    int64_t num_classes = 0;
};

Dataset open_dataset(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// checkpoint glue

void save_params(CheckpointWriter& w, const ParamStore<float>& params, const std::string& prefix);
void load_params(const CheckpointReader& r, ParamStore<float>& params, const std::string& prefix);

void save_training_state(const std::string& path, const ParamStore<float>& params, const Ema& ema,
                         const AdamW& opt, int64_t step);
// returns the number of completed steps
int64_t load_training_state(const std::string& path, ParamStore<float>& params, Ema& ema, AdamW& opt);
void load_model_params(const std::string& path, ParamStore<float>& params, bool use_ema);

// ---------------------------------------------------------------------------
// training loops

struct TokenizerTrainResult {
    double initial_mean_fm = 0.0;   // mean fm loss over the first 100 steps
    double trailing_mean_fm = 0.0;  // mean fm loss over the last 100 steps
    int64_t steps = 0;
    std::string checkpoint_path;
};

TokenizerTrainResult train_tokenizer(const RunConfig& cfg, const std::string& resume_path = "");

struct ArTrainResult {
    double first_ce = 0.0;
    double final_ce = 0.0;
    double final_accuracy = 0.0;
    int64_t steps = 0;
    std::string checkpoint_path;
};

ArTrainResult train_ar(const RunConfig& cfg, const std::string& tokenizer_checkpoint,
                       const std::string& resume_path = "");

// ---------------------------------------------------------------------------
// encode / decode adapters

struct EncodedDataset {
    std::vector<std::vector<int64_t>> sequences;
    std::vector<int64_t> labels;
};

EncodedDataset encode_dataset(const SequentialDiffusionTokenizer<float>& tok, const Dataset& data,
                              int64_t limit = 0, int64_t batch = 32);

void save_encoded(const EncodedDataset& enc, int64_t num_tokens, const std::string& path);
EncodedDataset load_encoded(const std::string& path);

// single-image velocity model closure over a tokenizer (shared read-only weights)
VelocityModel<float> velocity_model(const SequentialDiffusionTokenizer<float>& tok);

// decode one token sequence into an image via K diffusion steps
Tensor<float> decode_tokens(const SequentialDiffusionTokenizer<float>& tok, const TokenSequence& seq,
                            SolverKind solver, uint64_t seed, const PreviewSink<float>& sink = nullptr);

}  // namespace dar
