#pragma once

// Run configuration, read from a plain-text file. Grammar:
//   - '#' starts a comment (rest of line ignored)
//   - '[section]' opens a section; keys before a section header are invalid
//   - 'key = value' inside a section; whitespace around tokens ignored
// Unknown sections or keys are errors. DAR_OUT_DIR overrides out_dir.

#include <string>

#include "dar/ar_model.hpp"
#include "dar/tokenizer.hpp"

namespace dar {

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.01;
    double final_lr = 1e-4;
    int64_t warmup_steps = 50;
    int64_t total_steps = 800;
    int64_t batch_size = 8;
    double ema_decay = 0.99;
    int64_t checkpoint_every = 400;
    int64_t log_every = 10;
};

struct DataConfig {
    std::string kind = "shapes";  // shapes | folder
    std::string path;             // folder datasets
    int64_t count = 4000;
    int64_t num_classes = 6;
};

struct RunConfig {
    uint64_t seed = 0;
    std::string out_dir = "out";
    DataConfig data;
    TokenizerConfig tokenizer;
    ARConfig ar;
    OptimizerConfig tok_opt;
    OptimizerConfig ar_opt;
    bool ar_pre_encode = true;

    static RunConfig defaults();
    static RunConfig from_file(const std::string& path);
    static RunConfig from_string(const std::string& text);
};

}  // namespace dar
