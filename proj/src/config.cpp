#include "dar/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dar {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Setter {
    std::function<void(RunConfig&, const std::string&)> fn;
};

int64_t to_i64(const std::string& v) { return std::stoll(v); }
double to_f64(const std::string& v) { return std::stod(v); }

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config: bad boolean value " + v);
}

void apply_opt(OptimizerConfig& o, const std::string& key, const std::string& value) {
    if (key == "lr") o.lr = to_f64(value);
    else if (key == "beta1") o.beta1 = to_f64(value);
    else if (key == "beta2") o.beta2 = to_f64(value);
    else if (key == "weight_decay") o.weight_decay = to_f64(value);
    else if (key == "final_lr") o.final_lr = to_f64(value);
    else if (key == "warmup_steps") o.warmup_steps = to_i64(value);
    else if (key == "total_steps") o.total_steps = to_i64(value);
    else if (key == "batch_size") o.batch_size = to_i64(value);
    else if (key == "ema_decay") o.ema_decay = to_f64(value);
    else if (key == "checkpoint_every") o.checkpoint_every = to_i64(value);
    else if (key == "log_every") o.log_every = to_i64(value);
    else throw std::invalid_argument("config: unknown optimizer key " + key);
}

}  // namespace

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    check_runtime(in.good(), "config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
    RunConfig cfg = defaults();
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            check_arg(line.back() == ']', "config line " + std::to_string(lineno) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        check_arg(eq != std::string::npos, "config line " + std::to_string(lineno) + ": expected key = value");
        check_arg(!section.empty(), "config line " + std::to_string(lineno) + ": key outside any [section]");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (section == "run") {
            if (key == "seed") cfg.seed = static_cast<uint64_t>(to_i64(value));
            else if (key == "out_dir") cfg.out_dir = value;
            else throw std::invalid_argument("config: unknown [run] key " + key);
        } else if (section == "data") {
            if (key == "kind") cfg.data.kind = value;
            else if (key == "path") cfg.data.path = value;
            else if (key == "count") cfg.data.count = to_i64(value);
            else if (key == "num_classes") cfg.data.num_classes = to_i64(value);
            else throw std::invalid_argument("config: unknown [data] key " + key);
        } else if (section == "tokenizer") {
            auto& t = cfg.tokenizer;
            if (key == "image_size") t.image_size = to_i64(value);
            else if (key == "patch") t.patch = to_i64(value);
            else if (key == "num_queries") t.num_queries = to_i64(value);
            else if (key == "dim") t.dim = to_i64(value);
            else if (key == "layers") t.layers = to_i64(value);
            else if (key == "heads") t.heads = to_i64(value);
            else if (key == "post_quant_layers") t.post_quant_layers = to_i64(value);
            else if (key == "decoder_patch") t.decoder_patch = to_i64(value);
            else if (key == "decoder_dim") t.decoder_dim = to_i64(value);
            else if (key == "decoder_layers") t.decoder_layers = to_i64(value);
            else if (key == "decoder_heads") t.decoder_heads = to_i64(value);
            else if (key == "codebook_size") t.codebook_size = to_i64(value);
            else if (key == "code_dim") t.code_dim = to_i64(value);
            else if (key == "lambda_lpips") t.lambda_lpips = to_f64(value);
            else if (key == "lambda_repa") t.lambda_repa = to_f64(value);
            else throw std::invalid_argument("config: unknown [tokenizer] key " + key);
        } else if (section == "schedule") {
            if (key == "num_groups") cfg.tokenizer.num_groups = to_i64(value);
            else if (key == "beta") cfg.tokenizer.beta = to_f64(value);
            else throw std::invalid_argument("config: unknown [schedule] key " + key);
        } else if (section == "ar") {
            auto& a = cfg.ar;
            if (key == "layers") a.layers = to_i64(value);
            else if (key == "dim") a.dim = to_i64(value);
            else if (key == "heads") a.heads = to_i64(value);
            else if (key == "label_drop_prob") a.label_drop_prob = to_f64(value);
            else if (key == "pre_encode") cfg.ar_pre_encode = to_bool(value);
            else throw std::invalid_argument("config: unknown [ar] key " + key);
        } else if (section == "train.tokenizer") {
            apply_opt(cfg.tok_opt, key, value);
        } else if (section == "train.ar") {
            apply_opt(cfg.ar_opt, key, value);
        } else {
            throw std::invalid_argument("config: unknown section [" + section + "]");
        }
    }

    // AR vocabulary layout follows the tokenizer and dataset
    cfg.ar.codebook_size = cfg.tokenizer.codebook_size;
    cfg.ar.num_classes = cfg.data.num_classes;
    cfg.ar.num_tokens = cfg.tokenizer.num_queries;

    if (const char* env = std::getenv("DAR_OUT_DIR")) cfg.out_dir = env;
    return cfg;
}

}  // namespace dar
