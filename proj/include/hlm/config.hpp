#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hlm/errors.hpp"
#include "hlm/model.hpp"
#include "hlm/optimizer.hpp"

namespace hlm {

enum class Objective { VanillaCE, HeadlessCWT };
enum class Task { MLM, CLM };

inline Objective objective_from_string(const std::string& s) {
    if (s == "vanilla_ce") return Objective::VanillaCE;
    if (s == "headless_cwt") return Objective::HeadlessCWT;
    throw ConfigError("unknown objective '" + s + "' (vanilla_ce|headless_cwt)");
}

inline Task task_from_string(const std::string& s) {
    if (s == "mlm") return Task::MLM;
    if (s == "clm") return Task::CLM;
    throw ConfigError("unknown task '" + s + "' (mlm|clm)");
}

// Everything a training run needs, loadable from a flat `key = value` text
// file. Unknown keys are errors so typos fail loudly.
struct TrainConfig {
    Objective objective = Objective::HeadlessCWT;
    Task task = Task::MLM;
    ModelConfig model;

    std::string corpus;         // raw text corpus
    std::string tokenizer;      // trained tokenizer model; empty = raw-byte ids
    std::string init_from;      // optional checkpoint to continue from

    int n_micro = 16;           // N, sequences per micro-batch
    int grad_accumulation = 1;
    int seq_len = 64;           // L
    double mask_rate = 0.15;
    long long total_steps = 2000;
    std::uint64_t seed = 0;

    AdamWParams opt;
    ScheduleKind schedule = ScheduleKind::Triangular;
    long long warmup_steps = 0;

    long long eval_every = 50;
    long long checkpoint_every = 1000;
    bool freeze_backbone = false;  // head recovery only
    bool log_timing = false;       // real tok_per_s in metrics (breaks byte determinism)

    void validate() const {
        model.validate();
        if (n_micro < 1) throw ConfigError("n_micro must be >= 1");
        if (grad_accumulation < 1) throw ConfigError("grad_accumulation must be >= 1");
        if (seq_len < 1 || seq_len > model.max_seq_len)
            throw ConfigError("seq_len must be in [1, model.max_seq_len]");
        if (mask_rate < 0.0 || mask_rate > 1.0) throw ConfigError("mask_rate must be in [0,1]");
        if (warmup_steps < 0 || total_steps < warmup_steps)
            throw ConfigError("need total_steps >= warmup_steps >= 0");
        if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
        if (eval_every < 1 || checkpoint_every < 1)
            throw ConfigError("eval_every and checkpoint_every must be >= 1");
        if (opt.lr < 0) throw ConfigError("lr must be non-negative");
    }
};

namespace config_detail {

inline long long to_ll(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
    }
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + v + "' is not a number");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace config_detail

// Applies one `key=value` assignment; shared by the file parser and the CLI
// `--set` overrides so both go through identical validation.
inline void apply_config_key(TrainConfig& c, const std::string& key, const std::string& value) {
    using namespace config_detail;
    if (key == "objective") c.objective = objective_from_string(value);
    else if (key == "task") c.task = task_from_string(value);
    else if (key == "corpus") c.corpus = value;
    else if (key == "tokenizer") c.tokenizer = value;
    else if (key == "init_from") c.init_from = value;
    else if (key == "n_micro") c.n_micro = static_cast<int>(to_ll(key, value));
    else if (key == "grad_accumulation") c.grad_accumulation = static_cast<int>(to_ll(key, value));
    else if (key == "seq_len") c.seq_len = static_cast<int>(to_ll(key, value));
    else if (key == "mask_rate") c.mask_rate = to_double(key, value);
    else if (key == "total_steps") c.total_steps = to_ll(key, value);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_ll(key, value));
    else if (key == "lr") c.opt.lr = to_double(key, value);
    else if (key == "beta1") c.opt.beta1 = to_double(key, value);
    else if (key == "beta2") c.opt.beta2 = to_double(key, value);
    else if (key == "eps") c.opt.eps = to_double(key, value);
    else if (key == "weight_decay") c.opt.weight_decay = to_double(key, value);
    else if (key == "clip_norm") c.opt.clip_norm = to_double(key, value);
    else if (key == "schedule") c.schedule = schedule_from_string(value);
    else if (key == "warmup_steps") c.warmup_steps = to_ll(key, value);
    else if (key == "eval_every") c.eval_every = to_ll(key, value);
    else if (key == "checkpoint_every") c.checkpoint_every = to_ll(key, value);
    else if (key == "freeze_backbone") c.freeze_backbone = to_bool(key, value);
    else if (key == "log_timing") c.log_timing = to_bool(key, value);
    else if (key == "model.vocab_size") c.model.vocab_size = static_cast<int>(to_ll(key, value));
    else if (key == "model.hidden") c.model.hidden = static_cast<int>(to_ll(key, value));
    else if (key == "model.max_seq_len") c.model.max_seq_len = static_cast<int>(to_ll(key, value));
    else if (key == "model.n_layers") c.model.n_layers = static_cast<int>(to_ll(key, value));
    else if (key == "model.n_heads") c.model.n_heads = static_cast<int>(to_ll(key, value));
    else if (key == "model.d_ff") c.model.d_ff = static_cast<int>(to_ll(key, value));
    else if (key == "model.init_std") c.model.init_std = to_double(key, value);
    else if (key == "model.ln_eps") c.model.ln_eps = to_double(key, value);
    else if (key == "model.final_ln") c.model.final_ln = to_bool(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

inline TrainConfig parse_config_text(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = config_detail::trim(line.substr(0, eq));
        const std::string value = config_detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        apply_config_key(c, key, value);
    }
    return c;
}

inline TrainConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

// Canonical resolved form: every key, fixed order, lossless numbers. Written
// next to run outputs and hashed into the checkpoint digest.
inline std::string config_to_text(const TrainConfig& c) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "objective = "
        << (c.objective == Objective::VanillaCE ? "vanilla_ce" : "headless_cwt") << "\n";
    out << "task = " << (c.task == Task::MLM ? "mlm" : "clm") << "\n";
    out << "corpus = " << c.corpus << "\n";
    out << "tokenizer = " << c.tokenizer << "\n";
    out << "init_from = " << c.init_from << "\n";
    out << "n_micro = " << c.n_micro << "\n";
    out << "grad_accumulation = " << c.grad_accumulation << "\n";
    out << "seq_len = " << c.seq_len << "\n";
    out << "mask_rate = " << c.mask_rate << "\n";
    out << "total_steps = " << c.total_steps << "\n";
    out << "seed = " << c.seed << "\n";
    out << "lr = " << c.opt.lr << "\n";
    out << "beta1 = " << c.opt.beta1 << "\n";
    out << "beta2 = " << c.opt.beta2 << "\n";
    out << "eps = " << c.opt.eps << "\n";
    out << "weight_decay = " << c.opt.weight_decay << "\n";
    out << "clip_norm = " << c.opt.clip_norm << "\n";
    const char* sched = c.schedule == ScheduleKind::Triangular ? "triangular"
                        : c.schedule == ScheduleKind::Cosine   ? "cosine"
                                                               : "constant";
    out << "schedule = " << sched << "\n";
    out << "warmup_steps = " << c.warmup_steps << "\n";
    out << "eval_every = " << c.eval_every << "\n";
    out << "checkpoint_every = " << c.checkpoint_every << "\n";
    out << "freeze_backbone = " << (c.freeze_backbone ? "true" : "false") << "\n";
    out << "log_timing = " << (c.log_timing ? "true" : "false") << "\n";
    out << "model.vocab_size = " << c.model.vocab_size << "\n";
    out << "model.hidden = " << c.model.hidden << "\n";
    out << "model.max_seq_len = " << c.model.max_seq_len << "\n";
    out << "model.n_layers = " << c.model.n_layers << "\n";
    out << "model.n_heads = " << c.model.n_heads << "\n";
    out << "model.d_ff = " << c.model.d_ff << "\n";
    out << "model.init_std = " << c.model.init_std << "\n";
    out << "model.ln_eps = " << c.model.ln_eps << "\n";
    out << "model.final_ln = " << (c.model.final_ln ? "true" : "false") << "\n";
    return out.str();
}

}  // namespace hlm
