#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "hlm/batch.hpp"
#include "hlm/checkpoint.hpp"
#include "hlm/config.hpp"
#include "hlm/losses.hpp"
#include "hlm/model.hpp"
#include "hlm/optimizer.hpp"

namespace hlm {

struct MetricsRecord {
    long long step = 0;
    double loss = 0, lr = 0, tok_per_s = 0, aux_acc = 0;
    std::size_t mem_bytes = 0;
};

// One self-contained JSON object per line, fixed field order, fixed number
// formatting so identical runs produce byte-identical logs. tok_per_s is a
// wall-clock measurement and therefore logged as 0 unless timing was
// explicitly requested.
inline std::string metrics_line(const MetricsRecord& r) {
    char num[64];
    std::string out = "{\"step\":" + std::to_string(r.step);
    auto field = [&](const char* name, double v) {
        std::snprintf(num, sizeof(num), "%.17g", v);
        out += std::string(",\"") + name + "\":" + num;
    };
    field("loss", r.loss);
    field("lr", r.lr);
    field("tok_per_s", r.tok_per_s);
    field("aux_acc", r.aux_acc);
    out += ",\"mem_bytes\":" + std::to_string(r.mem_bytes) + "}";
    return out;
}

struct TrainResult {
    Checkpoint<float> ckpt;
    std::vector<MetricsRecord> metrics;
    std::string metrics_path;
    std::string checkpoint_path;
};

namespace train_detail {

// When no tokenizer is supplied the corpus is consumed as raw bytes shifted
// past the special ids (smoke-test convenience; real runs use a trained BPE
// model).
inline std::vector<int> raw_byte_tokens(const std::string& text, int vocab_size) {
    if (vocab_size < Vocab::kNumSpecials + 256)
        throw ConfigError("raw-byte mode needs vocab_size >= " +
                          std::to_string(Vocab::kNumSpecials + 256) +
                          "; supply a tokenizer for smaller vocabularies");
    std::vector<int> ids;
    ids.reserve(text.size() + 1);
    ids.push_back(Vocab::BOS);
    for (unsigned char c : text) ids.push_back(Vocab::kNumSpecials + static_cast<int>(c));
    return ids;
}

inline std::vector<int> load_tokens(const TrainConfig& cfg) {
    if (cfg.corpus.empty()) throw ConfigError("no corpus path configured");
    if (cfg.tokenizer.empty())
        return raw_byte_tokens(read_text_file(cfg.corpus), cfg.model.vocab_size);
    auto tok = TokenizerModel::load(cfg.tokenizer);
    if (tok.vocab().size() > cfg.model.vocab_size)
        throw ConfigError("tokenizer vocab " + std::to_string(tok.vocab().size()) +
                          " exceeds model.vocab_size " + std::to_string(cfg.model.vocab_size));
    return load_corpus_tokens(tok, {cfg.corpus});
}

// Deterministic batch for (seed, step, micro): a per-batch derived seed keys
// the masking noise, a window offset keys the data order.
inline Batch batch_for(const std::vector<int>& tokens, const TrainConfig& cfg, long long step,
                       int micro) {
    const std::size_t N = static_cast<std::size_t>(cfg.n_micro);
    const std::size_t L = static_cast<std::size_t>(cfg.seq_len);
    const std::size_t need = cfg.task == Task::MLM ? N * L : N * (L + 1);
    if (tokens.size() < need)
        throw DataError("corpus too small: need " + std::to_string(need) + " tokens, have " +
                        std::to_string(tokens.size()));
    RngStream data(cfg.seed, "data_order");
    const std::uint64_t span = static_cast<std::uint64_t>(tokens.size() - need) + 1;
    const std::size_t offset = static_cast<std::size_t>(
        data.below(span, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(micro)));
    std::span<const int> window(tokens.data() + offset, tokens.size() - offset);
    if (cfg.task == Task::CLM) return make_clm_batch(window, N, L);
    RngStream mix(cfg.seed, "batch_seed");
    const std::uint64_t batch_seed =
        mix.bits(static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(micro));
    return make_mlm_batch(window, N, L, cfg.mask_rate, batch_seed, cfg.model.vocab_size);
}

template <class T>
LossOutput<T> objective_loss(Tape<T>& tape, const Parameters<T>& params, Objective objective,
                             const Batch& batch) {
    auto O = forward_backbone(tape, params, batch.X_tilde, batch.N, batch.L);
    if (objective == Objective::HeadlessCWT) return cwt_loss(tape, O, params.token_emb, batch);
    auto rows = take_rows(tape, O, batch.flat_positions());
    return ce_loss_rows(tape, tied_logits(tape, params, rows), batch.targets);
}

struct LoopSink {
    std::ofstream metrics_file;
    std::vector<MetricsRecord>* records = nullptr;
    std::string out_dir;
};

// The core optimizer loop shared by pretraining and head recovery: one tape
// per step, micro-losses averaged over the accumulation factor, metrics every
// eval_every steps, checkpoints every checkpoint_every.
inline void run_loop(Checkpoint<float>& ckpt, OptimizerState<float>& opt_state,
                     const std::vector<Tensor<float>>& trainable, const TrainConfig& cfg,
                     Objective objective, const std::vector<int>& tokens, LoopSink& sink) {
    const Schedule sched{cfg.schedule, cfg.opt.lr, cfg.warmup_steps, cfg.total_steps};
    const std::size_t step_tokens = static_cast<std::size_t>(cfg.n_micro) *
                                    static_cast<std::size_t>(cfg.seq_len) *
                                    static_cast<std::size_t>(cfg.grad_accumulation);

    auto emit = [&](const MetricsRecord& rec) {
        if (sink.records) sink.records->push_back(rec);
        if (sink.metrics_file.is_open()) {
            sink.metrics_file << metrics_line(rec) << "\n";
            sink.metrics_file.flush();
        }
    };

    for (long long step = ckpt.step; step < cfg.total_steps; ++step) {
        const double lr = lr_at(sched, step + 1);
        const auto t0 = std::chrono::steady_clock::now();

        AllocationScope mem_scope;
        Tape<float> tape;
        Tensor<float> total;
        double acc_sum = 0;
        const float inv_a = 1.0f / static_cast<float>(cfg.grad_accumulation);
        try {
            for (int micro = 0; micro < cfg.grad_accumulation; ++micro) {
                auto batch = batch_for(tokens, cfg, step, micro);
                auto out = objective_loss(tape, ckpt.params, objective, batch);
                acc_sum += out.aux_accuracy;
                auto scaled = scale(tape, out.loss, inv_a);
                total = total ? add(tape, total, scaled) : scaled;
            }
            tape.backward(total);
            adamw_step(trainable, opt_state, cfg.opt, lr);
        } catch (const NumericError&) {
            MetricsRecord rec;
            rec.step = step + 1;
            rec.loss = std::numeric_limits<double>::quiet_NaN();
            rec.lr = lr;
            emit(rec);
            throw;
        }
        ckpt.step = step + 1;

        if (ckpt.step % cfg.eval_every == 0 || ckpt.step == cfg.total_steps) {
            MetricsRecord rec;
            rec.step = ckpt.step;
            rec.loss = static_cast<double>(total->at(0));
            rec.lr = lr;
            rec.aux_acc = acc_sum / cfg.grad_accumulation;
            rec.mem_bytes = mem_scope.peak_bytes();
            if (cfg.log_timing) {
                const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
                rec.tok_per_s = static_cast<double>(step_tokens) / dt.count();
            }
            emit(rec);
        }
        if (!sink.out_dir.empty() &&
            (ckpt.step % cfg.checkpoint_every == 0 || ckpt.step == cfg.total_steps)) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_step%08lld.bin",
                          static_cast<long long>(ckpt.step));
            // a frozen-backbone optimizer state covers a parameter subset and
            // cannot ride along in the checkpoint
            if (opt_state.m.size() == ckpt.params.all().size()) ckpt.opt = opt_state;
            save_checkpoint(ckpt, sink.out_dir + "/" + name);
        }
    }
    if (opt_state.m.size() == ckpt.params.all().size()) ckpt.opt = opt_state;
}

inline LoopSink make_sink(const std::string& out_dir, std::vector<MetricsRecord>* records,
                          const TrainConfig& cfg) {
    LoopSink sink;
    sink.records = records;
    sink.out_dir = out_dir;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream snap(out_dir + "/config_resolved.txt", std::ios::trunc);
        snap << config_to_text(cfg);
        sink.metrics_file.open(out_dir + "/metrics.jsonl", std::ios::app);
        if (!sink.metrics_file) throw DataError("cannot open metrics log in " + out_dir);
    }
    return sink;
}

}  // namespace train_detail

// Pretrains from scratch (or resumes from cfg.init_from) and returns the
// final checkpoint. out_dir may be empty to skip all file output.
inline TrainResult train(TrainConfig cfg, const std::string& out_dir = "") {
    cfg.model.causal = cfg.task == Task::CLM;
    cfg.validate();
    const auto tokens = train_detail::load_tokens(cfg);

    TrainResult result;
    OptimizerState<float> opt_state;
    if (!cfg.init_from.empty()) {
        result.ckpt = load_checkpoint<float>(cfg.init_from);
        if (result.ckpt.params.has_untied_head())
            throw ContractError("train resumes pretraining checkpoints; use finetune_lm_head "
                                "for head-recovered models");
        if (!result.ckpt.opt)
            throw ContractError("cannot resume: checkpoint has no optimizer state");
        opt_state = *result.ckpt.opt;
        if (result.ckpt.step > cfg.total_steps)
            throw ConfigError("checkpoint is already past total_steps");
    } else {
        result.ckpt.params = init_params<float>(cfg.model, cfg.seed);
        result.ckpt.stage = cfg.objective == Objective::HeadlessCWT ? Stage::PretrainedHeadless
                                                                    : Stage::PretrainedVanilla;
        result.ckpt.seed = cfg.seed;
        opt_state = OptimizerState<float>::for_params(result.ckpt.params.all());
    }
    result.ckpt.config_digest = digest_bytes(config_to_text(cfg));

    auto sink = train_detail::make_sink(out_dir, &result.metrics, cfg);
    train_detail::run_loop(result.ckpt, opt_state, result.ckpt.params.all(), cfg, cfg.objective,
                           tokens, sink);

    if (!out_dir.empty()) {
        result.metrics_path = out_dir + "/metrics.jsonl";
        result.checkpoint_path = out_dir + "/ckpt_final.bin";
        save_checkpoint(result.ckpt, result.checkpoint_path);
    }
    return result;
}

// Head recovery: attach an untied LM head initialized as a copy of e_theta
// (so step-0 logits equal the tied readout bitwise) and fine-tune with the
// predictive CE objective. The backbone trains too unless freeze_backbone.
inline TrainResult finetune_lm_head(const Checkpoint<float>& start, TrainConfig cfg,
                                    const std::string& out_dir = "") {
    if (start.stage != Stage::PretrainedHeadless)
        throw ContractError("finetune_lm_head requires a pretrained_headless checkpoint");
    cfg.model = start.params.cfg;
    cfg.model.causal = cfg.task == Task::CLM;
    cfg.validate();
    const auto tokens = train_detail::load_tokens(cfg);

    TrainResult result;
    result.ckpt = start;
    result.ckpt.stage = Stage::HeadRecovered;
    result.ckpt.step = 0;
    result.ckpt.opt.reset();
    result.ckpt.config_digest = digest_bytes(config_to_text(cfg));
    auto& params = result.ckpt.params;
    params.untied_head = make_tensor<float>(params.token_emb->shape(), true);
    std::copy(params.token_emb->values().begin(), params.token_emb->values().end(),
              params.untied_head->data());

    std::vector<Tensor<float>> trainable;
    if (cfg.freeze_backbone) trainable = {params.untied_head};
    else trainable = params.all();
    auto opt_state = OptimizerState<float>::for_params(trainable);

    auto sink = train_detail::make_sink(out_dir, &result.metrics, cfg);
    // checkpoints written by the loop would carry a mismatched optimizer
    // state when the backbone is frozen; the final save below drops it
    train_detail::run_loop(result.ckpt, opt_state, trainable, cfg, Objective::VanillaCE, tokens,
                           sink);

    result.ckpt.opt.reset();
    if (!cfg.freeze_backbone) result.ckpt.opt = opt_state;
    if (!out_dir.empty()) {
        result.metrics_path = out_dir + "/metrics.jsonl";
        result.checkpoint_path = out_dir + "/ckpt_final.bin";
        save_checkpoint(result.ckpt, result.checkpoint_path);
    }
    return result;
}

}  // namespace hlm
