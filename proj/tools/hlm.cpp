// hlm: desk-scale language-model laboratory.
//
// Subcommands: train, finetune-head, eval, bench, probe-synonyms,
// export-tokenizer. Exit codes: 0 ok, 2 usage, 3 config, 4 data, 5 numeric.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hlm/bench.hpp"
#include "hlm/blas.hpp"
#include "hlm/bpe.hpp"
#include "hlm/checkpoint.hpp"
#include "hlm/config.hpp"
#include "hlm/eval.hpp"
#include "hlm/train.hpp"

namespace {

using namespace hlm;

struct Common {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> sets;
    long long seed = -1;
    int threads = 1;
    std::string format = "jsonl";
};

TrainConfig resolve_config(const Common& c) {
    if (c.config_path.empty()) throw UsageError("--config is required for this subcommand");
    TrainConfig cfg = load_config_file(c.config_path);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw UsageError("--set expects key=value, got '" + kv + "'");
        apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
    return cfg;
}

void write_text(const std::string& dir, const std::string& name, const std::string& body) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    std::ofstream out(dir + "/" + name, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError("cannot write " + dir + "/" + name);
    out << body;
}

std::string report_jsonl(const EvalReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << "{\"metric\":\"" << r.metric << "\",\"value\":" << r.value
        << ",\"n_examples\":" << r.n_examples << ",\"half_width\":" << r.half_width
        << ",\"checkpoint_digest\":\"" << std::hex << r.checkpoint_digest << "\"}\n";
    return out.str();
}

std::string report_csv(const EvalReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << "metric,value,n_examples,half_width,checkpoint_digest\n";
    out << r.metric << "," << r.value << "," << r.n_examples << "," << r.half_width << ","
        << std::hex << r.checkpoint_digest << "\n";
    return out.str();
}

int run_train(const Common& common) {
    auto cfg = resolve_config(common);
    auto result = train(cfg, common.out_dir);
    std::cout << "trained " << result.ckpt.step << " steps";
    if (!result.checkpoint_path.empty()) std::cout << " -> " << result.checkpoint_path;
    std::cout << "\n";
    return 0;
}

int run_finetune_head(const Common& common, const std::string& from) {
    auto cfg = resolve_config(common);
    auto start = load_checkpoint<float>(from);
    auto result = finetune_lm_head(start, cfg, common.out_dir);
    std::cout << "head recovered over " << result.ckpt.step << " steps";
    if (!result.checkpoint_path.empty()) std::cout << " -> " << result.checkpoint_path;
    std::cout << "\n";
    return 0;
}

int run_eval(const Common& common, const std::string& from, const std::string& metric,
             bool naive_readout) {
    auto cfg = resolve_config(common);
    auto ckpt = load_checkpoint<float>(from);
    const auto tokens = train_detail::load_tokens(cfg);

    EvalOptions opt;
    opt.n_micro = cfg.n_micro;
    opt.seq_len = cfg.seq_len;
    opt.mask_rate = cfg.mask_rate;
    opt.seed = cfg.seed;
    opt.naive_readout = naive_readout;

    EvalReport report;
    if (metric == "perplexity") {
        report = perplexity(ckpt, tokens, cfg.task, opt);
    } else if (metric == "cloze") {
        const auto plen = static_cast<std::size_t>(cfg.seq_len);
        std::vector<std::vector<int>> passages;
        for (std::size_t off = 0; off + plen <= tokens.size() && passages.size() < 512;
             off += plen)
            passages.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(off),
                                  tokens.begin() + static_cast<std::ptrdiff_t>(off + plen));
        report = cloze_accuracy(ckpt, passages, opt);
    } else if (metric == "retrieval_in_batch" || metric == "retrieval_full_vocab") {
        auto batches =
            eval_detail::eval_batches(tokens, cfg.task, opt, ckpt.params.cfg.vocab_size);
        const auto scope = metric == "retrieval_in_batch" ? RetrievalScope::InBatch
                                                          : RetrievalScope::FullVocab;
        report = retrieval_accuracy(ckpt, batches, scope);
    } else {
        throw UsageError("unknown metric '" + metric +
                         "' (perplexity|cloze|retrieval_in_batch|retrieval_full_vocab)");
    }

    const std::string body = common.format == "csv" ? report_csv(report) : report_jsonl(report);
    std::cout << body;
    if (!common.out_dir.empty()) {
        write_text(common.out_dir, "eval_" + metric + "." + common.format, body);
        write_text(common.out_dir, "config_resolved.txt", config_to_text(cfg));
    }
    return 0;
}

int run_bench(const Common& common, std::vector<int> grid, int K, int D, int reps,
              long long budget_mb) {
    BenchOptions opt;
    if (!grid.empty()) opt.vocab_grid = std::move(grid);
    opt.K = K;
    opt.D = D;
    opt.reps = reps;
    opt.memory_budget_bytes = budget_mb << 20;
    auto report = bench_loss_scaling(opt);
    const std::string body =
        common.format == "csv" ? bench_to_csv(report) : bench_to_jsonl(report);
    std::cout << body;
    if (!common.out_dir.empty()) write_text(common.out_dir, "bench." + common.format, body);
    return 0;
}

std::string synonym_summary_text(const SynonymSummary& s, const SynonymPairSet& set,
                                 const std::string& format) {
    std::ostringstream out;
    out.precision(17);
    if (format == "csv") {
        out << "bin_low,bin_high,count\n";
        for (std::size_t b = 0; b < s.histogram.size(); ++b)
            out << (-1.0 + 0.05 * static_cast<double>(b)) << ","
                << (-1.0 + 0.05 * static_cast<double>(b + 1)) << "," << s.histogram[b] << "\n";
        out << "# mean=" << s.mean << " included=" << s.n_included
            << " excluded_zero_norm=" << s.n_excluded_zero_norm
            << " skipped_oov=" << set.n_skipped_oov << "\n";
    } else {
        out << "{\"mean\":" << s.mean << ",\"n_included\":" << s.n_included
            << ",\"n_excluded_zero_norm\":" << s.n_excluded_zero_norm
            << ",\"n_skipped_oov\":" << set.n_skipped_oov << ",\"histogram\":[";
        for (std::size_t b = 0; b < s.histogram.size(); ++b)
            out << (b ? "," : "") << s.histogram[b];
        out << "]}\n";
    }
    return out.str();
}

int run_probe_synonyms(const Common& common, const std::string& from,
                       const std::string& compare, const std::string& pairs_path,
                       const std::string& tokenizer_path) {
    auto tok = TokenizerModel::load(tokenizer_path);
    auto set = load_synonym_pairs(pairs_path, tok);
    if (set.pairs.empty()) throw DataError("no usable synonym pairs after filtering");
    auto ckpt = load_checkpoint<float>(from);
    auto summary = synonym_cosine(ckpt.params.token_emb, set.pairs);
    std::string body = synonym_summary_text(summary, set, common.format);
    if (!compare.empty()) {
        auto other = load_checkpoint<float>(compare);
        const double shift =
            summary.mean - synonym_cosine(other.params.token_emb, set.pairs).mean;
        std::ostringstream extra;
        extra.precision(17);
        extra << "{\"mean_shift\":" << shift << "}\n";
        body += extra.str();
    }
    std::cout << body;
    if (!common.out_dir.empty())
        write_text(common.out_dir, "synonyms." + common.format, body);
    return 0;
}

int run_export_tokenizer(const std::string& corpus, int vocab_size,
                         const std::string& out_file) {
    auto text = read_text_file(corpus);
    auto tok = train_bpe(text, vocab_size);
    tok.save(out_file);
    std::cout << "tokenizer with " << tok.vocab().size() << " tokens -> " << out_file << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale language-model training laboratory"};
    app.require_subcommand(1);

    Common common;
    app.add_option("--threads", common.threads, "compute threads (1 keeps runs deterministic)")
        ->capture_default_str();

    auto add_common = [&](CLI::App* sub, bool with_config) {
        if (with_config) sub->add_option("--config", common.config_path, "config file path");
        sub->add_option("--out", common.out_dir, "output directory");
        sub->add_option("--set", common.sets, "config override key=value (repeatable)");
        sub->add_option("--seed", common.seed, "seed override");
        sub->add_option("--format", common.format, "report format")
            ->check(CLI::IsMember({"csv", "jsonl"}));
    };

    auto* train_cmd = app.add_subcommand("train", "pretrain a model");
    add_common(train_cmd, true);

    auto* ft_cmd = app.add_subcommand("finetune-head", "recover an LM head on a headless model");
    std::string ft_from;
    add_common(ft_cmd, true);
    ft_cmd->add_option("--from", ft_from, "headless checkpoint")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_from, eval_metric = "perplexity";
    bool naive_readout = false;
    add_common(eval_cmd, true);
    eval_cmd->add_option("--from", eval_from, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--metric", eval_metric,
                         "perplexity|cloze|retrieval_in_batch|retrieval_full_vocab");
    eval_cmd->add_flag("--naive-readout", naive_readout,
                       "score headless models through e_theta^T without a recovered head");

    auto* bench_cmd = app.add_subcommand("bench", "loss-scaling benchmark");
    std::vector<int> bench_grid;
    int bench_k = 256, bench_d = 128, bench_reps = 20;
    long long bench_budget_mb = 4096;
    add_common(bench_cmd, false);
    bench_cmd->add_option("--grid", bench_grid, "vocabulary sizes");
    bench_cmd->add_option("--bench-k", bench_k, "supervised positions K");
    bench_cmd->add_option("--bench-d", bench_d, "hidden width D");
    bench_cmd->add_option("--reps", bench_reps, "timed repetitions (>= 20)");
    bench_cmd->add_option("--budget-mb", bench_budget_mb, "per-point memory budget");

    auto* probe_cmd = app.add_subcommand("probe-synonyms", "embedding synonym-cosine probe");
    std::string probe_from, probe_compare, probe_pairs, probe_tok;
    add_common(probe_cmd, false);
    probe_cmd->add_option("--from", probe_from, "checkpoint")->required();
    probe_cmd->add_option("--compare", probe_compare, "second checkpoint for the mean shift");
    probe_cmd->add_option("--pairs", probe_pairs, "tab-separated synonym pair file")->required();
    probe_cmd->add_option("--tokenizer", probe_tok, "tokenizer file")->required();

    auto* tok_cmd = app.add_subcommand("export-tokenizer", "train and save a BPE tokenizer");
    std::string tok_corpus, tok_out;
    int tok_vocab = 2000;
    tok_cmd->add_option("--corpus", tok_corpus, "training text")->required();
    tok_cmd->add_option("--vocab-size", tok_vocab, "target vocabulary size");
    tok_cmd->add_option("--out-file", tok_out, "tokenizer output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            std::cout << app.help();
            return 0;
        }
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        set_compute_threads(common.threads);
        if (*train_cmd) return run_train(common);
        if (*ft_cmd) return run_finetune_head(common, ft_from);
        if (*eval_cmd) return run_eval(common, eval_from, eval_metric, naive_readout);
        if (*bench_cmd)
            return run_bench(common, bench_grid, bench_k, bench_d, bench_reps, bench_budget_mb);
        if (*probe_cmd)
            return run_probe_synonyms(common, probe_from, probe_compare, probe_pairs, probe_tok);
        if (*tok_cmd) return run_export_tokenizer(tok_corpus, tok_vocab, tok_out);
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
}
