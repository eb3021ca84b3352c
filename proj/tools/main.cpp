// hvat command-line tool: train / eval / gradcheck / count / trace.
//
// Exit codes: 0 ok, 1 unexpected error, 2 bad config or input, 3 training
// divergence, 4 checkpoint problem, 5 gradient check failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hvat/analysis.hpp"
#include "hvat/checkpoint.hpp"
#include "hvat/csv.hpp"
#include "hvat/gradcheck.hpp"
#include "hvat/gradcheck_suite.hpp"
#include "hvat/io.hpp"
#include "hvat/model.hpp"
#include "hvat/run_config.hpp"
#include "hvat/tasks.hpp"
#include "hvat/training.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitCheckpoint = 4;
constexpr int kExitGradcheck = 5;

std::optional<uint64_t> env_seed() {
    const char* s = std::getenv("HVAT_SEED");
    if (s == nullptr || *s == '\0') return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (errno != 0 || end == s || *end != '\0') {
        throw hvat::ConfigError("HVAT_SEED is not an unsigned integer: '" + std::string(s) + "'");
    }
    return static_cast<uint64_t>(v);
}

std::vector<int32_t> parse_token_list(const std::string& text, const char* what) {
    std::vector<int32_t> out;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string item = text.substr(pos, comma - pos);
        char* end = nullptr;
        errno = 0;
        const long v = std::strtol(item.c_str(), &end, 10);
        if (errno != 0 || end == item.c_str() || *end != '\0') {
            throw hvat::InputError(std::string(what) + ": '" + item +
                                   "' is not an integer token id");
        }
        out.push_back(static_cast<int32_t>(v));
        pos = comma + 1;
    }
    return out;
}

// "N=3,D=8,M=2,Da=2" (any subset, any order) applied over the defaults
struct GradcheckDims {
    size_t n = 3, d = 8, m = 2, d_a = 2;
};

GradcheckDims parse_dims(const std::string& text) {
    GradcheckDims dims;
    if (text.empty()) return dims;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string item = text.substr(pos, comma - pos);
        const size_t eq = item.find('=');
        if (eq == std::string::npos) {
            throw hvat::ConfigError("--dims: expected KEY=VALUE, got '" + item + "'");
        }
        const std::string key = item.substr(0, eq);
        char* end = nullptr;
        errno = 0;
        const long v = std::strtol(item.c_str() + eq + 1, &end, 10);
        if (errno != 0 || end == item.c_str() + eq + 1 || *end != '\0' || v <= 0) {
            throw hvat::ConfigError("--dims: bad value in '" + item + "'");
        }
        if (key == "N") {
            dims.n = static_cast<size_t>(v);
        } else if (key == "D") {
            dims.d = static_cast<size_t>(v);
        } else if (key == "M") {
            dims.m = static_cast<size_t>(v);
        } else if (key == "Da") {
            dims.d_a = static_cast<size_t>(v);
        } else {
            throw hvat::ConfigError("--dims: unknown key '" + key + "' (use N, D, M, Da)");
        }
        pos = comma + 1;
    }
    return dims;
}

void print_eval(const hvat::EvalResult& ev) {
    std::cout << "loss=" << hvat::format_double(ev.loss)
              << " token_accuracy=" << hvat::format_double(ev.token_accuracy)
              << " ppl=" << hvat::format_double(ev.ppl) << "\n";
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              std::optional<uint64_t> seed_override) {
    hvat::RunConfig rc = hvat::load_run_config_file(config_path);
    if (!out_override.empty()) rc.io.out_dir = out_override;
    if (auto es = env_seed()) {
        rc.model.seed = *es;
        rc.train.seed = *es;
    }
    if (seed_override) {  // explicit flag beats the environment
        rc.model.seed = *seed_override;
        rc.train.seed = *seed_override;
    }
    rc.validate();
    std::filesystem::create_directories(rc.io.out_dir);

    hvat::Seq2SeqModel<float> model = hvat::build<float>(rc.model);
    const auto train_data =
        hvat::generate_task(rc.train.task, rc.train.seed, rc.train.train_samples,
                            rc.train.seq_len_lo, rc.train.seq_len_hi, rc.train.vocab_size);
    const auto val_data =
        hvat::generate_task(rc.train.task, rc.train.seed + 1, rc.train.val_samples,
                            rc.train.seq_len_lo, rc.train.seq_len_hi, rc.train.vocab_size);

    const std::vector<hvat::MetricsRow> metrics = hvat::train(model, rc.train, train_data, val_data);

    const std::string metrics_path = rc.io.out_dir + "/metrics.csv";
    const std::string ckpt_path = rc.io.resolved_checkpoint_path();
    hvat::write_metrics_csv(metrics_path, metrics);
    hvat::save_checkpoint(model, ckpt_path);
    hvat::write_file_atomic(rc.io.out_dir + "/effective-config.json",
                            hvat::effective_config_json(rc));

    const hvat::MetricsRow& last = metrics.back();
    std::cout << "trained variant=" << hvat::to_string(rc.model.variant)
              << " task=" << hvat::to_string(rc.train.task) << " rows=" << metrics.size() << "\n";
    std::cout << "final " << last.split << " epoch=" << last.epoch
              << " loss=" << hvat::format_double(last.loss)
              << " token_accuracy=" << hvat::format_double(last.token_accuracy)
              << " ppl=" << hvat::format_double(last.ppl) << "\n";
    std::cout << "wrote " << metrics_path << "\n";
    std::cout << "wrote " << ckpt_path << "\n";
    std::cout << "wrote " << rc.io.out_dir << "/effective-config.json" << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& task_str, uint64_t seed,
             size_t count, size_t len_lo, size_t len_hi, size_t decode_n) {
    hvat::Seq2SeqModel<float> model = hvat::load_checkpoint(ckpt_path);
    if (auto es = env_seed()) seed = *es;
    const auto data = hvat::generate_task(hvat::parse_task(task_str), seed, count, len_lo,
                                          len_hi, model.config.vocab_size);
    print_eval(hvat::evaluate(model, data));

    if (decode_n > 0) {
        const size_t shown = std::min(decode_n, data.size());
        size_t exact = 0;
        for (size_t i = 0; i < shown; ++i) {
            const auto out = hvat::greedy_decode(model, data[i].src, model.config.max_len,
                                                 hvat::kBosId, hvat::kEosId);
            if (out == data[i].tgt) ++exact;
        }
        std::cout << "greedy_exact_match=" << exact << "/" << shown << "\n";
    }
    return 0;
}

int cmd_gradcheck(const std::string& variant_str, const std::string& dims_str, double h,
                  double tolerance, bool break_backward) {
    const GradcheckDims dims = parse_dims(dims_str);
    std::vector<hvat::BlockVariant> variants;
    if (variant_str == "all") {
        variants = hvat::all_variants();
    } else {
        variants = {hvat::parse_variant(variant_str)};
    }

    std::vector<hvat::GradCheckCase> cases = hvat::builtin_gradcheck_cases();
    std::vector<hvat::GradCheckCase> blocks =
        hvat::block_gradcheck_cases(dims.n, dims.d, dims.m, dims.d_a, variants);
    cases.insert(cases.end(), std::make_move_iterator(blocks.begin()),
                 std::make_move_iterator(blocks.end()));
    if (break_backward) cases.push_back(hvat::broken_backward_case());

    const bool ok = hvat::run_gradcheck_cases(cases, h, tolerance, std::cout);
    return ok ? 0 : kExitGradcheck;
}

int cmd_count(const std::string& config_path, const std::string& ckpt_path,
              const std::string& out_dir, size_t n) {
    if (config_path.empty() == ckpt_path.empty()) {
        throw hvat::ConfigError("count: pass exactly one of --config and --checkpoint");
    }
    hvat::Seq2SeqModel<float> model =
        ckpt_path.empty() ? hvat::build<float>(hvat::load_run_config_file(config_path).model)
                          : hvat::load_checkpoint(ckpt_path);

    const hvat::ParamReport rep = hvat::count_params(model);
    const hvat::AttentionConfig acfg = model.config.attention_config();
    const size_t ffn_width = model.config.resolved_ffn_width();
    const hvat::FlopReport est = hvat::estimate_flops(acfg, ffn_width, n);
    const hvat::FlopReport meas = hvat::measure_flops<double>(acfg, ffn_width, n);

    std::cout << "parameters (variant=" << hvat::to_string(model.config.variant) << ")\n";
    for (const auto& [name, count] : rep.category_counts) {
        std::cout << "  " << name << ": " << count << "\n";
    }
    std::cout << "  total: " << rep.total << "\n";
    std::cout << "per attention sublayer (" << rep.attention_sublayers << " sublayers)\n";
    std::cout << "  multi_head: enumerated " << rep.multihead_per_sublayer
              << ", published prediction " << rep.paper_multihead_form << "\n";
    std::cout << "  horizontal_extra: enumerated " << rep.horizontal_per_sublayer
              << ", closed form " << rep.horizontal_form << ", published prediction "
              << rep.paper_horizontal_form << "\n";
    std::cout << "  vertical_extra: enumerated " << rep.vertical_per_sublayer
              << ", closed form " << rep.vertical_form << ", published prediction "
              << rep.paper_vertical_form << "\n";
    for (const auto& d : rep.discrepancies) {
        std::cout << "  discrepancy " << d.category << ": enumerated " << d.enumerated
                  << " != published " << d.paper_prediction << "\n";
    }
    std::cout << "flops per block at n=" << est.n << "\n";
    std::cout << "  sdpa_total: estimated " << est.sdpa_total << ", measured " << meas.sdpa_total
              << "\n";
    std::cout << "  horizontal_extra: estimated " << est.horizontal_extra << ", measured "
              << meas.horizontal_extra << "\n";
    std::cout << "  vertical_extra: estimated " << est.vertical_extra << ", measured "
              << meas.vertical_extra << "\n";
    std::cout << "  ffn: estimated " << est.ffn << ", measured " << meas.ffn << "\n";

    std::filesystem::create_directories(out_dir);
    std::string pcsv = "metric,value\n";
    auto prow = [&pcsv](const std::string& k, uint64_t v) {
        pcsv += k + "," + std::to_string(v) + "\n";
    };
    prow("total", rep.total);
    for (const auto& [name, count] : rep.category_counts) prow("params." + name, count);
    prow("attention_sublayers", rep.attention_sublayers);
    prow("multihead_per_sublayer", rep.multihead_per_sublayer);
    prow("horizontal_per_sublayer", rep.horizontal_per_sublayer);
    prow("vertical_per_sublayer", rep.vertical_per_sublayer);
    prow("horizontal_form", rep.horizontal_form);
    prow("vertical_form", rep.vertical_form);
    prow("paper_multihead_form", rep.paper_multihead_form);
    prow("paper_horizontal_form", rep.paper_horizontal_form);
    prow("paper_vertical_form", rep.paper_vertical_form);
    for (const auto& d : rep.discrepancies) {
        prow("discrepancy." + d.category + ".enumerated", d.enumerated);
        prow("discrepancy." + d.category + ".published", d.paper_prediction);
    }
    hvat::write_file_atomic(out_dir + "/param_report.csv", pcsv);

    std::string fcsv = "metric,value\n";
    auto frow = [&fcsv](const std::string& k, uint64_t v) {
        fcsv += k + "," + std::to_string(v) + "\n";
    };
    frow("n", est.n);
    frow("sdpa_total", est.sdpa_total);
    frow("horizontal_extra", est.horizontal_extra);
    frow("vertical_extra", est.vertical_extra);
    frow("ffn", est.ffn);
    frow("measured.sdpa_total", meas.sdpa_total);
    frow("measured.horizontal_extra", meas.horizontal_extra);
    frow("measured.vertical_extra", meas.vertical_extra);
    frow("measured.ffn", meas.ffn);
    hvat::write_file_atomic(out_dir + "/flop_report.csv", fcsv);

    std::cout << "wrote " << out_dir << "/param_report.csv and " << out_dir
              << "/flop_report.csv\n";
    return 0;
}

std::string trace_csv(const hvat::TraceSink<float>& sink, const hvat::TraceRequest& req) {
    std::string out = "block,sublayer,kind,head,row,col,value\n";
    for (const auto& rec : sink) {
        auto line = [&](const char* kind, size_t head, size_t row, size_t col, double v) {
            out += rec.block;
            out += ',';
            out += rec.sublayer;
            out += ',';
            out += kind;
            out += ',';
            out += std::to_string(head) + "," + std::to_string(row) + "," + std::to_string(col);
            out += ',';
            out += hvat::format_double(v);
            out += '\n';
        };
        const auto& r = rec.record;
        if (req.alpha && r.alpha.size() > 0) {
            for (size_t m = 0; m < r.alpha.size(); ++m) {
                line("alpha", m, 0, 0, static_cast<double>(r.alpha(m)));
            }
        }
        if (req.beta && r.beta.size() > 0) {
            for (size_t j = 0; j < r.beta.size(); ++j) {
                line("beta", 0, 0, j, static_cast<double>(r.beta(j)));
            }
        }
        if (req.attn) {
            for (size_t m = 0; m < r.head_attn.size(); ++m) {
                const auto& t = r.head_attn[m];
                for (size_t i = 0; i < t.dim(0); ++i) {
                    for (size_t j = 0; j < t.dim(1); ++j) {
                        line("attn", m, i, j, static_cast<double>(t(i, j)));
                    }
                }
            }
        }
    }
    return out;
}

int cmd_trace(const std::string& ckpt_path, const std::string& src_str, const std::string& tgt_str,
              bool alpha, bool beta, bool attn, const std::string& out_path) {
    hvat::Seq2SeqModel<float> model = hvat::load_checkpoint(ckpt_path);
    const std::vector<int32_t> src = parse_token_list(src_str, "trace --src");
    const std::vector<int32_t> payload =
        tgt_str.empty() ? src : parse_token_list(tgt_str, "trace --tgt");
    std::vector<int32_t> dec = {hvat::kBosId};
    dec.insert(dec.end(), payload.begin(), payload.end());

    const hvat::TraceRequest req{alpha, beta, attn};
    const hvat::TraceSink<float> sink = hvat::trace_attention(model, src, dec, req);
    const std::string csv = trace_csv(sink, req);
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        hvat::write_file_atomic(out_path, csv);
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-augmented encoder-decoder transformer toolkit"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train a model from a run-config JSON file");
    std::string train_config;
    std::string train_out;
    uint64_t train_seed_override = 0;
    bool train_seed_set = false;
    train->add_option("--config", train_config, "run config JSON path")->required();
    train->add_option("--out", train_out, "output directory (overrides io.out_dir)");
    train->add_option("--seed-override", train_seed_override, "override model+train seeds")
        ->each([&train_seed_set](const std::string&) { train_seed_set = true; });

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on freshly generated data");
    std::string eval_ckpt, eval_task = "copy";
    uint64_t eval_seed = 1;
    size_t eval_count = 64, eval_lo = 3, eval_hi = 8, eval_decode = 0;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--task", eval_task, "copy | reverse | sort");
    eval->add_option("--seed", eval_seed, "data seed");
    eval->add_option("--count", eval_count, "number of sequence pairs");
    eval->add_option("--len-lo", eval_lo, "minimum payload length");
    eval->add_option("--len-hi", eval_hi, "maximum payload length");
    eval->add_option("--decode", eval_decode, "also greedy-decode this many pairs");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_variant = "all", gc_dims;
    double gc_h = 1e-5, gc_tol = 1e-4;
    bool gc_break = false;
    gradcheck->add_option("--variant", gc_variant, "all | baseline | horizontal | vertical | both");
    gradcheck->add_option("--dims", gc_dims, "block dims, e.g. N=3,D=8,M=2,Da=2");
    gradcheck->add_option("--step", gc_h, "central-difference step");
    gradcheck->add_option("--tolerance", gc_tol, "max relative error allowed");
    gradcheck->add_flag("--break-backward", gc_break, "include a deliberately wrong backward")
        ->group("");  // hidden: negative-control fixture

    // count
    auto* count = app.add_subcommand("count", "parameter and FLOP accounting reports");
    std::string count_config, count_ckpt, count_out = ".";
    size_t count_n = 16;
    count->add_option("--config", count_config, "run config JSON path");
    count->add_option("--checkpoint", count_ckpt, "checkpoint path");
    count->add_option("--out", count_out, "directory for the CSV reports");
    count->add_option("--n", count_n, "sequence length for the FLOP report");

    // trace
    auto* trace = app.add_subcommand("trace", "capture alpha/beta/attention values as CSV");
    std::string trace_ckpt, trace_src, trace_tgt, trace_out;
    bool trace_alpha = false, trace_beta = false, trace_attn = false;
    trace->add_option("--checkpoint", trace_ckpt, "checkpoint path")->required();
    trace->add_option("--src", trace_src, "comma-separated source token ids")->required();
    trace->add_option("--tgt", trace_tgt, "comma-separated target token ids (default: source)");
    trace->add_flag("--alpha", trace_alpha, "record head weights");
    trace->add_flag("--beta", trace_beta, "record channel gates");
    trace->add_flag("--attn", trace_attn, "record per-head attention matrices");
    trace->add_option("--out", trace_out, "CSV output path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);  // --help / --version
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (train->parsed()) {
            return cmd_train(train_config, train_out,
                             train_seed_set ? std::optional<uint64_t>(train_seed_override)
                                            : std::nullopt);
        }
        if (eval->parsed()) {
            return cmd_eval(eval_ckpt, eval_task, eval_seed, eval_count, eval_lo, eval_hi,
                            eval_decode);
        }
        if (gradcheck->parsed()) {
            return cmd_gradcheck(gc_variant, gc_dims, gc_h, gc_tol, gc_break);
        }
        if (count->parsed()) {
            return cmd_count(count_config, count_ckpt, count_out, count_n);
        }
        if (trace->parsed()) {
            return cmd_trace(trace_ckpt, trace_src, trace_tgt, trace_alpha, trace_beta,
                             trace_attn, trace_out);
        }
        std::cerr << "error: no subcommand\n";
        return kExitConfig;
    } catch (const hvat::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const hvat::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const hvat::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const hvat::CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
