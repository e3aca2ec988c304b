#include "pdforge/cli.hpp"

#include "pdforge/config_json.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace pdforge::cli {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string human_bytes(double bytes) {
    char buf[64];
    if (bytes >= 1e15) {
        std::snprintf(buf, sizeof(buf), "%.3f PB", bytes / 1e15);
    } else if (bytes >= 1e12) {
        std::snprintf(buf, sizeof(buf), "%.3f TB", bytes / 1e12);
    } else if (bytes >= 1e9) {
        std::snprintf(buf, sizeof(buf), "%.3f GB", bytes / 1e9);
    } else if (bytes >= 1e6) {
        std::snprintf(buf, sizeof(buf), "%.3f MB", bytes / 1e6);
    } else {
        std::snprintf(buf, sizeof(buf), "%.0f B", bytes);
    }
    return buf;
}

void require_file(const std::filesystem::path& path, const char* what) {
    if (!std::filesystem::exists(path))
        throw ValidationError(std::string(what) + " not found: " + path.string());
}

CliConfig load_optional_config(const std::string& path) {
    if (path.empty()) return CliConfig{};
    require_file(path, "config file");
    return load_cli_config(path);
}

struct CorpusPair {
    Corpus train;
    Corpus heldout;
};

CorpusPair load_corpus_pair(const std::string& stem) {
    const CorpusPaths paths = corpus_paths(stem);
    require_file(paths.train, "train corpus");
    require_file(paths.heldout, "held-out corpus");
    return CorpusPair{load_corpus(paths.train), load_corpus(paths.heldout)};
}

// Scalar flag overrides shared by the training subcommands.
struct RunOverrides {
    std::optional<std::uint64_t> steps;
    std::optional<std::uint64_t> teacher_steps;
    std::optional<std::uint64_t> window_steps;
    std::optional<std::uint32_t> batch;
    std::optional<std::uint32_t> chunk;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> eval_every;
    std::optional<std::uint64_t> checkpoint_every;
    std::optional<std::string> loss;
    std::optional<double> alpha_static;
    std::optional<double> p;
    std::optional<std::uint32_t> k;
    std::optional<double> tau;
    std::optional<double> lr_max;
    std::optional<double> lr_min;
    std::optional<std::string> mode;
    std::optional<std::string> precision;
    bool relabel = false;
    bool no_shuffle = false;
};

void add_run_flags(CLI::App* sub, RunOverrides& o) {
    sub->add_option("--steps", o.steps, "student optimization steps");
    sub->add_option("--teacher-steps", o.teacher_steps, "teacher optimization steps");
    sub->add_option("--window-steps", o.window_steps, "online capture window length");
    sub->add_option("--batch", o.batch, "sequences per optimization step");
    sub->add_option("--chunk", o.chunk, "tokens per sequence");
    sub->add_option("--seed", o.seed, "run seed");
    sub->add_option("--eval-every", o.eval_every, "held-out evaluation cadence");
    sub->add_option("--checkpoint-every", o.checkpoint_every, "checkpoint cadence (0 = final only)");
    sub->add_option("--loss", o.loss, "kd loss: nll|kld|mse");
    sub->add_option("--alpha", o.alpha_static, "static alpha value");
    sub->add_option("--p", o.p, "top-p truncation threshold");
    sub->add_option("--k", o.k, "top-k truncation cap");
    sub->add_option("--tau", o.tau, "static normalization temperature");
    sub->add_option("--lr-max", o.lr_max, "maximum learning rate");
    sub->add_option("--lr-min", o.lr_min, "minimum learning rate");
    sub->add_option("--mode", o.mode, "offline|online_early|online_late");
    sub->add_option("--precision", o.precision, "compute precision: f64|f32");
    sub->add_flag("--relabel", o.relabel, "LM-train against shard argmax labels");
    sub->add_flag("--no-shuffle", o.no_shuffle, "consume sequences in corpus order");
}

RunConfig apply_overrides(RunConfig run, const RunOverrides& o) {
    if (o.steps) run.total_steps = *o.steps;
    if (o.teacher_steps) run.teacher_total_steps = *o.teacher_steps;
    if (o.window_steps) run.window_steps = *o.window_steps;
    if (o.batch) run.batch_size = *o.batch;
    if (o.chunk) run.chunk_len = *o.chunk;
    if (o.seed) run.seed = *o.seed;
    if (o.eval_every) run.eval_every = *o.eval_every;
    if (o.checkpoint_every) run.checkpoint_every = *o.checkpoint_every;
    if (o.loss) run.loss = loss_kind_from_name(*o.loss);
    if (o.alpha_static) run.alpha = AlphaSchedule::static_alpha(*o.alpha_static);
    if (o.p) run.truncation.p = *o.p;
    if (o.k) run.truncation.k = *o.k;
    if (o.tau) run.temperature = TemperaturePolicy::static_tau(*o.tau);
    if (o.lr_max) {
        run.lr.lr_max = *o.lr_max;
        run.teacher_lr.lr_max = *o.lr_max;
    }
    if (o.lr_min) {
        run.lr.lr_min = *o.lr_min;
        run.teacher_lr.lr_min = *o.lr_min;
    }
    if (o.mode) run.mode = run_mode_from_name(*o.mode);
    if (o.precision) run.precision = precision_from_name(*o.precision);
    if (o.relabel) run.relabel_targets_from_shard = true;
    if (o.no_shuffle) run.shuffle = false;
    run.truncation.validate();
    run.validate();
    return run;
}

void print_run_summary(const RunReport& report) {
    std::cout << report.run_name << ": final held-out ce " << fmt_double(report.final_ce)
              << " nats/token, perplexity " << fmt_double(report.final_perplexity)
              << " (config " << report.config_hash << ")\n";
}

}  // namespace

std::vector<ReportRow> build_comparison(const std::vector<RunReport>& runs,
                                        std::size_t baseline_index) {
    if (runs.empty()) throw ValidationError("report needs at least one run");
    if (baseline_index >= runs.size()) throw ValidationError("baseline index out of range");
    const double base_ce = runs[baseline_index].final_ce;
    if (!(base_ce > 0.0)) throw ValidationError("baseline run has a non-positive final ce");
    std::vector<ReportRow> rows;
    rows.reserve(runs.size());
    for (const auto& run : runs) {
        ReportRow row;
        row.name = run.run_name;
        row.final_ce = run.final_ce;
        row.perplexity = run.final_perplexity;
        row.delta_pct = (base_ce - run.final_ce) / base_ce * 100.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string comparison_to_csv(const std::vector<ReportRow>& rows) {
    std::string out = "run,final_ce,perplexity,delta_pct\n";
    for (const auto& r : rows) {
        out += r.name;
        out += ',';
        out += fmt_double(r.final_ce);
        out += ',';
        out += fmt_double(r.perplexity);
        out += ',';
        out += fmt_double(r.delta_pct);
        out += '\n';
    }
    return out;
}

std::vector<ReportRow> comparison_from_csv(const std::string& csv) {
    std::vector<ReportRow> rows;
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != "run,final_ce,perplexity,delta_pct")
        throw ValidationError("unexpected comparison CSV header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ReportRow row;
        std::string field;
        if (!std::getline(ls, row.name, ',')) throw ValidationError("bad comparison CSV row");
        if (!std::getline(ls, field, ',')) throw ValidationError("bad comparison CSV row");
        row.final_ce = std::stod(field);
        if (!std::getline(ls, field, ',')) throw ValidationError("bad comparison CSV row");
        row.perplexity = std::stod(field);
        if (!std::getline(ls, field)) throw ValidationError("bad comparison CSV row");
        row.delta_pct = std::stod(field);
        rows.push_back(std::move(row));
    }
    return rows;
}

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"pdforge: desk-scale pre-training distillation toolkit"};
    app.require_subcommand(1);

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic Markov corpus");
    std::string gen_config, gen_out;
    CorpusSpec gen_base;
    std::optional<std::uint32_t> gen_vocab, gen_chunk, gen_modes;
    std::optional<std::uint64_t> gen_seed, gen_sequences;
    std::optional<double> gen_train_ratio, gen_skew;
    gen->add_option("--config", gen_config, "JSON config file");
    gen->add_option("--out", gen_out, "output stem for .train.pdco/.heldout.pdco")->required();
    gen->add_option("--vocab", gen_vocab, "vocabulary size");
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--sequences", gen_sequences, "total sequence count");
    gen->add_option("--chunk", gen_chunk, "tokens per sequence");
    gen->add_option("--train-ratio", gen_train_ratio, "train split fraction");
    gen->add_option("--skew", gen_skew, "transition skew (0 = uniform)");
    gen->add_option("--modes", gen_modes, "context mode count");
    gen->callback([&] {
        CorpusSpec spec = load_optional_config(gen_config).corpus;
        if (gen_vocab) spec.vocab_size = *gen_vocab;
        if (gen_seed) spec.seed = *gen_seed;
        if (gen_sequences) spec.sequence_count = *gen_sequences;
        if (gen_chunk) spec.chunk_len = *gen_chunk;
        if (gen_train_ratio) spec.train_ratio = *gen_train_ratio;
        if (gen_skew) spec.skew = *gen_skew;
        if (gen_modes) spec.context_modes = *gen_modes;
        spec.validate();
        const double rate = gen_corpus(spec, gen_out);
        json echo;
        echo["spec"] = corpus_spec_to_json(spec);
        echo["entropy_rate"] = rate;
        std::ofstream meta(gen_out + ".corpus.json", std::ios::binary | std::ios::trunc);
        meta << echo.dump(2) << "\n";
        std::cout << "corpus " << gen_out << ": " << spec.sequence_count << " sequences of "
                  << spec.chunk_len << " tokens, entropy rate " << fmt_double(rate)
                  << " nats/token\n";
    });

    // train-teacher
    auto* tt = app.add_subcommand("train-teacher", "pre-train a teacher with LM loss");
    std::string tt_config, tt_corpus, tt_out;
    RunOverrides tt_over;
    tt->add_option("--config", tt_config, "JSON config file");
    tt->add_option("--corpus", tt_corpus, "corpus stem")->required();
    tt->add_option("--out", tt_out, "output run directory")->required();
    add_run_flags(tt, tt_over);
    tt->callback([&] {
        RunConfig run = apply_overrides(load_optional_config(tt_config).run, tt_over);
        const CorpusPair corpus = load_corpus_pair(tt_corpus);
        const std::string echo = run_config_to_json(run).dump();
        const TrainResult result = train_teacher(run, corpus.train, corpus.heldout, tt_out, echo);
        print_run_summary(result.report);
    });

    // dump-logits
    auto* dl = app.add_subcommand("dump-logits", "store truncated teacher logits as a shard");
    std::string dl_config, dl_corpus, dl_teacher, dl_out, dl_split = "train";
    RunOverrides dl_over;
    dl->add_option("--config", dl_config, "JSON config file");
    dl->add_option("--corpus", dl_corpus, "corpus stem")->required();
    dl->add_option("--teacher", dl_teacher, "teacher checkpoint")->required();
    dl->add_option("--out", dl_out, "output shard path (.pdlg)")->required();
    dl->add_option("--split", dl_split, "corpus split: train|heldout");
    add_run_flags(dl, dl_over);
    dl->callback([&] {
        RunConfig run = apply_overrides(load_optional_config(dl_config).run, dl_over);
        require_file(dl_teacher, "teacher checkpoint");
        const CorpusPaths paths = corpus_paths(dl_corpus);
        const std::filesystem::path corpus_path =
            dl_split == "heldout" ? paths.heldout : paths.train;
        require_file(corpus_path, "corpus split");
        const Corpus corpus = load_corpus(corpus_path);
        const ModelState teacher = load_checkpoint(dl_teacher);
        const ShardStats stats = dump_offline_logits(teacher, corpus, run.chunk_len,
                                                     run.truncation, run.temperature, dl_out);
        std::cout << "shard " << dl_out << ": " << stats.sequence_count << " sequences, "
                  << stats.total_tokens << " tokens, avg kept "
                  << fmt_double(stats.avg_kept_entries) << ", "
                  << fmt_double(stats.bytes_per_token) << " bytes/token\n";
    });

    // train-student
    auto* ts = app.add_subcommand("train-student", "distill a student (offline or live teacher)");
    std::string ts_config, ts_corpus, ts_out, ts_shard, ts_live, ts_resume;
    RunOverrides ts_over;
    ts->add_option("--config", ts_config, "JSON config file");
    ts->add_option("--corpus", ts_corpus, "corpus stem")->required();
    ts->add_option("--out", ts_out, "output run directory")->required();
    ts->add_option("--shard", ts_shard, "teacher logits shard (.pdlg)");
    ts->add_option("--live-teacher", ts_live, "teacher checkpoint for on-the-fly logits");
    ts->add_option("--resume", ts_resume, "student checkpoint to resume from");
    add_run_flags(ts, ts_over);
    ts->callback([&] {
        RunConfig run = apply_overrides(load_optional_config(ts_config).run, ts_over);
        if (ts_shard.empty() == ts_live.empty())
            throw ValidationError("train-student needs exactly one of --shard or --live-teacher");
        const CorpusPair corpus = load_corpus_pair(ts_corpus);
        const std::string echo = run_config_to_json(run).dump();

        std::optional<ModelState> resume;
        if (!ts_resume.empty()) {
            require_file(ts_resume, "resume checkpoint");
            resume = load_checkpoint(ts_resume, run.student);
        }
        std::optional<ModelState> live_state;
        std::unique_ptr<TeacherProvider> provider;
        if (!ts_shard.empty()) {
            require_file(ts_shard, "teacher shard");
            provider = std::make_unique<ShardTeacherProvider>(ts_shard);
        } else {
            require_file(ts_live, "teacher checkpoint");
            live_state = load_checkpoint(ts_live);
            provider = std::make_unique<LiveTeacherProvider>(*live_state, corpus.train,
                                                             run.chunk_len, run.truncation);
        }
        const TrainResult result =
            train_student(run, corpus.train, corpus.heldout, provider.get(), ts_out, echo,
                          resume ? &*resume : nullptr);
        print_run_summary(result.report);
    });

    // run-online
    auto* ro = app.add_subcommand("run-online", "teacher training with online logits capture");
    std::string ro_config, ro_corpus, ro_out;
    RunOverrides ro_over;
    ro->add_option("--config", ro_config, "JSON config file");
    ro->add_option("--corpus", ro_corpus, "corpus stem")->required();
    ro->add_option("--out", ro_out, "output run directory")->required();
    add_run_flags(ro, ro_over);
    ro->callback([&] {
        RunConfig run = apply_overrides(load_optional_config(ro_config).run, ro_over);
        if (run.mode == RunMode::Offline)
            throw ValidationError("run-online requires --mode online_early or online_late");
        const CorpusPair corpus = load_corpus_pair(ro_corpus);
        const std::string echo = run_config_to_json(run).dump();
        const OnlineResult result =
            run_online_pipeline(run, corpus.train, corpus.heldout, ro_out, echo);
        std::cout << "captured window [" << result.window_begin << ", " << result.window_end
                  << ") to " << result.shard_path.string() << "\n";
        print_run_summary(result.teacher_report);
        print_run_summary(result.student_report);
    });

    // eval
    auto* ev = app.add_subcommand("eval", "held-out perplexity of a checkpoint");
    std::string ev_model, ev_corpus, ev_split = "heldout";
    std::uint32_t ev_chunk = 32;
    bool ev_json = false;
    ev->add_option("--model", ev_model, "model checkpoint")->required();
    ev->add_option("--corpus", ev_corpus, "corpus stem")->required();
    ev->add_option("--split", ev_split, "corpus split: train|heldout");
    ev->add_option("--chunk", ev_chunk, "tokens per sequence");
    ev->add_flag("--json", ev_json, "machine-readable output");
    ev->callback([&] {
        require_file(ev_model, "model checkpoint");
        const CorpusPaths paths = corpus_paths(ev_corpus);
        const std::filesystem::path corpus_path =
            ev_split == "train" ? paths.train : paths.heldout;
        require_file(corpus_path, "corpus split");
        const ModelState model = load_checkpoint(ev_model);
        const Corpus corpus = load_corpus(corpus_path);
        const EvalResult result = evaluate(model, corpus, ev_chunk);
        if (ev_json) {
            json j{{"cross_entropy", result.cross_entropy},
                   {"perplexity", result.perplexity},
                   {"entropy_rate", corpus.entropy_rate}};
            std::cout << j.dump() << "\n";
        } else {
            std::cout << "held-out ce " << fmt_double(result.cross_entropy)
                      << " nats/token, perplexity " << fmt_double(result.perplexity)
                      << " (corpus entropy rate " << fmt_double(corpus.entropy_rate) << ")\n";
        }
    });

    // estimate-storage
    auto* es = app.add_subcommand("estimate-storage", "dense vs truncated logits storage");
    std::uint64_t es_vocab = 0;
    double es_tokens = 0.0;
    double es_avg_kept = 18.75;
    std::uint32_t es_bytes = 8;
    bool es_json = false;
    es->add_option("--vocab", es_vocab, "vocabulary size")->required();
    es->add_option("--tokens", es_tokens, "token count, e.g. 1e11")->required();
    es->add_option("--avg-kept", es_avg_kept, "average kept entries per token");
    es->add_option("--bytes-per-entry", es_bytes, "bytes per stored entry");
    es->add_flag("--json", es_json, "machine-readable output");
    es->callback([&] {
        if (!(es_tokens >= 0.0)) throw ValidationError("--tokens must be non-negative");
        const StorageEstimate e = estimate_storage(
            es_vocab, static_cast<std::uint64_t>(std::llround(es_tokens)), es_avg_kept, es_bytes);
        if (es_json) {
            json j{{"dense_bytes", e.dense_bytes},
                   {"sparse_bytes", e.sparse_bytes},
                   {"reduction_factor", e.reduction_factor}};
            std::cout << j.dump() << "\n";
            return;
        }
        std::cout << "dense float32 logits: " << fmt_double(e.dense_bytes) << " bytes ("
                  << human_bytes(e.dense_bytes) << ")\n";
        std::cout << "truncated sparse logits: " << fmt_double(e.sparse_bytes) << " bytes ("
                  << human_bytes(e.sparse_bytes) << ")\n";
        std::cout << "reduction factor: " << fmt_double(e.reduction_factor) << "x\n";
        std::cout << "assumes " << es_vocab << " vocabulary entries at 4 bytes dense vs "
                  << fmt_double(es_avg_kept) << " kept entries at " << es_bytes
                  << " bytes each\n";
    });

    // verify-shard
    auto* vs = app.add_subcommand("verify-shard", "CRC-check every record of a shard");
    std::string vs_path;
    vs->add_option("shard", vs_path, "shard path (.pdlg)")->required();
    vs->callback([&] {
        require_file(vs_path, "shard");
        const ShardReader reader(vs_path);
        const ShardStats stats = reader.stats();
        std::cout << "shard OK: " << stats.sequence_count << " sequences, "
                  << stats.total_tokens << " tokens, avg kept "
                  << fmt_double(stats.avg_kept_entries) << ", "
                  << fmt_double(stats.bytes_per_token) << " bytes/token\n";
    });

    // report
    auto* rp = app.add_subcommand("report", "compare completed runs against a baseline");
    std::vector<std::string> rp_dirs;
    std::string rp_baseline;
    bool rp_json = false;
    rp->add_option("dirs", rp_dirs, "run directories containing report.json")->required();
    rp->add_option("--baseline", rp_baseline, "baseline run directory (default: first)");
    rp->add_flag("--json", rp_json, "machine-readable output");
    rp->callback([&] {
        std::vector<RunReport> runs;
        std::size_t baseline_index = 0;
        for (std::size_t i = 0; i < rp_dirs.size(); ++i) {
            const std::filesystem::path path = std::filesystem::path(rp_dirs[i]) / "report.json";
            require_file(path, "run report");
            RunReport r = load_report_json(path);
            r.run_name = rp_dirs[i];  // directories disambiguate repeated run names
            runs.push_back(std::move(r));
            if (!rp_baseline.empty() && rp_dirs[i] == rp_baseline) baseline_index = i;
        }
        if (!rp_baseline.empty()) {
            bool found = false;
            for (const auto& d : rp_dirs) found |= d == rp_baseline;
            if (!found) throw ValidationError("--baseline must name one of the run directories");
        }
        const auto rows = build_comparison(runs, baseline_index);
        if (rp_json) {
            json out = json::array();
            for (const auto& r : rows) {
                out.push_back({{"run", r.name},
                               {"final_ce", r.final_ce},
                               {"perplexity", r.perplexity},
                               {"delta_pct", r.delta_pct}});
            }
            std::cout << out.dump() << "\n";
        } else {
            std::cout << comparison_to_csv(rows);
        }
    });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    } catch (const CorruptionError& e) {
        std::cerr << "corruption error: " << e.what() << "\n";
        return 2;
    } catch (const StorageError& e) {
        std::cerr << "storage error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace pdforge::cli
