#include "pdforge/pd_trainer.hpp"

#include "pdforge/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace pdforge {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double row_logsumexp(std::span<const double> row) {
    double max = -std::numeric_limits<double>::infinity();
    for (double v : row) max = std::max(max, v);
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - max);
    return max + std::log(sum);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open for writing: " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw StorageError("failed writing: " + path.string());
}

}  // namespace

const char* run_mode_name(RunMode mode) {
    switch (mode) {
        case RunMode::Offline: return "offline";
        case RunMode::OnlineEarly: return "online_early";
        case RunMode::OnlineLate: return "online_late";
    }
    return "?";
}

RunMode run_mode_from_name(std::string_view name) {
    if (name == "offline") return RunMode::Offline;
    if (name == "online_early") return RunMode::OnlineEarly;
    if (name == "online_late") return RunMode::OnlineLate;
    throw ValidationError("unknown run mode: " + std::string(name));
}

const char* precision_name(Precision precision) {
    return precision == Precision::F64 ? "f64" : "f32";
}

Precision precision_from_name(std::string_view name) {
    if (name == "f64") return Precision::F64;
    if (name == "f32") return Precision::F32;
    throw ValidationError("unknown precision: " + std::string(name));
}

void RunConfig::validate() const {
    teacher.validate();
    student.validate();
    truncation.validate();
    temperature.validate();
    alpha.validate();
    lr.validate();
    teacher_lr.validate();
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (chunk_len < 2) throw ValidationError("chunk_len must be >= 2");
    if (total_steps < 1) throw ValidationError("total_steps must be >= 1");
    if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
    if (chunk_len > student.max_seq_len || chunk_len > teacher.max_seq_len)
        throw ValidationError("chunk_len exceeds a model's max_seq_len");
    if (mode != RunMode::Offline) {
        if (teacher_total_steps < 1) throw ValidationError("teacher_total_steps must be >= 1");
        if (window_steps < 1 || window_steps > teacher_total_steps)
            throw ValidationError("window_steps must be in [1, teacher_total_steps]");
    }
}

std::string RunReport::to_csv() const {
    std::string out = "step,train_loss,held_out_ce,perplexity,alpha,lr\n";
    for (const auto& e : evals) {
        out += std::to_string(e.step);
        out += ',';
        out += fmt_double(e.train_loss);
        out += ',';
        out += fmt_double(e.held_out_ce);
        out += ',';
        out += fmt_double(e.perplexity);
        out += ',';
        out += fmt_double(e.alpha);
        out += ',';
        out += fmt_double(e.lr);
        out += '\n';
    }
    return out;
}

std::string RunReport::to_json() const {
    json j;
    j["run_name"] = run_name;
    j["config"] = json::parse(config_json);
    j["config_hash"] = config_hash;
    j["final"] = {{"held_out_ce", final_ce}, {"perplexity", final_perplexity}};
    json evs = json::array();
    for (const auto& e : evals) {
        evs.push_back({{"step", e.step},
                       {"train_loss", e.train_loss},
                       {"held_out_ce", e.held_out_ce},
                       {"perplexity", e.perplexity},
                       {"alpha", e.alpha},
                       {"lr", e.lr}});
    }
    j["evals"] = std::move(evs);
    j["train_loss_trace"] = train_loss_trace;
    return j.dump(2) + "\n";
}

RunReport load_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open report: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw CorruptionError("malformed report JSON " + path.string() + ": " + e.what());
    }
    RunReport r;
    try {
        r.run_name = j.at("run_name").get<std::string>();
        r.config_json = j.at("config").dump();
        r.config_hash = j.at("config_hash").get<std::string>();
        r.final_ce = j.at("final").at("held_out_ce").get<double>();
        r.final_perplexity = j.at("final").at("perplexity").get<double>();
        for (const auto& e : j.at("evals")) {
            EvalRecord rec;
            rec.step = e.at("step").get<std::uint64_t>();
            rec.train_loss = e.at("train_loss").get<double>();
            rec.held_out_ce = e.at("held_out_ce").get<double>();
            rec.perplexity = e.at("perplexity").get<double>();
            rec.alpha = e.at("alpha").get<double>();
            rec.lr = e.at("lr").get<double>();
            r.evals.push_back(rec);
        }
        r.train_loss_trace = j.at("train_loss_trace").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw CorruptionError("report JSON missing fields " + path.string() + ": " + e.what());
    }
    return r;
}

ShardTeacherProvider::ShardTeacherProvider(const std::filesystem::path& shard_path)
    : reader_(shard_path) {}

std::vector<SparseTeacherDistribution> ShardTeacherProvider::distributions(
    std::uint64_t record) const {
    return reader_.read_sequence(record);
}

std::uint64_t ShardTeacherProvider::record_count() const {
    return reader_.sequence_count();
}

void ShardTeacherProvider::validate_against(std::uint32_t vocab_size,
                                            std::uint32_t chunk_len) const {
    if (reader_.header().vocab_size != vocab_size)
        throw ValidationError("shard vocabulary does not match the student vocabulary");
    if (reader_.header().chunk_len != chunk_len)
        throw ValidationError("shard chunk_len does not match the run chunk_len");
    if (reader_.sequence_count() == 0) throw ValidationError("shard contains no sequences");
}

LiveTeacherProvider::LiveTeacherProvider(const ModelState& teacher, const Corpus& corpus,
                                         std::uint32_t chunk_len, TruncationSpec truncation)
    : teacher_(teacher), corpus_(corpus), chunk_len_(chunk_len), truncation_(truncation) {
    truncation_.validate();
    if (teacher_.config.vocab_size != corpus_.vocab_size)
        throw ValidationError("teacher vocabulary does not match the corpus");
}

std::vector<SparseTeacherDistribution> LiveTeacherProvider::distributions(
    std::uint64_t record) const {
    Activations acts;
    forward(teacher_, corpus_.inputs(chunk_len_, record), acts);
    const std::size_t V = teacher_.config.vocab_size;
    std::vector<SparseTeacherDistribution> out(chunk_len_);
    for (std::uint32_t t = 0; t < chunk_len_; ++t) {
        const std::span<const double> row(acts.logits.data() + t * V, V);
        out[t] = truncate_top_p_k(row, truncation_);
    }
    return out;
}

std::uint64_t LiveTeacherProvider::record_count() const {
    return corpus_.sequence_count(chunk_len_);
}

void LiveTeacherProvider::validate_against(std::uint32_t vocab_size,
                                           std::uint32_t chunk_len) const {
    if (teacher_.config.vocab_size != vocab_size)
        throw ValidationError("teacher vocabulary does not match the student vocabulary");
    if (chunk_len != chunk_len_)
        throw ValidationError("live teacher chunk_len does not match the run chunk_len");
}

namespace {

// Per-batch-slot buffers; each slot is written by exactly one worker, and all
// cross-slot reductions happen serially in slot order afterwards.
template <typename S>
struct SlotState {
    SeqActivations<S> acts;
    std::vector<S> grads;
    std::vector<double> logits64;
    std::vector<std::uint32_t> relabeled;
    double loss = 0.0;
};

template <typename S>
TrainResult run_training_impl(const TrainJob& job, const Corpus& train, const Corpus& heldout) {
    job.model.validate();
    job.alpha.validate();
    job.lr.validate();
    job.temperature.validate();
    if (job.batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (job.total_steps < 1) throw ValidationError("total_steps must be >= 1");
    if (job.eval_every < 1) throw ValidationError("eval_every must be >= 1");
    if (job.chunk_len < 1) throw ValidationError("chunk_len must be >= 1");
    if (job.chunk_len > job.model.max_seq_len)
        throw ValidationError("chunk_len exceeds the model max_seq_len");
    if (train.vocab_size != job.model.vocab_size || heldout.vocab_size != job.model.vocab_size)
        throw ValidationError("corpus vocabulary does not match the model");
    const std::uint64_t n_train = train.sequence_count(job.chunk_len);
    if (n_train == 0) throw ValidationError("train split has no complete sequences");
    if (heldout.sequence_count(job.chunk_len) == 0)
        throw ValidationError("held-out split has no complete sequences");
    if (job.teacher) job.teacher->validate_against(job.model.vocab_size, job.chunk_len);
    if (job.relabel_from_teacher && !job.teacher)
        throw ValidationError("relabel_targets requires a teacher source");
    if (job.record_to_corpus) {
        if (!job.teacher) throw ValidationError("record-ordered data plan requires a teacher");
        if (job.record_to_corpus->size() != job.teacher->record_count())
            throw ValidationError("record map length does not match the shard");
        for (std::uint64_t seq : *job.record_to_corpus) {
            if (seq >= n_train)
                throw ValidationError("record map references a missing corpus sequence");
        }
    }
    if (job.capture && job.capture_end > job.capture_begin &&
        job.precision != Precision::F64)
        throw ValidationError("online capture requires f64 precision");

    ModelState model;
    if (job.resume_from) {
        if (!(job.resume_from->config == job.model))
            throw ValidationError("resume checkpoint config does not match the job");
        model = *job.resume_from;
    } else {
        model = init_model(job.model);
    }
    const std::uint64_t start_step = model.adam_step;
    if (start_step >= job.total_steps)
        throw ValidationError("resume step is already at or past total_steps");

    std::vector<std::uint64_t> perm(n_train);
    for (std::uint64_t i = 0; i < n_train; ++i) perm[i] = i;
    if (job.shuffle) {
        Rng rng(split_seed(job.seed, 0xDA7A));
        rng.shuffle(perm);
    }

    const std::uint32_t B = job.batch_size;
    const std::uint32_t T = job.chunk_len;
    const std::size_t V = job.model.vocab_size;
    const std::size_t P = model.params.size();

    auto plan = [&](std::uint64_t step, std::uint32_t slot) {
        const std::uint64_t flat = step * B + slot;
        if (job.record_to_corpus) {
            const std::uint64_t rec = flat % job.teacher->record_count();
            return std::pair<std::uint64_t, std::uint64_t>(rec, (*job.record_to_corpus)[rec]);
        }
        const std::uint64_t seq = perm[flat % n_train];
        return std::pair<std::uint64_t, std::uint64_t>(seq, seq);
    };

    std::vector<SlotState<S>> slots(B);
    for (auto& s : slots) s.grads.assign(P, S(0));

    std::vector<S> typed_params;
    auto refresh_params = [&]() -> const S* {
        if constexpr (std::is_same_v<S, double>) {
            return model.params.data();
        } else {
            typed_params.resize(P);
            for (std::size_t i = 0; i < P; ++i) typed_params[i] = static_cast<S>(model.params[i]);
            return typed_params.data();
        }
    };
    const S* params_ptr = refresh_params();

    std::vector<double> master_grad(P);

    RunReport report;
    report.run_name = job.run_name;
    report.config_json = job.config_json;
    report.config_hash = hex64(fnv1a64(job.config_json));
    report.train_loss_trace.reserve(job.total_steps - start_step);

    if (!job.out_dir.empty()) std::filesystem::create_directories(job.out_dir);

    for (std::uint64_t step = start_step; step < job.total_steps; ++step) {
        const double alpha = alpha_at(job.alpha, step, job.total_steps);
        const double lr = lr_at(job.lr, step, job.total_steps);
        const bool need_kd = job.teacher != nullptr && alpha > 0.0;
        const bool need_lm = alpha < 1.0 || job.relabel_from_teacher;
        if (alpha > 0.0 && !job.teacher)
            throw ValidationError("alpha schedule requests KD but no teacher source is set");

        parallel_for(B, [&](std::size_t slot) {
            auto& st = slots[slot];
            const auto [rec, cseq] = plan(step, static_cast<std::uint32_t>(slot));
            const auto inputs = train.inputs(T, cseq);
            auto targets = train.targets(T, cseq);

            std::vector<SparseTeacherDistribution> dists;
            if (need_kd || job.relabel_from_teacher) {
                dists = job.teacher->distributions(rec);
                if (job.relabel_from_teacher) {
                    st.relabeled.resize(T);
                    for (std::uint32_t t = 0; t < T; ++t) st.relabeled[t] = dists[t].argmax_id();
                    targets = st.relabeled;
                }
                if (need_kd) {
                    for (auto& d : dists)
                        d = apply_temperature(d, resolve_temperature(job.temperature, d));
                }
            }

            forward_seq<S>(job.model, params_ptr, inputs, st.acts);
            std::span<const double> logits64;
            if constexpr (std::is_same_v<S, double>) {
                logits64 = st.acts.logits;
            } else {
                st.logits64.resize(st.acts.logits.size());
                for (std::size_t i = 0; i < st.logits64.size(); ++i)
                    st.logits64[i] = static_cast<double>(st.acts.logits[i]);
                logits64 = st.logits64;
            }

            LossOutput combined;
            if (need_kd && need_lm) {
                combined = combined_loss(alpha, lm_loss(logits64, V, targets),
                                         kd_loss(job.kd_kind, logits64, V, dists));
            } else if (need_kd) {
                combined = kd_loss(job.kd_kind, logits64, V, dists);
            } else {
                combined = lm_loss(logits64, V, targets);
            }
            st.loss = combined.value;

            std::fill(st.grads.begin(), st.grads.end(), S(0));
            if constexpr (std::is_same_v<S, double>) {
                backward_seq<S>(job.model, params_ptr, st.acts, combined.grad.data(),
                                st.grads.data());
            } else {
                std::vector<S> dlogits(combined.grad.size());
                for (std::size_t i = 0; i < dlogits.size(); ++i)
                    dlogits[i] = static_cast<S>(combined.grad[i]);
                backward_seq<S>(job.model, params_ptr, st.acts, dlogits.data(),
                                st.grads.data());
            }
        });

        if (job.capture && step >= job.capture_begin && step < job.capture_end) {
            for (std::uint32_t slot = 0; slot < B; ++slot) {
                const auto [rec, cseq] = plan(step, slot);
                (void)rec;
                if constexpr (std::is_same_v<S, double>) {
                    job.capture(step, cseq, slots[slot].acts.logits);
                }
            }
        }

        double step_loss = 0.0;
        for (std::uint32_t slot = 0; slot < B; ++slot) step_loss += slots[slot].loss;
        step_loss /= static_cast<double>(B);
        report.train_loss_trace.push_back(step_loss);
        if (!std::isfinite(step_loss))
            throw DivergenceError("run aborted: non-finite loss at step " + std::to_string(step));

        std::fill(master_grad.begin(), master_grad.end(), 0.0);
        for (std::uint32_t slot = 0; slot < B; ++slot) {
            const auto& g = slots[slot].grads;
            for (std::size_t i = 0; i < P; ++i) master_grad[i] += static_cast<double>(g[i]);
        }
        const double inv_b = 1.0 / static_cast<double>(B);
        for (std::size_t i = 0; i < P; ++i) master_grad[i] *= inv_b;

        adam_step(model, master_grad, lr);
        params_ptr = refresh_params();

        const std::uint64_t done = step + 1;
        if (done % job.eval_every == 0 || done == job.total_steps) {
            const EvalResult ev = evaluate(model, heldout, T);
            report.evals.push_back(
                EvalRecord{done, step_loss, ev.cross_entropy, ev.perplexity, alpha, lr});
            report.final_ce = ev.cross_entropy;
            report.final_perplexity = ev.perplexity;
        }
        if (!job.out_dir.empty() && job.checkpoint_every > 0 &&
            done % job.checkpoint_every == 0 && done != job.total_steps) {
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_%08llu.pdck",
                          static_cast<unsigned long long>(done));
            save_checkpoint(model, job.out_dir / name);
        }
    }

    if (!job.out_dir.empty()) {
        save_checkpoint(model, job.out_dir / "final.pdck");
        write_text_file(job.out_dir / "report.csv", report.to_csv());
        write_text_file(job.out_dir / "report.json", report.to_json());
    }

    TrainResult result;
    result.report = std::move(report);
    result.final_state = std::move(model);
    return result;
}

}  // namespace

TrainResult run_training(const TrainJob& job, const Corpus& train, const Corpus& heldout) {
    if (job.precision == Precision::F32) return run_training_impl<float>(job, train, heldout);
    return run_training_impl<double>(job, train, heldout);
}

EvalResult evaluate(const ModelState& model, const Corpus& heldout, std::uint32_t chunk_len) {
    if (heldout.vocab_size != model.config.vocab_size)
        throw ValidationError("held-out corpus vocabulary does not match the model");
    const std::uint64_t n = heldout.sequence_count(chunk_len);
    if (n == 0) throw ValidationError("held-out split has no complete sequences");
    if (chunk_len > model.config.max_seq_len)
        throw ValidationError("chunk_len exceeds the model max_seq_len");

    const std::size_t V = model.config.vocab_size;
    std::vector<double> partial(n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        Activations acts;
        forward(model, heldout.inputs(chunk_len, i), acts);
        const auto targets = heldout.targets(chunk_len, i);
        double ce = 0.0;
        for (std::uint32_t t = 0; t < chunk_len; ++t) {
            const std::span<const double> row(acts.logits.data() + t * V, V);
            ce += row_logsumexp(row) - row[targets[t]];
        }
        partial[i] = ce;
    });
    double total = 0.0;
    for (std::uint64_t i = 0; i < n; ++i) total += partial[i];
    EvalResult out;
    out.cross_entropy = total / (static_cast<double>(n) * chunk_len);
    out.perplexity = std::exp(out.cross_entropy);
    return out;
}

ShardStats dump_offline_logits(const ModelState& teacher, const Corpus& corpus,
                               std::uint32_t chunk_len, const TruncationSpec& truncation,
                               const TemperaturePolicy& policy,
                               const std::filesystem::path& shard_path) {
    truncation.validate();
    policy.validate();
    if (teacher.config.vocab_size != corpus.vocab_size)
        throw ValidationError("teacher vocabulary does not match the corpus");
    if (chunk_len > teacher.config.max_seq_len)
        throw ValidationError("chunk_len exceeds the teacher max_seq_len");
    const std::uint64_t n = corpus.sequence_count(chunk_len);
    if (n == 0) throw ValidationError("corpus has no complete sequences to dump");

    ShardHeader header;
    header.vocab_size = teacher.config.vocab_size;
    header.chunk_len = chunk_len;
    header.trunc_p = static_cast<float>(truncation.p);
    header.trunc_k = truncation.k;
    header.base_temperature = policy.kind == TemperaturePolicy::Kind::Static
                                  ? static_cast<float>(policy.tau)
                                  : 1.0f;
    ShardWriter writer(shard_path, header);

    const std::size_t V = teacher.config.vocab_size;
    const std::uint64_t block = std::max<std::uint64_t>(4 * worker_count(), 8);
    std::vector<std::vector<SparseTeacherDistribution>> buffers(block);
    for (std::uint64_t begin = 0; begin < n; begin += block) {
        const std::uint64_t count = std::min<std::uint64_t>(block, n - begin);
        parallel_for(count, [&](std::size_t i) {
            Activations acts;
            forward(teacher, corpus.inputs(chunk_len, begin + i), acts);
            auto& dists = buffers[i];
            dists.resize(chunk_len);
            for (std::uint32_t t = 0; t < chunk_len; ++t) {
                const std::span<const double> row(acts.logits.data() + t * V, V);
                dists[t] = process_logits(row, truncation, policy);
            }
        });
        for (std::uint64_t i = 0; i < count; ++i) writer.append_sequence(buffers[i]);
    }
    writer.finalize();

    // Re-open and scan: returns stats and proves the shard decodes cleanly.
    return ShardReader(shard_path).stats();
}

TrainResult train_student(const RunConfig& run, const Corpus& train, const Corpus& heldout,
                          const TeacherProvider* teacher, const std::filesystem::path& out_dir,
                          const std::string& config_json, const ModelState* resume) {
    run.validate();
    TrainJob job;
    job.model = run.student;
    job.alpha = run.alpha;
    job.lr = run.lr;
    job.kd_kind = run.loss;
    job.temperature = run.temperature;
    job.batch_size = run.batch_size;
    job.chunk_len = run.chunk_len;
    job.total_steps = run.total_steps;
    job.eval_every = run.eval_every;
    job.checkpoint_every = run.checkpoint_every;
    job.seed = run.seed;
    job.shuffle = run.shuffle;
    job.relabel_from_teacher = run.relabel_targets_from_shard;
    job.precision = run.precision;
    job.run_name = "student";
    job.out_dir = out_dir;
    job.config_json = config_json;
    job.teacher = teacher;
    job.resume_from = resume;
    return run_training(job, train, heldout);
}

TrainResult train_teacher(const RunConfig& run, const Corpus& train, const Corpus& heldout,
                          const std::filesystem::path& out_dir, const std::string& config_json) {
    run.teacher.validate();
    TrainJob job;
    job.model = run.teacher;
    job.alpha = AlphaSchedule::static_alpha(0.0);
    job.lr = run.teacher_lr;
    job.batch_size = run.batch_size;
    job.chunk_len = run.chunk_len;
    job.total_steps = run.teacher_total_steps;
    job.eval_every = run.eval_every;
    job.checkpoint_every = run.checkpoint_every;
    job.seed = run.seed;
    job.shuffle = run.shuffle;
    job.precision = run.precision;
    job.run_name = "teacher";
    job.out_dir = out_dir;
    job.config_json = config_json;
    return run_training(job, train, heldout);
}

OnlineResult run_online_pipeline(const RunConfig& run, const Corpus& train,
                                 const Corpus& heldout, const std::filesystem::path& out_dir,
                                 const std::string& config_json) {
    run.validate();
    if (run.mode == RunMode::Offline)
        throw ValidationError("run_online_pipeline requires an online mode");
    if (run.teacher.vocab_size != run.student.vocab_size)
        throw ValidationError("teacher and student vocabularies must match");
    if (run.precision != Precision::F64)
        throw ValidationError("online capture requires f64 precision");

    const std::uint64_t window_begin = run.mode == RunMode::OnlineEarly
                                           ? 0
                                           : run.teacher_total_steps - run.window_steps;
    const std::uint64_t window_end = window_begin + run.window_steps;

    std::filesystem::create_directories(out_dir);
    char shard_name[64];
    std::snprintf(shard_name, sizeof(shard_name), "online_w%08llu-%08llu.pdlg",
                  static_cast<unsigned long long>(window_begin),
                  static_cast<unsigned long long>(window_end));
    const std::filesystem::path shard_path = out_dir / shard_name;

    ShardHeader header;
    header.vocab_size = run.teacher.vocab_size;
    header.chunk_len = run.chunk_len;
    header.trunc_p = static_cast<float>(run.truncation.p);
    header.trunc_k = run.truncation.k;
    header.base_temperature = 1.0f;

    std::vector<std::uint64_t> manifest;
    OnlineResult result;
    result.shard_path = shard_path;
    result.window_begin = window_begin;
    result.window_end = window_end;
    {
        ShardWriter writer(shard_path, header);
        const std::size_t V = run.teacher.vocab_size;
        const std::uint32_t T = run.chunk_len;

        TrainJob tjob;
        tjob.model = run.teacher;
        tjob.alpha = AlphaSchedule::static_alpha(0.0);
        tjob.lr = run.teacher_lr;
        tjob.batch_size = run.batch_size;
        tjob.chunk_len = run.chunk_len;
        tjob.total_steps = run.teacher_total_steps;
        tjob.eval_every = run.eval_every;
        tjob.seed = run.seed;
        tjob.shuffle = run.shuffle;
        tjob.run_name = "teacher-online";
        tjob.out_dir = out_dir / "teacher";
        tjob.config_json = config_json;
        tjob.capture_begin = window_begin;
        tjob.capture_end = window_end;
        std::vector<SparseTeacherDistribution> dists(T);
        tjob.capture = [&](std::uint64_t step, std::uint64_t corpus_seq,
                           std::span<const double> logits) {
            (void)step;
            for (std::uint32_t t = 0; t < T; ++t) {
                const std::span<const double> row(logits.data() + t * V, V);
                dists[t] = truncate_top_p_k(row, run.truncation);
            }
            writer.append_sequence(dists);
            manifest.push_back(corpus_seq);
        };

        TrainResult teacher_result = run_training(tjob, train, heldout);
        result.teacher_report = std::move(teacher_result.report);
        writer.finalize();
    }

    json manifest_json;
    manifest_json["window_begin"] = window_begin;
    manifest_json["window_end"] = window_end;
    manifest_json["teacher_total_steps"] = run.teacher_total_steps;
    manifest_json["shard"] = shard_path.filename().string();
    manifest_json["records"] = manifest;
    write_text_file(out_dir / "online_window.json", manifest_json.dump(2) + "\n");

    ShardTeacherProvider provider(shard_path);
    TrainJob sjob;
    sjob.model = run.student;
    sjob.alpha = run.alpha;
    sjob.lr = run.lr;
    sjob.kd_kind = run.loss;
    sjob.temperature = run.temperature;
    sjob.batch_size = run.batch_size;
    sjob.chunk_len = run.chunk_len;
    sjob.total_steps = run.total_steps;
    sjob.eval_every = run.eval_every;
    sjob.checkpoint_every = run.checkpoint_every;
    sjob.seed = run.seed;
    sjob.shuffle = run.shuffle;
    sjob.precision = run.precision;
    sjob.run_name = "student-online";
    sjob.out_dir = out_dir / "student";
    sjob.config_json = config_json;
    sjob.teacher = &provider;
    sjob.record_to_corpus = &manifest;
    TrainResult student_result = run_training(sjob, train, heldout);
    result.student_report = std::move(student_result.report);
    return result;
}

}  // namespace pdforge
