#pragma once

#include "pdforge/corpus.hpp"
#include "pdforge/distill_losses.hpp"
#include "pdforge/logits_store.hpp"
#include "pdforge/schedulers.hpp"
#include "pdforge/tiny_lm.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pdforge {

enum class RunMode { Offline, OnlineEarly, OnlineLate };
enum class Precision { F64, F32 };

const char* run_mode_name(RunMode mode);
RunMode run_mode_from_name(std::string_view name);
const char* precision_name(Precision precision);
Precision precision_from_name(std::string_view name);

// Full experiment configuration: models, loss/schedule selection, the
// truncation/temperature knobs, and the offline/online switch.
struct RunConfig {
    ModelConfig teacher = desk_teacher_config();
    ModelConfig student = desk_student_config();
    LossKind loss = LossKind::NLL;
    TruncationSpec truncation;
    TemperaturePolicy temperature;
    AlphaSchedule alpha = AlphaSchedule::static_alpha(0.9);
    LRSchedule lr = LRSchedule::cosine();
    LRSchedule teacher_lr = LRSchedule::cosine();
    std::uint32_t batch_size = 16;
    std::uint32_t chunk_len = 32;
    std::uint64_t total_steps = 2000;
    std::uint64_t teacher_total_steps = 3000;
    std::uint64_t window_steps = 500;  // online capture window
    std::uint64_t eval_every = 200;
    std::uint64_t checkpoint_every = 0;  // 0 = final checkpoint only
    RunMode mode = RunMode::Offline;
    std::uint64_t seed = 1;
    bool shuffle = true;
    bool relabel_targets_from_shard = false;
    Precision precision = Precision::F64;

    void validate() const;
};

struct EvalRecord {
    std::uint64_t step = 0;
    double train_loss = 0.0;
    double held_out_ce = 0.0;
    double perplexity = 0.0;
    double alpha = 0.0;
    double lr = 0.0;
};

struct RunReport {
    std::string run_name;
    std::vector<EvalRecord> evals;
    std::vector<double> train_loss_trace;  // one entry per optimization step
    double final_ce = 0.0;
    double final_perplexity = 0.0;
    std::string config_json = "{}";
    std::string config_hash;

    std::string to_csv() const;
    std::string to_json() const;
};

RunReport load_report_json(const std::filesystem::path& path);

// Source of per-sequence teacher distributions for the KD loss. Offline reads
// a shard; live processes a frozen teacher's logits on the fly. Both return
// tau=1 truncated distributions; the training loop applies the temperature
// policy.
class TeacherProvider {
public:
    virtual ~TeacherProvider() = default;
    virtual std::vector<SparseTeacherDistribution> distributions(std::uint64_t record) const = 0;
    virtual std::uint64_t record_count() const = 0;
    virtual void validate_against(std::uint32_t vocab_size, std::uint32_t chunk_len) const = 0;
};

class ShardTeacherProvider final : public TeacherProvider {
public:
    explicit ShardTeacherProvider(const std::filesystem::path& shard_path);
    std::vector<SparseTeacherDistribution> distributions(std::uint64_t record) const override;
    std::uint64_t record_count() const override;
    void validate_against(std::uint32_t vocab_size, std::uint32_t chunk_len) const override;
    const ShardReader& reader() const { return reader_; }

private:
    ShardReader reader_;
};

class LiveTeacherProvider final : public TeacherProvider {
public:
    LiveTeacherProvider(const ModelState& teacher, const Corpus& corpus, std::uint32_t chunk_len,
                        TruncationSpec truncation);
    std::vector<SparseTeacherDistribution> distributions(std::uint64_t record) const override;
    std::uint64_t record_count() const override;
    void validate_against(std::uint32_t vocab_size, std::uint32_t chunk_len) const override;

private:
    const ModelState& teacher_;
    const Corpus& corpus_;
    std::uint32_t chunk_len_;
    TruncationSpec truncation_;
};

// Everything run_training needs; built by the higher-level entry points.
struct TrainJob {
    ModelConfig model;
    AlphaSchedule alpha = AlphaSchedule::static_alpha(0.0);
    LRSchedule lr = LRSchedule::cosine();
    LossKind kd_kind = LossKind::NLL;
    TemperaturePolicy temperature;
    std::uint32_t batch_size = 16;
    std::uint32_t chunk_len = 32;
    std::uint64_t total_steps = 1000;
    std::uint64_t eval_every = 200;
    std::uint64_t checkpoint_every = 0;
    std::uint64_t seed = 1;
    bool shuffle = true;
    bool relabel_from_teacher = false;
    Precision precision = Precision::F64;
    std::string run_name = "run";
    std::filesystem::path out_dir;  // empty = keep everything in memory
    std::string config_json = "{}";

    const TeacherProvider* teacher = nullptr;
    // Online-student data plan: shard record j covers corpus sequence
    // record_to_corpus[j], consumed in shard order.
    const std::vector<std::uint64_t>* record_to_corpus = nullptr;

    // Resume point; when set, training continues from its adam_step.
    const ModelState* resume_from = nullptr;

    // Online capture: called serially in batch-slot order for steps in
    // [capture_begin, capture_end) with the pre-update forward logits.
    std::function<void(std::uint64_t step, std::uint64_t corpus_seq,
                       std::span<const double> logits)>
        capture;
    std::uint64_t capture_begin = 0;
    std::uint64_t capture_end = 0;
};

struct TrainResult {
    RunReport report;
    ModelState final_state;
};

TrainResult run_training(const TrainJob& job, const Corpus& train, const Corpus& heldout);

struct EvalResult {
    double cross_entropy = 0.0;
    double perplexity = 0.0;
};

EvalResult evaluate(const ModelState& model, const Corpus& heldout, std::uint32_t chunk_len);

// Writes one tau=1 truncated distribution per token position of every train
// sequence, in sequence order, then finalizes the shard.
ShardStats dump_offline_logits(const ModelState& teacher, const Corpus& corpus,
                               std::uint32_t chunk_len, const TruncationSpec& truncation,
                               const TemperaturePolicy& policy,
                               const std::filesystem::path& shard_path);

// Offline pipeline stage 2 entry point: student trained against a teacher
// provider (shard or live). Pass `resume` to continue from a checkpoint.
TrainResult train_student(const RunConfig& run, const Corpus& train, const Corpus& heldout,
                          const TeacherProvider* teacher, const std::filesystem::path& out_dir,
                          const std::string& config_json = "{}",
                          const ModelState* resume = nullptr);

// Teacher pre-training (LM loss only).
TrainResult train_teacher(const RunConfig& run, const Corpus& train, const Corpus& heldout,
                          const std::filesystem::path& out_dir,
                          const std::string& config_json = "{}");

struct OnlineResult {
    RunReport teacher_report;
    RunReport student_report;
    std::filesystem::path shard_path;
    std::uint64_t window_begin = 0;
    std::uint64_t window_end = 0;
};

// Trains the teacher while capturing logits shards in the configured step
// window (first window for OnlineEarly, last for OnlineLate), then trains the
// student against the captured shard in capture order.
OnlineResult run_online_pipeline(const RunConfig& run, const Corpus& train,
                                 const Corpus& heldout, const std::filesystem::path& out_dir,
                                 const std::string& config_json = "{}");

}  // namespace pdforge
