#include "pdforge/config_json.hpp"

#include <fstream>
#include <set>
#include <string>

namespace pdforge {

namespace {

using nlohmann::json;

void check_object(const json& j, const char* ctx) {
    if (!j.is_object())
        throw ValidationError(std::string(ctx) + " config must be a JSON object");
}

void check_keys(const json& j, const std::set<std::string>& allowed, const char* ctx) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.contains(key))
            throw ValidationError("unknown key '" + key + "' in " + ctx + " config");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (const auto it = j.find(key); it != j.end()) {
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ValidationError(std::string("bad value type for key '") + key + "'");
        }
    }
}

std::string kind_of(const json& j, const char* ctx, const std::string& fallback) {
    std::string kind = fallback;
    if (j.contains("kind")) {
        if (!j.at("kind").is_string())
            throw ValidationError(std::string(ctx) + " kind must be a string");
        kind = j.at("kind").get<std::string>();
    }
    return kind;
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size},
                {"hidden_size", c.hidden_size},
                {"ffn_hidden_size", c.ffn_hidden_size},
                {"num_layers", c.num_layers},
                {"num_attention_heads", c.num_attention_heads},
                {"num_query_groups", c.num_query_groups},
                {"tie_embeddings", c.tie_embeddings},
                {"max_seq_len", c.max_seq_len},
                {"init_seed", c.init_seed}};
}

ModelConfig model_config_from_json(const json& j, const ModelConfig& base) {
    check_object(j, "model");
    check_keys(j,
               {"vocab_size", "hidden_size", "ffn_hidden_size", "num_layers",
                "num_attention_heads", "num_query_groups", "tie_embeddings", "max_seq_len",
                "init_seed"},
               "model");
    ModelConfig c = base;
    read(j, "vocab_size", c.vocab_size);
    read(j, "hidden_size", c.hidden_size);
    read(j, "ffn_hidden_size", c.ffn_hidden_size);
    read(j, "num_layers", c.num_layers);
    read(j, "num_attention_heads", c.num_attention_heads);
    read(j, "num_query_groups", c.num_query_groups);
    read(j, "tie_embeddings", c.tie_embeddings);
    read(j, "max_seq_len", c.max_seq_len);
    read(j, "init_seed", c.init_seed);
    c.validate();
    return c;
}

json truncation_to_json(const TruncationSpec& s) {
    return json{{"p", s.p}, {"k", s.k}};
}

TruncationSpec truncation_from_json(const json& j, const TruncationSpec& base) {
    check_object(j, "truncation");
    check_keys(j, {"p", "k"}, "truncation");
    TruncationSpec s = base;
    read(j, "p", s.p);
    read(j, "k", s.k);
    s.validate();
    return s;
}

json temperature_to_json(const TemperaturePolicy& p) {
    switch (p.kind) {
        case TemperaturePolicy::Kind::Static:
            return json{{"kind", "static"}, {"tau", p.tau}};
        case TemperaturePolicy::Kind::AdaSD:
            return json{{"kind", "ada_sd"}};
        case TemperaturePolicy::Kind::AdaH:
            return json{{"kind", "ada_h"},
                        {"tau_max", p.tau_max},
                        {"tau_min", p.tau_min},
                        {"h_max", p.h_max}};
    }
    return json::object();
}

TemperaturePolicy temperature_from_json(const json& j) {
    check_object(j, "temperature");
    const std::string kind = kind_of(j, "temperature", "static");
    if (kind == "static") {
        check_keys(j, {"kind", "tau"}, "temperature");
        double tau = 1.0;
        read(j, "tau", tau);
        return TemperaturePolicy::static_tau(tau);
    }
    if (kind == "ada_sd") {
        check_keys(j, {"kind"}, "temperature");
        return TemperaturePolicy::ada_sd();
    }
    if (kind == "ada_h") {
        check_keys(j, {"kind", "tau_max", "tau_min", "h_max"}, "temperature");
        TemperaturePolicy base;
        double tau_max = base.tau_max, tau_min = base.tau_min, h_max = base.h_max;
        read(j, "tau_max", tau_max);
        read(j, "tau_min", tau_min);
        read(j, "h_max", h_max);
        return TemperaturePolicy::ada_h(tau_max, tau_min, h_max);
    }
    throw ValidationError("unknown temperature kind: " + kind);
}

json alpha_schedule_to_json(const AlphaSchedule& s) {
    switch (s.kind) {
        case AlphaSchedule::Kind::Static:
            return json{{"kind", "static"}, {"value", s.value}};
        case AlphaSchedule::Kind::LinearInc:
            return json{{"kind", "linear_inc"}};
        case AlphaSchedule::Kind::LinearDec:
            return json{{"kind", "linear_dec"}};
        case AlphaSchedule::Kind::Period:
            return json{{"kind", "period"}, {"high", s.high}, {"every", s.every}};
        case AlphaSchedule::Kind::WsdAlpha:
            return json{{"kind", "wsd_alpha"},
                        {"peak", s.peak},
                        {"warmup_ratio", s.warmup_ratio},
                        {"decay_ratio", s.decay_ratio}};
        case AlphaSchedule::Kind::WsdBeta:
            return json{{"kind", "wsd_beta"},
                        {"peak", s.peak},
                        {"warmup_ratio", s.warmup_ratio},
                        {"decay_ratio", s.decay_ratio}};
    }
    return json::object();
}

AlphaSchedule alpha_schedule_from_json(const json& j) {
    check_object(j, "alpha");
    const std::string kind = kind_of(j, "alpha", "static");
    if (kind == "static") {
        check_keys(j, {"kind", "value"}, "alpha");
        double value = 0.9;
        read(j, "value", value);
        return AlphaSchedule::static_alpha(value);
    }
    if (kind == "linear_inc") {
        check_keys(j, {"kind"}, "alpha");
        return AlphaSchedule::linear_inc();
    }
    if (kind == "linear_dec") {
        check_keys(j, {"kind"}, "alpha");
        return AlphaSchedule::linear_dec();
    }
    if (kind == "period") {
        check_keys(j, {"kind", "high", "every"}, "alpha");
        double high = 0.9;
        std::uint64_t every = 4;
        read(j, "high", high);
        read(j, "every", every);
        return AlphaSchedule::period(high, every);
    }
    if (kind == "wsd_alpha" || kind == "wsd_beta") {
        check_keys(j, {"kind", "peak", "warmup_ratio", "decay_ratio"}, "alpha");
        double peak = 1.0, warmup = 0.10, decay = 0.01;
        read(j, "peak", peak);
        read(j, "warmup_ratio", warmup);
        read(j, "decay_ratio", decay);
        return kind == "wsd_alpha" ? AlphaSchedule::wsd_alpha(peak, warmup, decay)
                                   : AlphaSchedule::wsd_beta(peak, warmup, decay);
    }
    throw ValidationError("unknown alpha schedule kind: " + kind);
}

json lr_schedule_to_json(const LRSchedule& s) {
    if (s.kind == LRSchedule::Kind::Cosine) {
        return json{{"kind", "cosine"},
                    {"lr_max", s.lr_max},
                    {"lr_min", s.lr_min},
                    {"warmup_ratio", s.warmup_ratio}};
    }
    return json{{"kind", "wsd"},
                {"lr_max", s.lr_max},
                {"lr_min", s.lr_min},
                {"warmup_ratio", s.warmup_ratio},
                {"decay_ratio", s.decay_ratio}};
}

LRSchedule lr_schedule_from_json(const json& j) {
    check_object(j, "lr");
    const std::string kind = kind_of(j, "lr", "cosine");
    if (kind == "cosine") {
        check_keys(j, {"kind", "lr_max", "lr_min", "warmup_ratio"}, "lr");
        double lr_max = 6e-4, lr_min = 6e-5, warmup = 0.01;
        read(j, "lr_max", lr_max);
        read(j, "lr_min", lr_min);
        read(j, "warmup_ratio", warmup);
        return LRSchedule::cosine(lr_max, lr_min, warmup);
    }
    if (kind == "wsd") {
        check_keys(j, {"kind", "lr_max", "lr_min", "warmup_ratio", "decay_ratio"}, "lr");
        double lr_max = 6e-4, lr_min = 6e-5, warmup = 0.10, decay = 0.01;
        read(j, "lr_max", lr_max);
        read(j, "lr_min", lr_min);
        read(j, "warmup_ratio", warmup);
        read(j, "decay_ratio", decay);
        return LRSchedule::wsd(lr_max, lr_min, warmup, decay);
    }
    throw ValidationError("unknown lr schedule kind: " + kind);
}

json corpus_spec_to_json(const CorpusSpec& s) {
    return json{{"vocab_size", s.vocab_size},
                {"seed", s.seed},
                {"sequence_count", s.sequence_count},
                {"chunk_len", s.chunk_len},
                {"train_ratio", s.train_ratio},
                {"skew", s.skew},
                {"context_modes", s.context_modes}};
}

CorpusSpec corpus_spec_from_json(const json& j, const CorpusSpec& base) {
    check_object(j, "corpus");
    check_keys(j,
               {"vocab_size", "seed", "sequence_count", "chunk_len", "train_ratio", "skew",
                "context_modes"},
               "corpus");
    CorpusSpec s = base;
    read(j, "vocab_size", s.vocab_size);
    read(j, "seed", s.seed);
    read(j, "sequence_count", s.sequence_count);
    read(j, "chunk_len", s.chunk_len);
    read(j, "train_ratio", s.train_ratio);
    read(j, "skew", s.skew);
    read(j, "context_modes", s.context_modes);
    s.validate();
    return s;
}

json run_config_to_json(const RunConfig& c) {
    return json{{"teacher", model_config_to_json(c.teacher)},
                {"student", model_config_to_json(c.student)},
                {"loss", loss_kind_name(c.loss)},
                {"truncation", truncation_to_json(c.truncation)},
                {"temperature", temperature_to_json(c.temperature)},
                {"alpha", alpha_schedule_to_json(c.alpha)},
                {"lr", lr_schedule_to_json(c.lr)},
                {"teacher_lr", lr_schedule_to_json(c.teacher_lr)},
                {"batch_size", c.batch_size},
                {"chunk_len", c.chunk_len},
                {"total_steps", c.total_steps},
                {"teacher_total_steps", c.teacher_total_steps},
                {"window_steps", c.window_steps},
                {"eval_every", c.eval_every},
                {"checkpoint_every", c.checkpoint_every},
                {"mode", run_mode_name(c.mode)},
                {"seed", c.seed},
                {"shuffle", c.shuffle},
                {"relabel_targets_from_shard", c.relabel_targets_from_shard},
                {"precision", precision_name(c.precision)}};
}

RunConfig run_config_from_json(const json& j, const RunConfig& base) {
    check_object(j, "run");
    check_keys(j,
               {"teacher", "student", "loss", "truncation", "temperature", "alpha", "lr",
                "teacher_lr", "batch_size", "chunk_len", "total_steps", "teacher_total_steps",
                "window_steps", "eval_every", "checkpoint_every", "mode", "seed", "shuffle",
                "relabel_targets_from_shard", "precision"},
               "run");
    RunConfig c = base;
    if (j.contains("teacher")) c.teacher = model_config_from_json(j.at("teacher"), base.teacher);
    if (j.contains("student")) c.student = model_config_from_json(j.at("student"), base.student);
    if (j.contains("loss")) c.loss = loss_kind_from_name(j.at("loss").get<std::string>());
    if (j.contains("truncation"))
        c.truncation = truncation_from_json(j.at("truncation"), base.truncation);
    if (j.contains("temperature")) c.temperature = temperature_from_json(j.at("temperature"));
    if (j.contains("alpha")) c.alpha = alpha_schedule_from_json(j.at("alpha"));
    if (j.contains("lr")) c.lr = lr_schedule_from_json(j.at("lr"));
    if (j.contains("teacher_lr")) c.teacher_lr = lr_schedule_from_json(j.at("teacher_lr"));
    read(j, "batch_size", c.batch_size);
    read(j, "chunk_len", c.chunk_len);
    read(j, "total_steps", c.total_steps);
    read(j, "teacher_total_steps", c.teacher_total_steps);
    read(j, "window_steps", c.window_steps);
    read(j, "eval_every", c.eval_every);
    read(j, "checkpoint_every", c.checkpoint_every);
    if (j.contains("mode")) c.mode = run_mode_from_name(j.at("mode").get<std::string>());
    read(j, "seed", c.seed);
    read(j, "shuffle", c.shuffle);
    read(j, "relabel_targets_from_shard", c.relabel_targets_from_shard);
    if (j.contains("precision"))
        c.precision = precision_from_name(j.at("precision").get<std::string>());
    c.validate();
    return c;
}

CliConfig cli_config_from_json(const json& j) {
    check_object(j, "top-level");
    check_keys(j, {"run", "corpus"}, "top-level");
    CliConfig c;
    if (j.contains("run")) c.run = run_config_from_json(j.at("run"));
    if (j.contains("corpus")) c.corpus = corpus_spec_from_json(j.at("corpus"));
    return c;
}

CliConfig load_cli_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open config file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("malformed config JSON " + path.string() + ": " + e.what());
    }
    return cli_config_from_json(j);
}

}  // namespace pdforge
