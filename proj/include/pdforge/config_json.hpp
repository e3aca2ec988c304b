#pragma once

#include "pdforge/corpus.hpp"
#include "pdforge/pd_trainer.hpp"

#include <json.hpp>

namespace pdforge {

// Strict (unknown keys rejected) JSON forms of the config structs. Every
// field is optional on input and defaults to the struct default; output
// always names every effective field so reports echo the full configuration.

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, const ModelConfig& base = {});

nlohmann::json truncation_to_json(const TruncationSpec& s);
TruncationSpec truncation_from_json(const nlohmann::json& j, const TruncationSpec& base = {});

nlohmann::json temperature_to_json(const TemperaturePolicy& p);
TemperaturePolicy temperature_from_json(const nlohmann::json& j);

nlohmann::json alpha_schedule_to_json(const AlphaSchedule& s);
AlphaSchedule alpha_schedule_from_json(const nlohmann::json& j);

nlohmann::json lr_schedule_to_json(const LRSchedule& s);
LRSchedule lr_schedule_from_json(const nlohmann::json& j);

nlohmann::json corpus_spec_to_json(const CorpusSpec& s);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j, const CorpusSpec& base = {});

nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base = {});

// Top-level config file: {"run": {...}, "corpus": {...}}, both optional.
struct CliConfig {
    RunConfig run;
    CorpusSpec corpus;
};

CliConfig cli_config_from_json(const nlohmann::json& j);
CliConfig load_cli_config(const std::filesystem::path& path);

}  // namespace pdforge
