#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace pdforge {

// Two-stage truncation: keep the smallest descending-probability prefix with
// cumulative mass >= p, then cap at the k most probable tokens.
struct TruncationSpec {
    double p = 0.95;
    std::uint32_t k = 100;

    void validate() const;
};

// Truncated, renormalized teacher distribution over a kept token-id subset.
// kept_ids strictly increasing; probs positive, summing to 1.
struct SparseTeacherDistribution {
    std::vector<std::uint32_t> kept_ids;
    std::vector<double> probs;

    std::size_t size() const { return kept_ids.size(); }
    // Token id with the highest probability (lowest id wins ties).
    std::uint32_t argmax_id() const;
    void validate(std::uint32_t vocab_size) const;
};

struct TemperaturePolicy {
    enum class Kind { Static, AdaSD, AdaH };

    Kind kind = Kind::Static;
    double tau = 1.0;      // Static
    double tau_max = 2.0;  // AdaH
    double tau_min = 0.1;
    double h_max = 4.8;    // nats

    static TemperaturePolicy static_tau(double tau);
    static TemperaturePolicy ada_sd();
    static TemperaturePolicy ada_h(double tau_max, double tau_min, double h_max);
    void validate() const;
};

// softmax(logits / tau), max-stabilized. Throws ValidationError on non-finite
// input or tau <= 0.
std::vector<double> softmax_with_temperature(std::span<const double> logits, double tau);

// Top-p-k truncation at tau=1 with renormalization over the kept set.
// Ties in probability are broken toward the lower token id. Always keeps at
// least one token.
SparseTeacherDistribution truncate_top_p_k(std::span<const double> logits,
                                           const TruncationSpec& spec);

// Shannon entropy in nats over the kept entries.
double entropy(const SparseTeacherDistribution& dist);

// Static: tau as configured. AdaH: tau_max - (tau_max - tau_min) * H / H_max
// with H clamped to [0, H_max]. AdaSD: population std of ln(probs) over the
// kept entries, floored at 1e-3.
double resolve_temperature(const TemperaturePolicy& policy,
                           const SparseTeacherDistribution& dist);

// Distribution proportional to probs^(1/tau) over the same kept ids; equals
// softmax(kept logits / tau) restricted to the kept set.
SparseTeacherDistribution apply_temperature(const SparseTeacherDistribution& dist, double tau);

// Composition: truncate -> resolve temperature -> apply temperature.
SparseTeacherDistribution process_logits(std::span<const double> logits,
                                         const TruncationSpec& spec,
                                         const TemperaturePolicy& policy);

struct StorageEstimate {
    double dense_bytes = 0.0;
    double sparse_bytes = 0.0;
    double reduction_factor = 0.0;  // +inf when sparse_bytes == 0
};

// Dense side assumes 4-byte float storage of the full vocabulary per token.
StorageEstimate estimate_storage(std::uint64_t vocab_size, std::uint64_t token_count,
                                 double avg_kept_entries, std::uint32_t bytes_per_entry);

}  // namespace pdforge
