#include "pdforge/logits_codec.hpp"

#include "pdforge/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pdforge {

void TruncationSpec::validate() const {
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("truncation p must be in (0, 1]");
    if (k < 1) throw ValidationError("truncation k must be >= 1");
}

std::uint32_t SparseTeacherDistribution::argmax_id() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[best]) best = i;
    }
    return kept_ids[best];
}

void SparseTeacherDistribution::validate(std::uint32_t vocab_size) const {
    if (kept_ids.empty() || kept_ids.size() != probs.size())
        throw ValidationError("sparse distribution must be non-empty with aligned ids/probs");
    double sum = 0.0;
    for (std::size_t i = 0; i < kept_ids.size(); ++i) {
        if (kept_ids[i] >= vocab_size)
            throw ValidationError("sparse distribution token id out of vocabulary range");
        if (i > 0 && kept_ids[i] <= kept_ids[i - 1])
            throw ValidationError("sparse distribution ids must be strictly increasing");
        if (!(probs[i] > 0.0) || !std::isfinite(probs[i]))
            throw ValidationError("sparse distribution probabilities must be positive and finite");
        sum += probs[i];
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("sparse distribution probabilities must sum to 1");
}

TemperaturePolicy TemperaturePolicy::static_tau(double tau) {
    TemperaturePolicy p;
    p.kind = Kind::Static;
    p.tau = tau;
    p.validate();
    return p;
}

TemperaturePolicy TemperaturePolicy::ada_sd() {
    TemperaturePolicy p;
    p.kind = Kind::AdaSD;
    return p;
}

TemperaturePolicy TemperaturePolicy::ada_h(double tau_max, double tau_min, double h_max) {
    TemperaturePolicy p;
    p.kind = Kind::AdaH;
    p.tau_max = tau_max;
    p.tau_min = tau_min;
    p.h_max = h_max;
    p.validate();
    return p;
}

void TemperaturePolicy::validate() const {
    switch (kind) {
        case Kind::Static:
            if (!(tau > 0.0) || !std::isfinite(tau))
                throw ValidationError("static temperature must be positive and finite");
            break;
        case Kind::AdaSD:
            break;
        case Kind::AdaH:
            if (!(tau_max > tau_min) || !(tau_min > 0.0))
                throw ValidationError("AdaH requires tau_max > tau_min > 0");
            if (!(h_max > 0.0)) throw ValidationError("AdaH requires H_max > 0");
            break;
    }
}

std::vector<double> softmax_with_temperature(std::span<const double> logits, double tau) {
    if (logits.empty()) throw ValidationError("softmax requires at least one logit");
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw ValidationError("softmax temperature must be positive and finite");
    double max = -std::numeric_limits<double>::infinity();
    for (double z : logits) {
        if (!std::isfinite(z)) throw ValidationError("softmax input contains a non-finite logit");
        max = std::max(max, z);
    }
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - max) / tau);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

SparseTeacherDistribution truncate_top_p_k(std::span<const double> logits,
                                           const TruncationSpec& spec) {
    spec.validate();
    const std::vector<double> probs = softmax_with_temperature(logits, 1.0);
    const std::size_t vocab = probs.size();

    // Descending probability, ties toward the lower id: deterministic output.
    std::vector<std::uint32_t> order(vocab);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });

    // Stage 1: smallest prefix whose cumulative mass reaches p (the crossing
    // token is kept). Rounding can leave the full scan short of p; keep all.
    std::size_t prefix = vocab;
    double cumulative = 0.0;
    for (std::size_t i = 0; i < vocab; ++i) {
        cumulative += probs[order[i]];
        if (cumulative >= spec.p) {
            prefix = i + 1;
            break;
        }
    }

    // Stage 2: cap at the k most probable of the prefix (already sorted).
    const std::size_t kept = std::min<std::size_t>(prefix, spec.k);

    std::vector<std::uint32_t> ids(order.begin(), order.begin() + kept);
    std::sort(ids.begin(), ids.end());

    SparseTeacherDistribution out;
    out.kept_ids = std::move(ids);
    out.probs.resize(kept);
    double mass = 0.0;
    for (std::size_t i = 0; i < kept; ++i) {
        out.probs[i] = probs[out.kept_ids[i]];
        mass += out.probs[i];
    }
    for (double& q : out.probs) q /= mass;
    return out;
}

double entropy(const SparseTeacherDistribution& dist) {
    double h = 0.0;
    for (double q : dist.probs) h -= q * std::log(q);
    return std::max(h, 0.0);
}

double resolve_temperature(const TemperaturePolicy& policy,
                           const SparseTeacherDistribution& dist) {
    policy.validate();
    switch (policy.kind) {
        case TemperaturePolicy::Kind::Static:
            return policy.tau;
        case TemperaturePolicy::Kind::AdaH: {
            const double h = std::clamp(entropy(dist), 0.0, policy.h_max);
            return policy.tau_max - (policy.tau_max - policy.tau_min) * h / policy.h_max;
        }
        case TemperaturePolicy::Kind::AdaSD: {
            // std of ln(probs) equals the std of the kept logits by shift
            // invariance; floored so tau stays positive.
            const std::size_t n = dist.probs.size();
            double mean = 0.0;
            for (double q : dist.probs) mean += std::log(q);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (double q : dist.probs) {
                const double d = std::log(q) - mean;
                var += d * d;
            }
            var /= static_cast<double>(n);
            return std::max(std::sqrt(var), 1e-3);
        }
    }
    throw ValidationError("unknown temperature policy");
}

SparseTeacherDistribution apply_temperature(const SparseTeacherDistribution& dist, double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw ValidationError("apply_temperature requires tau > 0");
    if (tau == 1.0) return dist;
    std::vector<double> scaled(dist.probs.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = std::log(dist.probs[i]);
    SparseTeacherDistribution out;
    out.kept_ids = dist.kept_ids;
    out.probs = softmax_with_temperature(scaled, tau);
    return out;
}

SparseTeacherDistribution process_logits(std::span<const double> logits,
                                         const TruncationSpec& spec,
                                         const TemperaturePolicy& policy) {
    SparseTeacherDistribution truncated = truncate_top_p_k(logits, spec);
    const double tau = resolve_temperature(policy, truncated);
    return apply_temperature(truncated, tau);
}

StorageEstimate estimate_storage(std::uint64_t vocab_size, std::uint64_t token_count,
                                 double avg_kept_entries, std::uint32_t bytes_per_entry) {
    if (avg_kept_entries < 0.0) throw ValidationError("avg_kept_entries must be non-negative");
    if (bytes_per_entry == 0) throw ValidationError("bytes_per_entry must be positive");
    StorageEstimate e;
    e.dense_bytes = static_cast<double>(vocab_size) * 4.0 * static_cast<double>(token_count);
    e.sparse_bytes =
        avg_kept_entries * static_cast<double>(bytes_per_entry) * static_cast<double>(token_count);
    e.reduction_factor = e.sparse_bytes > 0.0
                             ? e.dense_bytes / e.sparse_bytes
                             : std::numeric_limits<double>::infinity();
    return e;
}

}  // namespace pdforge
