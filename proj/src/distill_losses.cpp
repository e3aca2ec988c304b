#include "pdforge/distill_losses.hpp"

#include "pdforge/common.hpp"

#include <cmath>
#include <string>

namespace pdforge {

namespace {

std::size_t sequence_length(std::span<const double> logits, std::size_t vocab,
                            std::size_t expected_rows) {
    if (vocab == 0) throw ValidationError("vocabulary size must be positive");
    if (logits.size() != expected_rows * vocab)
        throw ValidationError("student logits shape does not match sequence length x vocab");
    if (expected_rows == 0) throw ValidationError("loss requires at least one position");
    return expected_rows;
}

// Writes softmax(row) into out; returns log-sum-exp for log-prob queries.
double softmax_row(std::span<const double> row, std::span<double> out) {
    double max = row[0];
    for (double z : row) max = std::max(max, z);
    double sum = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        out[i] = std::exp(row[i] - max);
        sum += out[i];
    }
    for (std::size_t i = 0; i < row.size(); ++i) out[i] /= sum;
    return max + std::log(sum);
}

}  // namespace

const char* loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::NLL: return "nll";
        case LossKind::KLD: return "kld";
        case LossKind::MSE: return "mse";
    }
    return "?";
}

LossKind loss_kind_from_name(std::string_view name) {
    if (name == "nll") return LossKind::NLL;
    if (name == "kld") return LossKind::KLD;
    if (name == "mse") return LossKind::MSE;
    throw ValidationError("unknown loss kind: " + std::string(name));
}

LossOutput lm_loss(std::span<const double> student_logits, std::size_t vocab,
                   std::span<const std::uint32_t> targets) {
    const std::size_t T = sequence_length(student_logits, vocab, targets.size());
    LossOutput out;
    out.grad.assign(T * vocab, 0.0);
    const double inv_t = 1.0 / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
        if (targets[t] >= vocab) throw ValidationError("lm_loss target id out of range");
        const auto row = student_logits.subspan(t * vocab, vocab);
        auto grad_row = std::span<double>(out.grad).subspan(t * vocab, vocab);
        const double lse = softmax_row(row, grad_row);
        out.value += (lse - row[targets[t]]) * inv_t;
        for (std::size_t v = 0; v < vocab; ++v) grad_row[v] *= inv_t;
        grad_row[targets[t]] -= inv_t;
    }
    return out;
}

LossOutput kd_soft_ce(std::span<const double> student_logits, std::size_t vocab,
                      std::span<const SparseTeacherDistribution> teacher) {
    const std::size_t T = sequence_length(student_logits, vocab, teacher.size());
    LossOutput out;
    out.grad.assign(T * vocab, 0.0);
    const double inv_t = 1.0 / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
        const auto& q = teacher[t];
        const auto row = student_logits.subspan(t * vocab, vocab);
        auto grad_row = std::span<double>(out.grad).subspan(t * vocab, vocab);
        const double lse = softmax_row(row, grad_row);
        for (std::size_t v = 0; v < vocab; ++v) grad_row[v] *= inv_t;
        for (std::size_t i = 0; i < q.size(); ++i) {
            const std::uint32_t id = q.kept_ids[i];
            if (id >= vocab) throw ValidationError("teacher kept id out of vocabulary range");
            out.value += q.probs[i] * (lse - row[id]) * inv_t;
            grad_row[id] -= q.probs[i] * inv_t;
        }
    }
    return out;
}

LossOutput kd_kld(std::span<const double> student_logits, std::size_t vocab,
                  std::span<const SparseTeacherDistribution> teacher) {
    // Value = soft CE minus the teacher entropy; gradient is identical.
    LossOutput out = kd_soft_ce(student_logits, vocab, teacher);
    const double inv_t = 1.0 / static_cast<double>(teacher.size());
    for (const auto& q : teacher) out.value -= entropy(q) * inv_t;
    return out;
}

LossOutput kd_mse(std::span<const double> student_logits, std::size_t vocab,
                  std::span<const SparseTeacherDistribution> teacher) {
    const std::size_t T = sequence_length(student_logits, vocab, teacher.size());
    LossOutput out;
    out.grad.assign(T * vocab, 0.0);
    const double inv_t = 1.0 / static_cast<double>(T);
    std::vector<double> probs(vocab);
    for (std::size_t t = 0; t < T; ++t) {
        const auto& q = teacher[t];
        const auto row = student_logits.subspan(t * vocab, vocab);
        auto grad_row = std::span<double>(out.grad).subspan(t * vocab, vocab);
        softmax_row(row, probs);
        // dL/dp is supported only on the kept ids; chain through the softmax
        // Jacobian: dL/ds_j = p_j * (g_j - <g, p>).
        double g_dot_p = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            const std::uint32_t id = q.kept_ids[i];
            if (id >= vocab) throw ValidationError("teacher kept id out of vocabulary range");
            const double residual = probs[id] - q.probs[i];
            out.value += residual * residual * inv_t;
            const double g = 2.0 * residual * inv_t;
            grad_row[id] += g;  // becomes p_j * g_j below
            g_dot_p += g * probs[id];
        }
        for (std::size_t v = 0; v < vocab; ++v)
            grad_row[v] = probs[v] * (grad_row[v] - g_dot_p);
    }
    return out;
}

LossOutput kd_loss(LossKind kind, std::span<const double> student_logits, std::size_t vocab,
                   std::span<const SparseTeacherDistribution> teacher) {
    switch (kind) {
        case LossKind::NLL: return kd_soft_ce(student_logits, vocab, teacher);
        case LossKind::KLD: return kd_kld(student_logits, vocab, teacher);
        case LossKind::MSE: return kd_mse(student_logits, vocab, teacher);
    }
    throw ValidationError("unknown loss kind");
}

LossOutput combined_loss(double alpha, const LossOutput& lm, const LossOutput& kd) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must be in [0, 1]");
    if (lm.grad.size() != kd.grad.size())
        throw ValidationError("combined_loss gradient shapes do not match");
    LossOutput out;
    out.value = (1.0 - alpha) * lm.value + alpha * kd.value;
    out.grad.resize(lm.grad.size());
    for (std::size_t i = 0; i < out.grad.size(); ++i)
        out.grad[i] = (1.0 - alpha) * lm.grad[i] + alpha * kd.grad[i];
    return out;
}

}  // namespace pdforge
