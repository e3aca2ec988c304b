#pragma once

#include "pdforge/logits_codec.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace pdforge {

enum class LossKind { NLL, KLD, MSE };

const char* loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(std::string_view name);

// Per-token mean loss plus its gradient with respect to the student logits
// (T x V, row-major). All arithmetic is 64-bit regardless of model precision.
struct LossOutput {
    double value = 0.0;
    std::vector<double> grad;
};

// Mean next-token negative log-likelihood of the ground-truth targets.
LossOutput lm_loss(std::span<const double> student_logits, std::size_t vocab,
                   std::span<const std::uint32_t> targets);

// Soft cross-entropy against the truncated teacher vector: the NLL reading of
// the distillation loss. Reduces to lm_loss when the teacher is one-hot.
LossOutput kd_soft_ce(std::span<const double> student_logits, std::size_t vocab,
                      std::span<const SparseTeacherDistribution> teacher);

// KL(teacher || student) over the kept support. Same gradient as kd_soft_ce;
// the value differs by the teacher entropy, which is constant in the student.
LossOutput kd_kld(std::span<const double> student_logits, std::size_t vocab,
                  std::span<const SparseTeacherDistribution> teacher);

// Squared error between student probabilities and teacher probabilities over
// the kept support only; gradient goes through the full softmax Jacobian.
LossOutput kd_mse(std::span<const double> student_logits, std::size_t vocab,
                  std::span<const SparseTeacherDistribution> teacher);

LossOutput kd_loss(LossKind kind, std::span<const double> student_logits, std::size_t vocab,
                   std::span<const SparseTeacherDistribution> teacher);

// (1 - alpha) * lm + alpha * kd, value and gradient alike.
LossOutput combined_loss(double alpha, const LossOutput& lm, const LossOutput& kd);

}  // namespace pdforge
