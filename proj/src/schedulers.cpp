#include "pdforge/schedulers.hpp"

#include "pdforge/common.hpp"

#include <cmath>

namespace pdforge {

namespace {

std::uint64_t rounded_steps(double ratio, std::uint64_t total) {
    return static_cast<std::uint64_t>(std::llround(ratio * static_cast<double>(total)));
}

void check_step(std::uint64_t step, std::uint64_t total) {
    if (total == 0) throw ValidationError("total_steps must be positive");
    if (step > total) throw ValidationError("step exceeds total_steps");
}

// Warmup-stable-decay shape rising to `peak`: linear over [0, W), constant on
// [W, D), cosine down to 0 over [D, total].
double wsd_shape(double peak, double warmup_ratio, double decay_ratio, std::uint64_t step,
                 std::uint64_t total) {
    const std::uint64_t warm = rounded_steps(warmup_ratio, total);
    const std::uint64_t decay_start = total - rounded_steps(decay_ratio, total);
    if (step < warm)
        return peak * static_cast<double>(step) / static_cast<double>(warm);
    if (step < decay_start) return peak;
    const std::uint64_t span = total - decay_start;
    if (span == 0) return peak;
    const double u = static_cast<double>(step - decay_start) / static_cast<double>(span);
    return peak * (1.0 + std::cos(M_PI * u)) / 2.0;
}

}  // namespace

AlphaSchedule AlphaSchedule::static_alpha(double value) {
    AlphaSchedule s;
    s.kind = Kind::Static;
    s.value = value;
    s.validate();
    return s;
}

AlphaSchedule AlphaSchedule::linear_inc() {
    AlphaSchedule s;
    s.kind = Kind::LinearInc;
    return s;
}

AlphaSchedule AlphaSchedule::linear_dec() {
    AlphaSchedule s;
    s.kind = Kind::LinearDec;
    return s;
}

AlphaSchedule AlphaSchedule::period(double high, std::uint64_t every) {
    AlphaSchedule s;
    s.kind = Kind::Period;
    s.high = high;
    s.every = every;
    s.validate();
    return s;
}

AlphaSchedule AlphaSchedule::wsd_alpha(double peak, double warmup_ratio, double decay_ratio) {
    AlphaSchedule s;
    s.kind = Kind::WsdAlpha;
    s.peak = peak;
    s.warmup_ratio = warmup_ratio;
    s.decay_ratio = decay_ratio;
    s.validate();
    return s;
}

AlphaSchedule AlphaSchedule::wsd_beta(double peak, double warmup_ratio, double decay_ratio) {
    AlphaSchedule s = wsd_alpha(peak, warmup_ratio, decay_ratio);
    s.kind = Kind::WsdBeta;
    return s;
}

void AlphaSchedule::validate() const {
    switch (kind) {
        case Kind::Static:
            if (!(value >= 0.0 && value <= 1.0))
                throw ValidationError("static alpha must be in [0, 1]");
            break;
        case Kind::Period:
            if (!(high >= 0.0 && high <= 1.0))
                throw ValidationError("period alpha high must be in [0, 1]");
            if (every == 0) throw ValidationError("period length must be positive");
            break;
        case Kind::WsdAlpha:
        case Kind::WsdBeta:
            if (!(peak > 0.0 && peak <= 1.0)) throw ValidationError("WSD peak must be in (0, 1]");
            if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0) ||
                !(decay_ratio > 0.0 && decay_ratio < 1.0) ||
                !(warmup_ratio + decay_ratio < 1.0))
                throw ValidationError("WSD ratios must lie in (0, 1) with warmup + decay < 1");
            break;
        case Kind::LinearInc:
        case Kind::LinearDec:
            break;
    }
}

LRSchedule LRSchedule::cosine(double lr_max, double lr_min, double warmup_ratio) {
    LRSchedule s;
    s.kind = Kind::Cosine;
    s.lr_max = lr_max;
    s.lr_min = lr_min;
    s.warmup_ratio = warmup_ratio;
    s.validate();
    return s;
}

LRSchedule LRSchedule::wsd(double lr_max, double lr_min, double warmup_ratio, double decay_ratio) {
    LRSchedule s;
    s.kind = Kind::Wsd;
    s.lr_max = lr_max;
    s.lr_min = lr_min;
    s.warmup_ratio = warmup_ratio;
    s.decay_ratio = decay_ratio;
    s.validate();
    return s;
}

void LRSchedule::validate() const {
    if (!(lr_max > lr_min && lr_min > 0.0))
        throw ValidationError("LR schedule requires lr_max > lr_min > 0");
    if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0))
        throw ValidationError("LR warmup ratio must be in (0, 1)");
    if (kind == Kind::Wsd &&
        (!(decay_ratio > 0.0 && decay_ratio < 1.0) || !(warmup_ratio + decay_ratio < 1.0)))
        throw ValidationError("WSD LR ratios must lie in (0, 1) with warmup + decay < 1");
}

double alpha_at(const AlphaSchedule& schedule, std::uint64_t step, std::uint64_t total_steps) {
    schedule.validate();
    check_step(step, total_steps);
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    switch (schedule.kind) {
        case AlphaSchedule::Kind::Static:
            return schedule.value;
        case AlphaSchedule::Kind::LinearInc:
            return progress;
        case AlphaSchedule::Kind::LinearDec:
            return 1.0 - progress;
        case AlphaSchedule::Kind::Period:
            return (step % schedule.every) == schedule.every - 1 ? schedule.high : 0.0;
        case AlphaSchedule::Kind::WsdAlpha:
            return wsd_shape(schedule.peak, schedule.warmup_ratio, schedule.decay_ratio, step,
                             total_steps);
        case AlphaSchedule::Kind::WsdBeta:
            return 1.0 - wsd_shape(schedule.peak, schedule.warmup_ratio, schedule.decay_ratio,
                                   step, total_steps);
    }
    throw ValidationError("unknown alpha schedule");
}

double lr_at(const LRSchedule& schedule, std::uint64_t step, std::uint64_t total_steps) {
    schedule.validate();
    check_step(step, total_steps);
    const std::uint64_t warm = rounded_steps(schedule.warmup_ratio, total_steps);
    if (step < warm)
        return schedule.lr_max * static_cast<double>(step) / static_cast<double>(warm);
    switch (schedule.kind) {
        case LRSchedule::Kind::Cosine: {
            const std::uint64_t span = total_steps - warm;
            if (span == 0) return schedule.lr_max;
            const double u = static_cast<double>(step - warm) / static_cast<double>(span);
            // Blend form so the endpoints hit lr_max / lr_min exactly.
            const double w = (1.0 + std::cos(M_PI * u)) / 2.0;
            return schedule.lr_max * w + schedule.lr_min * (1.0 - w);
        }
        case LRSchedule::Kind::Wsd: {
            const std::uint64_t decay_start =
                total_steps - rounded_steps(schedule.decay_ratio, total_steps);
            if (step < decay_start) return schedule.lr_max;
            const std::uint64_t span = total_steps - decay_start;
            if (span == 0) return schedule.lr_max;
            const double u = static_cast<double>(step - decay_start) / static_cast<double>(span);
            const double w = (1.0 + std::cos(M_PI * u)) / 2.0;
            return schedule.lr_max * w + schedule.lr_min * (1.0 - w);
        }
    }
    throw ValidationError("unknown LR schedule");
}

}  // namespace pdforge
