#pragma once

#include <cstdint>

namespace pdforge {

// Step-indexed mixing weight for the combined objective. Stateless: every
// value is a pure function of (step, total_steps), so runs can resume from
// any checkpoint without replaying the schedule.
struct AlphaSchedule {
    enum class Kind { Static, LinearInc, LinearDec, Period, WsdAlpha, WsdBeta };

    Kind kind = Kind::Static;
    double value = 0.9;         // Static
    double high = 0.9;          // Period
    std::uint64_t every = 4;    // Period
    double peak = 1.0;          // WSD variants
    double warmup_ratio = 0.10;
    double decay_ratio = 0.01;

    static AlphaSchedule static_alpha(double value);
    static AlphaSchedule linear_inc();
    static AlphaSchedule linear_dec();
    static AlphaSchedule period(double high = 0.9, std::uint64_t every = 4);
    static AlphaSchedule wsd_alpha(double peak = 1.0, double warmup_ratio = 0.10,
                                   double decay_ratio = 0.01);
    static AlphaSchedule wsd_beta(double peak = 1.0, double warmup_ratio = 0.10,
                                  double decay_ratio = 0.01);
    void validate() const;
};

struct LRSchedule {
    enum class Kind { Cosine, Wsd };

    Kind kind = Kind::Cosine;
    double lr_max = 6e-4;
    double lr_min = 6e-5;
    double warmup_ratio = 0.01;  // WSD default is 0.10
    double decay_ratio = 0.01;   // WSD only

    static LRSchedule cosine(double lr_max = 6e-4, double lr_min = 6e-5,
                             double warmup_ratio = 0.01);
    static LRSchedule wsd(double lr_max = 6e-4, double lr_min = 6e-5,
                          double warmup_ratio = 0.10, double decay_ratio = 0.01);
    void validate() const;
};

double alpha_at(const AlphaSchedule& schedule, std::uint64_t step, std::uint64_t total_steps);
double lr_at(const LRSchedule& schedule, std::uint64_t step, std::uint64_t total_steps);

}  // namespace pdforge
