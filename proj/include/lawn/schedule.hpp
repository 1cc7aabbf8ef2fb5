#ifndef LAWN_SCHEDULE_HPP
#define LAWN_SCHEDULE_HPP

#include <cmath>
#include <cstdint>
#include <string>

#include "core.hpp"

namespace lawn {

enum class ScheduleKind { lawn3, base2 };

/// Piecewise-linear learning-rate program, interpolated on the 1-based step
/// index.
///
///   lawn3: 0 -> peak over the free phase, restart 0 -> peak over the
///          constrained warmup, then peak -> 0 over the remaining steps.
///   base2: 0 -> peak over the warmup, then peak -> 0.
///
/// Epoch boundaries are rounded to the nearest step, so fractional epochs
/// (e.g. a 0.16-epoch warmup) are allowed.
class Schedule {
public:
    [[nodiscard]] static Schedule lawn3(double eta_peak, double e_free, double e_warmup, double e_total,
                                        std::uint64_t steps_per_epoch)
    {
        check_common(eta_peak, e_warmup, e_total, steps_per_epoch);
        if (!(e_free >= 0.0) || e_free + e_warmup > e_total) {
            throw ConfigError("schedule: lawn3 needs E_free >= 0 and E_free + E_warmup <= E_total");
        }
        Schedule s;
        s.kind_ = ScheduleKind::lawn3;
        s.eta_peak_ = eta_peak;
        s.free_steps_ = to_steps(e_free, steps_per_epoch);
        s.switch_step_ = s.free_steps_ + 1;
        s.warmup_steps_ = std::max<std::uint64_t>(1, to_steps(e_warmup, steps_per_epoch));
        s.total_steps_ = to_steps(e_total, steps_per_epoch);
        s.validate_layout();
        return s;
    }

    [[nodiscard]] static Schedule base2(double eta_peak, double e_warmup, double e_total,
                                        std::uint64_t steps_per_epoch)
    {
        check_common(eta_peak, e_warmup, e_total, steps_per_epoch);
        if (e_warmup > e_total) {
            throw ConfigError("schedule: base2 needs E_warmup <= E_total");
        }
        Schedule s;
        s.kind_ = ScheduleKind::base2;
        s.eta_peak_ = eta_peak;
        s.warmup_steps_ = std::max<std::uint64_t>(1, to_steps(e_warmup, steps_per_epoch));
        s.total_steps_ = to_steps(e_total, steps_per_epoch);
        s.validate_layout();
        return s;
    }

    /// Same program with the constrained phase starting at step k instead of
    /// right after the free warmup. Between the end of the free warmup and
    /// k - 1 the rate holds at the peak. Used by plateau-triggered switches.
    [[nodiscard]] Schedule with_switch_at(std::uint64_t k) const
    {
        if (kind_ != ScheduleKind::lawn3) {
            throw UsageError("schedule: only lawn3 has a switch step");
        }
        Schedule s = *this;
        s.switch_step_ = k;
        s.validate_layout();
        return s;
    }

    [[nodiscard]] double lr_at(std::uint64_t t) const
    {
        if (t < 1 || t > total_steps_) {
            throw UsageError("schedule: step " + std::to_string(t) + " outside [1, " + std::to_string(total_steps_) +
                             "]");
        }
        std::uint64_t phase_start = 0; // steps before the current warmup/decay
        if (kind_ == ScheduleKind::lawn3) {
            if (t < switch_step_) {
                return t >= free_steps_ ? eta_peak_ : ramp(t, free_steps_);
            }
            phase_start = switch_step_ - 1;
        }
        const std::uint64_t peak = phase_start + warmup_steps_;
        if (t <= peak) {
            return ramp(t - phase_start, warmup_steps_);
        }
        return eta_peak_ * static_cast<double>(total_steps_ - t) / static_cast<double>(total_steps_ - peak);
    }

    [[nodiscard]] ScheduleKind kind() const { return kind_; }
    [[nodiscard]] double eta_peak() const { return eta_peak_; }
    [[nodiscard]] std::uint64_t free_steps() const { return free_steps_; }
    [[nodiscard]] std::uint64_t switch_step() const { return switch_step_; }
    [[nodiscard]] std::uint64_t warmup_steps() const { return warmup_steps_; }
    [[nodiscard]] std::uint64_t total_steps() const { return total_steps_; }

    /// Step at which the (last) warmup reaches the peak.
    [[nodiscard]] std::uint64_t final_peak_step() const
    {
        return (kind_ == ScheduleKind::lawn3 ? switch_step_ - 1 : 0) + warmup_steps_;
    }

private:
    Schedule() = default;

    static std::uint64_t to_steps(double epochs, std::uint64_t steps_per_epoch)
    {
        return static_cast<std::uint64_t>(std::llround(epochs * static_cast<double>(steps_per_epoch)));
    }

    static void check_common(double eta_peak, double e_warmup, double e_total, std::uint64_t steps_per_epoch)
    {
        if (!(eta_peak > 0.0)) {
            throw ConfigError("schedule: eta_peak must be positive");
        }
        if (!(e_warmup > 0.0) || !(e_total > 0.0)) {
            throw ConfigError("schedule: E_warmup and E_total must be positive");
        }
        if (steps_per_epoch == 0) {
            throw ConfigError("schedule: steps_per_epoch must be positive");
        }
    }

    void validate_layout() const
    {
        if (total_steps_ == 0) {
            throw ConfigError("schedule: E_total rounds to zero steps");
        }
        // A switch past the last step means no constrained phase is scheduled.
        const bool switch_pending = kind_ == ScheduleKind::lawn3 && switch_step_ > total_steps_;
        if (!switch_pending && final_peak_step() > total_steps_) {
            throw ConfigError("schedule: warmup ends after the last step");
        }
        if (kind_ == ScheduleKind::lawn3 && switch_step_ <= free_steps_) {
            throw ConfigError("schedule: switch step precedes the end of the free warmup");
        }
    }

    [[nodiscard]] double ramp(std::uint64_t step_in_phase, std::uint64_t length) const
    {
        if (step_in_phase >= length) {
            return eta_peak_;
        }
        return eta_peak_ * static_cast<double>(step_in_phase) / static_cast<double>(length);
    }

    ScheduleKind kind_ = ScheduleKind::base2;
    double eta_peak_ = 0.0;
    std::uint64_t free_steps_ = 0;
    std::uint64_t switch_step_ = 1;
    std::uint64_t warmup_steps_ = 1;
    std::uint64_t total_steps_ = 1;
};

} // namespace lawn

#endif // LAWN_SCHEDULE_HPP
