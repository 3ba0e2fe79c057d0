#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mela/errors.hpp"

namespace mela::control {

/// First-order Butterworth low-pass, discretized with the bilinear transform.
/// One independent channel per action dimension.
class LowpassFilter {
public:
    LowpassFilter(double cutoff_hz, double dt, std::size_t channels) : cutoff_(cutoff_hz), dt_(dt), channels_(channels) {
        require(cutoff_hz > 0.0, "lowpass: cutoff must be positive");
        require(dt > 0.0, "lowpass: sample interval must be positive");
        require(cutoff_hz < 0.5 / dt, "lowpass: cutoff " + std::to_string(cutoff_hz) + " Hz is not below Nyquist " +
                                          std::to_string(0.5 / dt) + " Hz");
        require(channels > 0, "lowpass: need at least one channel");
        const double w = std::tan(std::numbers::pi * cutoff_hz * dt);
        a_ = (1.0 - w) / (1.0 + w);
        b_ = w / (1.0 + w);
    }

    double cutoff_hz() const { return cutoff_; }
    double dt() const { return dt_; }
    std::size_t channels() const { return channels_; }
    bool seeded() const { return seeded_; }
    double a() const { return a_; }
    double b() const { return b_; }

    void reset() {
        seeded_ = false;
        prev_in_.clear();
        prev_out_.clear();
    }

    /// Seeds the history with the first sample so a constant input passes unchanged.
    std::vector<double> step(std::span<const double> u) {
        require(u.size() == channels_, "lowpass: expected " + std::to_string(channels_) + " channels, got " +
                                           std::to_string(u.size()));
        if (!seeded_) {
            prev_in_.assign(u.begin(), u.end());
            prev_out_.assign(u.begin(), u.end());
            seeded_ = true;
        }
        std::vector<double> y(channels_);
        for (std::size_t i = 0; i < channels_; ++i) {
            y[i] = b_ * (u[i] + prev_in_[i]) + a_ * prev_out_[i];
            prev_in_[i] = u[i];
            prev_out_[i] = y[i];
        }
        return y;
    }

    double step(double u) { return step(std::span<const double>(&u, 1)).front(); }

    std::span<const double> last_output() const { return prev_out_; }

    /// Moves the stored history by a constant per channel (used when references are re-wrapped).
    void shift(std::span<const double> offset) {
        if (!seeded_) return;
        require(offset.size() == channels_, "lowpass: shift size mismatch");
        for (std::size_t i = 0; i < channels_; ++i) {
            prev_in_[i] += offset[i];
            prev_out_[i] += offset[i];
        }
    }

private:
    double cutoff_, dt_;
    std::size_t channels_;
    double a_ = 0.0, b_ = 0.0;
    bool seeded_ = false;
    std::vector<double> prev_in_, prev_out_;
};

struct RateLimiter {
    double max_speed = 13.0;  // rad/s

    void validate() const { require(max_speed > 0.0 && std::isfinite(max_speed), "rate limiter: speed must be positive"); }
};

/// Per-substep references ramping linearly from prev to next; each increment is clipped
/// so the implied joint speed stays within the limit. The last entry may fall short of next.
inline std::vector<std::vector<double>> interpolate_and_limit(std::span<const double> prev, std::span<const double> next,
                                                               int substeps, double substep_dt,
                                                               const RateLimiter& limiter) {
    require(substeps >= 1, "interpolate_and_limit: substeps must be >= 1");
    require(prev.size() == next.size(), "interpolate_and_limit: prev/next size mismatch");
    require(substep_dt > 0.0, "interpolate_and_limit: substep dt must be positive");
    limiter.validate();
    const double max_step = limiter.max_speed * substep_dt;
    std::vector<double> inc(prev.size());
    for (std::size_t j = 0; j < prev.size(); ++j)
        inc[j] = std::clamp((next[j] - prev[j]) / substeps, -max_step, max_step);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(substeps), std::vector<double>(prev.size()));
    for (int k = 0; k < substeps; ++k)
        for (std::size_t j = 0; j < prev.size(); ++j) out[std::size_t(k)][j] = prev[j] + (k + 1) * inc[j];
    return out;
}

struct ImpedanceGains {
    std::vector<double> kp;  // Nm/rad
    std::vector<double> kd;  // Nms/rad

    static ImpedanceGains uniform(std::size_t joints, double kp, double kd) {
        return {std::vector<double>(joints, kp), std::vector<double>(joints, kd)};
    }

    void validate() const {
        require(kp.size() == kd.size(), "impedance gains: kp/kd size mismatch");
        for (std::size_t j = 0; j < kp.size(); ++j)
            require(kp[j] >= 0.0 && kd[j] >= 0.0, "impedance gains must be non-negative");
    }
};

/// Spring-damper joint law tau = Kp (q_d - q_m) - Kd qdot_m, saturated at +-torque_limit.
inline std::vector<double> impedance_torque(std::span<const double> q_d, std::span<const double> q_m,
                                            std::span<const double> qdot_m, const ImpedanceGains& gains,
                                            double torque_limit) {
    const std::size_t n = q_d.size();
    require(q_m.size() == n && qdot_m.size() == n && gains.kp.size() == n && gains.kd.size() == n,
            "impedance_torque: joint count mismatch");
    require(torque_limit > 0.0, "impedance_torque: torque limit must be positive");
    std::vector<double> tau(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double raw = gains.kp[j] * (q_d[j] - q_m[j]) - gains.kd[j] * qdot_m[j];
        tau[j] = std::clamp(raw, -torque_limit, torque_limit);
    }
    return tau;
}

struct PipelineConfig {
    double filter_cutoff_hz = 5.0;
    double policy_rate_hz = 25.0;
    double control_rate_hz = 1000.0;
    double speed_limit_rad_s = 13.0;
    double kp = 700.0;
    double kd = 10.0;
    double torque_limit = 5.0;

    int substeps() const { return static_cast<int>(std::lround(control_rate_hz / policy_rate_hz)); }

    void validate() const {
        require(policy_rate_hz > 0.0 && control_rate_hz > 0.0, "pipeline: rates must be positive");
        const double ratio = control_rate_hz / policy_rate_hz;
        require(ratio >= 1.0 && std::abs(ratio - std::round(ratio)) < 1e-9,
                "pipeline: control rate must be an integer multiple of the policy rate");
        require(speed_limit_rad_s > 0.0, "pipeline: speed limit must be positive");
        require(kp >= 0.0 && kd >= 0.0, "pipeline: gains must be non-negative");
        require(torque_limit > 0.0, "pipeline: torque limit must be positive");
    }
};

/// Policy-rate reference in, control-rate references out. The impedance law is applied
/// by the caller per substep because it needs the measured state.
class ActionPipeline {
public:
    ActionPipeline(const PipelineConfig& cfg, std::size_t joints)
        : cfg_((cfg.validate(), cfg)), filter_(cfg.filter_cutoff_hz, 1.0 / cfg.policy_rate_hz, joints),
          gains_(ImpedanceGains::uniform(joints, cfg.kp, cfg.kd)) {}

    const PipelineConfig& config() const { return cfg_; }
    const ImpedanceGains& gains() const { return gains_; }
    LowpassFilter& filter() { return filter_; }

    /// `start` is where the per-substep ramp begins (usually the measured joint positions).
    void reset(std::span<const double> start) {
        filter_.reset();
        last_ref_.assign(start.begin(), start.end());
    }

    std::span<const double> last_reference() const { return last_ref_; }

    /// Shifts every stored reference by `offset` (keeps the ramp continuous across angle wrapping).
    void shift(std::span<const double> offset) {
        filter_.shift(offset);
        for (std::size_t j = 0; j < last_ref_.size(); ++j) last_ref_[j] += offset[j];
    }

    std::vector<std::vector<double>> step(std::span<const double> policy_reference) {
        require(!last_ref_.empty(), "action pipeline: reset() before step()");
        const auto filtered = filter_.step(policy_reference);
        auto refs = interpolate_and_limit(last_ref_, filtered, cfg_.substeps(), 1.0 / cfg_.control_rate_hz,
                                          RateLimiter{cfg_.speed_limit_rad_s});
        last_ref_ = refs.back();
        return refs;
    }

    std::vector<double> torque(std::span<const double> q_d, std::span<const double> q_m,
                               std::span<const double> qdot_m) const {
        return impedance_torque(q_d, q_m, qdot_m, gains_, cfg_.torque_limit);
    }

private:
    PipelineConfig cfg_;
    LowpassFilter filter_;
    ImpedanceGains gains_;
    std::vector<double> last_ref_;
};

}  // namespace mela::control
