#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "mela/errors.hpp"

namespace mela::reward {

/// Bounded radial basis reward exp(width * |target - x|^2).
/// Widths follow the tabulated convention: non-positive, used directly as the exponent coefficient.
inline double rbf(std::span<const double> x, std::span<const double> target, double width) {
    require(x.size() == target.size(), "rbf: value has " + std::to_string(x.size()) + " components, target has " +
                                           std::to_string(target.size()));
    require(width <= 0.0, "rbf: width must be <= 0 for a bounded reward");
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d2 += (target[i] - x[i]) * (target[i] - x[i]);
    return std::exp(width * d2);
}

inline double rbf(double x, double target, double width) {
    return rbf(std::span<const double>(&x, 1), std::span<const double>(&target, 1), width);
}

/// Unit 2-vector (sin, cos) of the gait phase.
struct PhaseClock {
    double period = 0.6;
    double time = 0.0;
};

inline std::array<double, 2> phase_vector(const PhaseClock& clock) {
    require(clock.period > 0.0, "phase_vector: period must be positive");
    const double phase = 2.0 * std::numbers::pi * std::fmod(clock.time, clock.period) / clock.period;
    return {std::sin(phase), std::cos(phase)};
}

}  // namespace mela::reward
