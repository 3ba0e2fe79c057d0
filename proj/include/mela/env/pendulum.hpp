#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "mela/errors.hpp"

namespace mela::env {

using Vec2 = std::array<double, 2>;

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    if (a > -std::numbers::pi && a <= std::numbers::pi) return a;
    double r = std::fmod(a + std::numbers::pi, two_pi);
    if (r <= 0.0) r += two_pi;
    return r - std::numbers::pi;
}

/// Planar two-link pendulum. Link lengths/masses, viscous joint damping, torque limit, integrator step.
struct PendulumParams {
    double l1 = 0.5, l2 = 0.5;
    double m1 = 1.0, m2 = 1.0;
    double gravity = 9.81;
    double damping = 0.05;  // Nms/rad, both joints
    double torque_limit = 5.0;
    double dt = 1e-3;

    double lc1() const { return 0.5 * l1; }
    double lc2() const { return 0.5 * l2; }
    double i1() const { return m1 * l1 * l1 / 12.0; }
    double i2() const { return m2 * l2 * l2 / 12.0; }

    void validate() const {
        require(l1 > 0 && l2 > 0 && m1 > 0 && m2 > 0, "pendulum: lengths and masses must be positive");
        require(gravity >= 0 && damping >= 0, "pendulum: gravity and damping must be non-negative");
        require(torque_limit > 0 && dt > 0, "pendulum: torque limit and dt must be positive");
    }
};

/// Angles: q1 is link 1 measured from the upward vertical (0 = upright, positive towards +x),
/// q2 is link 2 relative to link 1. World frame: x horizontal, z up, pivot at the origin.
struct PendulumState {
    Vec2 q{0.0, 0.0};
    Vec2 qdot{0.0, 0.0};
    double t = 0.0;

    bool finite() const {
        return std::isfinite(q[0]) && std::isfinite(q[1]) && std::isfinite(qdot[0]) && std::isfinite(qdot[1]) &&
               std::isfinite(t);
    }
};

/// Absolute angle of link 2 from the upward vertical, wrapped.
inline double link2_angle(const PendulumState& s) { return wrap_angle(s.q[0] + s.q[1]); }

inline Vec2 elbow_position(const PendulumParams& p, const PendulumState& s) {
    return {p.l1 * std::sin(s.q[0]), p.l1 * std::cos(s.q[0])};
}

inline Vec2 tip_position(const PendulumParams& p, const PendulumState& s) {
    const double th2 = s.q[0] + s.q[1];
    return {p.l1 * std::sin(s.q[0]) + p.l2 * std::sin(th2), p.l1 * std::cos(s.q[0]) + p.l2 * std::cos(th2)};
}

inline Vec2 tip_velocity(const PendulumParams& p, const PendulumState& s) {
    const double th2 = s.q[0] + s.q[1];
    const double w2 = s.qdot[0] + s.qdot[1];
    return {p.l1 * std::cos(s.q[0]) * s.qdot[0] + p.l2 * std::cos(th2) * w2,
            -p.l1 * std::sin(s.q[0]) * s.qdot[0] - p.l2 * std::sin(th2) * w2};
}

/// Joint accelerations from the manipulator equation M(q) qdd + C(q, qd) + G(q) = tau - b qd.
inline Vec2 accelerations(const PendulumParams& p, const PendulumState& s, const Vec2& tau) {
    const double c2 = std::cos(s.q[1]), s2 = std::sin(s.q[1]);
    const double lc1 = p.lc1(), lc2 = p.lc2();
    const double m11 = p.m1 * lc1 * lc1 + p.i1() + p.m2 * (p.l1 * p.l1 + lc2 * lc2 + 2.0 * p.l1 * lc2 * c2) + p.i2();
    const double m12 = p.m2 * (lc2 * lc2 + p.l1 * lc2 * c2) + p.i2();
    const double m22 = p.m2 * lc2 * lc2 + p.i2();
    const double h = p.m2 * p.l1 * lc2 * s2;
    const double cor1 = -h * (2.0 * s.qdot[0] * s.qdot[1] + s.qdot[1] * s.qdot[1]);
    const double cor2 = h * s.qdot[0] * s.qdot[0];
    const double sin12 = std::sin(s.q[0] + s.q[1]);
    const double g1 = -(p.m1 * lc1 + p.m2 * p.l1) * p.gravity * std::sin(s.q[0]) - p.m2 * lc2 * p.gravity * sin12;
    const double g2 = -p.m2 * lc2 * p.gravity * sin12;
    const double r1 = tau[0] - p.damping * s.qdot[0] - cor1 - g1;
    const double r2 = tau[1] - p.damping * s.qdot[1] - cor2 - g2;
    const double det = m11 * m22 - m12 * m12;
    return {(m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det};
}

/// One integrator step (classic RK4, torque held over the step); angles are wrapped afterwards.
inline PendulumState step(const PendulumParams& p, const PendulumState& s, const Vec2& tau) {
    require(std::isfinite(tau[0]) && std::isfinite(tau[1]), "pendulum step: non-finite torque");
    const double lim = p.torque_limit * (1.0 + 1e-12);
    require(std::abs(tau[0]) <= lim && std::abs(tau[1]) <= lim,
            "pendulum step: torque exceeds limit " + std::to_string(p.torque_limit));
    const double h = p.dt;
    auto shifted = [&](const Vec2& dq, const Vec2& dv, double k) {
        PendulumState y = s;
        for (int j = 0; j < 2; ++j) {
            y.q[j] += k * dq[j];
            y.qdot[j] += k * dv[j];
        }
        return y;
    };
    const Vec2 k1q = s.qdot, k1v = accelerations(p, s, tau);
    const PendulumState s2 = shifted(k1q, k1v, h / 2);
    const Vec2 k2q = s2.qdot, k2v = accelerations(p, s2, tau);
    const PendulumState s3 = shifted(k2q, k2v, h / 2);
    const Vec2 k3q = s3.qdot, k3v = accelerations(p, s3, tau);
    const PendulumState s4 = shifted(k3q, k3v, h);
    const Vec2 k4q = s4.qdot, k4v = accelerations(p, s4, tau);
    PendulumState n = s;
    for (int j = 0; j < 2; ++j) {
        n.q[j] = wrap_angle(s.q[j] + h / 6 * (k1q[j] + 2 * k2q[j] + 2 * k3q[j] + k4q[j]));
        n.qdot[j] = s.qdot[j] + h / 6 * (k1v[j] + 2 * k2v[j] + 2 * k3v[j] + k4v[j]);
    }
    n.t = s.t + h;
    return n;
}

/// Kinetic plus potential energy, evaluated from the link centre-of-mass velocities.
inline double mechanical_energy(const PendulumParams& p, const PendulumState& s) {
    const double th2 = s.q[0] + s.q[1];
    const double w2 = s.qdot[0] + s.qdot[1];
    const double v1x = p.lc1() * std::cos(s.q[0]) * s.qdot[0], v1z = -p.lc1() * std::sin(s.q[0]) * s.qdot[0];
    const double v2x = p.l1 * std::cos(s.q[0]) * s.qdot[0] + p.lc2() * std::cos(th2) * w2;
    const double v2z = -p.l1 * std::sin(s.q[0]) * s.qdot[0] - p.lc2() * std::sin(th2) * w2;
    const double kinetic = 0.5 * p.m1 * (v1x * v1x + v1z * v1z) + 0.5 * p.i1() * s.qdot[0] * s.qdot[0] +
                           0.5 * p.m2 * (v2x * v2x + v2z * v2z) + 0.5 * p.i2() * w2 * w2;
    const double potential =
        p.gravity * (p.m1 * p.lc1() * std::cos(s.q[0]) + p.m2 * (p.l1 * std::cos(s.q[0]) + p.lc2() * std::cos(th2)));
    return kinetic + potential;
}

/// Joint angles putting the tip at `target`, choosing the branch whose link 2 is closest to vertical.
inline Vec2 inverse_kinematics(const PendulumParams& p, const Vec2& target) {
    const double r2 = target[0] * target[0] + target[1] * target[1];
    const double r = std::sqrt(r2);
    require(r >= std::abs(p.l1 - p.l2) - 1e-12 && r <= p.l1 + p.l2 + 1e-12, "inverse_kinematics: target out of reach");
    const double c = std::clamp((r2 - p.l1 * p.l1 - p.l2 * p.l2) / (2.0 * p.l1 * p.l2), -1.0, 1.0);
    const double psi = std::atan2(target[0], target[1]);
    Vec2 best{};
    double best_tilt = 1e9;
    for (double sign : {1.0, -1.0}) {
        const double q2 = sign * std::acos(c);
        const double q1 = wrap_angle(psi - std::atan2(p.l2 * std::sin(q2), p.l1 + p.l2 * std::cos(q2)));
        const double tilt = std::abs(wrap_angle(q1 + q2));
        if (tilt < best_tilt) {
            best_tilt = tilt;
            best = {q1, q2};
        }
    }
    return best;
}

}  // namespace mela::env
