#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mela/control/action_pipeline.hpp"
#include "mela/env/pendulum.hpp"
#include "mela/reward/reward_spec.hpp"

namespace mela::env {

enum class Task { Recovery, Rhythmic, Multimodal };

constexpr std::string_view task_name(Task t) {
    switch (t) {
        case Task::Recovery: return "recovery";
        case Task::Rhythmic: return "rhythmic";
        case Task::Multimodal: return "multimodal";
    }
    return "unknown";
}

inline Task task_from_name(std::string_view name) {
    for (Task t : {Task::Recovery, Task::Rhythmic, Task::Multimodal})
        if (task_name(t) == name) return t;
    throw ContractError("unknown task '" + std::string(name) + "' (expected recovery, rhythmic or multimodal)");
}

enum class Mode { Recovery, Rhythmic, GoalTracking };
inline constexpr std::array<Mode, 3> kAllModes{Mode::Recovery, Mode::Rhythmic, Mode::GoalTracking};

constexpr std::string_view mode_name(Mode m) {
    switch (m) {
        case Mode::Recovery: return "recovery";
        case Mode::Rhythmic: return "rhythmic";
        case Mode::GoalTracking: return "goal_tracking";
    }
    return "unknown";
}

inline std::optional<Mode> mode_from_name(std::string_view name) {
    for (Mode m : kAllModes)
        if (mode_name(m) == name) return m;
    return std::nullopt;
}

struct InitPose {
    std::string name;
    Vec2 q;
    Vec2 qdot;
};

inline std::vector<InitPose> recovery_catalogue() {
    constexpr double pi = std::numbers::pi;
    return {
        {"upright", {0.0, 0.0}, {0.0, 0.0}},
        {"hanging", {pi, 0.0}, {0.0, 0.0}},
        {"folded-left", {-pi / 2, -0.8 * pi}, {0.0, 0.0}},
        {"folded-right", {pi / 2, 0.8 * pi}, {0.0, 0.0}},
        {"horizontal-left", {-pi / 2, 0.0}, {0.0, 0.0}},
        {"horizontal-right", {pi / 2, 0.0}, {0.0, 0.0}},
        {"near-upright-perturbed", {0.2, -0.3}, {0.5, -0.5}},
        {"fast-spinning", {pi, 0.0}, {5.0, -3.0}},
        {"crouched", {0.6, -1.2}, {0.0, 0.0}},
    };
}

/// Rhythmic reference: the tip stays near the top while link 1 swings by +-A and link 2 by -+2A.
struct Rhythm {
    double amplitude = 0.1;  // rad, link 1
    double period = 0.6;     // s

    double omega() const { return 2.0 * std::numbers::pi / period; }
    Vec2 offset(double t) const {
        const double s = amplitude * std::sin(omega() * t);
        return {s, -2.0 * s};
    }
    Vec2 rate(double t) const {
        const double c = amplitude * omega() * std::cos(omega() * t);
        return {c, -2.0 * c};
    }
};

inline std::vector<InitPose> rhythmic_catalogue(const Rhythm& r) {
    return {
        {"reference-start", {0.0, 0.0}, r.rate(0.0)},
        {"reference-start-still", {0.0, 0.0}, {0.0, 0.0}},
    };
}

enum class Termination { None, Runaway, Orientation, Timeout };

constexpr std::string_view termination_name(Termination t) {
    switch (t) {
        case Termination::None: return "none";
        case Termination::Runaway: return "runaway";
        case Termination::Orientation: return "orientation";
        case Termination::Timeout: return "timeout";
    }
    return "unknown";
}

/// Network tags for observation routing.
enum class Network { Gating, Synthesized, Stage1Recovery, Stage1Rhythmic, Critic };

/// Full observation layout (17 entries):
///   0-1   q1, q2 (wrapped, raw; used for the smoothing loss)
///   2-5   sin q1, cos q1, sin q2, cos q2   (joint positions)
///   6-8   gravity direction in the link-2 frame
///   9-10  absolute angular rates of link 1 and link 2
///   11-12 tip velocity (x, z)
///   13-14 phase vector (sin, cos)
///   15-16 goal minus tip (x, z); zero when the task has no goal
namespace layout {
inline constexpr int kRawQ = 0, kJoint = 2, kGravity = 6, kAngVel = 9, kLinVel = 11, kPhase = 13, kGoal = 15;
inline constexpr int kSize = 17;
}  // namespace layout

/// Index lists into the full observation; -1 is a constant zero input.
inline std::vector<int> routing(Network n) {
    using namespace layout;
    auto range = [](std::vector<int>& v, int from, int count) {
        for (int i = 0; i < count; ++i) v.push_back(from + i);
    };
    auto zeros = [](std::vector<int>& v, int count) { v.insert(v.end(), std::size_t(count), -1); };
    std::vector<int> v;
    switch (n) {
        case Network::Gating:
            range(v, kGravity, 3);
            range(v, kAngVel, 2);
            range(v, kLinVel, 2);
            range(v, kGoal, 2);
            break;
        case Network::Synthesized:
        case Network::Stage1Rhythmic:
            range(v, kJoint, 4);
            range(v, kGravity, 3);
            range(v, kAngVel, 2);
            range(v, kLinVel, 2);
            range(v, kPhase, 2);
            break;
        case Network::Stage1Recovery:
            // Same width as the synthesized input so experts stay fusible; unused inputs held at zero.
            range(v, kJoint, 4);
            range(v, kGravity, 3);
            range(v, kAngVel, 2);
            zeros(v, 2);
            zeros(v, 2);
            break;
        case Network::Critic:
            range(v, kJoint, kSize - kJoint);
            break;
    }
    return v;
}

inline std::vector<int> joint_position_indices() { return {layout::kRawQ, layout::kRawQ + 1}; }

inline std::vector<double> gather(std::span<const double> full, std::span<const int> idx) {
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        require(std::size_t(idx[i]) < full.size(), "gather: index outside observation");
        out[i] = full[std::size_t(idx[i])];
    }
    return out;
}

struct EnvConfig {
    Task task = Task::Recovery;
    PendulumParams plant;
    control::PipelineConfig pipeline{.speed_limit_rad_s = 15.0};
    Rhythm rhythm;
    int episode_steps = 500;            // 20 s at 25 Hz
    double runaway_speed = 25.0;        // rad/s
    double orientation_limit = std::numbers::pi / 2;
    double reset_angle_noise = 0.05;    // rad, uniform
    double reset_rate_noise = 0.1;      // rad/s, uniform
    double goal_radius_min = 0.8, goal_radius_max = 1.0;
    double goal_sector = 25.0 * std::numbers::pi / 180.0;  // max goal angle from vertical
    double upright_tip_height = 0.6;    // below this the step is labelled recovery
    double goal_tolerance = 0.15;       // m; beyond this the step is labelled goal tracking
    reward::RewardSpec reward;          // empty: task default

    void validate() const {
        plant.validate();
        pipeline.validate();
        require(std::abs(pipeline.control_rate_hz * plant.dt - 1.0) < 1e-9,
                "env: integrator dt must match the control rate");
        require(std::abs(pipeline.torque_limit - plant.torque_limit) < 1e-12,
                "env: pipeline and plant torque limits differ");
        require(episode_steps >= 1, "env: episode_steps must be >= 1");
        require(runaway_speed > 0 && orientation_limit > 0, "env: termination thresholds must be positive");
        require(reset_angle_noise >= 0 && reset_rate_noise >= 0, "env: reset noise must be non-negative");
        require(goal_radius_min >= std::abs(plant.l1 - plant.l2) && goal_radius_max <= plant.l1 + plant.l2 &&
                    goal_radius_min <= goal_radius_max,
                "env: goal radii must lie in the reachable annulus");
        require(rhythm.period > 0 && rhythm.amplitude >= 0, "env: invalid rhythm");
        reward.validate();
    }
};

/// Table S4 columns restricted to the quantities a planar pendulum has.
inline reward::RewardSpec default_reward(Task task) {
    using reward::Term;
    switch (task) {
        case Task::Recovery:
            return reward::task_column(reward::TaskColumn::FallRecovery, 1.0)
                .restricted_to({Term::BasePose, Term::BaseHeight, Term::BaseVelocity, Term::TorqueRegularisation,
                                Term::JointVelocityRegularisation});
        case Task::Rhythmic:
            return reward::task_column(reward::TaskColumn::Trotting, 1.0)
                .restricted_to({Term::BasePose, Term::BaseHeight, Term::BaseVelocity, Term::TorqueRegularisation,
                                Term::JointVelocityRegularisation, Term::JointPositionReference});
        case Task::Multimodal:
            return reward::task_column(reward::TaskColumn::Multimodal, 1.0)
                .restricted_to({Term::BasePose, Term::BaseHeight, Term::BaseVelocity, Term::TorqueRegularisation,
                                Term::JointVelocityRegularisation, Term::JointPositionReference, Term::RobotHeading,
                                Term::GoalPosition});
    }
    throw ContractError("default_reward: unknown task");
}

struct StepResult {
    std::vector<double> observation;
    double reward = 0.0;
    std::vector<double> term_values;  // aligned with the reward spec's terms
    bool done = false;
    Termination reason = Termination::None;
    Vec2 torque{};                    // mean applied torque over the substeps
    Mode mode = Mode::Recovery;
};

class PendulumEnv {
public:
    explicit PendulumEnv(EnvConfig cfg) : cfg_(std::move(cfg)), pipeline_(cfg_.pipeline, 2) {
        if (cfg_.reward.terms.empty()) cfg_.reward = default_reward(cfg_.task);
        cfg_.validate();
    }

    const EnvConfig& config() const { return cfg_; }
    const PendulumState& state() const { return state_; }
    const std::optional<Vec2>& goal() const { return goal_; }
    int steps() const { return steps_; }
    const std::string& init_name() const { return init_name_; }

    /// Catalogue the task's resets draw from.
    std::vector<InitPose> catalogue() const {
        switch (cfg_.task) {
            case Task::Recovery: return recovery_catalogue();
            case Task::Rhythmic: return rhythmic_catalogue(cfg_.rhythm);
            case Task::Multimodal: {
                auto all = recovery_catalogue();
                for (auto& p : rhythmic_catalogue(cfg_.rhythm)) all.push_back(p);
                return all;
            }
        }
        throw ContractError("catalogue: unknown task");
    }

    template <typename Rng>
    std::vector<double> reset(Rng& rng) {
        const auto cat = catalogue();
        std::uniform_int_distribution<std::size_t> pick(0, cat.size() - 1);
        const InitPose& pose = cat[pick(rng)];
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        PendulumState s;
        for (int j = 0; j < 2; ++j) {
            s.q[j] = wrap_angle(pose.q[j] + cfg_.reset_angle_noise * unit(rng));
            s.qdot[j] = pose.qdot[j] + cfg_.reset_rate_noise * unit(rng);
        }
        std::optional<Vec2> goal;
        if (cfg_.task == Task::Multimodal) {
            std::uniform_real_distribution<double> radius(cfg_.goal_radius_min, cfg_.goal_radius_max);
            std::uniform_real_distribution<double> angle(-cfg_.goal_sector, cfg_.goal_sector);
            const double r = radius(rng), a = angle(rng);
            goal = Vec2{r * std::sin(a), r * std::cos(a)};
        }
        set_state(s, goal);
        init_name_ = pose.name;
        return observe_full();
    }

    /// Starts an episode from an explicit state (tests, scripted evaluation).
    void set_state(const PendulumState& s, std::optional<Vec2> goal = std::nullopt) {
        require(s.finite(), "env: non-finite state");
        state_ = s;
        state_.q = {wrap_angle(s.q[0]), wrap_angle(s.q[1])};
        goal_ = goal;
        home_ = goal ? inverse_kinematics(cfg_.plant, *goal) : Vec2{0.0, 0.0};
        steps_ = 0;
        init_name_ = "custom";
        pipeline_.reset(state_.q);
    }

    /// Joint reference the imitation term tracks at time t.
    Vec2 joint_reference(double t) const {
        const Vec2 off = cfg_.rhythm.offset(t);
        return {home_[0] + off[0], home_[1] + off[1]};
    }

    /// Advances one policy step (40 control substeps) with absolute joint references.
    StepResult step(std::span<const double> action) {
        require(action.size() == 2, "env step: expected 2 joint references");
        require(std::isfinite(action[0]) && std::isfinite(action[1]), "env step: non-finite action");
        // Express each reference on the branch nearest the previous filter output so the
        // filter and ramp never see a 2*pi jump.
        const auto prev = pipeline_.filter().seeded() ? pipeline_.filter().last_output() : pipeline_.last_reference();
        std::vector<double> u{prev[0] + wrap_angle(action[0] - prev[0]), prev[1] + wrap_angle(action[1] - prev[1])};
        const auto refs = pipeline_.step(u);
        Vec2 tau_sum{0.0, 0.0};
        for (const auto& r : refs) {
            const std::vector<double> q{state_.q[0], state_.q[1]};
            const std::vector<double> qd{q[0] + wrap_angle(r[0] - q[0]), q[1] + wrap_angle(r[1] - q[1])};
            const std::vector<double> v{state_.qdot[0], state_.qdot[1]};
            const auto tau = pipeline_.torque(qd, q, v);
            state_ = env::step(cfg_.plant, state_, {tau[0], tau[1]});
            tau_sum[0] += tau[0];
            tau_sum[1] += tau[1];
        }
        const auto last = pipeline_.last_reference();
        const std::vector<double> shift{wrap_angle(last[0]) - last[0], wrap_angle(last[1]) - last[1]};
        if (shift[0] != 0.0 || shift[1] != 0.0) pipeline_.shift(shift);
        ++steps_;

        StepResult out;
        out.torque = {tau_sum[0] / double(refs.size()), tau_sum[1] / double(refs.size())};
        out.reward = reward::total_reward(cfg_.reward, features(out.torque), &out.term_values);
        out.reason = terminate();
        out.done = out.reason != Termination::None;
        out.mode = mode();
        out.observation = observe_full();
        return out;
    }

    /// First triggered termination criterion.
    Termination terminate() const {
        if (cfg_.task != Task::Recovery) {
            if (std::abs(state_.qdot[0]) > cfg_.runaway_speed || std::abs(state_.qdot[1]) > cfg_.runaway_speed)
                return Termination::Runaway;
            if (cfg_.task == Task::Rhythmic && std::abs(link2_angle(state_)) > cfg_.orientation_limit)
                return Termination::Orientation;
        }
        if (steps_ >= cfg_.episode_steps) return Termination::Timeout;
        return Termination::None;
    }

    Mode mode() const {
        const Vec2 tip = tip_position(cfg_.plant, state_);
        if (tip[1] < cfg_.upright_tip_height) return Mode::Recovery;
        if (goal_ && std::hypot(tip[0] - (*goal_)[0], tip[1] - (*goal_)[1]) > cfg_.goal_tolerance)
            return Mode::GoalTracking;
        return Mode::Rhythmic;
    }

    std::vector<double> observe_full() const {
        std::vector<double> o(layout::kSize, 0.0);
        const auto& s = state_;
        const double th2 = s.q[0] + s.q[1];
        const Vec2 tip = tip_position(cfg_.plant, s);
        const Vec2 vel = tip_velocity(cfg_.plant, s);
        const auto ph = reward::phase_vector({cfg_.rhythm.period, s.t});
        o[0] = s.q[0];
        o[1] = s.q[1];
        o[2] = std::sin(s.q[0]);
        o[3] = std::cos(s.q[0]);
        o[4] = std::sin(s.q[1]);
        o[5] = std::cos(s.q[1]);
        o[6] = std::sin(th2);
        o[7] = 0.0;
        o[8] = -std::cos(th2);
        o[9] = s.qdot[0];
        o[10] = s.qdot[0] + s.qdot[1];
        o[11] = vel[0];
        o[12] = vel[1];
        o[13] = ph[0];
        o[14] = ph[1];
        if (goal_) {
            o[15] = (*goal_)[0] - tip[0];
            o[16] = (*goal_)[1] - tip[1];
        }
        return o;
    }

    std::vector<double> observe(Network n) const {
        const auto idx = routing(n);
        return gather(observe_full(), idx);
    }

    /// Maps pendulum quantities onto the reward feature record; robot-only fields stay absent.
    reward::FeatureRecord features(const Vec2& tau) const {
        const auto& s = state_;
        const double th2 = s.q[0] + s.q[1];
        const Vec2 tip = tip_position(cfg_.plant, s);
        const Vec2 vel = tip_velocity(cfg_.plant, s);
        reward::FeatureRecord f;
        f.orientation = std::vector<double>{std::sin(th2), 0.0, -std::cos(th2)};
        f.height = tip[1];
        f.base_velocity = std::vector<double>{vel[0], 0.0, vel[1]};
        f.joint_velocities = std::vector<double>{s.qdot[0], s.qdot[1]};
        f.joint_torques = std::vector<double>{tau[0], tau[1]};
        const Vec2 ref = joint_reference(s.t);
        f.joint_reference = std::vector<double>{ref[0], ref[1]};
        f.joint_positions = std::vector<double>{ref[0] + wrap_angle(s.q[0] - ref[0]), ref[1] + wrap_angle(s.q[1] - ref[1])};
        f.base_position = std::vector<double>{tip[0], 0.0, tip[1]};
        if (goal_) {
            f.goal_position = std::vector<double>{(*goal_)[0], 0.0, (*goal_)[1]};
            f.height_target = (*goal_)[1];
            // Angle between link 2 and the pivot-to-goal direction, as a unit vector in the link frame.
            const double delta = wrap_angle(std::atan2((*goal_)[0], (*goal_)[1]) - th2);
            f.goal_heading = std::vector<double>{std::cos(delta), std::sin(delta), 0.0};
        }
        return f;
    }

private:
    EnvConfig cfg_;
    control::ActionPipeline pipeline_;
    PendulumState state_;
    std::optional<Vec2> goal_;
    Vec2 home_{0.0, 0.0};
    int steps_ = 0;
    std::string init_name_;
};

/// Success band: link 2 within 15 degrees of vertical, tip above 0.9 m, both joint rates below 1 rad/s.
inline bool in_upright_band(const PendulumParams& p, const PendulumState& s) {
    const double tol = 15.0 * std::numbers::pi / 180.0;
    return std::abs(link2_angle(s)) < tol && tip_position(p, s)[1] > 0.9 && std::abs(s.qdot[0]) < 1.0 &&
           std::abs(s.qdot[1]) < 1.0;
}

}  // namespace mela::env
