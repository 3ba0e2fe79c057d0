#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mela/reward/rbf.hpp"

namespace mela::reward {

struct FootState {
    double height = 0.0;
    double nominal_height = 0.0;
    std::array<double, 3> velocity{};
    std::array<double, 3> position{};
    bool contact = false;
};

/// Physical quantities an environment reports for one step. Absent fields are
/// quantities the environment does not have (e.g. feet on a pendulum).
struct FeatureRecord {
    std::optional<std::vector<double>> orientation;      // gravity direction in the body frame
    std::optional<double> height;                        // world frame
    std::optional<std::vector<double>> base_velocity;    // world frame
    std::optional<double> yaw_rate;
    std::optional<std::vector<double>> joint_positions;
    std::optional<std::vector<double>> joint_velocities;
    std::optional<std::vector<double>> joint_torques;
    std::optional<std::vector<double>> joint_reference;  // imitation target for this step
    std::optional<std::vector<FootState>> feet;
    std::optional<std::vector<bool>> contact_reference;  // desired per-foot contact
    std::optional<bool> body_contact;
    std::optional<std::vector<double>> goal_position;    // world frame
    std::optional<std::vector<double>> base_position;    // world frame
    std::optional<std::vector<double>> goal_heading;     // unit vector to the goal, body frame

    // Per-step targets. When set they replace the term's static target.
    std::optional<double> height_target;
    std::optional<std::vector<double>> velocity_target;
};

enum class Term {
    BasePose,
    BaseHeight,
    BaseVelocity,
    TorqueRegularisation,
    JointVelocityRegularisation,
    FootGroundContact,
    BodyGroundContact,
    YawVelocity,
    FootClearance,
    JointPositionReference,
    FootContactReference,
    FootPlacement,
    RobotHeading,
    GoalPosition,
    SwingAndStance,
};

inline constexpr std::array<Term, 15> kAllTerms{
    Term::BasePose,          Term::BaseHeight,          Term::BaseVelocity,
    Term::TorqueRegularisation, Term::JointVelocityRegularisation, Term::FootGroundContact,
    Term::BodyGroundContact, Term::YawVelocity,         Term::FootClearance,
    Term::JointPositionReference, Term::FootContactReference, Term::FootPlacement,
    Term::RobotHeading,      Term::GoalPosition,        Term::SwingAndStance,
};

constexpr std::string_view term_name(Term t) {
    switch (t) {
        case Term::BasePose: return "base_pose";
        case Term::BaseHeight: return "base_height";
        case Term::BaseVelocity: return "base_velocity";
        case Term::TorqueRegularisation: return "torque_regularisation";
        case Term::JointVelocityRegularisation: return "joint_velocity_regularisation";
        case Term::FootGroundContact: return "foot_ground_contact";
        case Term::BodyGroundContact: return "body_ground_contact";
        case Term::YawVelocity: return "yaw_velocity";
        case Term::FootClearance: return "foot_clearance";
        case Term::JointPositionReference: return "joint_position_reference";
        case Term::FootContactReference: return "foot_contact_reference";
        case Term::FootPlacement: return "foot_placement";
        case Term::RobotHeading: return "robot_heading";
        case Term::GoalPosition: return "goal_position";
        case Term::SwingAndStance: return "swing_and_stance";
    }
    return "unknown";
}

inline std::optional<Term> term_from_name(std::string_view name) {
    for (Term t : kAllTerms)
        if (term_name(t) == name) return t;
    return std::nullopt;
}

constexpr bool is_indicator(Term t) {
    return t == Term::FootGroundContact || t == Term::BodyGroundContact || t == Term::FootContactReference;
}

/// One weighted reward term. Width is ignored for indicator terms.
struct RewardTerm {
    Term term;
    double weight = 0.0;
    double width = 0.0;
    std::vector<double> target;  // empty for indicators and for terms compared against another feature
};

namespace detail {

template <typename T>
const T& need(const std::optional<T>& field, Term term, const char* feature) {
    if (!field) {
        throw ContractError("reward term '" + std::string(term_name(term)) + "' needs feature '" + feature + "'");
    }
    return *field;
}

inline std::vector<double> zeros_like(const std::vector<double>& v) { return std::vector<double>(v.size(), 0.0); }

}  // namespace detail

/// Value of one term for the given features, in [0, 1].
inline double term_value(const RewardTerm& t, const FeatureRecord& f) {
    using detail::need;
    const Term k = t.term;
    switch (k) {
        case Term::BasePose:
            return rbf(need(f.orientation, k, "orientation"), t.target, t.width);
        case Term::BaseHeight: {
            const double target = f.height_target ? *f.height_target : t.target.at(0);
            return rbf(need(f.height, k, "height"), target, t.width);
        }
        case Term::BaseVelocity: {
            const auto& v = need(f.base_velocity, k, "base_velocity");
            return rbf(v, f.velocity_target ? *f.velocity_target : t.target, t.width);
        }
        case Term::TorqueRegularisation: {
            const auto& tau = need(f.joint_torques, k, "joint_torques");
            return rbf(tau, detail::zeros_like(tau), t.width);
        }
        case Term::JointVelocityRegularisation: {
            const auto& qd = need(f.joint_velocities, k, "joint_velocities");
            return rbf(qd, detail::zeros_like(qd), t.width);
        }
        case Term::FootGroundContact: {
            for (const auto& foot : need(f.feet, k, "feet"))
                if (foot.contact) return 1.0;
            return 0.0;
        }
        case Term::BodyGroundContact:
            return need(f.body_contact, k, "body_contact") ? 0.0 : 1.0;
        case Term::YawVelocity:
            return rbf(need(f.yaw_rate, k, "yaw_rate"), 0.0, t.width);
        case Term::FootClearance: {
            double sum = 0.0;
            int swing = 0;
            for (const auto& foot : need(f.feet, k, "feet")) {
                if (foot.contact) continue;
                sum += foot.height;
                ++swing;
            }
            if (swing == 0) return 1.0;
            return rbf(sum / swing, t.target.at(0), t.width);
        }
        case Term::JointPositionReference:
            return rbf(need(f.joint_positions, k, "joint_positions"), need(f.joint_reference, k, "joint_reference"),
                       t.width);
        case Term::FootContactReference: {
            const auto& feet = need(f.feet, k, "feet");
            const auto& ref = need(f.contact_reference, k, "contact_reference");
            require(ref.size() == feet.size(), "foot_contact_reference: reference size differs from foot count");
            for (std::size_t i = 0; i < feet.size(); ++i)
                if (feet[i].contact != ref[i]) return 0.0;
            return 1.0;
        }
        case Term::FootPlacement: {
            const auto& feet = need(f.feet, k, "feet");
            require(!feet.empty(), "foot_placement: no feet");
            std::vector<double> mean(3, 0.0);
            for (const auto& foot : feet)
                for (std::size_t i = 0; i < 3; ++i) mean[i] += foot.position[i] / double(feet.size());
            return rbf(mean, need(f.base_position, k, "base_position"), t.width);
        }
        case Term::RobotHeading:
            return rbf(need(f.goal_heading, k, "goal_heading"), t.target, t.width);
        case Term::GoalPosition:
            return rbf(need(f.goal_position, k, "goal_position"), need(f.base_position, k, "base_position"), t.width);
        case Term::SwingAndStance: {
            const auto& feet = need(f.feet, k, "feet");
            require(!feet.empty(), "swing_and_stance: no feet");
            std::vector<double> x(3, 0.0);
            for (const auto& foot : feet)
                for (std::size_t i = 0; i < 3; ++i)
                    x[i] += (foot.height - foot.nominal_height) * foot.velocity[i] / double(feet.size());
            return rbf(x, detail::zeros_like(x), t.width);
        }
    }
    throw ContractError("unknown reward term");
}

}  // namespace mela::reward
