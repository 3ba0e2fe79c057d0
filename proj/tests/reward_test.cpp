#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "mela/reward/reward_spec.hpp"

namespace rw = mela::reward;

namespace {

rw::FeatureRecord robot_features() {
    rw::FeatureRecord f;
    f.orientation = std::vector<double>{0.1, -0.05, -0.98};
    f.height = 0.46;
    f.base_velocity = std::vector<double>{0.3, 0.05, -0.02};
    f.yaw_rate = 0.2;
    f.joint_positions = std::vector<double>{0.1, 0.7, -1.4, -0.1, 0.8, -1.5};
    f.joint_velocities = std::vector<double>{1.0, -2.0, 0.5, 0.0, 3.0, -1.0};
    f.joint_torques = std::vector<double>{5.0, -12.0, 20.0, 1.0, 0.0, -8.0};
    f.joint_reference = std::vector<double>{0.0, 0.75, -1.5, 0.0, 0.75, -1.5};
    std::vector<rw::FootState> feet(4);
    for (std::size_t i = 0; i < 4; ++i) {
        feet[i].height = 0.02 + 0.03 * double(i);
        feet[i].nominal_height = 0.02;
        feet[i].velocity = {0.1 * double(i), 0.0, 0.05};
        feet[i].position = {0.3 * (i < 2 ? 1.0 : -1.0), 0.15 * (i % 2 ? 1.0 : -1.0), 0.0};
        feet[i].contact = (i == 0 || i == 3);
    }
    f.feet = feet;
    f.contact_reference = std::vector<bool>{true, false, false, true};
    f.body_contact = false;
    f.goal_position = std::vector<double>{2.0, 1.0, 0.0};
    f.base_position = std::vector<double>{0.5, 0.2, 0.46};
    f.goal_heading = std::vector<double>{0.8, 0.6, 0.0};
    return f;
}

double sq(double x) { return x * x; }

}  // namespace

TEST(Rbf, Examples) {
    EXPECT_EQ(rw::rbf(0.7, 0.7, -51.16), 1.0);
    EXPECT_NEAR(rw::rbf(0.0, 1.0, -2.35), std::exp(-2.35), 1e-15);
    EXPECT_NEAR(rw::rbf(0.0, 1.0, -2.35), 0.09537, 1e-5);
    EXPECT_EQ(rw::rbf(0.3, -1.2, -0.74), rw::rbf(-1.2, 0.3, -0.74));
}

TEST(Rbf, Errors) {
    EXPECT_THROW(rw::rbf(0.0, 1.0, 0.5), mela::ContractError);
    const std::vector<double> a{1.0, 2.0}, b{1.0};
    EXPECT_THROW(rw::rbf(a, b, -1.0), mela::ContractError);
}

TEST(Rbf, BoundedAndMonotoneInDistance) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int i = 0; i < 2000; ++i) {
        const double target = u(rng), x = u(rng), alpha = -std::abs(u(rng));
        const double near = rw::rbf(x, target, alpha);
        const double far = rw::rbf(target + 1.5 * (x - target), target, alpha);
        EXPECT_GT(near, 0.0);
        EXPECT_LE(near, 1.0);
        EXPECT_LE(far, near);
    }
}

TEST(PhaseClock, Examples) {
    const auto a = rw::phase_vector({0.6, 0.0});
    EXPECT_EQ(a[0], 0.0);
    EXPECT_EQ(a[1], 1.0);
    const auto b = rw::phase_vector({0.6, 0.15});
    EXPECT_NEAR(b[0], 1.0, 1e-15);
    EXPECT_NEAR(b[1], 0.0, 1e-15);
    for (double t : {0.013, 1.7, 33.31}) {
        const auto x = rw::phase_vector({0.6, t});
        const auto y = rw::phase_vector({0.6, t + 0.6});
        EXPECT_NEAR(x[0], y[0], 1e-12);
        EXPECT_NEAR(x[1], y[1], 1e-12);
        EXPECT_NEAR(std::hypot(x[0], x[1]), 1.0, 1e-12);
    }
    EXPECT_THROW(rw::phase_vector({0.0, 1.0}), mela::ContractError);
    EXPECT_THROW(rw::phase_vector({-1.0, 1.0}), mela::ContractError);
}

TEST(Terms, IndicatorAndTargetExamples) {
    rw::FeatureRecord f;
    f.body_contact = false;
    EXPECT_EQ(rw::term_value({rw::Term::BodyGroundContact, 1.0, 0.0, {}}, f), 1.0);
    f.body_contact = true;
    EXPECT_EQ(rw::term_value({rw::Term::BodyGroundContact, 1.0, 0.0, {}}, f), 0.0);

    f.orientation = std::vector<double>{0.0, 0.0, -1.0};
    EXPECT_EQ(rw::term_value({rw::Term::BasePose, 1.0, -2.35, {0, 0, -1}}, f), 1.0);

    std::vector<rw::FootState> feet(4);
    for (auto& foot : feet) {
        foot.height = foot.nominal_height = 0.02;
        foot.velocity = {3.0, -2.0, 1.0};
    }
    f.feet = feet;
    EXPECT_EQ(rw::term_value({rw::Term::SwingAndStance, 1.0, -460.5, {}}, f), 1.0);
}

TEST(Terms, MissingFeatureNamesTermAndFeature) {
    rw::FeatureRecord f;
    try {
        rw::term_value({rw::Term::GoalPosition, 1.0, -0.74, {}}, f);
        FAIL();
    } catch (const mela::ContractError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("goal_position"), std::string::npos);
    }
    try {
        rw::term_value({rw::Term::FootPlacement, 1.0, -18.42, {}}, f);
        FAIL();
    } catch (const mela::ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("feet"), std::string::npos);
    }
}

TEST(Terms, IndicatorsAreBinaryAndRbfTermsInUnitInterval) {
    const auto spec = rw::task_column(rw::TaskColumn::Multimodal);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int trial = 0; trial < 200; ++trial) {
        auto f = robot_features();
        for (auto& v : *f.joint_torques) v = 30 * u(rng);
        for (auto& foot : *f.feet) {
            foot.contact = u(rng) > 0;
            foot.height = 0.1 * std::abs(u(rng));
        }
        f.body_contact = u(rng) > 0;
        for (const auto& t : spec.terms) {
            const double v = rw::term_value(t, f);
            if (rw::is_indicator(t.term))
                EXPECT_TRUE(v == 0.0 || v == 1.0);
            else {
                EXPECT_GT(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
        }
    }
}

TEST(TotalReward, MultimodalColumnSumsToOne) {
    const auto spec = rw::task_column(rw::TaskColumn::Multimodal, 0.46, 0.08);
    EXPECT_NEAR(spec.weight_sum(), 1.0, 1e-9);
    // Every term at its maximum.
    rw::FeatureRecord f = robot_features();
    f.orientation = std::vector<double>{0, 0, -1};
    f.height = 0.46;
    f.base_velocity = std::vector<double>{0, 0, 0};
    f.yaw_rate = 0.0;
    f.joint_torques = std::vector<double>(6, 0.0);
    f.joint_velocities = std::vector<double>(6, 0.0);
    f.joint_positions = f.joint_reference;
    f.goal_heading = std::vector<double>{1, 0, 0};
    std::vector<rw::FootState> feet(4);
    for (std::size_t i = 0; i < 4; ++i) {
        feet[i].contact = (i == 0 || i == 3);
        feet[i].height = feet[i].contact ? 0.0 : 0.08;
        feet[i].position = {i < 2 ? 0.3 : -0.3, i % 2 ? 0.15 : -0.15, 0.0};
    }
    f.feet = feet;
    f.base_position = std::vector<double>{0.0, 0.0, 0.0};
    f.goal_position = f.base_position;
    EXPECT_NEAR(rw::total_reward(spec, f), spec.weight_sum(), 1e-12);
}

TEST(TotalReward, ZeroWeightsGiveZero) {
    auto spec = rw::task_column(rw::TaskColumn::Trotting);
    for (auto& t : spec.terms) t.weight = 0.0;
    EXPECT_EQ(rw::total_reward(spec, rw::FeatureRecord{}), 0.0);
}

TEST(TotalReward, MatchesTermByTermOracle) {
    const double h_nom = 0.45, clearance = 0.08;
    const auto spec = rw::task_column(rw::TaskColumn::Multimodal, h_nom, clearance);
    const auto f = robot_features();

    // Spreadsheet-style evaluation written out term by term.
    const auto& o = *f.orientation;
    const double pose = std::exp(-2.35 * (sq(o[0]) + sq(o[1]) + sq(o[2] + 1.0)));
    const double height = std::exp(-51.16 * sq(*f.height - h_nom));
    const auto& v = *f.base_velocity;
    const double vel = std::exp(-18.42 * (sq(v[0]) + sq(v[1]) + sq(v[2])));
    double tau2 = 0, qd2 = 0, qerr2 = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        tau2 += sq((*f.joint_torques)[i]);
        qd2 += sq((*f.joint_velocities)[i]);
        qerr2 += sq((*f.joint_positions)[i] - (*f.joint_reference)[i]);
    }
    const double torque = std::exp(-0.003 * tau2);
    const double jvel = std::exp(-0.026 * qd2);
    const double foot_contact = 1.0;  // feet 0 and 3 touch the ground
    const double body_contact = 1.0;
    const double yaw = std::exp(-7.47 * sq(0.2));
    const double swing_mean = ((0.02 + 0.03) + (0.02 + 0.06)) / 2.0;  // feet 1 and 2 swing
    const double clear = std::exp(-51.16 * sq(swing_mean - clearance));
    const double jref = std::exp(-29.88 * qerr2);
    const double contact_ref = 1.0;
    const double place = std::exp(-18.42 * (sq(0.0 - 0.5) + sq(0.0 - 0.2) + sq(0.0 - 0.46)));
    const double heading = std::exp(-2.35 * (sq(0.8 - 1.0) + sq(0.6)));
    const double goal = std::exp(-0.74 * (sq(2.0 - 0.5) + sq(1.0 - 0.2) + sq(0.0 - 0.46)));
    const double oracle = 0.100 * pose + 0.100 * height + 0.071 * vel + 0.020 * torque + 0.020 * jvel +
                          0.020 * foot_contact + 0.020 * body_contact + 0.020 * yaw + 0.036 * clear +
                          0.167 * jref + 0.033 * contact_ref + 0.036 * place + 0.143 * heading + 0.214 * goal;
    EXPECT_NEAR(rw::total_reward(spec, f), oracle, 1e-12);
}

TEST(TotalReward, BoundedBySumOfWeights) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto column : {rw::TaskColumn::Trotting, rw::TaskColumn::FallRecovery, rw::TaskColumn::Multimodal}) {
        const auto spec = rw::task_column(column);
        for (int i = 0; i < 100; ++i) {
            auto f = robot_features();
            (*f.orientation)[0] = u(rng);
            f.height = u(rng);
            const double r = rw::total_reward(spec, f);
            EXPECT_GE(r, 0.0);
            EXPECT_LE(r, spec.weight_sum() + 1e-12);
        }
    }
}

TEST(RewardSpec, ValidateAndLookup) {
    auto spec = rw::task_column(rw::TaskColumn::FallRecovery);
    EXPECT_NO_THROW(spec.validate());
    EXPECT_NEAR(spec.weight_sum(), 1.001, 1e-9);
    spec.find(rw::Term::BasePose)->width = 1.0;
    EXPECT_THROW(spec.validate(), mela::ContractError);
    EXPECT_EQ(rw::term_from_name("goal_position"), rw::Term::GoalPosition);
    EXPECT_FALSE(rw::term_from_name("nope").has_value());
}
