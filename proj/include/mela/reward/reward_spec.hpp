#pragma once

#include <string>
#include <vector>

#include "mela/reward/terms.hpp"

namespace mela::reward {

/// Weighted list of reward terms for one task.
struct RewardSpec {
    std::vector<RewardTerm> terms;

    void validate() const {
        for (const auto& t : terms) {
            require(t.weight >= 0.0, "reward spec: negative weight for " + std::string(term_name(t.term)));
            require(is_indicator(t.term) || t.width <= 0.0,
                    "reward spec: positive width for " + std::string(term_name(t.term)));
        }
    }

    double weight_sum() const {
        double s = 0.0;
        for (const auto& t : terms) s += t.weight;
        return s;
    }

    RewardTerm* find(Term term) {
        for (auto& t : terms)
            if (t.term == term) return &t;
        return nullptr;
    }
    const RewardTerm* find(Term term) const { return const_cast<RewardSpec*>(this)->find(term); }

    /// Keeps only the listed terms, in spec order.
    RewardSpec restricted_to(std::initializer_list<Term> keep) const {
        RewardSpec out;
        for (const auto& t : terms)
            for (Term k : keep)
                if (t.term == k) out.terms.push_back(t);
        return out;
    }
};

/// Sum of weight * term over the spec; terms with zero weight are not evaluated.
inline double total_reward(const RewardSpec& spec, const FeatureRecord& features,
                           std::vector<double>* per_term = nullptr) {
    double total = 0.0;
    if (per_term) per_term->assign(spec.terms.size(), 0.0);
    for (std::size_t i = 0; i < spec.terms.size(); ++i) {
        const auto& t = spec.terms[i];
        if (t.weight == 0.0) continue;
        const double v = term_value(t, features);
        if (per_term) (*per_term)[i] = v;
        total += t.weight * v;
    }
    return total;
}

enum class TaskColumn { Trotting, FallRecovery, Multimodal };

/// Tabulated widths and per-task weights for all terms.
/// Foot clearance has weights but no tabulated formula: it is an RBF on the mean
/// swing-foot height with a configurable clearance target. Swing-and-stance has a
/// formula but no tabulated weight, so it defaults to 0 in every column.
inline RewardSpec task_column(TaskColumn column, double nominal_height = 0.5, double foot_clearance = 0.1) {
    struct Row {
        Term term;
        double width;
        std::vector<double> target;
        double trot, recovery, multimodal;
    };
    const std::vector<Row> rows{
        {Term::BasePose, -2.35, {0.0, 0.0, -1.0}, 0.071, 0.333, 0.100},
        {Term::BaseHeight, -51.16, {nominal_height}, 0.036, 0.333, 0.100},
        {Term::BaseVelocity, -18.42, {0.0, 0.0, 0.0}, 0.178, 0.067, 0.071},
        {Term::TorqueRegularisation, -0.003, {}, 0.018, 0.067, 0.020},
        {Term::JointVelocityRegularisation, -0.026, {}, 0.018, 0.067, 0.020},
        {Term::FootGroundContact, 0.0, {}, 0.018, 0.067, 0.020},
        {Term::BodyGroundContact, 0.0, {}, 0.018, 0.067, 0.020},
        {Term::YawVelocity, -7.47, {}, 0.071, 0.0, 0.020},
        {Term::FootClearance, -51.16, {foot_clearance}, 0.036, 0.0, 0.036},
        {Term::JointPositionReference, -29.88, {}, 0.416, 0.0, 0.167},
        {Term::FootContactReference, 0.0, {}, 0.083, 0.0, 0.033},
        {Term::FootPlacement, -18.42, {}, 0.036, 0.0, 0.036},
        {Term::RobotHeading, -2.35, {1.0, 0.0, 0.0}, 0.0, 0.0, 0.143},
        {Term::GoalPosition, -0.74, {}, 0.0, 0.0, 0.214},
        {Term::SwingAndStance, -460.50, {}, 0.0, 0.0, 0.0},
    };
    RewardSpec spec;
    for (const auto& r : rows) {
        const double w = column == TaskColumn::Trotting ? r.trot : column == TaskColumn::FallRecovery ? r.recovery : r.multimodal;
        spec.terms.push_back(RewardTerm{r.term, w, r.width, r.target});
    }
    return spec;
}

}  // namespace mela::reward
