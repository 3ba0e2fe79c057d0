#pragma once

// Central finite-difference oracle for tape gradients. Test-only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mela/autodiff/tape.hpp"

namespace mela::testing {

using ad::Tensor;

/// Builds the scalar loss on a fresh tape from parameter variables.
using LossBuilder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;
};

inline double loss_value(const LossBuilder& build, const std::vector<Tensor>& params) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& p : params) vars.push_back(tape.constant(p));
    return build(tape, vars).value()[0];
}

/// Error per element is |a - n| / max(|a|, |n|), counted as 0 when |a - n| <= abs_floor.
/// max_per_tensor > 0 checks a random subset of elements in each tensor.
inline GradCheckResult grad_check(const LossBuilder& build, const std::vector<Tensor>& params, double h = 1e-5,
                                  double abs_floor = 1e-7, std::size_t max_per_tensor = 0, unsigned seed = 1) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    const ad::Gradients grads = tape.backward(build(tape, vars));

    std::mt19937 rng(seed);
    GradCheckResult result;
    std::vector<Tensor> work = params;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor& analytic = grads.of(vars[k]);
        std::vector<std::size_t> idx(params[k].size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (max_per_tensor > 0 && idx.size() > max_per_tensor) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(max_per_tensor);
        }
        for (std::size_t i : idx) {
            const double orig = work[k][i];
            work[k][i] = orig + h;
            const double up = loss_value(build, work);
            work[k][i] = orig - h;
            const double down = loss_value(build, work);
            work[k][i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[i];
            const double diff = std::abs(a - numeric);
            double rel = 0.0;
            if (diff > abs_floor) rel = diff / std::max(std::abs(a), std::abs(numeric));
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst = "tensor " + std::to_string(k) + " element " + std::to_string(i) + ": analytic " +
                               std::to_string(a) + " numeric " + std::to_string(numeric);
            }
        }
    }
    return result;
}

template <typename Rng>
Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return t;
}

}  // namespace mela::testing
