#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "mela/autodiff/ops.hpp"
#include "mela/errors.hpp"

namespace mela::nets {

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

/// Gaussian head before squashing; log_std already clamped.
struct PolicyOutput {
    std::vector<double> mean;
    std::vector<double> log_std;
};

/// Per-joint action range. Squashed actions map (-1, 1) affinely onto (low, high).
struct ActionBound {
    std::vector<double> low;
    std::vector<double> high;

    static ActionBound symmetric(std::vector<double> half_range) {
        ActionBound b;
        for (double q : half_range) {
            b.low.push_back(-q);
            b.high.push_back(q);
        }
        b.validate();
        return b;
    }

    std::size_t size() const { return low.size(); }
    double center(std::size_t j) const { return 0.5 * (low[j] + high[j]); }
    double half_range(std::size_t j) const { return 0.5 * (high[j] - low[j]); }

    void validate() const {
        require(low.size() == high.size() && !low.empty(), "action bound: low/high size mismatch");
        for (std::size_t j = 0; j < low.size(); ++j)
            require(high[j] > low[j] && std::isfinite(low[j]) && std::isfinite(high[j]),
                    "action bound: each joint needs a positive finite range");
    }

    double scale(std::size_t j, double squashed) const { return center(j) + half_range(j) * squashed; }
};

/// First half of the raw head output is the pre-squash mean, second half the log std.
inline PolicyOutput split_head(std::span<const double> raw) {
    require(raw.size() % 2 == 0 && !raw.empty(), "split_head: raw output length must be even and non-zero");
    const std::size_t n = raw.size() / 2;
    PolicyOutput out;
    out.mean.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(n));
    for (std::size_t j = 0; j < n; ++j) out.log_std.push_back(std::clamp(raw[n + j], kLogStdMin, kLogStdMax));
    return out;
}

/// log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u)).
inline double log_one_minus_tanh_sq(double u) {
    return 2.0 * (std::numbers::ln2 - u - ad::softplus_value(-2.0 * u));
}

struct SquashedAction {
    std::vector<double> action;
    double log_prob = 0.0;
};

/// Log density of the squashed sample given the pre-squash draw u (change of variables).
inline double squashed_log_prob(const PolicyOutput& out, std::span<const double> u) {
    double lp = 0.0;
    for (std::size_t j = 0; j < out.mean.size(); ++j) {
        const double sigma = std::exp(out.log_std[j]);
        const double z = (u[j] - out.mean[j]) / sigma;
        lp += -0.5 * z * z - out.log_std[j] - 0.5 * std::log(2.0 * std::numbers::pi);
        lp -= log_one_minus_tanh_sq(u[j]);
    }
    return lp;
}

/// Draws u ~ N(mean, exp(log_std)^2), returns bound.scale(tanh(u)) and the log density.
template <typename Rng>
SquashedAction sample_squashed(const PolicyOutput& out, const ActionBound& bound, Rng& rng) {
    require(out.mean.size() == bound.size() && out.log_std.size() == bound.size(),
            "sample_squashed: head and bound dimensions differ");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> u(out.mean.size());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = out.mean[j] + std::exp(out.log_std[j]) * normal(rng);
    SquashedAction s;
    s.log_prob = squashed_log_prob(out, u);
    for (std::size_t j = 0; j < u.size(); ++j) s.action.push_back(bound.scale(j, std::tanh(u[j])));
    return s;
}

/// Mean action: tanh applied to the Gaussian mean, then scaled.
inline std::vector<double> deterministic_action(const PolicyOutput& out, const ActionBound& bound) {
    require(out.mean.size() == bound.size(), "deterministic_action: dimension mismatch");
    std::vector<double> a(out.mean.size());
    for (std::size_t j = 0; j < a.size(); ++j) a[j] = bound.scale(j, std::tanh(out.mean[j]));
    return a;
}

/// Tape-side reparameterised sample for a batch.
struct SquashedBatch {
    ad::Var action;         // [b, a], scaled
    ad::Var log_prob;       // [b, 1]
    ad::Var mean_action;    // [b, a], scaled tanh(mean)
};

/// raw is the [b, 2a] head output; noise is a fixed [b, a] standard normal draw.
inline SquashedBatch squashed_sample(const ad::Var& raw, const ad::Tensor& noise, const ActionBound& bound) {
    const std::size_t a = bound.size();
    if (raw.value().cols() != 2 * a || noise.cols() != a || noise.rows() != raw.value().rows()) {
        throw ShapeError("squashed_sample: raw " + ad::shape_string(raw.shape()) + ", noise " +
                         ad::shape_string(noise.shape()) + ", action dim " + std::to_string(a));
    }
    ad::Tape& tape = *raw.tape();
    const std::size_t b = noise.rows();
    ad::Var mean = ad::slice_cols(raw, 0, a);
    ad::Var log_std = ad::clamp(ad::slice_cols(raw, a, a), kLogStdMin, kLogStdMax);
    ad::Var eps = tape.constant(noise);
    ad::Var u = ad::add(mean, ad::mul(ad::exp(log_std), eps));

    ad::Tensor gauss_const = ad::Tensor::zeros({b, a});
    for (std::size_t i = 0; i < gauss_const.size(); ++i)
        gauss_const[i] = -0.5 * noise[i] * noise[i] - 0.5 * std::log(2.0 * std::numbers::pi);
    ad::Var log_gauss = ad::sub(tape.constant(gauss_const), log_std);
    // log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
    ad::Var correction = ad::scale(ad::add_scalar(ad::add(u, ad::softplus(ad::scale(u, -2.0))), -std::numbers::ln2), -2.0);
    ad::Var log_prob = ad::row_sum(ad::sub(log_gauss, correction));

    ad::Tensor center = ad::Tensor::zeros({b, a});
    ad::Tensor half = ad::Tensor::zeros({b, a});
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < a; ++j) {
            center.at(r, j) = bound.center(j);
            half.at(r, j) = bound.half_range(j);
        }
    ad::Var c = tape.constant(center);
    ad::Var h = tape.constant(half);
    ad::Var action = ad::add(c, ad::mul(h, ad::tanh(u)));
    ad::Var mean_action = ad::add(c, ad::mul(h, ad::tanh(mean)));
    return SquashedBatch{action, log_prob, mean_action};
}

}  // namespace mela::nets
