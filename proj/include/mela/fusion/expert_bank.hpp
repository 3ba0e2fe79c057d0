#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mela/autodiff/ops.hpp"
#include "mela/nets/mlp.hpp"
#include "mela/nets/policy_head.hpp"

// Parameter-space fusion of expert networks (MELA) and the output-blending
// mixture-of-experts baseline.

namespace mela::fusion {

using ad::Tensor;
using ad::Var;
using nets::ParamSet;
using nets::ParamVars;
using nets::PolicyOutput;

/// N shape-identical experts plus the gating network that weighs them.
struct ExpertBank {
    std::vector<ParamSet> experts;
    ParamSet gating;

    std::size_t size() const { return experts.size(); }

    void validate() const {
        require(experts.size() >= 2, "expert bank: need at least 2 experts, got " + std::to_string(experts.size()));
        for (const auto& e : experts) {
            e.validate();
            if (!e.same_shapes(experts.front())) throw ShapeError("expert bank: experts differ in shape");
        }
        gating.validate();
        if (gating.B2.size() != experts.size()) {
            throw ShapeError("expert bank: gating emits " + std::to_string(gating.B2.size()) + " logits for " +
                             std::to_string(experts.size()) + " experts");
        }
    }

    std::size_t gating_input() const { return gating.W0.shape()[0]; }
    std::size_t policy_input() const { return experts.front().W0.shape()[0]; }
};

/// Simplex weights over experts.
struct GatingWeights {
    std::vector<double> alpha;

    void validate(double tolerance = 1e-9) const {
        double total = 0.0;
        for (double a : alpha) {
            require(a >= 0.0 && a <= 1.0, "gating weights: entry outside [0, 1]");
            total += a;
        }
        require(std::abs(total - 1.0) <= tolerance, "gating weights: entries do not sum to 1");
    }
    static GatingWeights one_hot(std::size_t n, std::size_t k) {
        GatingWeights w{std::vector<double>(n, 0.0)};
        w.alpha.at(k) = 1.0;
        return w;
    }
    static GatingWeights uniform(std::size_t n) { return GatingWeights{std::vector<double>(n, 1.0 / double(n))}; }
};

inline GatingWeights gating_forward(const ParamSet& gating, std::span<const double> gating_state) {
    const std::vector<double> logits = nets::mlp_forward(gating, gating_state);
    const Tensor p = ad::softmax_rows_value(Tensor::row(logits));
    return GatingWeights{p.storage()};
}

/// W_i = sum_n alpha_n W_i^n and B_i = sum_n alpha_n B_i^n.
inline ParamSet fuse_parameters(std::span<const ParamSet> experts, const GatingWeights& weights) {
    if (weights.alpha.size() != experts.size()) {
        throw ContractError("fuse_parameters: " + std::to_string(weights.alpha.size()) + " weights for " +
                            std::to_string(experts.size()) + " experts");
    }
    ParamSet fused = ParamSet::zeros(experts.front().spec());
    const auto out = fused.tensors();
    for (std::size_t n = 0; n < experts.size(); ++n) {
        if (!experts[n].same_shapes(experts.front())) throw ShapeError("fuse_parameters: expert shapes differ");
        const auto in = experts[n].tensors();
        const double a = weights.alpha[n];
        for (std::size_t k = 0; k < out.size(); ++k) {
            auto dst = out[k]->data();
            const auto src = in[k]->values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
        }
    }
    return fused;
}

inline ParamSet fuse_parameters(const ExpertBank& bank, const GatingWeights& weights) {
    return fuse_parameters(std::span<const ParamSet>(bank.experts), weights);
}

struct FusedStep {
    PolicyOutput output;
    GatingWeights weights;
};

/// Builds the synthesized network for this state and runs the policy input through it.
inline FusedStep synthesized_forward(const ExpertBank& bank, std::span<const double> gating_state,
                                     std::span<const double> policy_state) {
    FusedStep step;
    step.weights = gating_forward(bank.gating, gating_state);
    const ParamSet fused = fuse_parameters(bank, step.weights);
    step.output = nets::split_head(nets::mlp_forward(fused, policy_state));
    return step;
}

/// Output blending: o = sum_n alpha_n o_n on the raw head outputs, then split.
inline FusedStep moe_forward(const ExpertBank& bank, std::span<const double> gating_state,
                             std::span<const double> policy_state) {
    FusedStep step;
    step.weights = gating_forward(bank.gating, gating_state);
    std::vector<double> blended;
    for (std::size_t n = 0; n < bank.size(); ++n) {
        const std::vector<double> o = nets::mlp_forward(bank.experts[n], policy_state);
        if (blended.empty()) blended.assign(o.size(), 0.0);
        for (std::size_t i = 0; i < o.size(); ++i) blended[i] += step.weights.alpha[n] * o[i];
    }
    step.output = nets::split_head(blended);
    return step;
}

// ---- batched value paths -------------------------------------------------

/// Softmax gating weights for a batch, [b, g] -> [b, N].
inline Tensor gating_forward_batch(const ParamSet& gating, const Tensor& gating_states) {
    return ad::softmax_rows_value(nets::mlp_forward(gating, gating_states));
}

/// Layer-wise equivalent of per-row parameter fusion. Because each layer is
/// affine in its parameters, (sum_n a_n W^n) x + sum_n a_n B^n equals
/// sum_n a_n (W^n x + B^n) for the shared layer input x.
inline Tensor synthesized_forward_batch(std::span<const ParamSet> experts, const Tensor& alpha,
                                        const Tensor& policy_states) {
    const auto n_experts = static_cast<Eigen::Index>(experts.size());
    if (static_cast<Eigen::Index>(alpha.cols()) != n_experts || alpha.rows() != policy_states.rows()) {
        throw ShapeError("synthesized_forward_batch: alpha " + ad::shape_string(alpha.shape()));
    }
    ad::RowMatrix h = policy_states.mat();
    for (int layer = 0; layer < 3; ++layer) {
        ad::RowMatrix acc;
        for (Eigen::Index n = 0; n < n_experts; ++n) {
            const ParamSet& e = experts[static_cast<std::size_t>(n)];
            const Tensor& W = layer == 0 ? e.W0 : layer == 1 ? e.W1 : e.W2;
            const Tensor& B = layer == 0 ? e.B0 : layer == 1 ? e.B1 : e.B2;
            ad::RowMatrix z = h * W.mat();
            z.rowwise() += B.mat().row(0);
            if (n == 0)
                acc = alpha.mat().col(0).asDiagonal() * z;
            else
                acc += alpha.mat().col(n).asDiagonal() * z;
        }
        h = layer < 2 ? ad::RowMatrix(acc.cwiseMax(0.0)) : acc;
    }
    Tensor out = ad::from_eigen(h);
    out.check_finite("synthesized_forward_batch");
    return out;
}

inline Tensor moe_forward_batch(std::span<const ParamSet> experts, const Tensor& alpha, const Tensor& policy_states) {
    ad::RowMatrix acc;
    for (std::size_t n = 0; n < experts.size(); ++n) {
        const Tensor o = nets::mlp_forward(experts[n], policy_states);
        if (n == 0)
            acc = alpha.mat().col(0).asDiagonal() * o.mat();
        else
            acc += alpha.mat().col(static_cast<Eigen::Index>(n)).asDiagonal() * o.mat();
    }
    return ad::from_eigen(acc);
}

// ---- tape paths -----------------------------------------------------------

struct BankVars {
    std::vector<ParamVars> experts;
    ParamVars gating;
};

inline BankVars attach(ad::Tape& tape, const ExpertBank& bank, bool trainable) {
    BankVars v;
    for (const auto& e : bank.experts) v.experts.push_back(nets::attach(tape, e, trainable));
    v.gating = nets::attach(tape, bank.gating, trainable);
    return v;
}

inline Var gating_forward(const ParamVars& gating, const Var& gating_states) {
    return ad::softmax_rows(nets::mlp_forward(gating, gating_states));
}

/// Explicit fusion on the tape, alpha has N elements.
inline ParamVars fuse_parameters(std::span<const ParamVars> experts, const Var& alpha) {
    auto fuse = [&](auto member) {
        std::vector<Var> parts;
        for (const auto& e : experts) parts.push_back(e.*member);
        return ad::weighted_sum(parts, alpha);
    };
    return ParamVars{fuse(&ParamVars::W0), fuse(&ParamVars::W1), fuse(&ParamVars::W2),
                     fuse(&ParamVars::B0), fuse(&ParamVars::B1), fuse(&ParamVars::B2)};
}

/// Batched synthesized forward, raw head output [b, y]. See synthesized_forward_batch.
inline Var synthesized_forward(std::span<const ParamVars> experts, const Var& alpha, const Var& policy_states) {
    Var h = policy_states;
    for (int layer = 0; layer < 3; ++layer) {
        std::vector<Var> parts;
        parts.reserve(experts.size());
        for (const auto& e : experts) {
            const Var& W = layer == 0 ? e.W0 : layer == 1 ? e.W1 : e.W2;
            const Var& B = layer == 0 ? e.B0 : layer == 1 ? e.B1 : e.B2;
            parts.push_back(ad::add_bias(ad::matmul(h, W), B));
        }
        h = ad::blend(parts, alpha);
        if (layer < 2) h = ad::relu(h);
    }
    return h;
}

inline Var moe_forward(std::span<const ParamVars> experts, const Var& alpha, const Var& policy_states) {
    std::vector<Var> outs;
    for (const auto& e : experts) outs.push_back(nets::mlp_forward(e, policy_states));
    return ad::blend(outs, alpha);
}

// ---- stage-2 initialisation ---------------------------------------------

/// Experts [0, N/2) copy pretrained_a, [N/2, N) copy pretrained_b; the gating
/// network is freshly initialised (He-uniform hidden layers, small output layer).
template <typename Rng>
ExpertBank init_stage2(const ParamSet& pretrained_a, const ParamSet& pretrained_b, std::size_t n_experts,
                       const nets::MlpSpec& gating_spec, Rng& rng) {
    require(n_experts >= 2 && n_experts % 2 == 0, "init_stage2: expert count must be even and >= 2");
    pretrained_a.validate();
    pretrained_b.validate();
    if (!pretrained_a.same_shapes(pretrained_b)) throw ShapeError("init_stage2: pretrained experts differ in shape");
    require(gating_spec.output == n_experts, "init_stage2: gating output width must equal expert count");
    ExpertBank bank;
    for (std::size_t n = 0; n < n_experts; ++n) bank.experts.push_back(n < n_experts / 2 ? pretrained_a : pretrained_b);
    bank.gating = nets::init_params(gating_spec, rng);
    bank.validate();
    return bank;
}

}  // namespace mela::fusion
