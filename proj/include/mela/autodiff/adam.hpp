#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mela/autodiff/tensor.hpp"

namespace mela::ad {

struct AdamOptions {
    double learning_rate = 3e-4;
    double weight_decay = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment accumulators for one group of parameter tensors.
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(AdamOptions options) : options_(options) {}

    const AdamOptions& options() const { return options_; }
    AdamOptions& options() { return options_; }
    std::uint64_t step() const { return step_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

    /// Adam with bias correction. Weight decay is decoupled and applied first:
    /// p <- p - lr * wd * p, then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
    void apply(std::span<Tensor* const> params, std::span<const Tensor> grads) {
        if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count mismatch");
        if (!(options_.learning_rate > 0)) throw ContractError("adam: learning rate must be positive");
        if (m_.empty()) {
            for (const Tensor* p : params) {
                m_.push_back(Tensor::zeros(p->shape()));
                v_.push_back(Tensor::zeros(p->shape()));
            }
        }
        if (m_.size() != params.size()) throw ShapeError("adam: parameter group changed size");
        for (std::size_t k = 0; k < params.size(); ++k) {
            require_same_shape(*params[k], grads[k], "adam parameter/gradient");
            require_same_shape(*params[k], m_[k], "adam parameter/state");
        }

        ++step_;
        const auto& o = options_;
        const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
        const double decay = 1.0 - o.learning_rate * o.weight_decay;
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto p = params[k]->data();
            const auto g = grads[k].values();
            auto m = m_[k].data();
            auto v = v_[k].data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
                v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
                const double m_hat = m[i] / c1;
                const double v_hat = v[i] / c2;
                p[i] = p[i] * decay - o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
            }
            params[k]->check_finite("adam update");
        }
    }

private:
    AdamOptions options_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t step_ = 0;
};

}  // namespace mela::ad
