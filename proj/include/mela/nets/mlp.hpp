#pragma once

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mela/autodiff/ops.hpp"
#include "mela/autodiff/tensor.hpp"

namespace mela::nets {

using ad::Shape;
using ad::Tensor;
using ad::Var;

enum class Activation { Relu, Tanh };

/// Two-hidden-layer perceptron: input -> hidden -> hidden -> output.
struct MlpSpec {
    std::size_t input = 1;
    std::size_t hidden = 256;
    std::size_t output = 1;
    Activation activation = Activation::Relu;

    void validate() const {
        require(input >= 1 && hidden >= 1 && output >= 1, "mlp spec: all dimensions must be >= 1");
    }
    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

inline constexpr std::array<std::string_view, 6> kParamNames{"W0", "W1", "W2", "B0", "B1", "B2"};

/// Weights and biases of one MLP. W_i is [fan_in, fan_out]; B_i has the layer's output width.
struct ParamSet {
    Tensor W0, W1, W2, B0, B1, B2;

    static ParamSet zeros(const MlpSpec& spec) {
        spec.validate();
        return ParamSet{Tensor::zeros({spec.input, spec.hidden}), Tensor::zeros({spec.hidden, spec.hidden}),
                        Tensor::zeros({spec.hidden, spec.output}), Tensor::zeros({spec.hidden}),
                        Tensor::zeros({spec.hidden}),              Tensor::zeros({spec.output})};
    }

    std::array<Tensor*, 6> tensors() { return {&W0, &W1, &W2, &B0, &B1, &B2}; }
    std::array<const Tensor*, 6> tensors() const { return {&W0, &W1, &W2, &B0, &B1, &B2}; }

    MlpSpec spec(Activation activation = Activation::Relu) const {
        return MlpSpec{W0.shape()[0], W0.shape()[1], W2.shape()[1], activation};
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Tensor* t : tensors()) n += t->size();
        return n;
    }

    /// Throws unless every tensor is present with shapes consistent with one MlpSpec.
    void validate() const {
        auto bad = [](const std::string& what) { throw ShapeError("param set: " + what); };
        if (W0.rank() != 2 || W1.rank() != 2 || W2.rank() != 2) bad("weights must be matrices");
        if (B0.rank() != 1 || B1.rank() != 1 || B2.rank() != 1) bad("biases must be vectors");
        const std::size_t h = W0.shape()[1];
        if (W1.shape()[0] != h || W1.shape()[1] != h) bad("W1 must be hidden x hidden");
        if (W2.shape()[0] != h) bad("W2 rows must equal hidden width");
        if (B0.size() != h || B1.size() != h) bad("hidden biases must have hidden width");
        if (B2.size() != W2.shape()[1]) bad("B2 must match output width");
        for (const Tensor* t : tensors()) t->check_finite("param set");
    }

    bool same_shapes(const ParamSet& other) const {
        const auto a = tensors();
        const auto b = other.tensors();
        for (std::size_t i = 0; i < a.size(); ++i)
            if (!a[i]->same_shape(*b[i])) return false;
        return true;
    }

    friend bool operator==(const ParamSet& a, const ParamSet& b) {
        const auto x = a.tensors();
        const auto y = b.tensors();
        for (std::size_t i = 0; i < x.size(); ++i)
            if (!(*x[i] == *y[i])) return false;
        return true;
    }
};

/// He-uniform hidden layers, biases zero. The output layer is drawn from
/// U(-output_scale, output_scale) so heads start near zero.
template <typename Rng>
ParamSet init_params(const MlpSpec& spec, Rng& rng, double output_scale = 3e-3) {
    spec.validate();
    ParamSet p = ParamSet::zeros(spec);
    auto fill = [&rng](Tensor& t, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : t.data()) v = dist(rng);
    };
    fill(p.W0, std::sqrt(6.0 / static_cast<double>(spec.input)));
    fill(p.W1, std::sqrt(6.0 / static_cast<double>(spec.hidden)));
    fill(p.W2, output_scale);
    return p;
}

namespace detail {
inline void activate(ad::RowMatrix& m, Activation a) {
    if (a == Activation::Relu)
        m = m.cwiseMax(0.0);
    else
        m = m.array().tanh().matrix();
}
}  // namespace detail

/// Batched forward pass, inputs [b, x] -> [b, y]. Output layer is linear.
inline Tensor mlp_forward(const ParamSet& p, const Tensor& inputs, Activation activation = Activation::Relu) {
    const std::size_t in = p.W0.shape()[0];
    if (inputs.cols() != in) {
        throw ShapeError("mlp_forward: input width " + std::to_string(inputs.cols()) + ", network expects " +
                             std::to_string(in));
    }
    ad::RowMatrix h = inputs.mat() * p.W0.mat();
    h.rowwise() += p.B0.mat().row(0);
    detail::activate(h, activation);
    ad::RowMatrix h2 = h * p.W1.mat();
    h2.rowwise() += p.B1.mat().row(0);
    detail::activate(h2, activation);
    ad::RowMatrix out = h2 * p.W2.mat();
    out.rowwise() += p.B2.mat().row(0);
    Tensor result = ad::from_eigen(out);
    if (inputs.rank() == 1) result = result.reshaped({result.size()});
    result.check_finite("mlp_forward");
    return result;
}

inline std::vector<double> mlp_forward(const ParamSet& p, std::span<const double> input,
                                       Activation activation = Activation::Relu) {
    const Tensor out = mlp_forward(p, Tensor::vector({input.begin(), input.end()}), activation);
    return out.storage();
}

/// A ParamSet placed on a tape.
struct ParamVars {
    Var W0, W1, W2, B0, B1, B2;
    std::array<Var, 6> vars() const { return {W0, W1, W2, B0, B1, B2}; }
};

inline ParamVars attach(ad::Tape& tape, const ParamSet& p, bool trainable) {
    auto put = [&](const Tensor& t) { return trainable ? tape.parameter(t) : tape.constant(t); };
    return ParamVars{put(p.W0), put(p.W1), put(p.W2), put(p.B0), put(p.B1), put(p.B2)};
}

inline Var activate(const Var& v, Activation a) { return a == Activation::Relu ? ad::relu(v) : ad::tanh(v); }

inline Var mlp_forward(const ParamVars& p, const Var& inputs, Activation activation = Activation::Relu) {
    Var h = activate(ad::add_bias(ad::matmul(inputs, p.W0), p.B0), activation);
    h = activate(ad::add_bias(ad::matmul(h, p.W1), p.B1), activation);
    return ad::add_bias(ad::matmul(h, p.W2), p.B2);
}

/// Gradients for each tensor of an attached ParamSet, in ParamSet order.
inline ParamSet gradients_of(const ad::Gradients& grads, const ParamVars& vars) {
    return ParamSet{grads.of(vars.W0), grads.of(vars.W1), grads.of(vars.W2),
                    grads.of(vars.B0), grads.of(vars.B1), grads.of(vars.B2)};
}

}  // namespace mela::nets
