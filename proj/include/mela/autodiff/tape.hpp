#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mela/autodiff/tensor.hpp"

namespace mela::ad {

enum class Op {
    Parameter,
    Constant,
    MatMul,
    AddBias,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Relu,
    Tanh,
    Exp,
    Log,
    Square,
    Softplus,
    Softmax,
    Sum,
    Mean,
    RowSum,
    SliceCols,
    ConcatCols,
    Minimum,
    Clamp,
    RowNorm,
    RowScale,
    ScalarMul,
    Blend,
    WeightedSum,
};

constexpr std::string_view op_name(Op op) {
    switch (op) {
        case Op::Parameter: return "parameter";
        case Op::Constant: return "constant";
        case Op::MatMul: return "matmul";
        case Op::AddBias: return "add_bias";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::AddScalar: return "add_scalar";
        case Op::Relu: return "relu";
        case Op::Tanh: return "tanh";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::Softplus: return "softplus";
        case Op::Softmax: return "softmax";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::RowSum: return "row_sum";
        case Op::SliceCols: return "slice_cols";
        case Op::ConcatCols: return "concat_cols";
        case Op::Minimum: return "minimum";
        case Op::Clamp: return "clamp";
        case Op::RowNorm: return "row_norm";
        case Op::RowScale: return "row_scale";
        case Op::ScalarMul: return "scalar_mul";
        case Op::Blend: return "blend";
        case Op::WeightedSum: return "weighted_sum";
    }
    return "unknown";
}

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t index() const { return index_; }
    Tape* tape() const { return tape_; }

private:
    Tape* tape_ = nullptr;
    std::size_t index_ = 0;
};

class BackwardContext;
using BackwardFn = std::function<void(BackwardContext&)>;

/// Gradients of a scalar loss keyed by parameter node.
class Gradients {
public:
    const Tensor& of(const Var& parameter) const {
        auto it = grads_.find(parameter.index());
        if (it == grads_.end()) throw ContractError("no gradient recorded for node " + std::to_string(parameter.index()));
        return it->second;
    }
    bool has(const Var& parameter) const { return grads_.contains(parameter.index()); }
    std::size_t size() const { return grads_.size(); }

private:
    friend class Tape;
    std::unordered_map<std::size_t, Tensor> grads_;
};

/// Single-use reverse-mode tape. Nodes are appended in evaluation order, so the
/// node list is already topologically sorted.
class Tape {
public:
    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var parameter(Tensor value) {
        value.check_finite("parameter");
        nodes_.push_back(Node{Op::Parameter, std::move(value), {}, {}, true, true});
        return Var(this, nodes_.size() - 1);
    }

    Var constant(Tensor value) {
        value.check_finite("constant");
        nodes_.push_back(Node{Op::Constant, std::move(value), {}, {}, false, false});
        return Var(this, nodes_.size() - 1);
    }

    /// Appends an op node. The backward function is only kept if some input needs a gradient.
    Var record(Op op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
        if (consumed_) throw ContractError("tape already consumed by backward()");
        if (!value.all_finite()) {
            throw NumericError("non-finite result from op '" + std::string(op_name(op)) + "'");
        }
        bool needs = false;
        for (auto i : inputs) needs = needs || nodes_[i].needs_grad;
        nodes_.push_back(Node{op, std::move(value), std::move(inputs), needs ? std::move(backward) : BackwardFn{},
                              needs, false});
        return Var(this, nodes_.size() - 1);
    }

    const Tensor& value(std::size_t index) const { return nodes_[index].value; }
    bool needs_grad(std::size_t index) const { return nodes_[index].needs_grad; }
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    Gradients backward(const Var& loss);

private:
    friend class BackwardContext;
    struct Node {
        Op op;
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool needs_grad;
        bool is_parameter;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(index_); }

/// View handed to an op's backward function.
class BackwardContext {
public:
    BackwardContext(Tape& tape, std::vector<std::optional<Tensor>>& grads, std::size_t node)
        : tape_(tape), grads_(grads), node_(node) {}

    const Tensor& out_grad() const { return *grads_[node_]; }
    const Tensor& output() const { return tape_.nodes_[node_].value; }
    const Tensor& input(std::size_t i) const { return tape_.nodes_[input_index(i)].value; }
    std::size_t input_count() const { return tape_.nodes_[node_].inputs.size(); }
    bool wants(std::size_t i) const { return tape_.nodes_[input_index(i)].needs_grad; }

    /// Zero-initialised on first access.
    Tensor& grad(std::size_t i) {
        auto& slot = grads_[input_index(i)];
        if (!slot) slot = Tensor::zeros(tape_.nodes_[input_index(i)].value.shape());
        return *slot;
    }

private:
    std::size_t input_index(std::size_t i) const { return tape_.nodes_[node_].inputs[i]; }
    Tape& tape_;
    std::vector<std::optional<Tensor>>& grads_;
    std::size_t node_;
};

inline Gradients Tape::backward(const Var& loss) {
    if (loss.tape() != this) throw ContractError("loss variable belongs to another tape");
    if (consumed_) throw ContractError("tape already consumed by backward()");
    const Tensor& lv = nodes_[loss.index()].value;
    if (lv.size() != 1) throw ContractError("backward() needs a scalar loss, got shape " + shape_string(lv.shape()));
    consumed_ = true;

    std::vector<std::optional<Tensor>> grads(nodes_.size());
    grads[loss.index()] = Tensor::filled(lv.shape(), 1.0);
    for (std::size_t k = loss.index() + 1; k-- > 0;) {
        Node& node = nodes_[k];
        if (!grads[k] || !node.backward) continue;
        BackwardContext ctx(*this, grads, k);
        node.backward(ctx);
    }

    Gradients out;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
        if (!nodes_[k].is_parameter) continue;
        out.grads_.emplace(k, grads[k] ? std::move(*grads[k]) : Tensor::zeros(nodes_[k].value.shape()));
    }
    return out;
}

}  // namespace mela::ad
