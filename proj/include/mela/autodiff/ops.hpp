#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mela/autodiff/tape.hpp"

// Differentiable primitives. Matrices are [rows, cols]; rank-1 inputs are
// treated as a single row where a matrix is expected.

namespace mela::ad {

namespace detail {

inline Tape& same_tape(std::initializer_list<Var> vars) {
    Tape* t = nullptr;
    for (const auto& v : vars) {
        if (v.tape() == nullptr) throw ContractError("variable is not attached to a tape");
        if (t != nullptr && v.tape() != t) throw ContractError("variables belong to different tapes");
        t = v.tape();
    }
    return *t;
}

inline void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
}

template <typename F>
Tensor map_values(const Tensor& in, F f) {
    Tensor out = Tensor::zeros(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return out;
}

/// Elementwise unary op with derivative expressed through (input, output).
template <typename F, typename D>
Var unary(Op op, const Var& a, F f, D dfdx) {
    Tape& tape = same_tape({a});
    Tensor out = map_values(a.value(), f);
    return tape.record(op, std::move(out), {a.index()}, [dfdx](BackwardContext& ctx) {
        const Tensor& x = ctx.input(0);
        const Tensor& y = ctx.output();
        const Tensor& g = ctx.out_grad();
        Tensor& gx = ctx.grad(0);
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * dfdx(x[i], y[i]);
    });
}

}  // namespace detail

inline double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid_value(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var matmul(const Var& a, const Var& w) {
    Tape& tape = detail::same_tape({a, w});
    detail::require_matrix(a.value(), "matmul");
    detail::require_matrix(w.value(), "matmul");
    if (a.value().cols() != w.value().rows()) {
        throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(w.shape()));
    }
    Tensor out = from_eigen(a.value().mat() * w.value().mat());
    return tape.record(Op::MatMul, std::move(out), {a.index(), w.index()}, [](BackwardContext& ctx) {
        const auto g = ctx.out_grad().mat();
        if (ctx.wants(0)) ctx.grad(0).mat().noalias() += g * ctx.input(1).mat().transpose();
        if (ctx.wants(1)) ctx.grad(1).mat().noalias() += ctx.input(0).mat().transpose() * g;
    });
}

/// a[b, n] + bias[n] broadcast over rows.
inline Var add_bias(const Var& a, const Var& bias) {
    Tape& tape = detail::same_tape({a, bias});
    detail::require_matrix(a.value(), "add_bias");
    if (bias.value().size() != a.value().cols()) {
        throw ShapeError("add_bias: " + shape_string(a.shape()) + " + " + shape_string(bias.shape()));
    }
    Tensor out = a.value();
    out.mat().rowwise() += bias.value().mat().row(0);
    return tape.record(Op::AddBias, std::move(out), {a.index(), bias.index()}, [](BackwardContext& ctx) {
        const auto g = ctx.out_grad().mat();
        if (ctx.wants(0)) ctx.grad(0).mat() += g;
        if (ctx.wants(1)) ctx.grad(1).mat().row(0) += g.colwise().sum();
    });
}

inline Var add(const Var& a, const Var& b) {
    Tape& tape = detail::same_tape({a, b});
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return tape.record(Op::Add, std::move(out), {a.index(), b.index()}, [](BackwardContext& ctx) {
        const Tensor& g = ctx.out_grad();
        for (std::size_t k = 0; k < 2; ++k) {
            if (!ctx.wants(k)) continue;
            Tensor& gk = ctx.grad(k);
            for (std::size_t i = 0; i < g.size(); ++i) gk[i] += g[i];
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    Tape& tape = detail::same_tape({a, b});
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return tape.record(Op::Sub, std::move(out), {a.index(), b.index()}, [](BackwardContext& ctx) {
        const Tensor& g = ctx.out_grad();
        if (ctx.wants(0)) {
            Tensor& ga = ctx.grad(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (ctx.wants(1)) {
            Tensor& gb = ctx.grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    Tape& tape = detail::same_tape({a, b});
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return tape.record(Op::Mul, std::move(out), {a.index(), b.index()}, [](BackwardContext& ctx) {
        const Tensor& g = ctx.out_grad();
        if (ctx.wants(0)) {
            Tensor& ga = ctx.grad(0);
            const Tensor& bv = ctx.input(1);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (ctx.wants(1)) {
            Tensor& gb = ctx.grad(1);
            const Tensor& av = ctx.input(0);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

inline Var scale(const Var& a, double s) {
    return detail::unary(Op::Scale, a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(const Var& a, double s) {
    return detail::unary(Op::AddScalar, a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var relu(const Var& a) {
    return detail::unary(Op::Relu, a, [](double x) { return x > 0 ? x : 0.0; },
                         [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var tanh(const Var& a) {
    return detail::unary(Op::Tanh, a, [](double x) { return std::tanh(x); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(const Var& a) {
    return detail::unary(Op::Exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
    return detail::unary(Op::Log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(const Var& a) {
    return detail::unary(Op::Square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// log(1 + e^x), evaluated without overflow.
inline Var softplus(const Var& a) {
    return detail::unary(Op::Softplus, a, softplus_value, [](double x, double) { return sigmoid_value(x); });
}

/// Gradient passes where lo <= x <= hi.
inline Var clamp(const Var& a, double lo, double hi) {
    if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
    return detail::unary(
        Op::Clamp, a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax_rows_value(const Tensor& logits) {
    Tensor out = Tensor::zeros(logits.shape());
    const std::size_t rows = logits.rows(), cols = logits.cols();
    for (std::size_t r = 0; r < rows; ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c) m = std::max(m, logits[r * cols + c]);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = std::exp(logits[r * cols + c] - m);
            z += out[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
    }
    return out;
}

inline Var softmax_rows(const Var& a) {
    Tape& tape = detail::same_tape({a});
    Tensor out = softmax_rows_value(a.value());
    return tape.record(Op::Softmax, std::move(out), {a.index()}, [](BackwardContext& ctx) {
        const Tensor& y = ctx.output();
        const Tensor& g = ctx.out_grad();
        Tensor& gx = ctx.grad(0);
        const std::size_t rows = y.rows(), cols = y.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
    });
}

inline Var sum(const Var& a) {
    Tape& tape = detail::same_tape({a});
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return tape.record(Op::Sum, Tensor::scalar(s), {a.index()}, [](BackwardContext& ctx) {
        const double g = ctx.out_grad()[0];
        Tensor& gx = ctx.grad(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

inline Var mean(const Var& a) {
    Tape& tape = detail::same_tape({a});
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw ContractError("mean of an empty tensor");
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return tape.record(Op::Mean, Tensor::scalar(s / n), {a.index()}, [n](BackwardContext& ctx) {
        const double g = ctx.out_grad()[0] / n;
        Tensor& gx = ctx.grad(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

/// [b, n] -> [b, 1]
inline Var row_sum(const Var& a) {
    Tape& tape = detail::same_tape({a});
    detail::require_matrix(a.value(), "row_sum");
    Tensor out = from_eigen(a.value().mat().rowwise().sum());
    return tape.record(Op::RowSum, std::move(out), {a.index()}, [](BackwardContext& ctx) {
        ctx.grad(0).mat().colwise() += ctx.out_grad().mat().col(0);
    });
}

inline Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
    Tape& tape = detail::same_tape({a});
    detail::require_matrix(a.value(), "slice_cols");
    if (start + count > a.value().cols() || count == 0) {
        throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") out of " +
                         shape_string(a.shape()));
    }
    Tensor out = from_eigen(a.value().mat().middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)));
    return tape.record(Op::SliceCols, std::move(out), {a.index()}, [start, count](BackwardContext& ctx) {
        ctx.grad(0).mat().middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) +=
            ctx.out_grad().mat();
    });
}

inline Var concat_cols(const Var& a, const Var& b) {
    Tape& tape = detail::same_tape({a, b});
    detail::require_matrix(a.value(), "concat_cols");
    detail::require_matrix(b.value(), "concat_cols");
    if (a.value().rows() != b.value().rows()) {
        throw ShapeError("concat_cols: " + shape_string(a.shape()) + " | " + shape_string(b.shape()));
    }
    const auto ca = static_cast<Eigen::Index>(a.value().cols());
    const auto cb = static_cast<Eigen::Index>(b.value().cols());
    Tensor out = Tensor::zeros(Shape{a.value().rows(), a.value().cols() + b.value().cols()});
    out.mat().leftCols(ca) = a.value().mat();
    out.mat().rightCols(cb) = b.value().mat();
    return tape.record(Op::ConcatCols, std::move(out), {a.index(), b.index()}, [ca, cb](BackwardContext& ctx) {
        const auto g = ctx.out_grad().mat();
        if (ctx.wants(0)) ctx.grad(0).mat() += g.leftCols(ca);
        if (ctx.wants(1)) ctx.grad(1).mat() += g.rightCols(cb);
    });
}

/// Elementwise min; ties send the gradient to the first argument.
inline Var minimum(const Var& a, const Var& b) {
    Tape& tape = detail::same_tape({a, b});
    require_same_shape(a.value(), b.value(), "minimum");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(a.value()[i], b.value()[i]);
    return tape.record(Op::Minimum, std::move(out), {a.index(), b.index()}, [](BackwardContext& ctx) {
        const Tensor& av = ctx.input(0);
        const Tensor& bv = ctx.input(1);
        const Tensor& g = ctx.out_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t k = av[i] <= bv[i] ? 0 : 1;
            if (ctx.wants(k)) ctx.grad(k)[i] += g[i];
        }
    });
}

/// Euclidean norm of each row, [b, n] -> [b, 1]. The subgradient at 0 is taken as 0.
inline Var row_norm(const Var& a) {
    Tape& tape = detail::same_tape({a});
    detail::require_matrix(a.value(), "row_norm");
    Tensor out = from_eigen(a.value().mat().rowwise().norm());
    return tape.record(Op::RowNorm, std::move(out), {a.index()}, [](BackwardContext& ctx) {
        const Tensor& x = ctx.input(0);
        const Tensor& y = ctx.output();
        const Tensor& g = ctx.out_grad();
        Tensor& gx = ctx.grad(0);
        const std::size_t cols = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r) {
            if (y[r] == 0.0) continue;
            const double s = g[r] / y[r];
            for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += s * x[r * cols + c];
        }
    });
}

/// a[b, n] scaled per row by c[b, 1].
inline Var row_scale(const Var& a, const Var& c) {
    Tape& tape = detail::same_tape({a, c});
    detail::require_matrix(a.value(), "row_scale");
    if (c.value().size() != a.value().rows()) {
        throw ShapeError("row_scale: " + shape_string(a.shape()) + " by " + shape_string(c.shape()));
    }
    Tensor out = a.value();
    const std::size_t cols = out.cols();
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t k = 0; k < cols; ++k) out[r * cols + k] *= c.value()[r];
    return tape.record(Op::RowScale, std::move(out), {a.index(), c.index()}, [](BackwardContext& ctx) {
        const Tensor& av = ctx.input(0);
        const Tensor& cv = ctx.input(1);
        const Tensor& g = ctx.out_grad();
        const std::size_t cols = av.cols();
        for (std::size_t r = 0; r < av.rows(); ++r) {
            double dc = 0.0;
            for (std::size_t k = 0; k < cols; ++k) {
                if (ctx.wants(0)) ctx.grad(0)[r * cols + k] += g[r * cols + k] * cv[r];
                dc += g[r * cols + k] * av[r * cols + k];
            }
            if (ctx.wants(1)) ctx.grad(1)[r] += dc;
        }
    });
}

/// a times a single-element variable s.
inline Var scalar_mul(const Var& a, const Var& s) {
    Tape& tape = detail::same_tape({a, s});
    if (s.value().size() != 1) throw ShapeError("scalar_mul: scale must have one element");
    const double k = s.value()[0];
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= k;
    return tape.record(Op::ScalarMul, std::move(out), {a.index(), s.index()}, [](BackwardContext& ctx) {
        const Tensor& av = ctx.input(0);
        const double kv = ctx.input(1)[0];
        const Tensor& g = ctx.out_grad();
        double ds = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (ctx.wants(0)) ctx.grad(0)[i] += g[i] * kv;
            ds += g[i] * av[i];
        }
        if (ctx.wants(1)) ctx.grad(1)[0] += ds;
    });
}

/// Per-row convex blend: out[b, :] = sum_n weights[b, n] * parts[n][b, :].
inline Var blend(std::span<const Var> parts, const Var& weights) {
    if (parts.empty()) throw ContractError("blend: no parts");
    Tape& tape = detail::same_tape({parts[0], weights});
    const Tensor& w = weights.value();
    detail::require_matrix(w, "blend");
    const Tensor& p0 = parts[0].value();
    detail::require_matrix(p0, "blend");
    if (w.cols() != parts.size() || w.rows() != p0.rows()) {
        throw ShapeError("blend: weights " + shape_string(w.shape()) + " for " + std::to_string(parts.size()) +
                         " parts of " + shape_string(p0.shape()));
    }
    std::vector<std::size_t> inputs;
    inputs.reserve(parts.size() + 1);
    Tensor out = Tensor::zeros(p0.shape());
    const std::size_t n_parts = parts.size();
    for (std::size_t n = 0; n < n_parts; ++n) {
        detail::same_tape({parts[n], weights});
        require_same_shape(parts[n].value(), p0, "blend");
        out.mat() += (w.mat().col(static_cast<Eigen::Index>(n)).asDiagonal() * parts[n].value().mat());
        inputs.push_back(parts[n].index());
    }
    inputs.push_back(weights.index());
    return tape.record(Op::Blend, std::move(out), std::move(inputs), [n_parts](BackwardContext& ctx) {
        const auto g = ctx.out_grad().mat();
        const auto wv = ctx.input(n_parts).mat();
        const bool want_w = ctx.wants(n_parts);
        for (std::size_t n = 0; n < n_parts; ++n) {
            const auto col = wv.col(static_cast<Eigen::Index>(n));
            if (ctx.wants(n)) ctx.grad(n).mat() += col.asDiagonal() * g;
            if (want_w) {
                ctx.grad(n_parts).mat().col(static_cast<Eigen::Index>(n)) +=
                    g.cwiseProduct(ctx.input(n).mat()).rowwise().sum();
            }
        }
    });
}

/// sum_n weights[n] * tensors[n]; tensors share one shape, weights has N elements.
inline Var weighted_sum(std::span<const Var> tensors, const Var& weights) {
    if (tensors.empty()) throw ContractError("weighted_sum: no tensors");
    Tape& tape = detail::same_tape({tensors[0], weights});
    const Tensor& w = weights.value();
    if (w.size() != tensors.size()) {
        throw ShapeError("weighted_sum: " + std::to_string(w.size()) + " weights for " +
                         std::to_string(tensors.size()) + " tensors");
    }
    Tensor out = Tensor::zeros(tensors[0].value().shape());
    std::vector<std::size_t> inputs;
    for (std::size_t n = 0; n < tensors.size(); ++n) {
        detail::same_tape({tensors[n], weights});
        require_same_shape(tensors[n].value(), out, "weighted_sum");
        const Tensor& t = tensors[n].value();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[n] * t[i];
        inputs.push_back(tensors[n].index());
    }
    inputs.push_back(weights.index());
    const std::size_t count = tensors.size();
    return tape.record(Op::WeightedSum, std::move(out), std::move(inputs), [count](BackwardContext& ctx) {
        const Tensor& g = ctx.out_grad();
        const Tensor& wv = ctx.input(count);
        for (std::size_t n = 0; n < count; ++n) {
            const Tensor& t = ctx.input(n);
            if (ctx.wants(n)) {
                Tensor& gt = ctx.grad(n);
                for (std::size_t i = 0; i < g.size(); ++i) gt[i] += wv[n] * g[i];
            }
            if (ctx.wants(count)) {
                double d = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) d += g[i] * t[i];
                ctx.grad(count)[n] += d;
            }
        }
    });
}

}  // namespace mela::ad
