#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "mela/autodiff/adam.hpp"
#include "mela/autodiff/ops.hpp"
#include "mela/nets/mlp.hpp"

namespace ad = mela::ad;
using ad::Tensor;
using mela::testing::grad_check;
using mela::testing::random_tensor;

TEST(Tensor, RejectsNonFiniteAndBadShape) {
    EXPECT_THROW(Tensor({2}, {1.0, NAN}), mela::NumericError);
    EXPECT_THROW(Tensor({2}, {1.0, INFINITY}), mela::NumericError);
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), mela::ShapeError);
}

TEST(Primitives, ReluTanhSoftmaxExamples) {
    ad::Tape tape;
    auto x = tape.constant(Tensor::matrix(1, 3, {-1, 0, 2}));
    const Tensor r = ad::relu(x).value();
    EXPECT_EQ(r[0], 0.0);
    EXPECT_EQ(r[1], 0.0);
    EXPECT_EQ(r[2], 2.0);

    EXPECT_EQ(ad::tanh(tape.constant(Tensor::matrix(1, 1, {0.0}))).value()[0], 0.0);

    const Tensor s = ad::softmax_rows(tape.constant(Tensor::filled({1, 8}, 3.7))).value();
    for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 0.125);
}

TEST(Primitives, ShapeMismatchIsConstructionError) {
    ad::Tape tape;
    auto a = tape.constant(Tensor::zeros({2, 3}));
    auto b = tape.constant(Tensor::zeros({2, 2}));
    EXPECT_THROW(ad::matmul(a, a), mela::ShapeError);
    EXPECT_THROW(ad::add(a, b), mela::ShapeError);
    EXPECT_THROW(ad::add_bias(a, tape.constant(Tensor::zeros({2}))), mela::ShapeError);
}

TEST(Primitives, NonFiniteResultNamesTheOp) {
    ad::Tape tape;
    auto x = tape.constant(Tensor::matrix(1, 1, {0.0}));
    try {
        ad::log(x);
        FAIL() << "expected NumericError";
    } catch (const mela::NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
    }
    auto big = tape.constant(Tensor::matrix(1, 1, {1000.0}));
    EXPECT_THROW(ad::exp(big), mela::NumericError);
}

TEST(Backward, SquareAndTanhExamples) {
    {
        ad::Tape tape;
        auto x = tape.parameter(Tensor::matrix(1, 1, {3.0}));
        auto g = tape.backward(ad::sum(ad::square(x)));
        EXPECT_DOUBLE_EQ(g.of(x)[0], 6.0);
    }
    {
        ad::Tape tape;
        auto x = tape.parameter(Tensor::zeros({1, 4}));
        auto g = tape.backward(ad::sum(ad::tanh(x)));
        for (double v : g.of(x).values()) EXPECT_DOUBLE_EQ(v, 1.0);
    }
}

TEST(Backward, ContractErrors) {
    ad::Tape tape;
    auto x = tape.parameter(Tensor::zeros({1, 2}));
    EXPECT_THROW(tape.backward(x), mela::ContractError);
    auto loss = ad::sum(x);
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), mela::ContractError);
    EXPECT_THROW(ad::relu(x), mela::ContractError);
}

TEST(Backward, RandomMlpMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const std::vector<Tensor> params{random_tensor({4, 7}, rng), random_tensor({7, 7}, rng),
                                         random_tensor({7, 3}, rng), random_tensor({7}, rng, -0.1, 0.1),
                                         random_tensor({7}, rng, -0.1, 0.1), random_tensor({3}, rng)};
        const Tensor input = random_tensor({5, 4}, rng);
        auto build = [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
            mela::nets::ParamVars p{v[0], v[1], v[2], v[3], v[4], v[5]};
            auto out = mela::nets::mlp_forward(p, tape.constant(input));
            return ad::sum(ad::square(ad::tanh(out)));
        };
        const auto r = grad_check(build, params);
        EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
        EXPECT_GT(r.checked, 100u);
    }
}

TEST(Backward, EveryPrimitiveMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    const std::vector<Tensor> params{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng, 0.2, 1.5),
                                     random_tensor({3, 1}, rng), random_tensor({1}, rng),
                                     random_tensor({3, 2}, rng, 0.1, 1.0)};
    auto build = [](ad::Tape& tape, const std::vector<ad::Var>& v) {
        using namespace mela::ad;
        Var a = v[0], pos = v[1], col = v[2], s = v[3], w = v[4];
        Var t = add(mul(a, pos), sub(exp(scale(a, 0.3)), log(pos)));
        t = add(t, softplus(scale(a, 2.0)));
        t = minimum(t, add_scalar(square(a), 0.1));
        t = add(t, softmax_rows(scale(a, 1.7)));
        t = concat_cols(slice_cols(t, 1, 2), slice_cols(clamp(t, -5.0, 5.0), 0, 2));
        t = row_scale(t, col);
        t = scalar_mul(t, s);
        std::vector<Var> parts{slice_cols(t, 0, 3), slice_cols(a, 1, 3)};
        Var b = blend(parts, softmax_rows(w));
        Var n = row_norm(b);
        (void)tape;
        return add(mean(n), sum(row_sum(tanh(t))));
    };
    const auto r = grad_check(build, params);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Backward, WeightedSumMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    const std::vector<Tensor> params{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng),
                                     random_tensor({2, 3}, rng), random_tensor({3}, rng)};
    auto build = [](ad::Tape& tape, const std::vector<ad::Var>& v) {
        (void)tape;
        std::vector<ad::Var> parts{v[0], v[1], v[2]};
        return ad::sum(ad::square(ad::weighted_sum(parts, v[3])));
    };
    const auto r = grad_check(build, params);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Softmax, SimplexAndShiftInvariance) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const Tensor logits = random_tensor({1, 8}, rng, -30.0, 30.0);
        const Tensor p = ad::softmax_rows_value(logits);
        double total = 0.0;
        for (double v : p.values()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
        Tensor shifted = logits;
        for (double& v : shifted.data()) v += 123.25;
        EXPECT_LE(ad::max_abs_diff(p, ad::softmax_rows_value(shifted)), 1e-12);
    }
}

TEST(Determinism, ForwardBackwardBitIdentical) {
    auto run = [] {
        std::mt19937_64 rng(99);
        auto params = mela::nets::init_params(mela::nets::MlpSpec{5, 16, 3}, rng, 0.5);
        const Tensor x = random_tensor({4, 5}, rng);
        ad::Tape tape;
        auto vars = mela::nets::attach(tape, params, true);
        auto loss = ad::mean(ad::square(mela::nets::mlp_forward(vars, tape.constant(x))));
        const double value = loss.value()[0];
        auto grads = tape.backward(loss);
        return std::make_pair(value, mela::nets::gradients_of(grads, vars));
    };
    const auto a = run();
    const auto b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_TRUE(a.second == b.second);
}

TEST(Adam, ZeroGradientNoDecayLeavesParams) {
    Tensor p = Tensor::vector({1.0, -2.0});
    ad::AdamState adam({.learning_rate = 3e-4, .weight_decay = 0.0});
    Tensor* ptr = &p;
    const Tensor g = Tensor::zeros({2});
    adam.apply(std::span<Tensor* const>(&ptr, 1), std::span<const Tensor>(&g, 1));
    EXPECT_EQ(p[0], 1.0);
    EXPECT_EQ(p[1], -2.0);
}

TEST(Adam, OneStepOnSquareMovesByLearningRate) {
    // Hand trace: g = 2, m = 0.2, v = 0.004, m_hat = 2, v_hat = 4, step = lr * 2 / (2 + eps).
    Tensor x = Tensor::vector({1.0});
    ad::AdamState adam({.learning_rate = 0.1, .weight_decay = 0.0});
    Tensor* ptr = &x;
    const Tensor g = Tensor::vector({2.0 * x[0]});
    adam.apply(std::span<Tensor* const>(&ptr, 1), std::span<const Tensor>(&g, 1));
    EXPECT_LT(x[0], 1.0);
    EXPECT_NEAR(x[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
    EXPECT_EQ(adam.step(), 1u);
}

TEST(Adam, WeightDecayOnlyIsLinearShrink) {
    Tensor x = Tensor::vector({2.5});
    ad::AdamState adam({.learning_rate = 3e-4, .weight_decay = 1e-6});
    Tensor* ptr = &x;
    const Tensor g = Tensor::zeros({1});
    adam.apply(std::span<Tensor* const>(&ptr, 1), std::span<const Tensor>(&g, 1));
    EXPECT_DOUBLE_EQ(x[0], 2.5 * (1.0 - 3e-10));
}

TEST(Adam, ShapeMismatchAndBadLearningRate) {
    Tensor x = Tensor::vector({1.0, 2.0});
    Tensor* ptr = &x;
    const Tensor g = Tensor::zeros({3});
    ad::AdamState adam;
    EXPECT_THROW(adam.apply(std::span<Tensor* const>(&ptr, 1), std::span<const Tensor>(&g, 1)), mela::ShapeError);
    ad::AdamState bad({.learning_rate = 0.0});
    const Tensor g2 = Tensor::zeros({2});
    EXPECT_THROW(bad.apply(std::span<Tensor* const>(&ptr, 1), std::span<const Tensor>(&g2, 1)), mela::ContractError);
}
