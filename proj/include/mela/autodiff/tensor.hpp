#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mela/errors.hpp"

namespace mela::ad {

using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major tensor of doubles. Rank 0 (scalar), 1 and 2 are used.
class Tensor {
public:
    Tensor() : shape_{0} {}

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
        if (element_count(shape_) != values_.size()) {
            throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                             std::to_string(values_.size()) + " values");
        }
        check_finite("construction");
    }

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.values_.assign(element_count(shape), 0.0);
        t.shape_ = std::move(shape);
        return t;
    }
    static Tensor filled(Shape shape, double value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.values_.begin(), t.values_.end(), value);
        return t;
    }
    static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }
    static Tensor vector(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor(Shape{n}, std::move(values));
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor(Shape{rows, cols}, std::move(values));
    }
    /// Row vector of shape [1, n].
    static Tensor row(std::span<const double> values) {
        return Tensor(Shape{1, values.size()}, std::vector<double>(values.begin(), values.end()));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

    std::span<const double> values() const { return values_; }
    std::span<double> data() { return values_; }
    const std::vector<double>& storage() const { return values_; }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

    /// Matrix view; rank-1 tensors are viewed as a single row.
    ConstMatrixMap mat() const {
        return ConstMatrixMap(values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
    }
    MatrixMap mat() {
        return MatrixMap(values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
    }

    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }
    void check_finite(const std::string& context) const {
        if (!all_finite()) throw NumericError("non-finite value in tensor (" + context + ")");
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    Shape shape_;
    std::vector<double> values_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const std::string& context) {
    if (!a.same_shape(b)) {
        throw ShapeError(context + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
}

/// Builds a [rows, cols] tensor from a matrix expression.
template <typename Derived>
Tensor from_eigen(const Eigen::MatrixBase<Derived>& m) {
    Tensor t = Tensor::zeros(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.mat() = m;
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace mela::ad
