#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "hmmicl/errors.hpp"

namespace hmmicl {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Desk-scale sizes only, no external BLAS.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), d_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return d_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return d_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {d_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {d_.data() + i * cols_, cols_}; }

    std::span<const double> data() const { return d_; }
    std::span<double> data() { return d_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.d_ == b.d_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> d_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw ShapeError("matvec: size mismatch");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

// a^T * x
inline Vector matvec_t(const Matrix& a, std::span<const double> x) {
    if (a.rows() != x.size()) throw ShapeError("matvec_t: size mismatch");
    Vector y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a(i, j) * xi;
    }
    return y;
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
    return m;
}

inline double l1_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
}

inline double l1_dist(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("l1_dist: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s;
}

inline double sum(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

inline Vector one_hot(int index, int dim) {
    if (index < 0 || index >= dim) throw DimensionError("one_hot: index out of range");
    Vector v(static_cast<std::size_t>(dim), 0.0);
    v[static_cast<std::size_t>(index)] = 1.0;
    return v;
}

} // namespace hmmicl
