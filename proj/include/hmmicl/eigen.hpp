#pragma once

#include <algorithm>
#include <cmath>

#include "hmmicl/matrix.hpp"

namespace hmmicl {

struct SymmetricEigen {
    Vector values;   // ascending
    Matrix vectors;  // column j pairs with values[j]
};

// Cyclic Jacobi for symmetric matrices. Rank-revealing enough for the Gram
// matrices this project solves with, and fully deterministic.
inline SymmetricEigen jacobi_eigen(const Matrix& a_in, int max_sweeps = 64) {
    if (a_in.rows() != a_in.cols()) throw ShapeError("jacobi_eigen: matrix not square");
    const std::size_t n = a_in.rows();
    Matrix a = a_in;
    Matrix v = Matrix::identity(n);

    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(a(i, j)));
    const double tol = (scale == 0.0) ? 0.0 : 1e-15 * scale;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
        if (off <= tol) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= tol * 1e-2) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    SymmetricEigen out;
    out.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return out.values[x] < out.values[y]; });

    Vector sorted_vals(n);
    Matrix sorted_vecs(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        sorted_vals[j] = out.values[order[j]];
        for (std::size_t i = 0; i < n; ++i) sorted_vecs(i, j) = v(i, order[j]);
    }
    out.values = std::move(sorted_vals);
    out.vectors = std::move(sorted_vecs);
    return out;
}

// Singular values via one-sided Jacobi (orthogonalizes column pairs). Small
// singular values come out at machine-noise level rather than sqrt of it,
// which the rank assertions rely on.
inline Vector singular_values(const Matrix& a_in, int max_sweeps = 64) {
    Matrix a = (a_in.rows() >= a_in.cols()) ? a_in : transpose(a_in);
    const std::size_t m = a.rows(), n = a.cols();

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    app += a(i, p) * a(i, p);
                    aqq += a(i, q) * a(i, q);
                    apq += a(i, p) * a(i, q);
                }
                if (std::abs(apq) <= 1e-30 + 1e-16 * std::sqrt(app * aqq)) continue;
                rotated = true;
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < m; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
            }
        }
        if (!rotated) break;
    }

    Vector sv(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += a(i, j) * a(i, j);
        sv[j] = std::sqrt(s);
    }
    std::sort(sv.begin(), sv.end(), std::greater<double>());
    return sv;
}

} // namespace hmmicl
