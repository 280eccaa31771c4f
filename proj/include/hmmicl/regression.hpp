#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hmmicl/eigen.hpp"
#include "hmmicl/errors.hpp"
#include "hmmicl/matrix.hpp"

namespace hmmicl {

// Endpoint labels O (p x n, or p^m x n) against stacked window one-hots
// Z (p(L-1) x n, or p(L-m) x n). Windows are stacked most-recent-first,
// matching the Z_1..Z_R feature order of the constructed stack.
struct RegressionProblem {
    Matrix O;
    Matrix Z;
    double ridge = 0.0;

    void validate(bool strict_binary = false) const {
        if (O.cols() != Z.cols()) throw DimensionError("RegressionProblem: O and Z column counts differ");
        if (ridge < 0.0) throw DimensionError("RegressionProblem: negative ridge");
        if (!strict_binary) return;
        std::size_t ones = 0;
        for (std::size_t j = 0; j < Z.cols(); ++j) {
            std::size_t c = 0;
            for (std::size_t i = 0; i < Z.rows(); ++i) {
                const double v = Z(i, j);
                if (v != 0.0 && v != 1.0) throw DimensionError("RegressionProblem: Z entry not in {0,1}");
                if (v == 1.0) ++c;
            }
            if (j == 0) ones = c;
            else if (c != ones) throw DimensionError("RegressionProblem: window columns have uneven one-counts");
        }
    }
};

struct LeastSquaresResult {
    Matrix w;
    double min_eigenvalue = 0.0;  // of Z Z^T before the ridge shift
    double max_eigenvalue = 0.0;
    double condition = 0.0;       // of Z Z^T + ridge I
    double ridge_used = 0.0;
};

// W_hat = O Z^T (Z Z^T + ridge I)^{-1}, solved through the Jacobi
// eigendecomposition of the Gram (rank-revealing, with a condition report).
// ridge = 0 demands a numerically invertible Gram: min eigenvalue > 1e-10 n.
inline LeastSquaresResult least_squares_detail(const RegressionProblem& problem) {
    problem.validate();
    const std::size_t n = problem.Z.cols();
    const Matrix gram = matmul_nt(problem.Z, problem.Z);
    const SymmetricEigen eig = jacobi_eigen(gram);
    const double min_eig = eig.values.front();
    const double max_eig = eig.values.back();

    if (problem.ridge == 0.0 && min_eig <= 1e-10 * static_cast<double>(n))
        throw SingularGramError("least_squares: Z Z^T numerically singular for this sample",
                                min_eig);

    const Matrix cross = matmul_nt(problem.O, problem.Z);  // O Z^T
    // inv(G + ridge I) = V diag(1/(lambda_i + ridge)) V^T
    const std::size_t w = gram.rows();
    Matrix inv(w, w);
    for (std::size_t a = 0; a < w; ++a)
        for (std::size_t b = 0; b < w; ++b) {
            double s = 0.0;
            for (std::size_t c = 0; c < w; ++c)
                s += eig.vectors(a, c) * eig.vectors(b, c) / (eig.values[c] + problem.ridge);
            inv(a, b) = s;
        }

    LeastSquaresResult out;
    out.w = matmul(cross, inv);
    out.min_eigenvalue = min_eig;
    out.max_eigenvalue = max_eig;
    out.condition = (min_eig + problem.ridge) > 0.0 ? (max_eig + problem.ridge) / (min_eig + problem.ridge)
                                                    : std::numeric_limits<double>::infinity();
    out.ridge_used = problem.ridge;
    return out;
}

inline Matrix least_squares(const RegressionProblem& problem) {
    return least_squares_detail(problem).w;
}

// Population-fit variant from accumulated moments S_oz = sum o z^T and
// S_zz = sum z z^T.
inline LeastSquaresResult least_squares_from_moments(const Matrix& s_oz, const Matrix& s_zz,
                                                     double ridge, std::size_t sample_count) {
    if (s_oz.cols() != s_zz.rows() || s_zz.rows() != s_zz.cols())
        throw DimensionError("least_squares_from_moments: moment shapes disagree");
    const SymmetricEigen eig = jacobi_eigen(s_zz);
    const double min_eig = eig.values.front();
    if (ridge == 0.0 && min_eig <= 1e-10 * static_cast<double>(sample_count))
        throw SingularGramError("least_squares_from_moments: singular moment matrix", min_eig);

    const std::size_t w = s_zz.rows();
    Matrix inv(w, w);
    for (std::size_t a = 0; a < w; ++a)
        for (std::size_t b = 0; b < w; ++b) {
            double s = 0.0;
            for (std::size_t c = 0; c < w; ++c)
                s += eig.vectors(a, c) * eig.vectors(b, c) / (eig.values[c] + ridge);
            inv(a, b) = s;
        }
    LeastSquaresResult out;
    out.w = matmul(s_oz, inv);
    out.min_eigenvalue = min_eig;
    out.max_eigenvalue = eig.values.back();
    out.condition = (min_eig + ridge) > 0.0 ? (eig.values.back() + ridge) / (min_eig + ridge)
                                            : std::numeric_limits<double>::infinity();
    out.ridge_used = ridge;
    return out;
}

struct GdTrace {
    std::vector<Matrix> iterates;  // W_0 = 0 through W_T
    bool diverged = false;

    const Matrix& final() const { return iterates.back(); }
};

// Explicit gradient-descent iterates on the MSE loss sum_i ||o_i - W z_i||^2:
// W_{t+1} = W_t - lr * 2 (W_t Z - O) Z^T. The factor 2 is kept in the update
// (not folded into lr); the constructed stack uses the identical convention.
inline GdTrace gd_reference(const RegressionProblem& problem, int T, double lr) {
    problem.validate();
    if (T < 0) throw DimensionError("gd_reference: T must be >= 0");
    if (!(lr > 0.0)) throw DimensionError("gd_reference: lr must be positive");

    GdTrace trace;
    Matrix w(problem.O.rows(), problem.Z.rows());
    trace.iterates.push_back(w);
    for (int t = 0; t < T; ++t) {
        Matrix resid = matmul(w, problem.Z);  // q x n
        for (std::size_t i = 0; i < resid.rows(); ++i)
            for (std::size_t j = 0; j < resid.cols(); ++j) resid(i, j) -= problem.O(i, j);
        const Matrix grad = matmul_nt(resid, problem.Z);  // resid * Z^T
        for (std::size_t i = 0; i < w.rows(); ++i)
            for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) -= lr * 2.0 * grad(i, j);
        trace.iterates.push_back(w);
        if (max_abs(w) > 1e6) {
            trace.diverged = true;  // lr too large for the Gram spectrum
            break;
        }
    }
    return trace;
}

struct RateReport {
    double gram_min = 0.0;   // alpha' = lambda_min(Z Z^T)
    double gram_max = 0.0;   // beta'  = lambda_max(Z Z^T)
    double kappa = 0.0;      // beta' / alpha'
    int violations = 0;
    double worst_slack = 0.0;  // min over t of bound - measured, relative to the initial error
    int steps_checked = 0;
};

// Checks the strongly-convex contraction bound ||W_t - W*||^2 <= e^{-t/kappa}
// ||W_0 - W*||^2 against the measured iterates. With the factor-2 update
// convention, lr = 1/(2 beta') corresponds to the textbook step 1/beta.
// Violations allow a 1e-12 relative slack for accumulated rounding.
inline RateReport rate_check(const RegressionProblem& problem, double lr, int T) {
    RegressionProblem flat = problem;
    flat.ridge = 0.0;
    const LeastSquaresResult ls = least_squares_detail(flat);
    const GdTrace trace = gd_reference(problem, T, lr);

    RateReport report;
    report.gram_min = ls.min_eigenvalue;
    report.gram_max = ls.max_eigenvalue;
    report.kappa = ls.max_eigenvalue / ls.min_eigenvalue;
    report.steps_checked = static_cast<int>(trace.iterates.size()) - 1;

    auto err_sq = [&](const Matrix& w) {
        double s = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i)
            for (std::size_t j = 0; j < w.cols(); ++j) {
                const double d = w(i, j) - ls.w(i, j);
                s += d * d;
            }
        return s;
    };

    const double init = err_sq(trace.iterates.front());
    report.worst_slack = init;
    for (std::size_t t = 1; t < trace.iterates.size(); ++t) {
        const double bound = std::exp(-static_cast<double>(t) / report.kappa) * init;
        const double measured = err_sq(trace.iterates[t]);
        const double slack = bound - measured;
        report.worst_slack = std::min(report.worst_slack, slack);
        if (measured > bound + 1e-12 * init) ++report.violations;
    }
    return report;
}

} // namespace hmmicl
