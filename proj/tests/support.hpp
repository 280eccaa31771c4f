#pragma once

// Independent reference computations for the test suites. Everything here is
// written as literal definitions (path sums, shifted copies, grid scans) and
// must stay independent of the library code paths it checks.

#include <cmath>
#include <span>
#include <vector>

#include "hmmicl/context.hpp"
#include "hmmicl/hmm.hpp"
#include "hmmicl/matrix.hpp"

namespace testsupport {

using hmmicl::LowRankHmm;
using hmmicl::Matrix;
using hmmicl::Vector;

// P(o_next = . | history) by brute-force enumeration over all hidden paths
// (h_0, h_1, ..., h_t) with h_0 ~ initial, h_s ~ P(.|h_{s-1}), o_s ~ T(.|h_s).
// Cost K^(t+1); only for tiny instances.
inline Vector enumerate_conditional(const LowRankHmm& hmm, std::span<const int> history) {
    const int K = hmm.num_hidden;
    const int t = static_cast<int>(history.size());
    const Matrix trans = hmm.transition();

    Vector joint_next(static_cast<std::size_t>(hmm.num_obs), 0.0);
    double joint_hist = 0.0;

    std::vector<int> path(static_cast<std::size_t>(t + 1));
    // iterate over all K^(t+1) assignments of (h_0..h_t)
    const long long total = [&] {
        long long x = 1;
        for (int i = 0; i <= t; ++i) x *= K;
        return x;
    }();
    for (long long code = 0; code < total; ++code) {
        long long c = code;
        for (int i = 0; i <= t; ++i) {
            path[static_cast<std::size_t>(i)] = static_cast<int>(c % K);
            c /= K;
        }
        double prob = hmm.initial[static_cast<std::size_t>(path[0])];
        for (int s = 1; s <= t; ++s) {
            prob *= trans(static_cast<std::size_t>(path[static_cast<std::size_t>(s - 1)]),
                          static_cast<std::size_t>(path[static_cast<std::size_t>(s)]));
            prob *= hmm.emission(static_cast<std::size_t>(history[static_cast<std::size_t>(s - 1)]),
                                 static_cast<std::size_t>(path[static_cast<std::size_t>(s)]));
        }
        joint_hist += prob;
        // one more transition and emission for the next observation
        const int h_last = path[static_cast<std::size_t>(t)];
        for (int h = 0; h < K; ++h) {
            const double step = prob * trans(static_cast<std::size_t>(h_last), static_cast<std::size_t>(h));
            for (int o = 0; o < hmm.num_obs; ++o)
                joint_next[static_cast<std::size_t>(o)] +=
                    step * hmm.emission(static_cast<std::size_t>(o), static_cast<std::size_t>(h));
        }
    }
    for (auto& v : joint_next) v /= joint_hist;
    return joint_next;
}

// Same enumeration for the joint of the next m observations, indexed
// big-endian like Vec.
inline Vector enumerate_m_step(const LowRankHmm& hmm, std::span<const int> history, int m) {
    const int K = hmm.num_hidden;
    const int t = static_cast<int>(history.size());
    const Matrix trans = hmm.transition();
    const std::size_t out_dim = [&] {
        std::size_t x = 1;
        for (int i = 0; i < m; ++i) x *= static_cast<std::size_t>(hmm.num_obs);
        return x;
    }();

    Vector joint(out_dim, 0.0);
    double joint_hist = 0.0;

    std::vector<int> path(static_cast<std::size_t>(t + 1));
    long long total = 1;
    for (int i = 0; i <= t; ++i) total *= K;
    for (long long code = 0; code < total; ++code) {
        long long c = code;
        for (int i = 0; i <= t; ++i) {
            path[static_cast<std::size_t>(i)] = static_cast<int>(c % K);
            c /= K;
        }
        double prob = hmm.initial[static_cast<std::size_t>(path[0])];
        for (int s = 1; s <= t; ++s) {
            prob *= trans(static_cast<std::size_t>(path[static_cast<std::size_t>(s - 1)]),
                          static_cast<std::size_t>(path[static_cast<std::size_t>(s)]));
            prob *= hmm.emission(static_cast<std::size_t>(history[static_cast<std::size_t>(s - 1)]),
                                 static_cast<std::size_t>(path[static_cast<std::size_t>(s)]));
        }
        joint_hist += prob;

        // recurse over the m future steps
        std::vector<int> future(static_cast<std::size_t>(m));
        long long ftotal = 1;
        for (int i = 0; i < m; ++i) ftotal *= K;
        for (long long fcode = 0; fcode < ftotal; ++fcode) {
            long long fc = fcode;
            for (int i = 0; i < m; ++i) {
                future[static_cast<std::size_t>(i)] = static_cast<int>(fc % K);
                fc /= K;
            }
            double fprob = prob;
            int prev = path[static_cast<std::size_t>(t)];
            for (int i = 0; i < m; ++i) {
                fprob *= trans(static_cast<std::size_t>(prev), static_cast<std::size_t>(future[static_cast<std::size_t>(i)]));
                prev = future[static_cast<std::size_t>(i)];
            }
            // sum over the p^m observation tuples emitted along this hidden future
            for (std::size_t tuple = 0; tuple < out_dim; ++tuple) {
                std::size_t rem = tuple;
                double oprob = 1.0;
                for (int i = m - 1; i >= 0; --i) {
                    const int o = static_cast<int>(rem % static_cast<std::size_t>(hmm.num_obs));
                    rem /= static_cast<std::size_t>(hmm.num_obs);
                    oprob *= hmm.emission(static_cast<std::size_t>(o),
                                          static_cast<std::size_t>(future[static_cast<std::size_t>(i)]));
                }
                joint[tuple] += fprob * oprob;
            }
        }
    }
    for (auto& v : joint) v /= joint_hist;
    return joint;
}

// Literal Z_r / F_r assembly from the shifted-copy definition with boundary
// padding to the first / last row.
inline Matrix shifted_history_block(const Matrix& m0, int r, int width) {
    Matrix z(m0.rows(), static_cast<std::size_t>(width));
    for (std::size_t t = 0; t < m0.rows(); ++t) {
        const std::size_t src = (t >= static_cast<std::size_t>(r)) ? t - static_cast<std::size_t>(r) : 0;
        for (int c = 0; c < width; ++c) z(t, static_cast<std::size_t>(c)) = m0(src, static_cast<std::size_t>(c));
    }
    return z;
}

inline Matrix shifted_future_block(const Matrix& m0, int r, int width) {
    Matrix f(m0.rows(), static_cast<std::size_t>(width));
    for (std::size_t t = 0; t < m0.rows(); ++t) {
        const std::size_t src = std::min(t + static_cast<std::size_t>(r), m0.rows() - 1);
        for (int c = 0; c < width; ++c) f(t, static_cast<std::size_t>(c)) = m0(src, static_cast<std::size_t>(c));
    }
    return f;
}

// Exhaustive observability scan over pairs of simplex grid points at the
// given step (K = 3 only; the grid has (g+1)(g+2)/2 points for g = 1/step).
inline double grid_gamma_k3(const Matrix& emission, double step) {
    const int g = static_cast<int>(std::lround(1.0 / step));
    std::vector<Vector> points;
    for (int a = 0; a <= g; ++a)
        for (int b = 0; a + b <= g; ++b)
            points.push_back({a * step, b * step, (g - a - b) * step});

    double best = 1.0;
    Vector diff(3), mapped;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            double denom = 0.0;
            for (int c = 0; c < 3; ++c) {
                diff[static_cast<std::size_t>(c)] =
                    points[i][static_cast<std::size_t>(c)] - points[j][static_cast<std::size_t>(c)];
                denom += std::abs(diff[static_cast<std::size_t>(c)]);
            }
            if (denom < 1e-12) continue;
            mapped = hmmicl::matvec(emission, diff);
            best = std::min(best, hmmicl::l1_norm(mapped) / denom);
        }
    }
    return best;
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
        syy += y[i] * y[i];
    }
    LineFit f;
    const double denom = n * sxx - sx * sx;
    f.slope = (n * sxy - sx * sy) / denom;
    f.intercept = (sy - f.slope * sx) / n;
    double ss_res = 0.0, ss_tot = 0.0;
    const double ybar = sy / n;
    for (std::size_t i = 0; i < n; ++i) {
        const double fit = f.slope * x[i] + f.intercept;
        ss_res += (y[i] - fit) * (y[i] - fit);
        ss_tot += (y[i] - ybar) * (y[i] - ybar);
    }
    f.r2 = (ss_tot == 0.0) ? 1.0 : 1.0 - ss_res / ss_tot;
    return f;
}

} // namespace testsupport
