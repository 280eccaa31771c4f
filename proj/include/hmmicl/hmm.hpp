#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hmmicl/errors.hpp"
#include "hmmicl/matrix.hpp"
#include "hmmicl/rng.hpp"

namespace hmmicl {

inline constexpr double kDegenerateLikelihoodFloor = 1e-300;

// Hidden Markov model with a factored transition P(h'|h) = w(h')^T psi(h),
// rank d. All fields are immutable after construction by convention; the
// struct is safe to share read-only across threads.
struct LowRankHmm {
    int num_hidden = 0;  // K
    int num_obs = 0;     // p, excluding the delimiter symbol
    int rank = 0;        // d <= K
    Matrix psi;          // K x d, row h on the d-simplex
    Matrix w;            // K x d, column z a distribution over hidden states
    Matrix emission;     // p x K, column h a distribution over observations
    Vector initial;      // length K
    std::uint64_t seed = 0;

    // Implied K x K transition, row-stochastic, rank <= d.
    Matrix transition() const {
        Matrix t(static_cast<std::size_t>(num_hidden), static_cast<std::size_t>(num_hidden));
        for (int h = 0; h < num_hidden; ++h)
            for (int h2 = 0; h2 < num_hidden; ++h2) {
                double s = 0.0;
                for (int z = 0; z < rank; ++z)
                    s += w(static_cast<std::size_t>(h2), static_cast<std::size_t>(z)) *
                         psi(static_cast<std::size_t>(h), static_cast<std::size_t>(z));
                t(static_cast<std::size_t>(h), static_cast<std::size_t>(h2)) = s;
            }
        return t;
    }

    void validate() const {
        if (num_hidden <= 0 || num_obs <= 0 || rank <= 0)
            throw DimensionError("LowRankHmm: sizes must be positive");
        if (rank > num_hidden) throw DimensionError("LowRankHmm: rank exceeds num_hidden");
        check_shape(psi, num_hidden, rank, "psi");
        check_shape(w, num_hidden, rank, "w");
        check_shape(emission, num_obs, num_hidden, "emission");
        if (initial.size() != static_cast<std::size_t>(num_hidden))
            throw DimensionError("LowRankHmm: initial has wrong length");

        for (int h = 0; h < num_hidden; ++h) check_simplex(psi.row(static_cast<std::size_t>(h)), 1e-12, "psi row");
        for (int z = 0; z < rank; ++z) check_simplex_col(w, z, 1e-12, "w column");
        for (int h = 0; h < num_hidden; ++h) check_simplex_col(emission, h, 1e-12, "emission column");
        check_simplex(initial, 1e-12, "initial");

        const Matrix t = transition();
        for (int h = 0; h < num_hidden; ++h) {
            double s = 0.0;
            for (int h2 = 0; h2 < num_hidden; ++h2) {
                const double v = t(static_cast<std::size_t>(h), static_cast<std::size_t>(h2));
                if (v < -1e-12) throw DimensionError("LowRankHmm: negative transition entry");
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-10) throw DimensionError("LowRankHmm: transition row does not sum to 1");
        }
    }

private:
    static void check_shape(const Matrix& m, int r, int c, const char* name) {
        if (m.rows() != static_cast<std::size_t>(r) || m.cols() != static_cast<std::size_t>(c))
            throw DimensionError(std::string("LowRankHmm: bad shape for ") + name);
    }
    static void check_simplex(std::span<const double> v, double tol, const char* name) {
        double s = 0.0;
        for (double x : v) {
            if (x < -tol) throw DimensionError(std::string("LowRankHmm: negative entry in ") + name);
            s += x;
        }
        if (std::abs(s - 1.0) > tol) throw DimensionError(std::string("LowRankHmm: ") + name + " does not sum to 1");
    }
    static void check_simplex_col(const Matrix& m, int col, double tol, const char* name) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) {
            const double x = m(i, static_cast<std::size_t>(col));
            if (x < -tol) throw DimensionError(std::string("LowRankHmm: negative entry in ") + name);
            s += x;
        }
        if (std::abs(s - 1.0) > tol) throw DimensionError(std::string("LowRankHmm: ") + name + " does not sum to 1");
    }
};

// Posterior over hidden states given an observation history.
struct BeliefState {
    Vector probs;

    void validate(double tol = 1e-10) const {
        double s = 0.0;
        for (double x : probs) {
            if (x < -tol) throw DimensionError("BeliefState: negative probability");
            s += x;
        }
        if (std::abs(s - 1.0) > tol) throw DimensionError("BeliefState: does not sum to 1");
    }
};

inline BeliefState uniform_belief(int num_hidden) {
    return BeliefState{Vector(static_cast<std::size_t>(num_hidden), 1.0 / num_hidden)};
}

// Draws the factored transition as a mixture of d stochastic kernels:
// psi rows ~ Dirichlet(conc) over mixture components, w columns ~ Dirichlet(conc)
// over next states, so P(h'|h) = sum_z psi_z(h) mu_z(h') is stochastic and has
// rank <= d by construction. Emission columns and nothing else are drawn the
// same way; initial defaults to uniform.
inline LowRankHmm new_low_rank_hmm(int num_hidden, int num_obs, int rank, double concentration,
                                   std::uint64_t seed) {
    if (num_hidden <= 0 || num_obs <= 0 || rank <= 0)
        throw DimensionError("new_low_rank_hmm: sizes must be positive");
    if (rank > num_hidden) throw DimensionError("new_low_rank_hmm: rank > num_hidden");
    if (!(concentration > 0.0)) throw DimensionError("new_low_rank_hmm: concentration must be positive");

    Rng rng(seed);
    LowRankHmm hmm;
    hmm.num_hidden = num_hidden;
    hmm.num_obs = num_obs;
    hmm.rank = rank;
    hmm.seed = seed;

    hmm.psi = Matrix(static_cast<std::size_t>(num_hidden), static_cast<std::size_t>(rank));
    for (int h = 0; h < num_hidden; ++h) {
        const auto row = rng.dirichlet(concentration, rank);
        for (int z = 0; z < rank; ++z) hmm.psi(static_cast<std::size_t>(h), static_cast<std::size_t>(z)) = row[static_cast<std::size_t>(z)];
    }

    hmm.w = Matrix(static_cast<std::size_t>(num_hidden), static_cast<std::size_t>(rank));
    for (int z = 0; z < rank; ++z) {
        const auto col = rng.dirichlet(concentration, num_hidden);
        for (int h = 0; h < num_hidden; ++h) hmm.w(static_cast<std::size_t>(h), static_cast<std::size_t>(z)) = col[static_cast<std::size_t>(h)];
    }

    hmm.emission = Matrix(static_cast<std::size_t>(num_obs), static_cast<std::size_t>(num_hidden));
    for (int h = 0; h < num_hidden; ++h) {
        const auto col = rng.dirichlet(concentration, num_obs);
        for (int o = 0; o < num_obs; ++o) hmm.emission(static_cast<std::size_t>(o), static_cast<std::size_t>(h)) = col[static_cast<std::size_t>(o)];
    }

    hmm.initial = Vector(static_cast<std::size_t>(num_hidden), 1.0 / num_hidden);
    hmm.validate();
    return hmm;
}

struct SampledSequence {
    std::vector<int> hidden;
    std::vector<int> obs;  // symbols in [0, p); one-hot encoding happens at the context layer
};

// hidden_1 ~ initial, hidden_s ~ P(.|hidden_{s-1}), obs_s ~ emission(.|hidden_s).
inline SampledSequence sample_sequence(const LowRankHmm& hmm, int length, Rng& rng) {
    if (length < 1) throw DimensionError("sample_sequence: length must be >= 1");
    SampledSequence out;
    out.hidden.reserve(static_cast<std::size_t>(length));
    out.obs.reserve(static_cast<std::size_t>(length));

    Vector emis_col(static_cast<std::size_t>(hmm.num_obs));
    int h = rng.categorical(hmm.initial);
    for (int s = 0; s < length; ++s) {
        if (s > 0) {
            // transition row of the previous hidden state, via the factored form
            Vector row(static_cast<std::size_t>(hmm.num_hidden));
            for (int h2 = 0; h2 < hmm.num_hidden; ++h2) {
                double v = 0.0;
                for (int z = 0; z < hmm.rank; ++z)
                    v += hmm.w(static_cast<std::size_t>(h2), static_cast<std::size_t>(z)) *
                         hmm.psi(static_cast<std::size_t>(h), static_cast<std::size_t>(z));
                row[static_cast<std::size_t>(h2)] = v;
            }
            h = rng.categorical(row);
        }
        for (int o = 0; o < hmm.num_obs; ++o)
            emis_col[static_cast<std::size_t>(o)] = hmm.emission(static_cast<std::size_t>(o), static_cast<std::size_t>(h));
        const int o = rng.categorical(emis_col);
        out.hidden.push_back(h);
        out.obs.push_back(o);
    }
    return out;
}

// One Bayes filter step: propagate through the transition, then condition on
// the observation. Throws DegenerateLikelihoodError when the observation has
// essentially zero probability under the propagated belief.
inline BeliefState belief_update(const LowRankHmm& hmm, const BeliefState& belief, int obs) {
    if (obs < 0 || obs >= hmm.num_obs) throw DimensionError("belief_update: observation out of range");
    if (belief.probs.size() != static_cast<std::size_t>(hmm.num_hidden))
        throw DimensionError("belief_update: belief has wrong length");

    // predicted(h) = sum_{h'} P(h|h') b(h') through the rank-d factorization
    Vector mix(static_cast<std::size_t>(hmm.rank), 0.0);
    for (int h2 = 0; h2 < hmm.num_hidden; ++h2) {
        const double b = belief.probs[static_cast<std::size_t>(h2)];
        if (b == 0.0) continue;
        for (int z = 0; z < hmm.rank; ++z)
            mix[static_cast<std::size_t>(z)] += hmm.psi(static_cast<std::size_t>(h2), static_cast<std::size_t>(z)) * b;
    }
    Vector predicted(static_cast<std::size_t>(hmm.num_hidden), 0.0);
    for (int h = 0; h < hmm.num_hidden; ++h) {
        double v = 0.0;
        for (int z = 0; z < hmm.rank; ++z)
            v += hmm.w(static_cast<std::size_t>(h), static_cast<std::size_t>(z)) * mix[static_cast<std::size_t>(z)];
        predicted[static_cast<std::size_t>(h)] = v;
    }

    BeliefState next;
    next.probs.resize(static_cast<std::size_t>(hmm.num_hidden));
    double normalizer = 0.0;
    for (int h = 0; h < hmm.num_hidden; ++h) {
        const double v = hmm.emission(static_cast<std::size_t>(obs), static_cast<std::size_t>(h)) *
                         predicted[static_cast<std::size_t>(h)];
        next.probs[static_cast<std::size_t>(h)] = v;
        normalizer += v;
    }
    if (normalizer < kDegenerateLikelihoodFloor)
        throw DegenerateLikelihoodError("belief_update: observation impossible under belief", normalizer);
    for (auto& v : next.probs) v /= normalizer;
    return next;
}

// Predictive distribution over the next observation after a filtered belief:
// emission . (transition-propagated belief).
inline Vector predictive_from_belief(const LowRankHmm& hmm, const BeliefState& belief) {
    Vector mix(static_cast<std::size_t>(hmm.rank), 0.0);
    for (int h2 = 0; h2 < hmm.num_hidden; ++h2) {
        const double b = belief.probs[static_cast<std::size_t>(h2)];
        if (b == 0.0) continue;
        for (int z = 0; z < hmm.rank; ++z)
            mix[static_cast<std::size_t>(z)] += hmm.psi(static_cast<std::size_t>(h2), static_cast<std::size_t>(z)) * b;
    }
    Vector propagated(static_cast<std::size_t>(hmm.num_hidden), 0.0);
    for (int h = 0; h < hmm.num_hidden; ++h)
        for (int z = 0; z < hmm.rank; ++z)
            propagated[static_cast<std::size_t>(h)] += hmm.w(static_cast<std::size_t>(h), static_cast<std::size_t>(z)) * mix[static_cast<std::size_t>(z)];

    Vector pred(static_cast<std::size_t>(hmm.num_obs), 0.0);
    for (int o = 0; o < hmm.num_obs; ++o) {
        double v = 0.0;
        for (int h = 0; h < hmm.num_hidden; ++h)
            v += hmm.emission(static_cast<std::size_t>(o), static_cast<std::size_t>(h)) * propagated[static_cast<std::size_t>(h)];
        pred[static_cast<std::size_t>(o)] = v;
    }
    return pred;
}

// Exact full-memory conditional P(. | o_{1:k-1}): filter the whole history
// starting from `initial` as the pre-observation root belief, then propagate
// one step and apply the emission. Empty history gives the prior predictive
// emission . (transition-propagated initial).
inline Vector conditional_next(const LowRankHmm& hmm, std::span<const int> history) {
    BeliefState b{hmm.initial};
    for (int obs : history) b = belief_update(hmm, b, obs);
    return predictive_from_belief(hmm, b);
}

struct GammaEstimate {
    double vertex_min = 1.0;
    double sampled_min = 1.0;
    double overall() const { return std::min(vertex_min, sampled_min); }
};

// Observability coefficient estimate: min over distribution pairs of
// ||T d - T d'||_1 / ||d - d'||_1. All vertex pairs (e_i, e_j) are scanned
// deterministically; `num_pairs` extra Dirichlet(1) pairs tighten the bound.
// The result is an upper bound on the true gamma.
inline GammaEstimate estimate_gamma_detail(const LowRankHmm& hmm, int num_pairs, Rng& rng) {
    if (num_pairs < 1) throw DimensionError("estimate_gamma: num_pairs must be >= 1");
    const int K = hmm.num_hidden;

    auto ratio = [&](std::span<const double> d1, std::span<const double> d2) {
        Vector diff(static_cast<std::size_t>(K));
        for (int i = 0; i < K; ++i) diff[static_cast<std::size_t>(i)] = d1[static_cast<std::size_t>(i)] - d2[static_cast<std::size_t>(i)];
        const double denom = l1_norm(diff);
        if (denom < 1e-12) return 1.0;
        const Vector mapped = matvec(hmm.emission, diff);
        return l1_norm(mapped) / denom;
    };

    GammaEstimate est;
    for (int i = 0; i < K; ++i) {
        for (int j = i + 1; j < K; ++j) {
            const Vector ei = one_hot(i, K);
            const Vector ej = one_hot(j, K);
            est.vertex_min = std::min(est.vertex_min, ratio(ei, ej));
        }
    }
    for (int t = 0; t < num_pairs; ++t) {
        const Vector d1 = rng.dirichlet(1.0, K);
        const Vector d2 = rng.dirichlet(1.0, K);
        est.sampled_min = std::min(est.sampled_min, ratio(d1, d2));
    }
    return est;
}

inline double estimate_gamma(const LowRankHmm& hmm, int num_pairs, Rng& rng) {
    return estimate_gamma_detail(hmm, num_pairs, rng).overall();
}

struct MixtureConfig {
    int num_tasks = 8;
    int hidden_per_task = 8;
    int vocab = 4;
    int rank = 2;
    Vector task_prior;  // empty means uniform
    double concentration = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_tasks <= 0 || hidden_per_task <= 0 || vocab <= 0 || rank <= 0)
            throw DimensionError("MixtureConfig: sizes must be positive");
        if (rank > hidden_per_task) throw DimensionError("MixtureConfig: rank > hidden_per_task");
        if (!task_prior.empty()) {
            if (task_prior.size() != static_cast<std::size_t>(num_tasks))
                throw DimensionError("MixtureConfig: task_prior length mismatch");
            double s = 0.0;
            for (double x : task_prior) {
                if (x < 0.0) throw DimensionError("MixtureConfig: negative prior weight");
                s += x;
            }
            if (std::abs(s - 1.0) > 1e-12) throw DimensionError("MixtureConfig: task_prior does not sum to 1");
        }
    }
};

struct Mixture {
    MixtureConfig config;
    std::vector<LowRankHmm> tasks;
    Vector prior;  // resolved, sums to 1

    int sample_task(Rng& rng) const { return rng.categorical(prior); }

    std::pair<int, SampledSequence> sample(int length, Rng& rng) const {
        const int task = sample_task(rng);
        return {task, sample_sequence(tasks[static_cast<std::size_t>(task)], length, rng)};
    }
};

// Mixture generator: num_tasks HMMs over a shared vocabulary.
// The full-scale configuration (8192 tasks, 128 hidden, 16 vocab) constructs;
// desk-scale defaults are in MixtureConfig.
inline Mixture new_mixture(const MixtureConfig& config) {
    config.validate();
    Mixture mix;
    mix.config = config;
    mix.prior = config.task_prior.empty()
                    ? Vector(static_cast<std::size_t>(config.num_tasks), 1.0 / config.num_tasks)
                    : config.task_prior;
    mix.tasks.reserve(static_cast<std::size_t>(config.num_tasks));
    for (int t = 0; t < config.num_tasks; ++t) {
        Rng sub = Rng::substream(config.seed, static_cast<std::uint64_t>(t));
        const std::uint64_t task_seed = sub.next_u64();
        mix.tasks.push_back(new_low_rank_hmm(config.hidden_per_task, config.vocab, config.rank,
                                             config.concentration, task_seed));
    }
    return mix;
}

} // namespace hmmicl
