#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "hmmicl/hmm.hpp"

namespace hmmicl {

// Fixed-memory approximation of the full conditional: filter only the last
// `memory_len` observations starting from a history-independent prior.
// `steps_ahead` = m; the standard one-step case is m = 1, where windows have
// length memory_len. In m-step mode windows have length memory_len - (m-1).
struct MemoryModel {
    const LowRankHmm* hmm = nullptr;
    int memory_len = 1;   // L - 1
    BeliefState prior;    // history-independent starting belief
    int steps_ahead = 1;  // m

    void validate() const {
        if (hmm == nullptr) throw DimensionError("MemoryModel: null hmm");
        if (memory_len < 1) throw DimensionError("MemoryModel: memory_len must be >= 1");
        if (steps_ahead < 1) throw DimensionError("MemoryModel: steps_ahead must be >= 1");
        if (memory_len < steps_ahead) throw DimensionError("MemoryModel: memory_len < steps_ahead");
        if (prior.probs.size() != static_cast<std::size_t>(hmm->num_hidden))
            throw DimensionError("MemoryModel: prior has wrong length");
        prior.validate();
    }

    int window_len() const { return memory_len - (steps_ahead - 1); }
};

inline MemoryModel make_memory_model(const LowRankHmm& hmm, int memory_len, int steps_ahead = 1) {
    MemoryModel m{&hmm, memory_len, uniform_belief(hmm.num_hidden), steps_ahead};
    m.validate();
    return m;
}

// P_L(. | window): filter the window from the prior, then one-step predictive.
inline Vector l_memory_conditional(const MemoryModel& model, std::span<const int> window) {
    model.validate();
    if (window.size() != static_cast<std::size_t>(model.memory_len))
        throw DimensionError("l_memory_conditional: window length != memory_len");
    BeliefState b = model.prior;
    for (int obs : window) b = belief_update(*model.hmm, b, obs);
    return predictive_from_belief(*model.hmm, b);
}

namespace detail {

// Exact m-step rollout from a filtered belief: joint over the next m
// observations, summing over hidden paths depth-first. Output indexed
// big-endian over m-tuples (first step most significant).
inline void rollout_recurse(const LowRankHmm& hmm, const Vector& unnormalized, int depth, int m,
                            std::size_t index_prefix, double mass_scale, Vector& out) {
    const int p = hmm.num_obs;
    if (depth == m) {
        out[index_prefix] = mass_scale * sum(unnormalized);
        return;
    }
    // propagate one step through the factored transition
    Vector mix(static_cast<std::size_t>(hmm.rank), 0.0);
    for (int h2 = 0; h2 < hmm.num_hidden; ++h2) {
        const double b = unnormalized[static_cast<std::size_t>(h2)];
        if (b == 0.0) continue;
        for (int z = 0; z < hmm.rank; ++z)
            mix[static_cast<std::size_t>(z)] += hmm.psi(static_cast<std::size_t>(h2), static_cast<std::size_t>(z)) * b;
    }
    Vector propagated(static_cast<std::size_t>(hmm.num_hidden), 0.0);
    for (int h = 0; h < hmm.num_hidden; ++h)
        for (int z = 0; z < hmm.rank; ++z)
            propagated[static_cast<std::size_t>(h)] += hmm.w(static_cast<std::size_t>(h), static_cast<std::size_t>(z)) * mix[static_cast<std::size_t>(z)];

    Vector branch(static_cast<std::size_t>(hmm.num_hidden));
    for (int o = 0; o < p; ++o) {
        for (int h = 0; h < hmm.num_hidden; ++h)
            branch[static_cast<std::size_t>(h)] = hmm.emission(static_cast<std::size_t>(o), static_cast<std::size_t>(h)) *
                                                  propagated[static_cast<std::size_t>(h)];
        rollout_recurse(hmm, branch, depth + 1, m,
                        index_prefix * static_cast<std::size_t>(p) + static_cast<std::size_t>(o),
                        mass_scale, out);
    }
}

inline Vector rollout_from_belief(const LowRankHmm& hmm, const BeliefState& belief, int m) {
    std::size_t dim = 1;
    for (int i = 0; i < m; ++i) dim *= static_cast<std::size_t>(hmm.num_obs);
    Vector out(dim, 0.0);
    rollout_recurse(hmm, belief.probs, 0, m, 0, 1.0, out);
    return out;
}

} // namespace detail

// P_L(o_{k:k+m-1} | window): filter the (memory_len - m + 1)-length window,
// then exact m-step rollout. Output indexed by the big-endian Vec ordering.
inline Vector m_step_conditional(const MemoryModel& model, std::span<const int> window) {
    model.validate();
    if (window.size() != static_cast<std::size_t>(model.window_len()))
        throw DimensionError("m_step_conditional: window length != memory_len - (m-1)");
    BeliefState b = model.prior;
    for (int obs : window) b = belief_update(*model.hmm, b, obs);
    return detail::rollout_from_belief(*model.hmm, b, model.steps_ahead);
}

// Exact full-memory m-step conditional given the whole history.
inline Vector exact_m_step(const LowRankHmm& hmm, std::span<const int> history, int m) {
    BeliefState b{hmm.initial};
    for (int obs : history) b = belief_update(hmm, b, obs);
    return detail::rollout_from_belief(hmm, b, m);
}

struct ApproxError {
    double mean = 0.0;
    double std_error = 0.0;
    int samples = 0;
};

// Monte-Carlo estimate of eps1: expected L1 distance between the exact
// conditional and the L-memory conditional over sampled length-(k-1)
// histories. The prior defaults to uniform and is injectable; with L = k and
// prior = initial the memory model coincides with the exact filter and eps1
// vanishes.
inline ApproxError model_approx_error(const LowRankHmm& hmm, int L, int k, int m, int num_samples,
                                      Rng& rng, const BeliefState* prior = nullptr) {
    if (!(k >= L && L >= m + 1)) throw DimensionError("model_approx_error: need k >= L >= m+1");
    if (num_samples < 1) throw DimensionError("model_approx_error: num_samples must be >= 1");

    MemoryModel model = make_memory_model(hmm, L - 1, m);
    if (prior != nullptr) {
        model.prior = *prior;
        model.validate();
    }
    const int win = model.window_len();

    double acc = 0.0, acc2 = 0.0;
    for (int t = 0; t < num_samples; ++t) {
        const auto seq = sample_sequence(hmm, k - 1, rng);
        const std::span<const int> history(seq.obs);
        const Vector exact = (m == 1) ? conditional_next(hmm, history) : exact_m_step(hmm, history, m);
        const auto window = history.subspan(history.size() - static_cast<std::size_t>(win));
        const Vector approx = (m == 1) ? l_memory_conditional(model, window)
                                       : m_step_conditional(model, window);
        const double d = l1_dist(exact, approx);
        acc += d;
        acc2 += d * d;
    }
    ApproxError out;
    out.samples = num_samples;
    out.mean = acc / num_samples;
    const double var = std::max(0.0, acc2 / num_samples - out.mean * out.mean);
    out.std_error = std::sqrt(var / num_samples);
    return out;
}

} // namespace hmmicl
