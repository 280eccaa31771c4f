#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hmmicl/memory_model.hpp"
#include "support.hpp"

using namespace hmmicl;

namespace {

LowRankHmm cycle_hmm() {
    LowRankHmm hmm;
    hmm.num_hidden = 3;
    hmm.num_obs = 3;
    hmm.rank = 3;
    hmm.psi = Matrix::identity(3);
    hmm.w = Matrix(3, 3);
    for (int h = 0; h < 3; ++h) hmm.w(static_cast<std::size_t>((h + 1) % 3), static_cast<std::size_t>(h)) = 1.0;
    hmm.emission = Matrix::identity(3);
    hmm.initial = {1.0, 0.0, 0.0};
    hmm.validate();
    return hmm;
}

} // namespace

TEST_CASE("full-memory window with initial prior reproduces conditional_next") {
    const auto hmm = new_low_rank_hmm(3, 3, 2, 0.8, 15);
    Rng rng(2);
    const auto seq = sample_sequence(hmm, 4, rng);

    MemoryModel model = make_memory_model(hmm, 4);
    model.prior = BeliefState{hmm.initial};
    const Vector via_memory = l_memory_conditional(model, seq.obs);
    const Vector via_exact = conditional_next(hmm, seq.obs);
    CHECK(l1_dist(via_memory, via_exact) < 1e-12);
}

TEST_CASE("identity emission pins the belief to the last window symbol") {
    const auto hmm = cycle_hmm();
    MemoryModel model = make_memory_model(hmm, 2);
    const std::vector<int> window{1, 2};
    const Vector got = l_memory_conditional(model, window);
    // belief collapses to state 2; next state is 0 under the cycle
    CHECK(got[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sum(got) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("window length must match memory_len") {
    const auto hmm = new_low_rank_hmm(3, 2, 2, 1.0, 5);
    MemoryModel model = make_memory_model(hmm, 3);
    const std::vector<int> too_short{0, 1};
    CHECK_THROWS_AS(l_memory_conditional(model, too_short), DimensionError);
}

TEST_CASE("longer memory is no worse on average (L=3 vs L=5)") {
    const auto hmm = new_low_rank_hmm(3, 3, 2, 0.4, 10);
    const int k = 7;
    double avg[2] = {0.0, 0.0};
    int idx = 0;
    for (int L : {3, 5}) {
        Rng rng(404);  // common histories across both L
        MemoryModel model = make_memory_model(hmm, L - 1);
        double acc = 0.0;
        const int trials = 10000;
        for (int t = 0; t < trials; ++t) {
            const auto seq = sample_sequence(hmm, k - 1, rng);
            const std::span<const int> hist(seq.obs);
            const Vector exact = conditional_next(hmm, hist);
            const Vector approx =
                l_memory_conditional(model, hist.subspan(hist.size() - static_cast<std::size_t>(L - 1)));
            acc += l1_dist(exact, approx);
        }
        avg[idx++] = acc / trials;
    }
    CHECK(avg[1] < avg[0]);
}

TEST_CASE("m_step_conditional with m=1 equals l_memory_conditional") {
    const auto hmm = new_low_rank_hmm(4, 3, 2, 1.0, 31);
    MemoryModel model = make_memory_model(hmm, 3, 1);
    Rng rng(9);
    const auto seq = sample_sequence(hmm, 3, rng);
    const Vector a = l_memory_conditional(model, seq.obs);
    const Vector b = m_step_conditional(model, seq.obs);
    CHECK(l1_dist(a, b) < 1e-14);
}

TEST_CASE("deterministic cycle gives a one-hot 2-tuple") {
    const auto hmm = cycle_hmm();
    MemoryModel model = make_memory_model(hmm, 3, 2);
    const std::vector<int> window{0, 1};  // window length = memory_len - (m-1) = 2
    const Vector got = m_step_conditional(model, window);
    CHECK(got.size() == 9);
    // after seeing ...0,1 the belief is state 1; the next two symbols are 2 then 0
    CHECK(got[static_cast<std::size_t>(2 * 3 + 0)] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("m-step rollout matches path enumeration") {
    const auto hmm = new_low_rank_hmm(3, 2, 2, 0.9, 23);
    Rng rng(14);
    for (int trial = 0; trial < 6; ++trial) {
        const auto seq = sample_sequence(hmm, 4, rng);
        const Vector fast = exact_m_step(hmm, seq.obs, 2);
        const Vector slow = testsupport::enumerate_m_step(hmm, seq.obs, 2);
        CHECK(l1_dist(fast, slow) < 1e-10);
        CHECK(sum(fast) == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("marginalizing the m-step rollout recovers the one-step conditional") {
    const auto hmm = new_low_rank_hmm(3, 3, 2, 0.7, 44);
    Rng rng(77);
    for (int trial = 0; trial < 5; ++trial) {
        const auto seq = sample_sequence(hmm, 3, rng);
        // m-step model with memory_len 4 over a window of length 3
        MemoryModel two_step = make_memory_model(hmm, 4, 2);
        const Vector joint = m_step_conditional(two_step, seq.obs);
        // matching one-step model over the same window
        MemoryModel one_step = make_memory_model(hmm, 3, 1);
        const Vector single = l_memory_conditional(one_step, seq.obs);
        Vector marginal(3, 0.0);
        for (int first = 0; first < 3; ++first)
            for (int second = 0; second < 3; ++second)
                marginal[static_cast<std::size_t>(first)] += joint[static_cast<std::size_t>(first * 3 + second)];
        CHECK(l1_dist(marginal, single) < 1e-9);
    }
}

TEST_CASE("eps1 vanishes when memory covers the full history with the initial prior") {
    const auto hmm = new_low_rank_hmm(4, 3, 3, 1.0, 71);
    Rng rng(5);
    const BeliefState prior{hmm.initial};
    const auto err = model_approx_error(hmm, 6, 6, 1, 500, rng, &prior);
    CHECK(err.mean < 1e-9);
}

TEST_CASE("eps1 vanishes under identity emission") {
    // p = K with identity emission: one observation reveals the hidden state
    LowRankHmm hmm = cycle_hmm();
    // soften the cycle so every observation stays reachable
    hmm.w = Matrix(3, 3);
    for (int h = 0; h < 3; ++h)
        for (int z = 0; z < 3; ++z)
            hmm.w(static_cast<std::size_t>(h), static_cast<std::size_t>(z)) = (h == (z + 1) % 3) ? 0.8 : 0.1;
    hmm.initial = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    hmm.validate();
    Rng rng(6);
    const auto err = model_approx_error(hmm, 3, 6, 1, 500, rng);
    CHECK(err.mean < 1e-9);
}

TEST_CASE("eps1 nonincreasing in L on the frozen observable instance") {
    // K=3 p=4 d=2 conc=0.25 seed=10: estimated gamma ~ 0.49
    const auto hmm = new_low_rank_hmm(3, 4, 2, 0.25, 10);
    Rng grng(99);
    CHECK(estimate_gamma(hmm, 3000, grng) >= 0.3);

    double prev = 1e9;
    for (int L : {2, 4, 6, 8}) {
        Rng rng(1234);
        const auto err = model_approx_error(hmm, L, 10, 1, 10000, rng);
        CHECK(err.mean <= prev);
        prev = err.mean;
    }
}

TEST_CASE("memory model conditionals are valid distributions") {
    Rng seeds(111);
    for (int trial = 0; trial < 10; ++trial) {
        const auto hmm = new_low_rank_hmm(3, 3, 2, 0.8, seeds.next_u64());
        MemoryModel model = make_memory_model(hmm, 3, 1);
        Rng rng(seeds.next_u64());
        const auto seq = sample_sequence(hmm, 3, rng);
        const Vector cond = l_memory_conditional(model, seq.obs);
        double s = 0.0;
        for (double v : cond) {
            CHECK(v >= -1e-12);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("memory model invariants reject bad configurations") {
    const auto hmm = new_low_rank_hmm(3, 3, 2, 1.0, 1);
    CHECK_THROWS_AS(make_memory_model(hmm, 1, 2), DimensionError);  // memory_len < steps_ahead
    CHECK_THROWS_AS(make_memory_model(hmm, 0, 1), DimensionError);
}
