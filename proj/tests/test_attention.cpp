#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hmmicl/attention.hpp"
#include "hmmicl/json_io.hpp"
#include "hmmicl/rng.hpp"

using namespace hmmicl;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = 2.0 * rng.uniform01() - 1.0;
    return m;
}

HeadWeights random_head(std::size_t d, Activation act, Rng& rng) {
    return HeadWeights{random_matrix(d, d, rng), random_matrix(d, d, rng), random_matrix(d, d, rng), act};
}

} // namespace

TEST_CASE("zero query with softmax averages the value rows") {
    Rng rng(1);
    const std::size_t d = 6, n = 5;
    const Matrix m = random_matrix(n, d, rng);
    HeadWeights head{Matrix(d, d), Matrix::identity(d), random_matrix(d, d, rng), Activation::softmax};
    const Matrix out = attention(m, head);
    const Matrix mv = matmul(m, head.v);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t t = 0; t < n; ++t) mean += mv(t, j);
        mean /= static_cast<double>(n);
        for (std::size_t t = 0; t < n; ++t) CHECK(out(t, j) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("zero query with relu gives a zero output") {
    Rng rng(2);
    const std::size_t d = 5, n = 4;
    const Matrix m = random_matrix(n, d, rng);
    HeadWeights head{Matrix(d, d), Matrix::identity(d), random_matrix(d, d, rng), Activation::relu};
    const Matrix out = attention(m, head);
    CHECK(max_abs(out) == 0.0);
}

TEST_CASE("softmax rows are distributions") {
    Rng rng(3);
    const std::size_t d = 7, n = 3;
    const Matrix m = random_matrix(n, d, rng);
    const HeadWeights head = random_head(d, Activation::softmax, rng);
    const Matrix w = attention_weights(m, head);
    for (std::size_t t = 0; t < n; ++t) {
        double s = 0.0;
        for (std::size_t u = 0; u < n; ++u) {
            CHECK(w(t, u) >= 0.0);
            s += w(t, u);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("hardmax places unit weight on the arg-max, lowest index on ties") {
    //  logits engineered through q = I, k = I, rows chosen to collide
    Matrix m(3, 2);
    m(0, 0) = 1.0;
    m(1, 0) = 1.0;  // rows 0 and 1 tie for the query row 0
    m(2, 1) = 1.0;
    HeadWeights head{Matrix::identity(2), Matrix::identity(2), Matrix::identity(2), Activation::hardmax};
    const Matrix w = attention_weights(m, head);
    CHECK(w(0, 0) == 1.0);  // tie between t2=0 and t2=1 resolved to 0
    CHECK(w(0, 1) == 0.0);
}

TEST_CASE("softmax where it matters is numerically stable under large logits") {
    Matrix m(2, 2);
    m(0, 0) = 1.0;
    m(1, 1) = 1.0;
    HeadWeights head{Matrix::identity(2), Matrix::identity(2), Matrix::identity(2), Activation::softmax};
    for (auto& v : head.q.data()) v *= 1e4;  // logits on the order of 1e4
    const Matrix w = attention_weights(m, head);
    for (std::size_t t = 0; t < 2; ++t) {
        double s = 0.0;
        for (std::size_t u = 0; u < 2; ++u) {
            CHECK(std::isfinite(w(t, u)));
            s += w(t, u);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("empty layer and zero-value head are the identity") {
    Rng rng(4);
    const std::size_t d = 6, n = 5;
    const Matrix m = random_matrix(n, d, rng);

    TransformerStack stack;
    stack.width = static_cast<int>(d);
    stack.layers.push_back(AttentionLayer{});  // no heads: pure residual
    CHECK(max_abs_diff(forward(m, stack), m) == 0.0);

    HeadWeights head = random_head(d, Activation::softmax, rng);
    head.v = Matrix(d, d);  // V = 0
    stack.layers.clear();
    stack.layers.push_back(AttentionLayer{{head}});
    CHECK(max_abs_diff(forward(m, stack), m) == 0.0);
}

TEST_CASE("residual additivity is exact") {
    Rng rng(5);
    const std::size_t d = 6, n = 4;
    const Matrix m = random_matrix(n, d, rng);
    const HeadWeights h1 = random_head(d, Activation::softmax, rng);
    const HeadWeights h2 = random_head(d, Activation::relu, rng);

    TransformerStack stack;
    stack.width = static_cast<int>(d);
    stack.layers.push_back(AttentionLayer{{h1, h2}});
    const Matrix via_forward = forward(m, stack);

    Matrix manual = m;
    const Matrix a1 = attention(m, h1);
    const Matrix a2 = attention(m, h2);
    for (std::size_t i = 0; i < manual.data().size(); ++i) manual.data()[i] += a1.data()[i];
    for (std::size_t i = 0; i < manual.data().size(); ++i) manual.data()[i] += a2.data()[i];
    CHECK(max_abs_diff(via_forward, manual) == 0.0);
}

TEST_CASE("forward preserves shape for arbitrary stacks") {
    Rng rng(6);
    const std::size_t d = 8, n = 7;
    const Matrix m = random_matrix(n, d, rng);
    TransformerStack stack;
    stack.width = static_cast<int>(d);
    for (int l = 0; l < 3; ++l)
        stack.layers.push_back(AttentionLayer{{random_head(d, Activation::softmax, rng),
                                               random_head(d, Activation::relu, rng)}});
    const Matrix out = forward(m, stack);
    CHECK(out.rows() == n);
    CHECK(out.cols() == d);

    const auto trace = forward_trace(m, stack);
    CHECK(trace.size() == 4);
    CHECK(max_abs_diff(trace.back(), out) == 0.0);
}

TEST_CASE("shape errors are reported") {
    Rng rng(7);
    const Matrix m = random_matrix(4, 5, rng);
    HeadWeights head = random_head(6, Activation::softmax, rng);  // wrong width
    CHECK_THROWS_AS(attention(m, head), ShapeError);

    TransformerStack stack;
    stack.width = 9;
    stack.layers.push_back(AttentionLayer{});
    CHECK_THROWS_AS(forward(m, stack), ShapeError);
}

TEST_CASE("relu reduction is invariant under row permutations of equal content") {
    // two orders of the same contribution multiset must sum bit-identically
    Rng rng(8);
    const std::size_t d = 5;
    Matrix m(6, d);
    for (auto& v : m.data()) v = rng.uniform01();
    // rows 2 and 4 swapped produces the same multiset of (logit, value) pairs
    Matrix swapped = m;
    for (std::size_t c = 0; c < d; ++c) std::swap(swapped(2, c), swapped(4, c));

    HeadWeights head = random_head(d, Activation::relu, rng);
    // keys and values depend on row content only; the query row is row 0 in both
    const Matrix out_a = attention(m, head);
    const Matrix out_b = attention(swapped, head);
    for (std::size_t c = 0; c < d; ++c) CHECK(out_a(0, c) == out_b(0, c));
}

TEST_CASE("vec encoder writes codes for one-hot rows and zeros elsewhere") {
    Matrix h(3, 8);
    // row 0: valid tuple (e2, e1) over p=2 at sources 0 and 2
    h(0, 1) = 1.0;
    h(0, 2) = 1.0;
    // row 1: blurred first component
    h(1, 0) = 0.5;
    h(1, 1) = 0.5;
    h(1, 2) = 1.0;
    // row 2: valid (e1, e1)
    h(2, 0) = 1.0;
    h(2, 2) = 1.0;

    VecEncoder enc;
    enc.p = 2;
    enc.m = 2;
    enc.source_starts = {0, 2};
    enc.target_start = 4;
    Matrix applied = h;
    enc.apply(applied);

    CHECK(applied(0, 4 + 2) == 1.0);  // (1,0) big-endian -> index 2
    for (int j = 0; j < 4; ++j) CHECK(applied(1, static_cast<std::size_t>(4 + j)) == 0.0);
    CHECK(applied(2, 4 + 0) == 1.0);

    VecEncoder bad = enc;
    bad.target_start = 7;  // code block would run past the width
    Matrix target = h;
    CHECK_THROWS_AS(bad.apply(target), EncoderContractError);
}

TEST_CASE("stack json round trip") {
    Rng rng(9);
    TransformerStack stack;
    stack.width = 4;
    stack.layers.push_back(AttentionLayer{{random_head(4, Activation::hardmax, rng)}});
    VecEncoder enc;
    enc.p = 2;
    enc.m = 1;
    enc.source_starts = {0};
    enc.target_start = 2;
    stack.layers.push_back(enc);

    const json j = stack_to_json(stack);
    const TransformerStack back = stack_from_json(json::parse(j.dump()));
    CHECK(back.width == stack.width);
    REQUIRE(back.layers.size() == 2);
    const auto& h0 = std::get<AttentionLayer>(back.layers[0]).heads[0];
    const auto& h0_orig = std::get<AttentionLayer>(stack.layers[0]).heads[0];
    CHECK(h0.activation == Activation::hardmax);
    CHECK(max_abs_diff(h0.q, h0_orig.q) == 0.0);
    CHECK(max_abs_diff(h0.v, h0_orig.v) == 0.0);
    const auto& e = std::get<VecEncoder>(back.layers[1]);
    CHECK(e.target_start == 2);

    const Matrix m = random_matrix(3, 4, rng);
    CHECK(max_abs_diff(forward(m, stack), forward(m, back)) == 0.0);
}
