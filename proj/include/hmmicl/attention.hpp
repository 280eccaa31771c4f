#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "hmmicl/context.hpp"
#include "hmmicl/errors.hpp"
#include "hmmicl/matrix.hpp"

namespace hmmicl {

enum class Activation { softmax, relu, hardmax };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::softmax: return "softmax";
        case Activation::relu: return "relu";
        case Activation::hardmax: return "hardmax";
    }
    return "?";
}

// One attention head: logits = (M q)(M k)^T, output = sigma(logits) (M v).
// hardmax is the exact beta_1 -> infinity limit of softmax: weight 1 on the
// arg-max logit per row, lowest index on ties.
struct HeadWeights {
    Matrix q;
    Matrix k;
    Matrix v;
    Activation activation = Activation::softmax;
};

namespace detail {

inline std::vector<std::size_t> nonzero_columns(const Matrix& m) {
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < m.cols(); ++j) {
        for (std::size_t i = 0; i < m.rows(); ++i) {
            if (m(i, j) != 0.0) {
                cols.push_back(j);
                break;
            }
        }
    }
    return cols;
}

// M * w restricted to the supplied column support; untouched columns are
// exact zeros, so skipping them leaves every downstream sum bit-identical.
inline Matrix project(const Matrix& m, const Matrix& w, const std::vector<std::size_t>& support) {
    Matrix out(m.rows(), w.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            const double mic = m(i, c);
            if (mic == 0.0) continue;
            for (std::size_t j : support) out(i, j) += mic * w(c, j);
        }
    }
    return out;
}

// Accumulates sum_t weight[t] * rows[t] over the value-column support with a
// reduction order fixed by sorting on (weight, row content). The result then
// depends only on the multiset of contributions, which is what makes hardmax
// stacks bit-exactly invariant under demonstration shuffles.
inline void reduce_sorted(const Matrix& mv, const std::vector<std::size_t>& vcols,
                          std::vector<std::pair<double, std::size_t>>& contribs,
                          std::span<double> out_row) {
    std::sort(contribs.begin(), contribs.end(),
              [&](const auto& a, const auto& b) {
                  if (a.first != b.first) return a.first < b.first;
                  for (std::size_t j : vcols) {
                      const double x = mv(a.second, j), y = mv(b.second, j);
                      if (x != y) return x < y;
                  }
                  return false;
              });
    for (const auto& [wt, t] : contribs)
        for (std::size_t j : vcols) out_row[j] += wt * mv(t, j);
}

} // namespace detail

inline void check_head_shape(const Matrix& m, const HeadWeights& head) {
    const std::size_t d = m.cols();
    auto square = [&](const Matrix& w, const char* name) {
        if (w.rows() != d || w.cols() != d)
            throw ShapeError(std::string("attention: ") + name + " is not D x D for this input");
    };
    square(head.q, "Q");
    square(head.k, "K");
    square(head.v, "V");
}

// Row-stochastic attention weights sigma(M q k^T M^T); exposed for tests and
// inspection. relu weights are unnormalized by definition.
inline Matrix attention_weights(const Matrix& m, const HeadWeights& head) {
    check_head_shape(m, head);
    const auto qcols = detail::nonzero_columns(head.q);
    const auto kcols = detail::nonzero_columns(head.k);
    std::vector<std::size_t> chans;
    std::set_intersection(qcols.begin(), qcols.end(), kcols.begin(), kcols.end(),
                          std::back_inserter(chans));
    const Matrix qm = detail::project(m, head.q, chans);
    const Matrix km = detail::project(m, head.k, chans);

    const std::size_t n = m.rows();
    Matrix wts(n, n);
    Vector logits(n);
    for (std::size_t t1 = 0; t1 < n; ++t1) {
        for (std::size_t t2 = 0; t2 < n; ++t2) {
            double s = 0.0;
            for (std::size_t c : chans) s += qm(t1, c) * km(t2, c);
            logits[t2] = s;
        }
        switch (head.activation) {
            case Activation::softmax: {
                double mx = logits[0];
                for (double v : logits) mx = std::max(mx, v);
                double denom = 0.0;
                for (std::size_t t2 = 0; t2 < n; ++t2) {
                    wts(t1, t2) = std::exp(logits[t2] - mx);
                    denom += wts(t1, t2);
                }
                for (std::size_t t2 = 0; t2 < n; ++t2) wts(t1, t2) /= denom;
                break;
            }
            case Activation::relu:
                for (std::size_t t2 = 0; t2 < n; ++t2) wts(t1, t2) = std::max(logits[t2], 0.0);
                break;
            case Activation::hardmax: {
                std::size_t best = 0;
                for (std::size_t t2 = 1; t2 < n; ++t2)
                    if (logits[t2] > logits[best]) best = t2;
                wts(t1, best) = 1.0;
                break;
            }
        }
    }
    return wts;
}

inline Matrix attention(const Matrix& m, const HeadWeights& head) {
    check_head_shape(m, head);
    const auto qcols = detail::nonzero_columns(head.q);
    const auto kcols = detail::nonzero_columns(head.k);
    std::vector<std::size_t> chans;
    std::set_intersection(qcols.begin(), qcols.end(), kcols.begin(), kcols.end(),
                          std::back_inserter(chans));
    const auto vcols = detail::nonzero_columns(head.v);

    const Matrix qm = detail::project(m, head.q, chans);
    const Matrix km = detail::project(m, head.k, chans);
    const Matrix mv = detail::project(m, head.v, vcols);

    const std::size_t n = m.rows();
    Matrix out(n, m.cols());
    Vector logits(n);
    std::vector<std::pair<double, std::size_t>> contribs;
    for (std::size_t t1 = 0; t1 < n; ++t1) {
        for (std::size_t t2 = 0; t2 < n; ++t2) {
            double s = 0.0;
            for (std::size_t c : chans) s += qm(t1, c) * km(t2, c);
            logits[t2] = s;
        }
        switch (head.activation) {
            case Activation::softmax: {
                // row max subtracted before exponentiation; mandatory for the
                // beta1-scaled logits this library produces
                double mx = logits[0];
                for (double v : logits) mx = std::max(mx, v);
                double denom = 0.0;
                for (std::size_t t2 = 0; t2 < n; ++t2) {
                    logits[t2] = std::exp(logits[t2] - mx);
                    denom += logits[t2];
                }
                auto row = out.row(t1);
                for (std::size_t t2 = 0; t2 < n; ++t2) {
                    const double wt = logits[t2] / denom;
                    for (std::size_t j : vcols) row[j] += wt * mv(t2, j);
                }
                break;
            }
            case Activation::relu: {
                contribs.clear();
                for (std::size_t t2 = 0; t2 < n; ++t2)
                    if (logits[t2] > 0.0) contribs.emplace_back(logits[t2], t2);
                detail::reduce_sorted(mv, vcols, contribs, out.row(t1));
                break;
            }
            case Activation::hardmax: {
                std::size_t best = 0;
                for (std::size_t t2 = 1; t2 < n; ++t2)
                    if (logits[t2] > logits[best]) best = t2;
                auto row = out.row(t1);
                for (std::size_t j : vcols) row[j] = mv(best, j);
                break;
            }
        }
    }
    return out;
}

// Deterministic row-encoder: writes the Vec one-hot of (current token,
// F_1..F_{m-1} tokens) into the target block. Rows whose components are not
// all one-hot (delimiters, the query row, softmax-blurred copies) get zeros.
struct VecEncoder {
    int p = 0;
    int m = 0;
    std::vector<int> source_starts;  // column starts of the m p-wide token slices
    int target_start = 0;            // p^m-wide target block

    int target_dim() const { return ContextLayout::pow_int(p, m); }

    void apply(Matrix& h) const {
        const int dim = target_dim();
        if (static_cast<std::size_t>(target_start + dim) > h.cols() ||
            source_starts.size() != static_cast<std::size_t>(m))
            throw EncoderContractError("VecEncoder: block ranges exceed the stream width");
        for (int s : source_starts)
            if (s < 0 || static_cast<std::size_t>(s + p) > h.cols())
                throw EncoderContractError("VecEncoder: source range exceeds the stream width");

        std::vector<int> symbols(static_cast<std::size_t>(m));
        for (std::size_t r = 0; r < h.rows(); ++r) {
            bool valid = true;
            for (int c = 0; c < m && valid; ++c) {
                const auto row = h.row(r);
                int idx = -1;
                if (!is_one_hot(row.subspan(static_cast<std::size_t>(source_starts[static_cast<std::size_t>(c)]),
                                            static_cast<std::size_t>(p)),
                                &idx))
                    valid = false;
                else
                    symbols[static_cast<std::size_t>(c)] = idx;
            }
            for (int j = 0; j < dim; ++j) h(r, static_cast<std::size_t>(target_start + j)) = 0.0;
            if (valid) h(r, static_cast<std::size_t>(target_start + vec_index(symbols, p))) = 1.0;
        }
    }
};

struct AttentionLayer {
    std::vector<HeadWeights> heads;
};

using StackLayer = std::variant<AttentionLayer, VecEncoder>;

struct TransformerStack {
    int width = 0;
    std::vector<StackLayer> layers;

    int attention_layer_count() const {
        int c = 0;
        for (const auto& l : layers)
            if (std::holds_alternative<AttentionLayer>(l)) ++c;
        return c;
    }
};

// H^(0) = M0; attention layers add the sum of their head outputs to the
// residual stream; encoder layers rewrite their designated block in place.
inline Matrix forward(const Matrix& m0, const TransformerStack& stack) {
    if (m0.cols() != static_cast<std::size_t>(stack.width))
        throw ShapeError("forward: input width does not match the stack");
    if (stack.layers.empty()) throw ShapeError("forward: stack has no layers");
    Matrix h = m0;
    for (const auto& layer : stack.layers) {
        if (const auto* att = std::get_if<AttentionLayer>(&layer)) {
            std::vector<Matrix> outs;
            outs.reserve(att->heads.size());
            for (const auto& head : att->heads) outs.push_back(attention(h, head));
            for (const auto& o : outs) {
                auto hd = h.data();
                auto od = o.data();
                for (std::size_t i = 0; i < hd.size(); ++i) hd[i] += od[i];
            }
        } else {
            std::get<VecEncoder>(layer).apply(h);
        }
    }
    return h;
}

// Same walk, returning H^(l) after every layer (index 0 = input).
inline std::vector<Matrix> forward_trace(const Matrix& m0, const TransformerStack& stack) {
    if (m0.cols() != static_cast<std::size_t>(stack.width))
        throw ShapeError("forward_trace: input width does not match the stack");
    std::vector<Matrix> trace;
    trace.push_back(m0);
    for (const auto& layer : stack.layers) {
        Matrix h = trace.back();
        if (const auto* att = std::get_if<AttentionLayer>(&layer)) {
            std::vector<Matrix> outs;
            outs.reserve(att->heads.size());
            for (const auto& head : att->heads) outs.push_back(attention(h, head));
            for (const auto& o : outs) {
                auto hd = h.data();
                auto od = o.data();
                for (std::size_t i = 0; i < hd.size(); ++i) hd[i] += od[i];
            }
        } else {
            std::get<VecEncoder>(layer).apply(h);
        }
        trace.push_back(std::move(h));
    }
    return trace;
}

} // namespace hmmicl
