#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "hmmicl/errors.hpp"
#include "hmmicl/matrix.hpp"

namespace hmmicl {

// Row/column bookkeeping for the in-context input matrix. Positions are
// 1-based (1 <= pos <= n(L+1)+k); column indices in code are 0-based.
//
// Row embedding (width D):
//   cols 0..p        token block, one-hot in e_1..e_{p+1}; e_{p+1} marks the
//                    delimiter; the final query row has an all-zero block
//   cols p+1, p+2    positional embedding [sin(pos/(1000nk)), cos(pos/(1000nk))]
//   col  D-2         ones
//   col  D-1         1(pos > n(L+1)) test indicator
//   everything else  zero scratch, claimed later by the construction
struct ContextLayout {
    int n = 1;  // demonstrations
    int L = 2;  // demo length (window of L-1 plus the final token)
    int k = 3;  // test prefix length k-1 plus the query row
    int p = 2;  // vocabulary size, excluding the delimiter
    int m = 1;  // prediction steps (1 = standard)
    int D = 0;  // embedding width; 0 = use default_width()

    static int pow_int(int base, int exp) {
        int r = 1;
        for (int i = 0; i < exp; ++i) r *= base;
        return r;
    }

    // Wide enough for the original blocks, the Z/F copies, the Vec block and
    // the W rows, plus the two live fixed-embedding columns.
    static int default_width(int L, int p, int m) {
        const int pm = pow_int(p, m);
        return (L + 1) * (p + 3) + p * std::max(p, pm) * (L - 1) + pm + 2;
    }

    int rows() const { return n * (L + 1) + k; }
    int pm() const { return pow_int(p, m); }
    int token_cols() const { return p + 1; }
    int pos_col() const { return p + 1; }     // first of the two positional columns
    int ones_col() const { return D - 2; }
    int ind_col() const { return D - 1; }
    double pos_angle() const { return 1.0 / (1000.0 * n * k); }

    void validate() const {
        if (n < 1 || L < 2 || k < 2 || p < 1 || m < 1) throw DimensionError("ContextLayout: sizes out of range");
        if (m >= L) throw DimensionError("ContextLayout: need m < L");
        const int d = D;
        if (d < 2 * pm() * L) throw DimensionError("ContextLayout: D below 2 p^m L");
        if (d < (L + 1) * (p + 3) + 2) throw DimensionError("ContextLayout: D too small for the block layout");
    }
};

inline ContextLayout make_layout(int n, int L, int k, int p, int m = 1, int D = 0) {
    ContextLayout layout{n, L, k, p, m, D};
    if (layout.D == 0) layout.D = ContextLayout::default_width(L, p, m);
    layout.validate();
    return layout;
}

struct ContextMatrix {
    Matrix data;
    ContextLayout layout;
};

// Assembles M_0: [demo_1, delim, ..., demo_n, delim, test prefix, query row].
// Demos are symbol sequences of length L; the test prefix has length k-1.
inline ContextMatrix build_context(const std::vector<std::vector<int>>& demos,
                                   const std::vector<int>& test_prefix,
                                   const ContextLayout& layout) {
    layout.validate();
    if (demos.size() != static_cast<std::size_t>(layout.n))
        throw DimensionError("build_context: expected " + std::to_string(layout.n) + " demos");
    for (std::size_t i = 0; i < demos.size(); ++i)
        if (demos[i].size() != static_cast<std::size_t>(layout.L))
            throw DimensionError("build_context: demo " + std::to_string(i) + " has length " +
                                 std::to_string(demos[i].size()) + ", expected " + std::to_string(layout.L));
    if (test_prefix.size() != static_cast<std::size_t>(layout.k - 1))
        throw DimensionError("build_context: test prefix must have length k-1");

    const int rows = layout.rows();
    Matrix md(static_cast<std::size_t>(rows), static_cast<std::size_t>(layout.D));
    const double theta = layout.pos_angle();

    auto set_row = [&](int pos /*1-based*/, int token /* -1 zero block, p delimiter */) {
        const std::size_t r = static_cast<std::size_t>(pos - 1);
        if (token >= 0) {
            if (token > layout.p) throw DimensionError("build_context: symbol out of range");
            md(r, static_cast<std::size_t>(token)) = 1.0;
        }
        md(r, static_cast<std::size_t>(layout.pos_col())) = std::sin(pos * theta);
        md(r, static_cast<std::size_t>(layout.pos_col() + 1)) = std::cos(pos * theta);
        md(r, static_cast<std::size_t>(layout.ones_col())) = 1.0;
        md(r, static_cast<std::size_t>(layout.ind_col())) = (pos > layout.n * (layout.L + 1)) ? 1.0 : 0.0;
    };

    int pos = 1;
    for (int i = 0; i < layout.n; ++i) {
        for (int s = 0; s < layout.L; ++s) {
            const int sym = demos[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
            if (sym < 0 || sym >= layout.p)
                throw DimensionError("build_context: demo " + std::to_string(i) + " has symbol out of range");
            set_row(pos++, sym);
        }
        set_row(pos++, layout.p);  // delimiter e_{p+1}
    }
    for (int s = 0; s < layout.k - 1; ++s) {
        const int sym = test_prefix[static_cast<std::size_t>(s)];
        if (sym < 0 || sym >= layout.p) throw DimensionError("build_context: test symbol out of range");
        set_row(pos++, sym);
    }
    set_row(pos++, -1);  // final query row, zero token block

    return ContextMatrix{std::move(md), layout};
}

// Big-endian injective index of an m-tuple of symbols: the first component is
// most significant.
inline int vec_index(std::span<const int> symbols, int p) {
    int idx = 0;
    for (int s : symbols) {
        if (s < 0 || s >= p) throw DimensionError("vec_index: symbol out of range");
        idx = idx * p + s;
    }
    return idx;
}

inline bool is_one_hot(std::span<const double> v, int* index, double tol = 1e-9) {
    int hot = -1;
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v[i];
        if (x < -tol) return false;
        if (std::abs(x - 1.0) <= tol) {
            if (hot >= 0) return false;
            hot = static_cast<int>(i);
        } else if (std::abs(x) > tol) {
            return false;
        }
        s += x;
    }
    if (hot < 0 || std::abs(s - 1.0) > tol) return false;
    if (index != nullptr) *index = hot;
    return true;
}

// One-hot encoding of an m-tuple of one-hot vectors into R^{p^m}.
inline Vector vec_encode(const std::vector<Vector>& tuple) {
    if (tuple.empty()) throw DimensionError("vec_encode: empty tuple");
    const int p = static_cast<int>(tuple.front().size());
    std::vector<int> symbols;
    symbols.reserve(tuple.size());
    for (const auto& component : tuple) {
        if (component.size() != static_cast<std::size_t>(p)) throw DimensionError("vec_encode: ragged tuple");
        int idx = -1;
        if (!is_one_hot(component, &idx)) throw DimensionError("vec_encode: component is not one-hot");
        symbols.push_back(idx);
    }
    const int dim = ContextLayout::pow_int(p, static_cast<int>(tuple.size()));
    return one_hot(vec_index(symbols, p), dim);
}

enum class ReadOutMode { standard, extended };

// Standard: token slice of the final row. Extended: the p^m Vec slice at
// columns (L+1)(p+3)+1 .. (L+1)(p+3)+p^m (1-based), per the m-step layout.
inline Vector read_out(const Matrix& output, const ContextLayout& layout, ReadOutMode mode) {
    if (output.rows() != static_cast<std::size_t>(layout.rows()) ||
        output.cols() != static_cast<std::size_t>(layout.D))
        throw ShapeError("read_out: output does not have the M0 shape");
    const std::size_t last = output.rows() - 1;
    const int start = (mode == ReadOutMode::standard) ? 0 : (layout.L + 1) * (layout.p + 3);
    const int len = (mode == ReadOutMode::standard) ? layout.p : layout.pm();
    if (start + len > layout.D) throw ShapeError("read_out: slice exceeds width");
    Vector out(static_cast<std::size_t>(len));
    for (int j = 0; j < len; ++j) out[static_cast<std::size_t>(j)] = output(last, static_cast<std::size_t>(start + j));
    return out;
}

// Debug export, not a stability contract.
inline void write_matrix_csv(const Matrix& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_matrix_csv: cannot open " + path);
    char buf[64];
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            f << buf;
            if (j + 1 < m.cols()) f << ',';
        }
        f << '\n';
    }
}

} // namespace hmmicl
