#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hmmicl/attention.hpp"
#include "hmmicl/context.hpp"
#include "hmmicl/errors.hpp"

namespace hmmicl {

// Parameters of the explicit weight assembly. `hardmax` selects the exact
// limit semantics for the copy layers; finite beta1 with softmax exists to
// study the approximation gap. The gradient layers keep the factor-2 update
// W <- W - lr * 2 (W Z - O) Z^T, so lr = 1/(2(L-1)) reproduces the 1/(L-1)
// value scale of the written-out construction; that is the default.
struct ConstructionConfig {
    ContextLayout layout;
    bool hardmax = true;
    double beta1 = 1e4;
    std::optional<double> beta2;  // default 1000 n k + 1
    int T = 1;
    std::optional<double> lr;     // default 1/(2(L-1)); explicit 0 is a valid degenerate step

    double beta2_resolved() const {
        return beta2.value_or(1000.0 * layout.n * layout.k + 1.0);
    }
    double lr_resolved() const { return lr.value_or(1.0 / (2.0 * (layout.L - 1))); }
    bool extended() const { return layout.m > 1; }

    void validate() const {
        layout.validate();
        if (T < 1) throw DimensionError("ConstructionConfig: T must be >= 1");
        if (!(beta1 > 0.0)) throw DimensionError("ConstructionConfig: beta1 must be positive");
        if (!(beta2_resolved() > 1000.0 * layout.n * layout.k))
            throw DimensionError("ConstructionConfig: beta2 must exceed 1000 n k");
        if (lr_resolved() < 0.0) throw DimensionError("ConstructionConfig: lr must be nonnegative");
    }
};

// Column ranges of every block the construction writes into the residual
// stream. R window blocks Z_1..Z_R (R = L-1, or L-m in extended mode),
// future blocks F_1..F_m, the Vec block (extended), and q_rows rows of W.
struct FeatureMap {
    int p = 0;
    int L = 0;
    int m = 1;
    int R = 0;        // window block count
    int q_rows = 0;   // p, or p^m in extended mode
    int win_dim = 0;  // p * R
    int D = 0;
    int vec_start = 0;  // extended only; also the extended read-out slice
    int w_start = 0;
    int out_start = 0;
    int ones_col = 0;
    int ind_col = 0;

    int orig_width() const { return p + 3; }
    int z_block(int r) const { return r * (p + 3); }              // r in 1..R
    int f_block(int s) const { return (R + s) * (p + 3); }       // s in 1..m
    int w_row(int j) const { return w_start + (j - 1) * win_dim; }  // j in 1..q_rows
    bool extended() const { return m > 1; }

    void validate() const {
        if (w_start + q_rows * win_dim > ones_col)
            throw CapacityError("FeatureMap: W block collides with the fixed embedding columns (D too small)");
        if ((L + 1) * (p + 3) > ones_col) throw CapacityError("FeatureMap: copy blocks exceed D");
    }
};

inline FeatureMap make_feature_map(const ContextLayout& layout) {
    FeatureMap fm;
    fm.p = layout.p;
    fm.L = layout.L;
    fm.m = layout.m;
    fm.R = layout.L - layout.m;
    fm.q_rows = (layout.m == 1) ? layout.p : layout.pm();
    fm.win_dim = layout.p * fm.R;
    fm.D = layout.D;
    fm.vec_start = (layout.L + 1) * (layout.p + 3);
    fm.w_start = fm.vec_start + (layout.m > 1 ? layout.pm() : 0);
    fm.out_start = (layout.m == 1) ? 0 : fm.vec_start;
    fm.ones_col = layout.ones_col();
    fm.ind_col = layout.ind_col();
    fm.validate();
    return fm;
}

// Relative-position matrices at offset 1: s_{t1}^T A s_{t2} =
// beta1 cos((t1-t2-1) theta) and s_{t1}^T B s_{t2} = beta1 cos((t1-t2+1) theta)
// with theta = 1/(1000 n k).
inline std::pair<Matrix, Matrix> rotation_matrices(const ContextLayout& layout, double beta1) {
    const double th = layout.pos_angle();
    Matrix a(2, 2), b(2, 2);
    a(0, 0) = beta1 * std::cos(th);
    a(0, 1) = beta1 * std::sin(th);
    a(1, 0) = -beta1 * std::sin(th);
    a(1, 1) = beta1 * std::cos(th);
    b(0, 0) = beta1 * std::cos(th);
    b(0, 1) = -beta1 * std::sin(th);
    b(1, 0) = beta1 * std::sin(th);
    b(1, 1) = beta1 * std::cos(th);
    return {a, b};
}

namespace detail {

// Offset-r generalizations: argmax of s_{t1}^T A_r s_{t2} over t2 sits at
// t1 - r (clamped to row 1), and of B_r at t1 + r (clamped to the last row).
inline Matrix history_rotation(const ContextLayout& layout, double beta1, int r) {
    const double th = layout.pos_angle() * r;
    Matrix a(2, 2);
    a(0, 0) = beta1 * std::cos(th);
    a(0, 1) = beta1 * std::sin(th);
    a(1, 0) = -beta1 * std::sin(th);
    a(1, 1) = beta1 * std::cos(th);
    return a;
}

inline Matrix future_rotation(const ContextLayout& layout, double beta1, int r) {
    const double th = layout.pos_angle() * r;
    Matrix b(2, 2);
    b(0, 0) = beta1 * std::cos(th);
    b(0, 1) = -beta1 * std::sin(th);
    b(1, 0) = beta1 * std::sin(th);
    b(1, 1) = beta1 * std::cos(th);
    return b;
}

inline HeadWeights copy_head(const ConstructionConfig& cfg, const Matrix& rot,
                             const std::vector<std::pair<int, int>>& block_moves) {
    const int d = cfg.layout.D;
    const int pc = cfg.layout.pos_col();
    HeadWeights head;
    head.activation = cfg.hardmax ? Activation::hardmax : Activation::softmax;
    head.q = Matrix(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
    head.k = Matrix::identity(static_cast<std::size_t>(d));
    head.v = Matrix(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            head.q(static_cast<std::size_t>(pc + i), static_cast<std::size_t>(pc + j)) =
                rot(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    const int width = cfg.layout.p + 3;
    for (const auto& [src, dst] : block_moves)
        for (int c = 0; c < width; ++c)
            head.v(static_cast<std::size_t>(src + c), static_cast<std::size_t>(dst + c)) = 1.0;
    return head;
}

} // namespace detail

// Decoupled-feature layers. Layer 1 copies the original block one row back
// into Z_1; layer j >= 2 attends at offset 2^(j-2) and forwards the already
// known Z-prefix, doubling the learned history. One mirrored schedule with B
// builds F_1..F_m. In hardmax mode the lowest-index tie rule lands boundary
// rows on row 1 / row N, which is exactly the Z_r / F_r padding.
inline std::vector<StackLayer> build_copy_layers(const ConstructionConfig& cfg, const FeatureMap& fm) {
    cfg.validate();
    std::vector<StackLayer> layers;

    layers.push_back(AttentionLayer{{detail::copy_head(
        cfg, detail::history_rotation(cfg.layout, cfg.beta1, 1), {{0, fm.z_block(1)}})}});
    for (int known = 1; known < fm.R;) {
        const int offset = known;
        std::vector<std::pair<int, int>> moves;
        for (int s = 1; s <= offset && offset + s <= fm.R; ++s)
            moves.emplace_back(fm.z_block(s), fm.z_block(offset + s));
        layers.push_back(AttentionLayer{{detail::copy_head(
            cfg, detail::history_rotation(cfg.layout, cfg.beta1, offset), moves)}});
        known = std::min(2 * known, fm.R);
    }

    layers.push_back(AttentionLayer{{detail::copy_head(
        cfg, detail::future_rotation(cfg.layout, cfg.beta1, 1), {{0, fm.f_block(1)}})}});
    for (int known = 1; known < fm.m;) {
        const int offset = known;
        std::vector<std::pair<int, int>> moves;
        for (int s = 1; s <= offset && offset + s <= fm.m; ++s)
            moves.emplace_back(fm.f_block(s), fm.f_block(offset + s));
        layers.push_back(AttentionLayer{{detail::copy_head(
            cfg, detail::future_rotation(cfg.layout, cfg.beta1, offset), moves)}});
        known = std::min(2 * known, fm.m);
    }
    return layers;
}

namespace detail {

// Shared key map of the gradient heads for label row j: channels
// [0, win_dim) read the Z_1..Z_R token stack, channel win_dim the label
// coordinate, channel win_dim+1 the F_m token prefix (zero exactly on the
// delimiter-next endpoint rows), channel win_dim+2 the test indicator.
inline Matrix gd_key(const ConstructionConfig& cfg, const FeatureMap& fm, int j) {
    const int d = fm.D;
    Matrix k(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
    for (int r = 1; r <= fm.R; ++r)
        for (int a = 0; a < fm.p; ++a)
            k(static_cast<std::size_t>(fm.z_block(r) + a), static_cast<std::size_t>((r - 1) * fm.p + a)) = 1.0;
    const int label_col = fm.extended() ? fm.vec_start + (j - 1) : (j - 1);
    k(static_cast<std::size_t>(label_col), static_cast<std::size_t>(fm.win_dim)) = 1.0;
    for (int a = 0; a < fm.p; ++a)
        k(static_cast<std::size_t>(fm.f_block(fm.m) + a), static_cast<std::size_t>(fm.win_dim + 1)) = 1.0;
    k(static_cast<std::size_t>(fm.ind_col), static_cast<std::size_t>(fm.win_dim + 2)) = 1.0;
    return k;
}

// Query for the gradient heads. `sign` = +1 gives logits
// W_j . z' - label - beta2 (gates); -1 negates only the data channels, so
// both heads of a pair stay clamped off the endpoint rows.
inline Matrix gd_query(const ConstructionConfig& cfg, const FeatureMap& fm, int j, double sign) {
    const int d = fm.D;
    const double b2 = cfg.beta2_resolved();
    Matrix q(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
    for (int c = 0; c < fm.win_dim; ++c)
        q(static_cast<std::size_t>(fm.w_row(j) + c), static_cast<std::size_t>(c)) = sign;
    q(static_cast<std::size_t>(fm.ones_col), static_cast<std::size_t>(fm.win_dim)) = -sign;
    q(static_cast<std::size_t>(fm.ones_col), static_cast<std::size_t>(fm.win_dim + 1)) = -b2;
    q(static_cast<std::size_t>(fm.ones_col), static_cast<std::size_t>(fm.win_dim + 2)) = -b2;
    return q;
}

// Value writes -2 lr ReLU(+-a) z' into the W_j block; the pair sums to the
// descent step -2 lr (W_j . z - label) z. (The sign pairing here is what
// makes the two-ReLU identity descend rather than ascend.)
inline Matrix gd_value(const ConstructionConfig& cfg, const FeatureMap& fm, int j, double sign) {
    const int d = fm.D;
    Matrix v(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
    const double scale = -sign * 2.0 * cfg.lr_resolved();
    for (int r = 1; r <= fm.R; ++r)
        for (int a = 0; a < fm.p; ++a)
            v(static_cast<std::size_t>(fm.z_block(r) + a),
              static_cast<std::size_t>(fm.w_row(j) + (r - 1) * fm.p + a)) = scale;
    return v;
}

} // namespace detail

// T identical layers; each performs one gradient-descent step on the MSE loss
// over exactly the n demonstration endpoints, two ReLU heads per W row.
inline std::vector<StackLayer> build_gd_layers(const ConstructionConfig& cfg, const FeatureMap& fm) {
    cfg.validate();
    fm.validate();
    std::vector<StackLayer> layers;
    layers.reserve(static_cast<std::size_t>(cfg.T));
    AttentionLayer layer;
    for (int j = 1; j <= fm.q_rows; ++j) {
        const Matrix key = detail::gd_key(cfg, fm, j);
        layer.heads.push_back(HeadWeights{detail::gd_query(cfg, fm, j, +1.0), key,
                                          detail::gd_value(cfg, fm, j, +1.0), Activation::relu});
        layer.heads.push_back(HeadWeights{detail::gd_query(cfg, fm, j, -1.0), key,
                                          detail::gd_value(cfg, fm, j, -1.0), Activation::relu});
    }
    for (int t = 0; t < cfg.T; ++t) layers.push_back(layer);
    return layers;
}

// Final layer: ReLU pairs write W_j . z'_t into the output block of every
// test row (the query row is the one that read_out sees). Each of the N rows
// contributes the constant value 1/N, so the written number is exactly the
// inner product. Demonstration rows are suppressed by a beta2 (ind - 1)
// query-side gate, which keeps their token blocks clean.
inline StackLayer build_prediction_layer(const ConstructionConfig& cfg, const FeatureMap& fm) {
    cfg.validate();
    fm.validate();
    const int d = fm.D;
    const double b2 = cfg.beta2_resolved();
    const double inv_rows = 1.0 / static_cast<double>(cfg.layout.rows());

    AttentionLayer layer;
    for (int j = 1; j <= fm.q_rows; ++j) {
        Matrix key(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
        for (int c = 0; c < fm.win_dim; ++c)
            key(static_cast<std::size_t>(fm.w_row(j) + c), static_cast<std::size_t>(c)) = 1.0;
        key(static_cast<std::size_t>(fm.ones_col), static_cast<std::size_t>(fm.win_dim)) = 1.0;

        for (double sign : {+1.0, -1.0}) {
            Matrix q(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
            for (int r = 1; r <= fm.R; ++r)
                for (int a = 0; a < fm.p; ++a)
                    q(static_cast<std::size_t>(fm.z_block(r) + a),
                      static_cast<std::size_t>((r - 1) * fm.p + a)) = sign;
            q(static_cast<std::size_t>(fm.ind_col), static_cast<std::size_t>(fm.win_dim)) = b2;
            q(static_cast<std::size_t>(fm.ones_col), static_cast<std::size_t>(fm.win_dim)) = -b2;

            Matrix v(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
            v(static_cast<std::size_t>(fm.ones_col),
              static_cast<std::size_t>(fm.out_start + (j - 1))) = sign * inv_rows;
            layer.heads.push_back(HeadWeights{std::move(q), key, std::move(v), Activation::relu});
        }
    }
    return layer;
}

struct AssembledStack {
    TransformerStack stack;
    FeatureMap feature_map;
    int attention_layers = 0;
    int copy_layers = 0;
    bool has_encoder = false;
};

// Copy layers, then (extended mode) the Vec row-encoder, then T gradient
// layers and the prediction layer. Standard-mode attention depth is
// ceil(log2(L-1)) + 2 + T + 1.
inline AssembledStack assemble_stack(const ConstructionConfig& cfg) {
    cfg.validate();
    const FeatureMap fm = make_feature_map(cfg.layout);

    AssembledStack out;
    out.feature_map = fm;
    out.stack.width = cfg.layout.D;

    auto copies = build_copy_layers(cfg, fm);
    out.copy_layers = static_cast<int>(copies.size());
    for (auto& l : copies) out.stack.layers.push_back(std::move(l));

    if (cfg.extended()) {
        VecEncoder enc;
        enc.p = fm.p;
        enc.m = fm.m;
        enc.source_starts.push_back(0);
        for (int s = 1; s < fm.m; ++s) enc.source_starts.push_back(fm.f_block(s));
        enc.target_start = fm.vec_start;
        out.stack.layers.push_back(enc);
        out.has_encoder = true;
    }

    for (auto& l : build_gd_layers(cfg, fm)) out.stack.layers.push_back(std::move(l));
    out.stack.layers.push_back(build_prediction_layer(cfg, fm));
    out.attention_layers = out.stack.attention_layer_count();
    return out;
}

} // namespace hmmicl
