#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hmmicl/construct.hpp"
#include "hmmicl/context.hpp"
#include "hmmicl/hmm.hpp"
#include "hmmicl/memory_model.hpp"
#include "hmmicl/regression.hpp"

namespace hmmicl {

inline constexpr const char* kRepoVersion = "0.1.0";
inline constexpr int kSweepSchemaVersion = 1;

// Window stacking convention shared by the oracles and the constructed stack:
// most recent observation first, matching the Z_1..Z_R feature order.
inline Vector stack_window_recent_first(std::span<const int> window, int p) {
    Vector v(window.size() * static_cast<std::size_t>(p), 0.0);
    for (std::size_t r = 0; r < window.size(); ++r) {
        const int sym = window[window.size() - 1 - r];
        if (sym < 0 || sym >= p) throw DimensionError("stack_window_recent_first: symbol out of range");
        v[r * static_cast<std::size_t>(p) + static_cast<std::size_t>(sym)] = 1.0;
    }
    return v;
}

// (O, Z) from demonstration sequences of length L. Standard mode: label is
// the last symbol, window the first L-1. Extended: label is the Vec code of
// the last m symbols, window the first L-m.
inline RegressionProblem problem_from_demos(const std::vector<std::vector<int>>& demos, int p, int L,
                                            int m) {
    const int R = L - m;
    const int q = (m == 1) ? p : ContextLayout::pow_int(p, m);
    RegressionProblem problem;
    problem.O = Matrix(static_cast<std::size_t>(q), demos.size());
    problem.Z = Matrix(static_cast<std::size_t>(p * R), demos.size());
    for (std::size_t i = 0; i < demos.size(); ++i) {
        const auto& demo = demos[i];
        if (demo.size() != static_cast<std::size_t>(L))
            throw DimensionError("problem_from_demos: demo length != L");
        int label;
        if (m == 1) {
            label = demo.back();
        } else {
            const std::span<const int> tail(demo.data() + (L - m), static_cast<std::size_t>(m));
            label = vec_index(tail, p);
        }
        problem.O(static_cast<std::size_t>(label), i) = 1.0;
        const Vector z = stack_window_recent_first({demo.data(), static_cast<std::size_t>(R)}, p);
        for (std::size_t r = 0; r < z.size(); ++r) problem.Z(r, i) = z[r];
    }
    return problem;
}

struct AssumptionReport {
    double lambda_min = 0.0;  // of n^{-1} Z Z^T
    double lambda_max = 0.0;
    bool pass = false;
};

inline AssumptionReport check_assumption(const Matrix& z, double alpha_floor) {
    const double n = static_cast<double>(z.cols());
    const SymmetricEigen eig = jacobi_eigen(matmul_nt(z, z));
    AssumptionReport rep;
    rep.lambda_min = eig.values.front() / n;
    rep.lambda_max = eig.values.back() / n;
    rep.pass = rep.lambda_min >= alpha_floor;
    return rep;
}

struct ExperimentConfig {
    // task: either generated from (K, d, concentration, hmm_seed) or injected
    std::optional<LowRankHmm> task;
    int K = 3;
    int d = 2;
    double concentration = 1.0;
    std::uint64_t hmm_seed = 1;
    // prompt layout
    int n = 20;
    int L = 3;
    int k = 5;
    int p = 2;
    int m = 1;
    // construction
    bool hardmax = true;
    double beta1 = 1e4;
    double beta2 = 0.0;  // 0 = default
    int T = 5;
    double lr = 0.0;     // <= 0: spectral default 1/(2 lambda_max(Z Z^T))
    // measurement
    int num_mc = 200;
    int pop_samples = 100000;
    double alpha_floor = 1e-3;
    std::uint64_t seed = 0;
    bool eval_stack = true;

    void validate() const {
        if (!(k > L && L > m && m >= 1)) throw DimensionError("ExperimentConfig: need k > L > m >= 1");
        if (n < 1 || num_mc < 1 || pop_samples < 1) throw DimensionError("ExperimentConfig: counts must be positive");
        if (T < 0) throw DimensionError("ExperimentConfig: T must be >= 0");
        if (task && task->num_obs != p) throw DimensionError("ExperimentConfig: injected task vocabulary != p");
    }

    ContextLayout make_layout() const { return ::hmmicl::make_layout(n, L, k, p, m); }

    LowRankHmm make_task() const {
        if (task) return *task;
        return new_low_rank_hmm(K, p, d, concentration, hmm_seed);
    }
};

struct ErrorStat {
    double mean = 0.0;
    double se = 0.0;
};

struct ErrorReport {
    ErrorStat eps1;          // exact vs L-memory conditional
    ErrorStat eps2;          // population linear reference W* z vs closed-form W_hat z
    ErrorStat eps2_direct;   // L-memory conditional vs W_hat z
    ErrorStat eps3;          // closed-form W_hat z vs T-step GD iterate W_T z
    ErrorStat eps_stack;     // W_T z vs read_out of the assembled stack
    ErrorStat total;         // exact vs read_out
    double lambda_min = 0.0;  // of n^{-1} Z Z^T
    double lambda_max = 0.0;
    double ridge_used = 0.0;
    double lr_used = 0.0;
    int layer_count = 0;
    bool stack_evaluated = false;
    std::uint64_t seed = 0;
    std::string generator_name = std::string(kGeneratorName);
    std::string status = "ok";
    ExperimentConfig config;
};

namespace detail {

// Fixed substream ids so that separate entry points can replay identical draws.
inline constexpr std::uint64_t kDemoStream = 1;
inline constexpr std::uint64_t kTestStream = 2;
inline constexpr std::uint64_t kPopStream = 3;

struct Accumulator {
    double s = 0.0, s2 = 0.0;
    int count = 0;
    void add(double x) {
        s += x;
        s2 += x * x;
        ++count;
    }
    ErrorStat stat() const {
        ErrorStat e;
        if (count == 0) return e;
        e.mean = s / count;
        const double var = std::max(0.0, s2 / count - e.mean * e.mean);
        e.se = std::sqrt(var / count);
        return e;
    }
};

inline double ridge_fallback(const Matrix& gram) {
    double trace = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) trace += gram(i, i);
    return 1e-8 * trace / static_cast<double>(gram.rows());
}

} // namespace detail

// One full error decomposition at a fixed demonstration draw. All Monte-Carlo
// terms share the same test-prefix draws, so the triangle inequality
// total <= eps1 + eps2_direct + eps3 + eps_stack holds sample by sample.
inline ErrorReport measure_errors(const ExperimentConfig& config) {
    config.validate();
    const ContextLayout layout = config.make_layout();
    const LowRankHmm hmm = config.make_task();

    ErrorReport report;
    report.config = config;
    report.seed = config.seed;

    // demonstrations
    Rng demo_rng = Rng::substream(config.seed, detail::kDemoStream);
    std::vector<std::vector<int>> demos;
    demos.reserve(static_cast<std::size_t>(config.n));
    for (int i = 0; i < config.n; ++i) demos.push_back(sample_sequence(hmm, config.L, demo_rng).obs);

    RegressionProblem problem = problem_from_demos(demos, config.p, config.L, config.m);
    const Matrix gram = matmul_nt(problem.Z, problem.Z);
    const SymmetricEigen gram_eig = jacobi_eigen(gram);
    report.lambda_min = gram_eig.values.front() / config.n;
    report.lambda_max = gram_eig.values.back() / config.n;
    if (gram_eig.values.front() <= 1e-10 * static_cast<double>(config.n))
        problem.ridge = detail::ridge_fallback(gram);
    report.ridge_used = problem.ridge;

    const Matrix w_closed = least_squares(problem);
    report.lr_used = config.lr > 0.0 ? config.lr : 1.0 / (2.0 * gram_eig.values.back());
    const Matrix w_gd = (config.T == 0) ? Matrix(w_closed.rows(), w_closed.cols())
                                        : gd_reference(problem, config.T, report.lr_used).final();

    // population linear reference, fitted on an independent large draw
    const int R = config.L - config.m;
    const int q = (config.m == 1) ? config.p : layout.pm();
    Matrix s_oz(static_cast<std::size_t>(q), static_cast<std::size_t>(config.p * R));
    Matrix s_zz(static_cast<std::size_t>(config.p * R), static_cast<std::size_t>(config.p * R));
    {
        Rng pop_rng = Rng::substream(config.seed, detail::kPopStream);
        for (int i = 0; i < config.pop_samples; ++i) {
            const auto seq = sample_sequence(hmm, config.L, pop_rng).obs;
            int label;
            if (config.m == 1) {
                label = seq.back();
            } else {
                const std::span<const int> tail(seq.data() + R, static_cast<std::size_t>(config.m));
                label = vec_index(tail, config.p);
            }
            const Vector z = stack_window_recent_first({seq.data(), static_cast<std::size_t>(R)}, config.p);
            for (std::size_t a = 0; a < z.size(); ++a) {
                if (z[a] == 0.0) continue;
                s_oz(static_cast<std::size_t>(label), a) += 1.0;
                for (std::size_t b = 0; b < z.size(); ++b) s_zz(a, b) += z[a] * z[b];
            }
        }
    }
    double pop_ridge = 0.0;
    {
        const SymmetricEigen pop_eig = jacobi_eigen(s_zz);
        if (pop_eig.values.front() <= 1e-10 * static_cast<double>(config.pop_samples))
            pop_ridge = detail::ridge_fallback(s_zz);
    }
    const Matrix w_pop = least_squares_from_moments(s_oz, s_zz, pop_ridge,
                                                    static_cast<std::size_t>(config.pop_samples)).w;

    // assembled stack
    std::optional<AssembledStack> assembled;
    if (config.eval_stack && config.T >= 1) {
        ConstructionConfig ccfg;
        ccfg.layout = layout;
        ccfg.hardmax = config.hardmax;
        ccfg.beta1 = config.beta1;
        if (config.beta2 > 0.0) ccfg.beta2 = config.beta2;
        ccfg.T = config.T;
        ccfg.lr = report.lr_used;
        assembled = assemble_stack(ccfg);
        report.layer_count = assembled->attention_layers;
        report.stack_evaluated = true;
    }

    const MemoryModel memory = make_memory_model(hmm, config.L - 1, config.m);
    const int win = memory.window_len();
    const ReadOutMode mode = (config.m == 1) ? ReadOutMode::standard : ReadOutMode::extended;

    detail::Accumulator a1, a2, a2d, a3, astack, atotal;
    Rng test_rng = Rng::substream(config.seed, detail::kTestStream);
    for (int t = 0; t < config.num_mc; ++t) {
        const auto seq = sample_sequence(hmm, config.k - 1, test_rng);
        const std::span<const int> history(seq.obs);

        const Vector exact = (config.m == 1) ? conditional_next(hmm, history)
                                             : exact_m_step(hmm, history, config.m);
        const auto window = history.subspan(history.size() - static_cast<std::size_t>(win));
        const Vector p_l = (config.m == 1) ? l_memory_conditional(memory, window)
                                           : m_step_conditional(memory, window);
        const Vector z_test = stack_window_recent_first(
            history.subspan(history.size() - static_cast<std::size_t>(R)), config.p);

        const Vector pred_closed = matvec(w_closed, z_test);
        const Vector pred_pop = matvec(w_pop, z_test);
        const Vector pred_gd = matvec(w_gd, z_test);

        a1.add(l1_dist(exact, p_l));
        a2.add(l1_dist(pred_pop, pred_closed));
        a2d.add(l1_dist(p_l, pred_closed));
        a3.add(l1_dist(pred_closed, pred_gd));

        if (assembled) {
            const ContextMatrix ctx = build_context(demos, seq.obs, layout);
            const Matrix out = forward(ctx.data, assembled->stack);
            const Vector readout = read_out(out, layout, mode);
            astack.add(l1_dist(pred_gd, readout));
            atotal.add(l1_dist(exact, readout));
        }
    }

    report.eps1 = a1.stat();
    report.eps2 = a2.stat();
    report.eps2_direct = a2d.stat();
    report.eps3 = a3.stat();
    report.eps_stack = astack.stat();
    report.total = atotal.stat();

    if (report.stack_evaluated) {
        const double bound = report.eps1.mean + report.eps2_direct.mean + report.eps3.mean +
                             report.eps_stack.mean +
                             3.0 * (report.eps1.se + report.eps2_direct.se + report.eps3.se +
                                    report.eps_stack.se + report.total.se) +
                             1e-9;
        if (report.total.mean > bound)
            throw std::logic_error("measure_errors: triangle sanity violated (implementation bug)");
    }
    return report;
}

struct SweepGrid {
    std::vector<int> n_values;
    std::vector<int> L_values;
    std::vector<int> T_values;
    std::vector<int> k_values;

    void validate() const {
        if (n_values.empty() || L_values.empty() || T_values.empty() || k_values.empty())
            throw DimensionError("SweepGrid: all dimension lists must be nonempty");
    }
};

inline std::string csv_header(std::uint64_t seed) {
    std::ostringstream os;
    os << "# hmmicl_sweep schema=" << kSweepSchemaVersion << " version=" << kRepoVersion
       << " generator=" << kGeneratorName << " seed=" << seed << "\n";
    os << "n,L,k,T,p,m,K,d,hardmax,beta1,lr,num_mc,seed,eps1,eps1_se,eps2,eps2_se,"
          "eps2_direct,eps2_direct_se,eps3,eps3_se,eps_stack,eps_stack_se,total,total_se,"
          "lambda_min,lambda_max,ridge,layer_count,status\n";
    return os.str();
}

inline std::string csv_row(const ErrorReport& r) {
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::string status = r.status;
    for (char& ch : status)
        if (ch == ',' || ch == '\n') ch = ';';
    const ExperimentConfig& c = r.config;
    std::ostringstream os;
    os << c.n << ',' << c.L << ',' << c.k << ',' << c.T << ',' << c.p << ',' << c.m << ',' << c.K
       << ',' << c.d << ',' << (c.hardmax ? 1 : 0) << ',' << fmt(c.beta1) << ',' << fmt(r.lr_used)
       << ',' << c.num_mc << ',' << c.seed << ',' << fmt(r.eps1.mean) << ',' << fmt(r.eps1.se)
       << ',' << fmt(r.eps2.mean) << ',' << fmt(r.eps2.se) << ',' << fmt(r.eps2_direct.mean) << ','
       << fmt(r.eps2_direct.se) << ',' << fmt(r.eps3.mean) << ',' << fmt(r.eps3.se) << ','
       << fmt(r.eps_stack.mean) << ',' << fmt(r.eps_stack.se) << ',' << fmt(r.total.mean) << ','
       << fmt(r.total.se) << ',' << fmt(r.lambda_min) << ',' << fmt(r.lambda_max) << ','
       << fmt(r.ridge_used) << ',' << r.layer_count << ',' << status << '\n';
    return os.str();
}

// Cross product of the grid lists; per-cell failures are recorded in the
// status column and the sweep continues. Cells share the config seed, so
// sampling streams are common random numbers across cells.
inline std::vector<ErrorReport> sweep(const SweepGrid& grid, const ExperimentConfig& base) {
    grid.validate();
    std::vector<ErrorReport> reports;
    for (int n : grid.n_values)
        for (int L : grid.L_values)
            for (int T : grid.T_values)
                for (int k : grid.k_values) {
                    ExperimentConfig cell = base;
                    cell.n = n;
                    cell.L = L;
                    cell.T = T;
                    cell.k = k;
                    try {
                        reports.push_back(measure_errors(cell));
                    } catch (const std::exception& e) {
                        ErrorReport failed;
                        failed.config = cell;
                        failed.seed = cell.seed;
                        failed.status = std::string("error: ") + e.what();
                        reports.push_back(std::move(failed));
                    }
                }
    return reports;
}

inline void write_sweep_csv(const std::vector<ErrorReport>& reports, std::uint64_t seed,
                            const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_sweep_csv: cannot open " + path);
    f << csv_header(seed);
    for (const auto& r : reports) f << csv_row(r);
}

} // namespace hmmicl
