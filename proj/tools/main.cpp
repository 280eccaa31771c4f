// hmmicl command line: generate tasks, assemble stacks, verify them against
// the oracles, and run error-decomposition experiments.
//
// Subcommands: gen-hmm, gen-mixture, build-stack, verify, measure, sweep.
// Experiment subcommands read a declarative JSON config (see the README) with
// flag overrides on top. Exit code 0 only if every requested check passed.

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hmmicl/harness.hpp"
#include "hmmicl/json_io.hpp"

using namespace hmmicl;

namespace {

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    if (j.contains("task")) {
        const auto& t = j.at("task");
        if (t.contains("K")) cfg.K = t.at("K").get<int>();
        if (t.contains("p")) cfg.p = t.at("p").get<int>();
        if (t.contains("d")) cfg.d = t.at("d").get<int>();
        if (t.contains("concentration")) cfg.concentration = t.at("concentration").get<double>();
        if (t.contains("hmm_seed")) cfg.hmm_seed = t.at("hmm_seed").get<std::uint64_t>();
    }
    if (j.contains("layout")) {
        const auto& l = j.at("layout");
        if (l.contains("n")) cfg.n = l.at("n").get<int>();
        if (l.contains("L")) cfg.L = l.at("L").get<int>();
        if (l.contains("k")) cfg.k = l.at("k").get<int>();
        if (l.contains("m")) cfg.m = l.at("m").get<int>();
    }
    if (j.contains("construction")) {
        const auto& c = j.at("construction");
        if (c.contains("hardmax")) cfg.hardmax = c.at("hardmax").get<bool>();
        if (c.contains("beta1")) cfg.beta1 = c.at("beta1").get<double>();
        if (c.contains("beta2")) cfg.beta2 = c.at("beta2").get<double>();
        if (c.contains("T")) cfg.T = c.at("T").get<int>();
        if (c.contains("lr")) cfg.lr = c.at("lr").get<double>();
    }
    if (j.contains("measure")) {
        const auto& m = j.at("measure");
        if (m.contains("num_mc")) cfg.num_mc = m.at("num_mc").get<int>();
        if (m.contains("pop_samples")) cfg.pop_samples = m.at("pop_samples").get<int>();
        if (m.contains("alpha_floor")) cfg.alpha_floor = m.at("alpha_floor").get<double>();
        if (m.contains("eval_stack")) cfg.eval_stack = m.at("eval_stack").get<bool>();
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

json report_to_json(const ErrorReport& r) {
    auto stat = [](const ErrorStat& s) { return json{{"mean", s.mean}, {"se", s.se}}; };
    json j;
    j["eps1"] = stat(r.eps1);
    j["eps2"] = stat(r.eps2);
    j["eps2_direct"] = stat(r.eps2_direct);
    j["eps3"] = stat(r.eps3);
    j["eps_stack"] = stat(r.eps_stack);
    j["total"] = stat(r.total);
    j["lambda_min"] = r.lambda_min;
    j["lambda_max"] = r.lambda_max;
    j["ridge_used"] = r.ridge_used;
    j["lr_used"] = r.lr_used;
    j["layer_count"] = r.layer_count;
    j["stack_evaluated"] = r.stack_evaluated;
    j["seed"] = r.seed;
    j["generator_name"] = r.generator_name;
    j["status"] = r.status;
    const ExperimentConfig& c = r.config;
    j["config"] = {{"K", c.K},
                   {"p", c.p},
                   {"d", c.d},
                   {"concentration", c.concentration},
                   {"hmm_seed", c.hmm_seed},
                   {"n", c.n},
                   {"L", c.L},
                   {"k", c.k},
                   {"m", c.m},
                   {"hardmax", c.hardmax},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"T", c.T},
                   {"lr", c.lr},
                   {"num_mc", c.num_mc},
                   {"pop_samples", c.pop_samples},
                   {"alpha_floor", c.alpha_floor}};
    return j;
}

struct PreparedInstance {
    ContextLayout layout;
    std::vector<std::vector<int>> demos;
    std::vector<int> prefix;
    ContextMatrix ctx;
    RegressionProblem problem;
    ConstructionConfig ccfg;
};

PreparedInstance prepare_instance(const ExperimentConfig& cfg) {
    cfg.validate();
    PreparedInstance inst{cfg.make_layout(), {}, {}, {}, {}, {}};
    const auto hmm = cfg.make_task();
    Rng demo_rng = Rng::substream(cfg.seed, 1);
    for (int i = 0; i < cfg.n; ++i) inst.demos.push_back(sample_sequence(hmm, cfg.L, demo_rng).obs);
    Rng test_rng = Rng::substream(cfg.seed, 2);
    inst.prefix = sample_sequence(hmm, cfg.k - 1, test_rng).obs;
    inst.ctx = build_context(inst.demos, inst.prefix, inst.layout);
    inst.problem = problem_from_demos(inst.demos, cfg.p, cfg.L, cfg.m);

    inst.ccfg.layout = inst.layout;
    inst.ccfg.hardmax = cfg.hardmax;
    inst.ccfg.beta1 = cfg.beta1;
    if (cfg.beta2 > 0.0) inst.ccfg.beta2 = cfg.beta2;
    inst.ccfg.T = std::max(cfg.T, 1);
    if (cfg.lr > 0.0) {
        inst.ccfg.lr = cfg.lr;
    } else {
        const auto eig = jacobi_eigen(matmul_nt(inst.problem.Z, inst.problem.Z));
        inst.ccfg.lr = 1.0 / (2.0 * eig.values.back());
    }
    return inst;
}

json feature_map_to_json(const FeatureMap& fm) {
    json j;
    j["p"] = fm.p;
    j["L"] = fm.L;
    j["m"] = fm.m;
    j["window_blocks"] = fm.R;
    j["label_rows"] = fm.q_rows;
    j["window_dim"] = fm.win_dim;
    j["width"] = fm.D;
    json z = json::array();
    for (int r = 1; r <= fm.R; ++r) z.push_back(fm.z_block(r));
    j["z_block_starts"] = z;
    json f = json::array();
    for (int s = 1; s <= fm.m; ++s) f.push_back(fm.f_block(s));
    j["f_block_starts"] = f;
    j["vec_start"] = fm.vec_start;
    j["w_start"] = fm.w_start;
    j["out_start"] = fm.out_start;
    j["ones_col"] = fm.ones_col;
    j["ind_col"] = fm.ind_col;
    return j;
}

// Oracle-equivalence checks on a prepared instance; prints one line per check.
int run_verify(const ExperimentConfig& cfg) {
    const PreparedInstance inst = prepare_instance(cfg);
    const auto asmb = assemble_stack(inst.ccfg);
    const auto trace = forward_trace(inst.ctx.data, asmb.stack);
    const FeatureMap& fm = asmb.feature_map;
    int failures = 0;
    auto line = [&](const char* name, bool pass, double value) {
        std::printf("%-34s %s  (max abs %.3e)\n", name, pass ? "PASS" : "FAIL", value);
        if (!pass) ++failures;
    };

    // shifted-copy blocks
    {
        double worst = 0.0;
        const Matrix& dec = trace[static_cast<std::size_t>(asmb.copy_layers)];
        const int width = cfg.p + 3;
        for (int r = 1; r <= fm.R; ++r)
            for (std::size_t t = 0; t < dec.rows(); ++t) {
                const std::size_t src = (t >= static_cast<std::size_t>(r)) ? t - static_cast<std::size_t>(r) : 0;
                for (int c = 0; c < width; ++c)
                    worst = std::max(worst, std::abs(dec(t, static_cast<std::size_t>(fm.z_block(r) + c)) -
                                                     inst.ctx.data(src, static_cast<std::size_t>(c))));
            }
        for (int s = 1; s <= fm.m; ++s)
            for (std::size_t t = 0; t < dec.rows(); ++t) {
                const std::size_t src = std::min(t + static_cast<std::size_t>(s), dec.rows() - 1);
                for (int c = 0; c < width; ++c)
                    worst = std::max(worst, std::abs(dec(t, static_cast<std::size_t>(fm.f_block(s) + c)) -
                                                     inst.ctx.data(src, static_cast<std::size_t>(c))));
            }
        line("decoupled blocks vs shifted copy", !cfg.hardmax || worst == 0.0, worst);
    }

    // gradient iterates
    const GdTrace oracle = gd_reference(inst.problem, inst.ccfg.T, inst.ccfg.lr_resolved());
    {
        double worst = 0.0;
        for (int t = 0; t <= inst.ccfg.T; ++t) {
            const Matrix& h =
                trace[static_cast<std::size_t>(asmb.copy_layers + t + (asmb.has_encoder ? 1 : 0))];
            const std::size_t last = h.rows() - 1;
            for (int j = 1; j <= fm.q_rows; ++j)
                for (int c = 0; c < fm.win_dim; ++c)
                    worst = std::max(worst,
                                     std::abs(h(last, static_cast<std::size_t>(fm.w_row(j) + c)) -
                                              oracle.iterates[static_cast<std::size_t>(t)](
                                                  static_cast<std::size_t>(j - 1), static_cast<std::size_t>(c))));
        }
        line("W iterates vs gd oracle", !cfg.hardmax || worst < 1e-9, worst);
    }

    // read-out
    {
        const ReadOutMode mode = (cfg.m == 1) ? ReadOutMode::standard : ReadOutMode::extended;
        const Vector got = read_out(trace.back(), inst.layout, mode);
        const Vector z = stack_window_recent_first(
            std::span<const int>(inst.prefix).subspan(inst.prefix.size() - static_cast<std::size_t>(fm.R)),
            cfg.p);
        const Vector want = matvec(oracle.final(), z);
        double worst = 0.0;
        for (std::size_t j = 0; j < got.size(); ++j) worst = std::max(worst, std::abs(got[j] - want[j]));
        line("read-out vs oracle prediction", !cfg.hardmax || worst < 1e-8, worst);
    }

    // m-step marginal consistency (extended mode only)
    if (cfg.m >= 2) {
        const auto hmm = cfg.make_task();
        Rng draws = Rng::substream(cfg.seed, 4);
        double worst = 0.0;
        for (int trial = 0; trial < 8; ++trial) {
            MemoryModel joint_model = make_memory_model(hmm, cfg.L - 1, cfg.m);
            const auto seq = sample_sequence(hmm, joint_model.window_len(), draws);
            const Vector joint = m_step_conditional(joint_model, seq.obs);
            MemoryModel single_model = make_memory_model(hmm, joint_model.window_len(), 1);
            const Vector single = l_memory_conditional(single_model, seq.obs);
            const int tail = ContextLayout::pow_int(cfg.p, cfg.m - 1);
            for (int a = 0; a < cfg.p; ++a) {
                double marg = 0.0;
                for (int b = 0; b < tail; ++b) marg += joint[static_cast<std::size_t>(a * tail + b)];
                worst = std::max(worst, std::abs(marg - single[static_cast<std::size_t>(a)]));
            }
        }
        line("m-step marginal consistency", worst < 1e-9, worst);
    }

    if (!cfg.hardmax)
        std::printf("note: softmax mode verifies shapes only; exactness checks need hardmax\n");
    return failures;
}

void print_report(const ErrorReport& r) {
    std::printf("eps1        = %.6g (se %.2g)\n", r.eps1.mean, r.eps1.se);
    std::printf("eps2        = %.6g (se %.2g)   [population-reference]\n", r.eps2.mean, r.eps2.se);
    std::printf("eps2_direct = %.6g (se %.2g)   [P_L vs closed form]\n", r.eps2_direct.mean,
                r.eps2_direct.se);
    std::printf("eps3        = %.6g (se %.2g)\n", r.eps3.mean, r.eps3.se);
    if (r.stack_evaluated) {
        std::printf("eps_stack   = %.6g (se %.2g)\n", r.eps_stack.mean, r.eps_stack.se);
        std::printf("total       = %.6g (se %.2g)\n", r.total.mean, r.total.se);
        std::printf("layers      = %d attention layers\n", r.layer_count);
    }
    std::printf("lambda(n^-1 Z Z^T) in [%.3g, %.3g], ridge = %.3g, lr = %.3g\n", r.lambda_min,
                r.lambda_max, r.ridge_used, r.lr_used);
    std::printf("seed = %llu, generator = %s, status = %s\n",
                static_cast<unsigned long long>(r.seed), r.generator_name.c_str(), r.status.c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"explicit-weight transformer construction for in-context HMM learning"};
    app.require_subcommand(1);

    // ---- gen-hmm
    auto* gen = app.add_subcommand("gen-hmm", "generate a low-rank HMM and write it as JSON");
    int gh_K = 8, gh_p = 4, gh_d = 2;
    double gh_conc = 1.0;
    std::uint64_t gh_seed = 0;
    std::string gh_out = "hmm.json";
    gen->add_option("--hidden", gh_K, "hidden states K");
    gen->add_option("--obs", gh_p, "observation symbols p");
    gen->add_option("--rank", gh_d, "transition rank d");
    gen->add_option("--concentration", gh_conc, "Dirichlet concentration");
    gen->add_option("--seed", gh_seed, "generator seed");
    gen->add_option("--out", gh_out, "output path");

    // ---- gen-mixture
    auto* mix = app.add_subcommand("gen-mixture", "generate a mixture of HMM tasks");
    MixtureConfig mix_cfg;
    std::string mix_out = "mixture.json";
    mix->add_option("--tasks", mix_cfg.num_tasks, "number of tasks");
    mix->add_option("--hidden", mix_cfg.hidden_per_task, "hidden states per task");
    mix->add_option("--vocab", mix_cfg.vocab, "shared vocabulary size");
    mix->add_option("--rank", mix_cfg.rank, "transition rank");
    mix->add_option("--concentration", mix_cfg.concentration, "Dirichlet concentration");
    mix->add_option("--seed", mix_cfg.seed, "generator seed");
    mix->add_option("--out", mix_out, "output path");

    // ---- shared experiment options
    std::string config_path, hmm_path;
    std::optional<int> ov_n, ov_L, ov_k, ov_T, ov_num_mc, ov_m;
    std::optional<double> ov_lr, ov_beta1;
    std::optional<std::uint64_t> ov_seed;
    std::optional<bool> ov_hardmax;
    auto add_experiment_flags = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--hmm", hmm_path, "load the task HMM from this JSON file");
        cmd->add_option("--n", ov_n, "override: demonstrations");
        cmd->add_option("--L", ov_L, "override: demo length");
        cmd->add_option("--k", ov_k, "override: test length");
        cmd->add_option("--m", ov_m, "override: prediction steps");
        cmd->add_option("--T", ov_T, "override: gradient layers");
        cmd->add_option("--lr", ov_lr, "override: learning rate (omit for spectral default)");
        cmd->add_option("--beta1", ov_beta1, "override: copy-layer inverse temperature");
        cmd->add_option("--num-mc", ov_num_mc, "override: Monte-Carlo samples");
        cmd->add_option("--seed", ov_seed, "override: experiment seed");
        cmd->add_flag("--hardmax,!--softmax", ov_hardmax, "copy-layer activation mode");
    };

    auto* build = app.add_subcommand("build-stack", "assemble the stack for a config");
    std::string dump_stack_path, trace_prefix;
    add_experiment_flags(build);
    build->add_option("--dump-stack", dump_stack_path, "write stack + feature map JSON here");
    build->add_option("--trace-layers", trace_prefix, "write every H^(l) as CSV with this prefix");

    auto* verify = app.add_subcommand("verify", "run the oracle-equivalence checks on a config");
    add_experiment_flags(verify);

    auto* measure = app.add_subcommand("measure", "measure the error decomposition for one config");
    std::string measure_json, measure_csv;
    add_experiment_flags(measure);
    measure->add_option("--json", measure_json, "write the report as JSON here");
    measure->add_option("--csv", measure_csv, "write a single-row CSV here");

    auto* sweep_cmd = app.add_subcommand("sweep", "run a grid of configs and emit CSV");
    std::string sweep_out = "sweep.csv";
    add_experiment_flags(sweep_cmd);
    sweep_cmd->add_option("--out", sweep_out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    auto load_config = [&]() {
        ExperimentConfig cfg;
        if (!config_path.empty()) cfg = config_from_json(read_json_file(config_path));
        if (!hmm_path.empty()) {
            cfg.task = hmm_from_json(read_json_file(hmm_path));
            cfg.K = cfg.task->num_hidden;
            cfg.p = cfg.task->num_obs;
            cfg.d = cfg.task->rank;
            cfg.hmm_seed = cfg.task->seed;
        }
        if (ov_n) cfg.n = *ov_n;
        if (ov_L) cfg.L = *ov_L;
        if (ov_k) cfg.k = *ov_k;
        if (ov_m) cfg.m = *ov_m;
        if (ov_T) cfg.T = *ov_T;
        if (ov_lr) cfg.lr = *ov_lr;
        if (ov_beta1) cfg.beta1 = *ov_beta1;
        if (ov_num_mc) cfg.num_mc = *ov_num_mc;
        if (ov_seed) cfg.seed = *ov_seed;
        if (ov_hardmax) cfg.hardmax = *ov_hardmax;
        return cfg;
    };

    try {
        if (gen->parsed()) {
            const auto hmm = new_low_rank_hmm(gh_K, gh_p, gh_d, gh_conc, gh_seed);
            write_json_file(hmm_to_json(hmm), gh_out);
            std::printf("wrote %s (K=%d p=%d d=%d seed=%llu)\n", gh_out.c_str(), gh_K, gh_p, gh_d,
                        static_cast<unsigned long long>(gh_seed));
            return 0;
        }
        if (mix->parsed()) {
            const auto mixture = new_mixture(mix_cfg);
            json j;
            j["num_tasks"] = mix_cfg.num_tasks;
            j["hidden_per_task"] = mix_cfg.hidden_per_task;
            j["vocab"] = mix_cfg.vocab;
            j["rank"] = mix_cfg.rank;
            j["concentration"] = mix_cfg.concentration;
            j["seed"] = mix_cfg.seed;
            j["generator_name"] = std::string(kGeneratorName);
            j["task_prior"] = mixture.prior;
            json tasks = json::array();
            for (const auto& t : mixture.tasks) tasks.push_back(hmm_to_json(t));
            j["tasks"] = std::move(tasks);
            write_json_file(j, mix_out);
            std::printf("wrote %s (%d tasks)\n", mix_out.c_str(), mix_cfg.num_tasks);
            return 0;
        }
        if (build->parsed()) {
            const ExperimentConfig cfg = load_config();
            const PreparedInstance inst = prepare_instance(cfg);
            const auto asmb = assemble_stack(inst.ccfg);
            std::printf("assembled %d attention layers (copy %d, encoder %d, gd %d, prediction 1)\n",
                        asmb.attention_layers, asmb.copy_layers, asmb.has_encoder ? 1 : 0, inst.ccfg.T);
            if (!dump_stack_path.empty()) {
                json j = stack_to_json(asmb.stack);
                j["feature_map"] = feature_map_to_json(asmb.feature_map);
                j["seed"] = cfg.seed;
                write_json_file(j, dump_stack_path);
                std::printf("stack written to %s\n", dump_stack_path.c_str());
            }
            if (!trace_prefix.empty()) {
                const auto trace = forward_trace(inst.ctx.data, asmb.stack);
                for (std::size_t l = 0; l < trace.size(); ++l) {
                    char path[512];
                    std::snprintf(path, sizeof(path), "%s_H%02zu.csv", trace_prefix.c_str(), l);
                    write_matrix_csv(trace[l], path);
                }
                std::printf("wrote %zu layer traces to %s_H*.csv\n", trace.size(), trace_prefix.c_str());
            }
            return 0;
        }
        if (verify->parsed()) {
            const int failures = run_verify(load_config());
            return failures == 0 ? 0 : 1;
        }
        if (measure->parsed()) {
            const auto report = measure_errors(load_config());
            print_report(report);
            if (!measure_json.empty()) write_json_file(report_to_json(report), measure_json);
            if (!measure_csv.empty()) {
                std::ofstream f(measure_csv);
                f << csv_header(report.seed) << csv_row(report);
            }
            return report.status == "ok" ? 0 : 1;
        }
        if (sweep_cmd->parsed()) {
            if (config_path.empty()) throw DimensionError("sweep requires --config with a grid section");
            const json j = read_json_file(config_path);
            ExperimentConfig base = config_from_json(j);
            if (ov_seed) base.seed = *ov_seed;
            if (ov_num_mc) base.num_mc = *ov_num_mc;
            if (!j.contains("grid")) throw DimensionError("sweep config is missing the grid section");
            const auto& g = j.at("grid");
            SweepGrid grid;
            grid.n_values = g.value("n", std::vector<int>{base.n});
            grid.L_values = g.value("L", std::vector<int>{base.L});
            grid.T_values = g.value("T", std::vector<int>{base.T});
            grid.k_values = g.value("k", std::vector<int>{base.k});
            const auto reports = sweep(grid, base);
            write_sweep_csv(reports, base.seed, sweep_out);
            int bad = 0;
            for (const auto& r : reports)
                if (r.status != "ok") ++bad;
            std::printf("wrote %zu rows to %s (%d failed cells)\n", reports.size(), sweep_out.c_str(), bad);
            return bad == 0 ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
