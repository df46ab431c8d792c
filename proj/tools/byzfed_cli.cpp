#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "byzfed/config.hpp"
#include "byzfed/csv.hpp"
#include "byzfed/presets.hpp"
#include "byzfed/report.hpp"

namespace {

using namespace byzfed;

struct CommonOpts {
    std::string config_path;
    std::string out_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> replicas;
    std::optional<int> iters;
    std::optional<int> neumann_j;
    bool small_step = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool config_required) {
    auto* c = cmd->add_option("--config", o.config_path, "experiment config file");
    if (config_required) c->required();
    cmd->add_option("--out", o.out_path, "output CSV path");
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_option("--replicas", o.replicas, "override replica count");
    cmd->add_option("--iters", o.iters, "override iteration count");
    cmd->add_option("--neumann-j", o.neumann_j, "series order for the optimal stepsize");
    cmd->add_flag("--small-step-approx", o.small_step,
                  "drop the quadratic stepsize term in the theory predictions");
}

ExperimentPlan load_plan(const CommonOpts& o) {
    ExperimentPlan plan = o.config_path.empty() ? ExperimentPlan{} : parse_config(o.config_path);
    if (o.seed) plan.seed = *o.seed;
    if (o.replicas) plan.replicas = *o.replicas;
    if (o.iters) plan.iterations = *o.iters;
    if (o.neumann_j) plan.series_terms = *o.neumann_j;
    if (o.small_step) plan.small_step_approx = true;
    plan.validate();
    return plan;
}

void print_network(const NetworkSpec& net) {
    std::cout << "network: K=" << net.clients << " D=" << net.dim << " M=" << net.shared
              << " round_size=" << net.round_size << " stepsize=" << format_sig9(net.stepsize)
              << " mask_mode=" << to_string(net.mask_mode) << "\n";
    std::cout << "attack: byzantine=" << net.byzantine_count()
              << " p_a=" << format_sig9(net.attack_prob)
              << " sigma_B^2=" << format_sig9(net.attack_var) << "\n";
    std::cout << "input_variances =";
    for (const auto& c : net.client_specs) std::cout << " " << format_sig9(c.input_variance);
    std::cout << "\nnoise_variances =";
    for (const auto& c : net.client_specs) std::cout << " " << format_sig9(c.noise_variance);
    std::cout << "\n";
}

int cmd_simulate(const CommonOpts& o) {
    ExperimentPlan plan = load_plan(o);
    plan.sweep.reset();
    const NetworkSpec net = resolve_network(plan);
    print_network(net);
    RunMetrics m = run_experiment(plan);
    std::cout << "algorithm = " << to_string(plan.algorithm) << "\n"
              << "replicas = " << m.replicas_done
              << " (diverged: " << m.replicas_diverged << ")\n"
              << "steady test MSE   = " << format_sig9(m.steady_test_mse)
              << " (se " << format_sig9(m.steady_test_mse_se) << ")\n"
              << "network MSE       = " << format_sig9(m.network_mse)
              << " (se " << format_sig9(m.network_mse_se) << ")\n";
    if (!o.out_path.empty()) {
        std::vector<CsvRow> rows{to_csv_row(plan, "", std::nullopt, m, std::nullopt)};
        write_results_csv(o.out_path, rows);
        std::cout << "wrote " << o.out_path << "\n";
    }
    return 0;
}

int cmd_theory(const CommonOpts& o) {
    ExperimentPlan plan = load_plan(o);
    const NetworkSpec net = resolve_network(plan);
    print_network(net);
    const MomentBundle bundle = build_bundle(theory_view(
        plan.algorithm == Algorithm::kOnlineFed
            ? [&] { NetworkSpec v = net; v.shared = v.dim; return v; }()
            : net));
    std::cout << "mean stability bound        = " << format_sig9(mean_stability_bound(bundle.spec))
              << "\n";
    std::cout << "mean-square stability bound = "
              << format_sig9(mean_square_stability_bound(bundle)) << "\n";
    const MseDecomposition mse = steady_state_mse(bundle, net.stepsize, plan.small_step_approx);
    std::cout << "steady-state MSE at mu=" << format_sig9(net.stepsize) << ":\n"
              << "  e_phi   = " << format_sig9(mse.e_phi) << "\n"
              << "  e_omega = " << format_sig9(mse.e_omega) << "\n"
              << "  e_theta = " << format_sig9(mse.e_theta) << "\n"
              << "  total   = " << format_sig9(mse.total) << "\n";
    return 0;
}

int cmd_stepsize(const CommonOpts& o) {
    ExperimentPlan plan = load_plan(o);
    const NetworkSpec net = resolve_network(plan);
    print_network(net);
    const MomentBundle bundle = build_bundle(theory_view(net));
    std::cout << "mean stability bound        = " << format_sig9(mean_stability_bound(bundle.spec))
              << "\n"
              << "mean-square stability bound = "
              << format_sig9(mean_square_stability_bound(bundle)) << "\n"
              << "optimal stepsize mu* = "
              << format_sig9(optimal_stepsize(bundle, plan.series_terms)) << "\n";
    return 0;
}

int cmd_sweep(const CommonOpts& o) {
    ExperimentPlan plan = load_plan(o);
    if (!plan.sweep) {
        std::cerr << "error: config has no sweep axis ([experiment] sweep_parameter)\n";
        return 1;
    }
    const std::string param = plan.sweep->parameter;
    std::vector<CsvRow> rows;
    for (const SweepRow& row : run_sweep(plan)) {
        rows.push_back(to_csv_row(plan, param, row.value, row.sim, row.theory));
        std::cout << param << "=" << format_sig9(row.value)
                  << " sim_test_mse=" << format_sig9(row.sim.steady_test_mse)
                  << " sim_network_mse=" << format_sig9(row.sim.network_mse);
        if (row.theory) std::cout << " theory_total=" << format_sig9(row.theory->mse.total);
        std::cout << "\n";
    }
    const std::string out = o.out_path.empty() ? "sweep.csv" : o.out_path;
    write_results_csv(out, rows);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_preset(const std::string& name, const CommonOpts& o) {
    std::vector<CsvRow> rows;
    for (ExperimentPlan plan : preset_plans(name)) {
        if (o.seed) plan.seed = *o.seed;
        if (o.replicas) plan.replicas = *o.replicas;
        if (o.iters) plan.iterations = *o.iters;
        if (o.neumann_j) plan.series_terms = *o.neumann_j;
        if (o.small_step) plan.small_step_approx = true;
        const std::string param = plan.sweep->parameter;
        for (const SweepRow& row : run_sweep(plan)) {
            rows.push_back(to_csv_row(plan, param, row.value, row.sim, row.theory));
            std::cout << to_string(plan.algorithm) << " " << param << "="
                      << format_sig9(row.value)
                      << " sim_test_mse=" << format_sig9(row.sim.steady_test_mse) << "\n";
        }
    }
    const std::string out = o.out_path.empty() ? name + ".csv" : o.out_path;
    write_results_csv(out, rows);
    std::cout << "wrote " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"partial-sharing online federated learning under model poisoning:\n"
                 "Monte-Carlo simulator and closed-form steady-state analysis"};
    app.require_subcommand(1);

    CommonOpts sim_o, th_o, sw_o, st_o, pr_o;
    auto* sim = app.add_subcommand("simulate", "run the Monte-Carlo simulation only");
    add_common(sim, sim_o, false);
    auto* th = app.add_subcommand("theory", "print stability bounds and the predicted MSE split");
    add_common(th, th_o, false);
    auto* sw = app.add_subcommand("sweep", "run the configured parameter sweep, write a CSV");
    add_common(sw, sw_o, true);
    auto* st = app.add_subcommand("stepsize", "print the optimal stepsize and both bounds");
    add_common(st, st_o, false);
    auto* pr = app.add_subcommand("preset", "run a packaged figure configuration");
    std::string preset_name;
    pr->add_option("name", preset_name, "fig1..fig9")->required();
    add_common(pr, pr_o, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(sim_o);
        if (th->parsed()) return cmd_theory(th_o);
        if (sw->parsed()) return cmd_sweep(sw_o);
        if (st->parsed()) return cmd_stepsize(st_o);
        if (pr->parsed()) return cmd_preset(preset_name, pr_o);
    } catch (const byzfed::InstabilityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
