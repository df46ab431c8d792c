#pragma once

#include <optional>
#include <string>
#include <vector>

#include "byzfed/csv.hpp"
#include "byzfed/harness.hpp"
#include "byzfed/theory.hpp"

namespace byzfed {

// Predictions attached to a simulated experiment when the closed-form path
// supports its configuration.
struct TheoryColumns {
    MseDecomposition mse;
    double mu_max_mean = 0.0;
    double mu_max_ms = 0.0;
    double mu_star = 0.0;
};

// The analysis covers the partial-sharing recursions under the uniform mask
// law; sign compression has no closed form here. Size guard keeps the pair
// grid within sparse reach.
inline bool theory_supported(const ExperimentPlan& plan, const NetworkSpec& net) {
    if (plan.algorithm == Algorithm::kSignSgd) return false;
    if (net.mask_mode != MaskMode::kUniformRandom) return false;
    const long pairs = static_cast<long>(net.clients + 1) * (net.clients + 1);
    return pairs * net.dim * net.dim <= 400000;
}

inline TheoryColumns theory_columns(const ExperimentPlan& plan, const NetworkSpec& net) {
    NetworkSpec view = net;
    if (plan.algorithm == Algorithm::kOnlineFed) view.shared = view.dim;
    const MomentBundle bundle = build_bundle(theory_view(view));
    TheoryColumns t;
    t.mu_max_mean = mean_stability_bound(bundle.spec);
    t.mu_max_ms = mean_square_stability_bound(bundle);
    t.mse = steady_state_mse(bundle, view.stepsize, plan.small_step_approx);
    t.mu_star = optimal_stepsize(bundle, plan.series_terms);
    return t;
}

struct SweepRow {
    double value = 0.0;
    RunMetrics sim;
    std::optional<TheoryColumns> theory;
};

// One experiment per sweep value. All points share the plan seed, so the
// replica randomness is common across values and differences between points
// reflect the swept parameter, not resampling noise. Theory predictions are
// attached where supported; a failure to predict one point (instability at
// a large swept stepsize, say) leaves that point's prediction absent.
inline std::vector<SweepRow> run_sweep(const ExperimentPlan& plan) {
    if (!plan.sweep) throw ConfigError("run_sweep: plan has no sweep axis");
    std::vector<SweepRow> rows;
    for (double value : plan.sweep->values) {
        ExperimentPlan point = apply_sweep_value(plan, plan.sweep->parameter, value);
        SweepRow row;
        row.value = value;
        row.sim = run_experiment(point);
        const NetworkSpec net = resolve_network(point);
        if (theory_supported(point, net)) {
            try {
                row.theory = theory_columns(point, net);
            } catch (const InstabilityError&) {
                row.theory.reset();
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline CsvRow to_csv_row(const ExperimentPlan& plan, const std::string& sweep_param,
                         std::optional<double> sweep_value, const RunMetrics& sim,
                         const std::optional<TheoryColumns>& theory) {
    CsvRow r;
    r.sweep_param = sweep_param;
    r.sweep_value = sweep_value;
    r.algorithm = to_string(plan.algorithm);
    r.sim_test_mse = sim.steady_test_mse;
    r.sim_network_mse = sim.network_mse;
    if (theory) {
        r.theory_e_phi = theory->mse.e_phi;
        r.theory_e_omega = theory->mse.e_omega;
        r.theory_e_theta = theory->mse.e_theta;
        r.theory_total = theory->mse.total;
        r.mu_max_mean = theory->mu_max_mean;
        r.mu_max_ms = theory->mu_max_ms;
        r.mu_star = theory->mu_star;
    }
    r.replicas = plan.replicas;
    r.seed = plan.seed;
    return r;
}

}  // namespace byzfed
