#pragma once

#include <string>
#include <vector>

#include "byzfed/harness.hpp"

namespace byzfed {

// Packaged desk-scale experiment configurations, one per study in the
// results section. Smaller networks and replica counts than the full-scale
// study, same parameter regimes and the same qualitative shapes.

inline ExperimentPlan preset_base() {
    ExperimentPlan p;
    p.net.clients = 30;
    p.net.dim = 5;
    p.net.shared = 1;
    p.net.round_size = 3;
    p.net.stepsize = 0.15;
    p.iterations = 3000;
    p.replicas = 40;
    p.window = 200;
    p.seed = 1;
    return p;
}

inline void mark_byzantine(ExperimentPlan& p, int count) {
    p.net.client_specs.resize(p.net.clients);
    for (int k = 0; k < p.net.clients; ++k) p.net.client_specs[k].byzantine = k < count;
}

// Returns the plans a preset runs (one per algorithm curve).
inline std::vector<ExperimentPlan> preset_plans(const std::string& name) {
    std::vector<ExperimentPlan> out;
    if (name == "fig1") {
        // steady-state test MSE vs number of Byzantine clients, three
        // algorithms at the full network scale of the study
        ExperimentPlan p = preset_base();
        p.net.clients = 100;
        p.net.round_size = 5;
        p.net.attack_prob = 1.0;
        p.net.attack_var = 0.25;
        p.replicas = 20;
        p.sweep = SweepAxis{"byzantine_count", {0, 5, 15, 30}};
        p.algorithm = Algorithm::kPsoFed;
        out.push_back(p);
        p.algorithm = Algorithm::kOnlineFed;
        out.push_back(p);
        p.algorithm = Algorithm::kSignSgd;
        p.net.stepsize = 0.08;
        out.push_back(p);
    } else if (name == "fig2") {
        // test MSE vs number of shared entries under attack
        ExperimentPlan p = preset_base();
        mark_byzantine(p, 3);
        p.net.attack_prob = 0.2;
        p.net.attack_var = 0.5;
        p.sweep = SweepAxis{"shared_entries", {1, 2, 3, 4, 5}};
        out.push_back(p);
    } else if (name == "fig3") {
        // network MSE vs attack strength
        ExperimentPlan p = preset_base();
        mark_byzantine(p, 3);
        p.net.attack_prob = 0.2;
        p.sweep = SweepAxis{"attack_variance", {0.0, 0.25, 0.5, 0.75, 1.0}};
        out.push_back(p);
    } else if (name == "fig4" || name == "fig5") {
        // test MSE vs attack probability; fig4 shares one entry, fig5 all five
        ExperimentPlan p = preset_base();
        mark_byzantine(p, 3);
        p.net.attack_var = 0.25;
        p.net.shared = name == "fig4" ? 1 : 5;
        p.sweep = SweepAxis{"attack_probability", {0.2, 0.4, 0.6, 0.8, 1.0}};
        out.push_back(p);
    } else if (name == "fig6" || name == "fig7") {
        // network MSE vs stepsize under attack; fig7 doubles the strength
        ExperimentPlan p = preset_base();
        mark_byzantine(p, 3);
        p.net.attack_prob = 0.25;
        p.net.attack_var = name == "fig6" ? 0.25 : 0.5;
        p.iterations = 4000;
        p.sweep = SweepAxis{"stepsize",
                            {0.01, 0.02, 0.03, 0.045, 0.06, 0.08, 0.10, 0.125, 0.15, 0.18}};
        out.push_back(p);
    } else if (name == "fig8") {
        // stepsize sweep with the small-stepsize approximation in the
        // theory columns
        ExperimentPlan p = preset_base();
        mark_byzantine(p, 6);
        p.net.attack_prob = 0.25;
        p.net.attack_var = 0.5;
        p.iterations = 4000;
        p.small_step_approx = true;
        p.sweep = SweepAxis{"stepsize",
                            {0.01, 0.02, 0.03, 0.045, 0.06, 0.08, 0.10, 0.125, 0.15, 0.18}};
        out.push_back(p);
    } else if (name == "fig9") {
        // attack and gradient-noise MSE terms vs number of shared entries
        ExperimentPlan p = preset_base();
        mark_byzantine(p, 3);
        p.net.attack_prob = 0.2;
        p.net.attack_var = 0.5;
        p.sweep = SweepAxis{"shared_entries", {1, 2, 3, 4, 5}};
        out.push_back(p);
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected fig1..fig9)");
    }
    return out;
}

}  // namespace byzfed
