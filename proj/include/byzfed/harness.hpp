#pragma once

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "byzfed/data.hpp"
#include "byzfed/fed.hpp"
#include "byzfed/rng.hpp"
#include "byzfed/scheduling.hpp"
#include "byzfed/types.hpp"

namespace byzfed {

enum class Algorithm { kPsoFed, kOnlineFed, kSignSgd };

inline const char* to_string(Algorithm a) {
    switch (a) {
        case Algorithm::kPsoFed: return "psofed";
        case Algorithm::kOnlineFed: return "onlinefed";
        default: return "signsgd";
    }
}

struct SweepAxis {
    std::string parameter;
    std::vector<double> values;
};

// One experiment: network template, algorithm, replication settings and an
// optional sweep axis. Client variances marked random are resolved once per
// experiment from a dedicated stream so every replica (and every sweep
// point) sees the same network.
struct ExperimentPlan {
    NetworkSpec net;
    bool random_input_var = true;    // draw from U(0.2, 1.2)
    bool random_noise_var = true;    // draw from U(0.005, 0.025)
    Algorithm algorithm = Algorithm::kPsoFed;
    int iterations = 3000;
    int replicas = 100;
    int window = 200;
    int test_size = 50;
    std::uint64_t seed = 1;
    std::optional<SweepAxis> sweep;
    int series_terms = 5;            // truncation order for the stepsize formula
    bool small_step_approx = false;

    void validate() const {
        if (iterations < 1) throw ConfigError("iterations: must be >= 1");
        if (replicas < 1) throw ConfigError("replicas: must be >= 1");
        if (window < 1 || window > iterations)
            throw ConfigError("window: 1 <= window <= iterations violated");
        if (test_size < 1) throw ConfigError("test_size: must be >= 1");
        if (series_terms < 3) throw ConfigError("neumann_j: must be >= 3");
    }
};

// Fills in randomly drawn client variances and the default true model.
// Deterministic in the plan seed; independent of replica count and sweep.
inline NetworkSpec resolve_network(const ExperimentPlan& plan) {
    NetworkSpec net = plan.net;
    if (static_cast<int>(net.client_specs.size()) != net.clients)
        net.client_specs.resize(net.clients);
    RngStream vr = RngStream::derive(plan.seed, RngStream::kVariances);
    if (plan.random_input_var)
        for (auto& c : net.client_specs) c.input_variance = vr.uniform(0.2, 1.2);
    if (plan.random_noise_var)
        for (auto& c : net.client_specs) c.noise_variance = vr.uniform(0.005, 0.025);
    if (net.true_model.size() == 0)
        net.true_model = Vector::Constant(net.dim, 1.0 / std::sqrt(double(net.dim)));
    net.validate();
    return net;
}

struct ReplicaTrace {
    std::vector<double> test_trace;
    double network_mse = 0.0;
    bool diverged = false;
    long diverged_at = -1;
    Vector final_global;
};

constexpr double kDivergenceGuard = 1e12;

// Runs one replica of `plan.iterations` rounds. Deterministic in
// (seed, replica_index); all random draws come from streams derived from
// (seed, purpose, replica, client).
inline ReplicaTrace run_replica(const ExperimentPlan& plan, const NetworkSpec& net,
                                const TestSet& tests, int replica_index) {
    const int K = net.clients;
    const std::uint64_t rep = static_cast<std::uint64_t>(replica_index);
    RngStream select_rng = RngStream::derive(plan.seed, RngStream::kSelection, rep);
    std::vector<RngStream> sample_rngs, mask_rngs, attack_rngs;
    for (int k = 0; k < K; ++k) {
        sample_rngs.push_back(RngStream::derive(plan.seed, RngStream::kSamples, rep, k));
        mask_rngs.push_back(RngStream::derive(plan.seed, RngStream::kMasks, rep, k));
        attack_rngs.push_back(RngStream::derive(plan.seed, RngStream::kAttack, rep, k));
    }
    const AttackSpec attack = AttackSpec::from_network(net);
    const bool sign_mode = plan.algorithm == Algorithm::kSignSgd;
    const int effective_shared = plan.algorithm == Algorithm::kOnlineFed ? net.dim : net.shared;
    NetworkSpec run_net = net;
    run_net.shared = effective_shared;

    MaskScheduler masks(K, net.dim, effective_shared, net.mask_mode);
    FedState state = FedState::zeros(K, net.dim);

    ReplicaTrace out;
    out.test_trace.reserve(plan.iterations);
    // trailing-window error ring per client
    std::vector<std::vector<double>> err_ring(K, std::vector<double>(plan.window, 0.0));
    long ring_pos = 0;

    RoundSchedule sched;
    if (!sign_mode) sched.masks_now = masks.draw_all(mask_rngs);

    std::vector<DataSample> samples(K);
    for (long n = 0; n < plan.iterations; ++n) {
        sched.selected = draw_client_set(K, net.round_size, select_rng);
        for (int k = 0; k < K; ++k)
            samples[k] = generate_sample(net.client_specs[k], net.true_model, sample_rngs[k]);

        std::vector<double> errors;
        if (sign_mode) {
            errors = signsgd_round(state, run_net, sched.selected, samples, attack, attack_rngs);
        } else {
            sched.masks_next = masks.draw_all(mask_rngs);
            errors = psofed_round(state, run_net, sched, samples, attack, attack_rngs);
            sched.masks_now = std::move(sched.masks_next);
        }

        for (int k = 0; k < K; ++k) err_ring[k][ring_pos % plan.window] = errors[k];
        ring_pos++;

        const double mse = test_mse(state.global, tests);
        out.test_trace.push_back(mse);
        if (!std::isfinite(mse) || mse > kDivergenceGuard) {
            out.diverged = true;
            out.diverged_at = n;
            return out;
        }
    }
    // assemble trailing streams in chronological order for the estimator
    std::vector<std::vector<double>> trails(K);
    for (int k = 0; k < K; ++k) {
        trails[k].resize(plan.window);
        for (int t = 0; t < plan.window; ++t)
            trails[k][t] = err_ring[k][(ring_pos + t) % plan.window];
    }
    out.network_mse = network_mse(trails, plan.window);
    out.final_global = state.global;
    return out;
}

struct RunMetrics {
    std::vector<double> test_trace;  // replica-averaged
    double steady_test_mse = 0.0;    // trailing-window mean of the trace
    double steady_test_mse_se = 0.0;
    double network_mse = 0.0;        // replica mean of the per-replica estimator
    double network_mse_se = 0.0;
    Vector mean_final_global;
    int replicas_done = 0;
    int replicas_diverged = 0;
};

namespace detail {

inline int worker_count() {
    if (const char* env = std::getenv("BYZFED_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

// Order-fixed pairwise tree reduction; result does not depend on which
// thread produced which replica.
template <typename T, typename Add>
T tree_reduce(std::vector<T> items, Add add) {
    while (items.size() > 1) {
        std::vector<T> next;
        next.reserve((items.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < items.size(); i += 2)
            next.push_back(add(items[i], items[i + 1]));
        if (items.size() % 2 == 1) next.push_back(items.back());
        items = std::move(next);
    }
    return items.front();
}

inline double tree_sum(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    return tree_reduce(xs, [](double a, double b) { return a + b; });
}

}  // namespace detail

// Runs all replicas (in parallel when allowed) and reduces the metrics in a
// fixed order, so results are bit-identical for any worker count.
inline RunMetrics run_experiment(const ExperimentPlan& plan) {
    plan.validate();
    const NetworkSpec net = resolve_network(plan);
    RngStream test_rng = RngStream::derive(plan.seed, RngStream::kTestSet);
    const TestSet tests = make_test_set(net.true_model, plan.test_size, test_rng);

    std::vector<ReplicaTrace> reps(plan.replicas);
    const int workers = std::min(detail::worker_count(), plan.replicas);
    if (workers <= 1) {
        for (int r = 0; r < plan.replicas; ++r) reps[r] = run_replica(plan, net, tests, r);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (int r = w; r < plan.replicas; r += workers)
                    reps[r] = run_replica(plan, net, tests, r);
            });
        for (auto& t : pool) t.join();
    }

    RunMetrics m;
    std::vector<const ReplicaTrace*> ok;
    for (const auto& r : reps)
        if (r.diverged) m.replicas_diverged++; else ok.push_back(&r);
    m.replicas_done = static_cast<int>(ok.size());
    if (ok.empty())
        throw NumericError("run_experiment: every replica diverged");

    const double R = static_cast<double>(ok.size());
    m.test_trace.resize(plan.iterations);
    for (long n = 0; n < plan.iterations; ++n) {
        std::vector<double> col(ok.size());
        for (std::size_t i = 0; i < ok.size(); ++i) col[i] = ok[i]->test_trace[n];
        m.test_trace[n] = detail::tree_sum(col) / R;
    }
    {
        std::vector<double> tail(m.test_trace.end() - plan.window, m.test_trace.end());
        m.steady_test_mse = detail::tree_sum(tail) / plan.window;
        // replica spread of the per-replica trailing means
        std::vector<double> per_rep(ok.size());
        for (std::size_t i = 0; i < ok.size(); ++i) {
            std::vector<double> t(ok[i]->test_trace.end() - plan.window,
                                  ok[i]->test_trace.end());
            per_rep[i] = detail::tree_sum(t) / plan.window;
        }
        double mean = detail::tree_sum(per_rep) / R, var = 0.0;
        for (double v : per_rep) var += (v - mean) * (v - mean);
        m.steady_test_mse_se = ok.size() > 1 ? std::sqrt(var / (R - 1.0) / R) : 0.0;
    }
    {
        std::vector<double> nm(ok.size());
        for (std::size_t i = 0; i < ok.size(); ++i) nm[i] = ok[i]->network_mse;
        m.network_mse = detail::tree_sum(nm) / R;
        double var = 0.0;
        for (double v : nm) var += (v - m.network_mse) * (v - m.network_mse);
        m.network_mse_se = ok.size() > 1 ? std::sqrt(var / (R - 1.0) / R) : 0.0;
    }
    {
        std::vector<Vector> fg;
        fg.reserve(ok.size());
        for (const auto* r : ok) fg.push_back(r->final_global);
        m.mean_final_global =
            detail::tree_reduce(fg, [](const Vector& a, const Vector& b) { return Vector(a + b); }) / R;
    }
    return m;
}

// Applies one sweep value to a copy of the plan.
inline ExperimentPlan apply_sweep_value(const ExperimentPlan& base, const std::string& param,
                                        double value) {
    ExperimentPlan p = base;
    p.sweep.reset();
    if (param == "stepsize") {
        p.net.stepsize = value;
    } else if (param == "shared_entries") {
        p.net.shared = static_cast<int>(value);
    } else if (param == "attack_variance") {
        p.net.attack_var = value;
    } else if (param == "attack_probability") {
        p.net.attack_prob = value;
    } else if (param == "byzantine_count") {
        const int n = static_cast<int>(value);
        if (n < 0 || n > p.net.clients)
            throw ConfigError("sweep byzantine_count: 0 <= count <= K violated");
        if (static_cast<int>(p.net.client_specs.size()) != p.net.clients)
            p.net.client_specs.resize(p.net.clients);
        for (int k = 0; k < p.net.clients; ++k) p.net.client_specs[k].byzantine = k < n;
    } else if (param == "round_size") {
        p.net.round_size = static_cast<int>(value);
    } else {
        throw ConfigError("sweep parameter '" + param + "' is not supported");
    }
    return p;
}

}  // namespace byzfed
