#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace byzfed {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ProtocolError : std::logic_error {
    using std::logic_error::logic_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mask law is outside what the closed-form analysis covers.
struct UnsupportedLawError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a steady-state quantity is requested for a transition
// operator whose spectral radius is not below one.
struct InstabilityError : std::runtime_error {
    double spectral_radius;
    explicit InstabilityError(double rho)
        : std::runtime_error("transition operator is unstable: spectral radius = " +
                             std::to_string(rho)),
          spectral_radius(rho) {}
};

struct ClientSpec {
    double input_variance = 1.0;  // variance of each input entry
    double noise_variance = 0.0;  // observation noise variance
    bool byzantine = false;
};

enum class MaskMode { kUniformRandom, kRoundRobin };

inline const char* to_string(MaskMode m) {
    return m == MaskMode::kUniformRandom ? "uniform" : "round_robin";
}

// Full description of one federated network: sizes, exchange width,
// per-client statistics and the poisoning attack parameters.
struct NetworkSpec {
    int clients = 50;      // K
    int dim = 5;           // D, model dimension
    int shared = 1;        // M, coordinates exchanged per message
    int round_size = 5;    // clients selected per round
    double stepsize = 0.15;
    double attack_prob = 0.0;  // probability a Byzantine upload is perturbed
    double attack_var = 0.0;   // per-coordinate variance of the perturbation
    MaskMode mask_mode = MaskMode::kUniformRandom;
    std::vector<ClientSpec> client_specs;  // size K
    Vector true_model;                     // size D

    double share_prob() const { return static_cast<double>(shared) / dim; }
    double select_prob() const { return static_cast<double>(round_size) / clients; }

    int byzantine_count() const {
        int n = 0;
        for (const auto& c : client_specs) n += c.byzantine ? 1 : 0;
        return n;
    }

    void validate() const {
        if (clients < 1) throw ConfigError("clients: K >= 1 violated");
        if (dim < 1) throw ConfigError("dimension: D >= 1 violated");
        if (shared < 1 || shared > dim)
            throw ConfigError("shared_entries: 1 <= M <= D violated (M=" +
                              std::to_string(shared) + ", D=" + std::to_string(dim) + ")");
        if (round_size < 1 || round_size > clients)
            throw ConfigError("round_size: 1 <= |S_n| <= K violated (|S_n|=" +
                              std::to_string(round_size) + ", K=" + std::to_string(clients) + ")");
        if (stepsize < 0.0) throw ConfigError("stepsize: mu >= 0 violated");
        if (attack_prob < 0.0 || attack_prob > 1.0)
            throw ConfigError("attack_probability: p_a in [0,1] violated");
        if (attack_var < 0.0) throw ConfigError("attack_variance: sigma_B^2 >= 0 violated");
        if (static_cast<int>(client_specs.size()) != clients)
            throw ConfigError("client specs: expected " + std::to_string(clients) +
                              " entries, got " + std::to_string(client_specs.size()));
        for (std::size_t k = 0; k < client_specs.size(); ++k) {
            if (!(client_specs[k].input_variance > 0.0))
                throw ConfigError("input_variances[" + std::to_string(k) +
                                  "]: must be > 0");
            if (client_specs[k].noise_variance < 0.0)
                throw ConfigError("noise_variances[" + std::to_string(k) +
                                  "]: must be >= 0");
        }
        if (true_model.size() != dim)
            throw ConfigError("true_model: expected " + std::to_string(dim) +
                              " entries, got " + std::to_string(true_model.size()));
    }
};

struct DataSample {
    Vector input;     // size D
    double response = 0.0;
};

// Server + per-client model estimates.
struct FedState {
    Vector global;
    std::vector<Vector> local;
    long iteration = 0;

    static FedState zeros(int clients, int dim) {
        FedState s;
        s.global = Vector::Zero(dim);
        s.local.assign(clients, Vector::Zero(dim));
        return s;
    }
};

// The adversary's view of the network.
struct AttackSpec {
    double attack_prob = 0.0;
    double attack_var = 0.0;
    std::vector<std::uint8_t> byzantine;  // flag per client id

    static AttackSpec from_network(const NetworkSpec& net) {
        AttackSpec a;
        a.attack_prob = net.attack_prob;
        a.attack_var = net.attack_var;
        a.byzantine.resize(net.client_specs.size());
        for (std::size_t k = 0; k < net.client_specs.size(); ++k)
            a.byzantine[k] = net.client_specs[k].byzantine ? 1 : 0;
        return a;
    }
};

}  // namespace byzfed
