#pragma once

#include <cmath>
#include <vector>

#include "byzfed/rng.hpp"
#include "byzfed/types.hpp"

namespace byzfed {

// One streaming observation: input entries IID zero-mean Gaussian with the
// client's input variance, response = w*'x + noise.
inline DataSample generate_sample(const ClientSpec& client, const Vector& true_model,
                                  RngStream& rng) {
    if (!(client.input_variance > 0.0))
        throw ConfigError("generate_sample: input_variance must be > 0");
    if (client.noise_variance < 0.0)
        throw ConfigError("generate_sample: noise_variance must be >= 0");
    const int dim = static_cast<int>(true_model.size());
    if (dim < 1) throw ConfigError("generate_sample: empty true model");
    DataSample s;
    s.input.resize(dim);
    const double sd = std::sqrt(client.input_variance);
    for (int d = 0; d < dim; ++d) s.input[d] = sd * rng.normal();
    s.response = true_model.dot(s.input);
    if (client.noise_variance > 0.0)
        s.response += std::sqrt(client.noise_variance) * rng.normal();
    return s;
}

// Server-side evaluation set. Inputs have unit-variance Gaussian entries and
// responses are noiseless, so the test MSE of a model w is a direct estimate
// of ||w - w*||^2.
struct TestSet {
    Eigen::MatrixXd inputs;  // dim x count
    Vector responses;        // count
};

inline TestSet make_test_set(const Vector& true_model, int count, RngStream& rng) {
    if (count < 1) throw ArgumentError("make_test_set: count >= 1 required");
    TestSet t;
    const int dim = static_cast<int>(true_model.size());
    t.inputs.resize(dim, count);
    for (int i = 0; i < count; ++i)
        for (int d = 0; d < dim; ++d) t.inputs(d, i) = rng.normal();
    t.responses = t.inputs.transpose() * true_model;
    return t;
}

// Mean squared residual of `model` on the given test set.
inline double test_mse(const Vector& model, const Eigen::MatrixXd& inputs,
                       const Vector& responses) {
    const long n = responses.size();
    if (n < 1) throw ArgumentError("test_mse: empty test set");
    if (inputs.cols() != n || inputs.rows() != model.size())
        throw ArgumentError("test_mse: dimension mismatch");
    return (responses - inputs.transpose() * model).squaredNorm() / static_cast<double>(n);
}

inline double test_mse(const Vector& model, const TestSet& t) {
    return test_mse(model, t.inputs, t.responses);
}

// Network-wide steady-state MSE estimate: per client, mean of the squared
// errors over the final `window` entries, then averaged over clients.
inline double network_mse(const std::vector<std::vector<double>>& per_client_errors,
                          int window) {
    if (window < 1) throw ArgumentError("network_mse: window >= 1 required");
    if (per_client_errors.empty()) throw ArgumentError("network_mse: no clients");
    double acc = 0.0;
    for (const auto& errs : per_client_errors) {
        if (static_cast<int>(errs.size()) < window)
            throw ArgumentError("network_mse: stream shorter than window");
        double s = 0.0;
        for (std::size_t i = errs.size() - window; i < errs.size(); ++i)
            s += errs[i] * errs[i];
        acc += s / window;
    }
    return acc / static_cast<double>(per_client_errors.size());
}

}  // namespace byzfed
