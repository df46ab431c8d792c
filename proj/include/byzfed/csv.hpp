#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "byzfed/types.hpp"

namespace byzfed {

// Results table contract: fixed column order, 9 significant digits, theory
// columns empty (not zero) when no prediction is available. Files are
// written to a temporary sibling and renamed, so a partial table never
// appears under the target name.

inline std::string format_sig9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

struct CsvRow {
    std::string sweep_param;
    std::optional<double> sweep_value;
    std::string algorithm;
    double sim_test_mse = 0.0;
    double sim_network_mse = 0.0;
    std::optional<double> theory_e_phi, theory_e_omega, theory_e_theta, theory_total;
    std::optional<double> mu_max_mean, mu_max_ms, mu_star;
    int replicas = 0;
    std::uint64_t seed = 0;
};

inline const char* kCsvHeader =
    "sweep_param,sweep_value,algorithm,sim_test_mse,sim_network_mse,"
    "theory_e_phi,theory_e_omega,theory_e_theta,theory_total,"
    "mu_max_mean,mu_max_ms,mu_star,replicas,seed";

inline std::string render_csv(const std::vector<CsvRow>& rows) {
    std::string out(kCsvHeader);
    out += "\n";
    auto opt = [](const std::optional<double>& v) {
        return v ? format_sig9(*v) : std::string();
    };
    for (const auto& r : rows) {
        out += r.sweep_param;
        out += ",";
        out += opt(r.sweep_value);
        out += ",";
        out += r.algorithm;
        out += ",";
        out += format_sig9(r.sim_test_mse);
        out += ",";
        out += format_sig9(r.sim_network_mse);
        out += ",";
        out += opt(r.theory_e_phi);
        out += ",";
        out += opt(r.theory_e_omega);
        out += ",";
        out += opt(r.theory_e_theta);
        out += ",";
        out += opt(r.theory_total);
        out += ",";
        out += opt(r.mu_max_mean);
        out += ",";
        out += opt(r.mu_max_ms);
        out += ",";
        out += opt(r.mu_star);
        out += ",";
        out += std::to_string(r.replicas);
        out += ",";
        out += std::to_string(r.seed);
        out += "\n";
    }
    return out;
}

inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw NumericError("cannot open output file: " + tmp);
        out << content;
        if (!out) throw NumericError("failed writing output file: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw NumericError("failed to move output into place: " + path);
    }
}

inline void write_results_csv(const std::string& path, const std::vector<CsvRow>& rows) {
    write_file_atomic(path, render_csv(rows));
}

}  // namespace byzfed
