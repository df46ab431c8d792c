#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "byzfed/harness.hpp"
#include "byzfed/types.hpp"

namespace byzfed {

// Experiment configuration files are INI-style text:
//
//   [network]
//   clients = 50
//   dimension = 5
//   ...
//
// Sections: [network], [attack], [algorithm], [experiment]. Keys mirror the
// plan fields in lower_snake_case; unknown sections or keys are rejected,
// and a missing key takes its documented default (see README).

namespace cfgdetail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

inline double parse_double(const std::string& section, const std::string& key,
                           const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw ConfigError("[" + section + "] " + key + ": expected a number, got '" + v + "'");
    }
}

inline long parse_int(const std::string& section, const std::string& key,
                      const std::string& v) {
    try {
        std::size_t pos = 0;
        long n = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return n;
    } catch (...) {
        throw ConfigError("[" + section + "] " + key + ": expected an integer, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& section, const std::string& key,
                       const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("[" + section + "] " + key + ": expected true/false, got '" + v + "'");
}

}  // namespace cfgdetail

struct RawConfig {
    // section -> ordered key/value pairs
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
};

inline RawConfig read_config_text(std::istream& in) {
    static const std::set<std::string> known_sections{"network", "attack", "algorithm",
                                                      "experiment"};
    RawConfig raw;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = cfgdetail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = cfgdetail::trim(line.substr(1, line.size() - 2));
            if (!known_sections.count(section))
                throw ConfigError("unknown section [" + section + "]");
            raw.sections[section];
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        raw.sections[section].emplace_back(cfgdetail::trim(line.substr(0, eq)),
                                           cfgdetail::trim(line.substr(eq + 1)));
    }
    return raw;
}

inline ExperimentPlan plan_from_raw(const RawConfig& raw) {
    static const std::map<std::string, std::set<std::string>> known_keys{
        {"network",
         {"clients", "dimension", "shared_entries", "round_size", "stepsize", "mask_mode",
          "input_variances", "noise_variances", "true_model"}},
        {"attack", {"byzantine_count", "byzantine_set", "attack_probability", "attack_variance"}},
        {"algorithm", {"name"}},
        {"experiment",
         {"iterations", "replicas", "seed", "window", "test_size", "sweep_parameter",
          "sweep_values", "neumann_j", "small_step_approx"}},
    };
    for (const auto& [sec, kvs] : raw.sections) {
        std::set<std::string> seen;
        for (const auto& [k, v] : kvs) {
            if (!known_keys.at(sec).count(k))
                throw ConfigError("[" + sec + "] unknown key '" + k + "'");
            if (!seen.insert(k).second)
                throw ConfigError("[" + sec + "] duplicate key '" + k + "'");
        }
    }
    auto get = [&](const std::string& sec, const std::string& key) -> const std::string* {
        auto it = raw.sections.find(sec);
        if (it == raw.sections.end()) return nullptr;
        for (const auto& [k, v] : it->second)
            if (k == key) return &v;
        return nullptr;
    };

    ExperimentPlan plan;
    using namespace cfgdetail;

    if (const auto* v = get("network", "clients")) plan.net.clients = static_cast<int>(parse_int("network", "clients", *v));
    // the round-size default tracks small networks
    if (!get("network", "round_size")) plan.net.round_size = std::min(plan.net.round_size, plan.net.clients);
    if (const auto* v = get("network", "dimension")) plan.net.dim = static_cast<int>(parse_int("network", "dimension", *v));
    if (const auto* v = get("network", "shared_entries")) plan.net.shared = static_cast<int>(parse_int("network", "shared_entries", *v));
    if (const auto* v = get("network", "round_size")) plan.net.round_size = static_cast<int>(parse_int("network", "round_size", *v));
    if (const auto* v = get("network", "stepsize")) plan.net.stepsize = parse_double("network", "stepsize", *v);
    if (const auto* v = get("network", "mask_mode")) {
        if (*v == "uniform") plan.net.mask_mode = MaskMode::kUniformRandom;
        else if (*v == "round_robin") plan.net.mask_mode = MaskMode::kRoundRobin;
        else throw ConfigError("[network] mask_mode: expected uniform or round_robin, got '" + *v + "'");
    }
    if (plan.net.shared > plan.net.dim)
        throw ConfigError("[network] shared_entries: M <= D violated (M=" +
                          std::to_string(plan.net.shared) + ", D=" + std::to_string(plan.net.dim) + ")");
    if (plan.net.round_size > plan.net.clients)
        throw ConfigError("[network] round_size: round_size <= K violated");

    plan.net.client_specs.resize(plan.net.clients);
    if (const auto* v = get("network", "input_variances")) {
        if (*v != "random") {
            auto items = split_list(*v);
            if (static_cast<int>(items.size()) != plan.net.clients)
                throw ConfigError("[network] input_variances: expected " +
                                  std::to_string(plan.net.clients) + " values or 'random'");
            for (int k = 0; k < plan.net.clients; ++k)
                plan.net.client_specs[k].input_variance =
                    parse_double("network", "input_variances", items[k]);
            plan.random_input_var = false;
        }
    }
    if (const auto* v = get("network", "noise_variances")) {
        if (*v != "random") {
            auto items = split_list(*v);
            if (static_cast<int>(items.size()) != plan.net.clients)
                throw ConfigError("[network] noise_variances: expected " +
                                  std::to_string(plan.net.clients) + " values or 'random'");
            for (int k = 0; k < plan.net.clients; ++k)
                plan.net.client_specs[k].noise_variance =
                    parse_double("network", "noise_variances", items[k]);
            plan.random_noise_var = false;
        }
    }
    if (const auto* v = get("network", "true_model")) {
        if (*v != "ones_normalized") {
            auto items = split_list(*v);
            if (static_cast<int>(items.size()) != plan.net.dim)
                throw ConfigError("[network] true_model: expected " + std::to_string(plan.net.dim) +
                                  " values or 'ones_normalized'");
            plan.net.true_model.resize(plan.net.dim);
            for (int d = 0; d < plan.net.dim; ++d)
                plan.net.true_model[d] = parse_double("network", "true_model", items[d]);
        }
    }

    if (get("attack", "byzantine_count") && get("attack", "byzantine_set"))
        throw ConfigError("[attack] give byzantine_count or byzantine_set, not both");
    if (const auto* v = get("attack", "byzantine_count")) {
        const long n = parse_int("attack", "byzantine_count", *v);
        if (n < 0 || n > plan.net.clients)
            throw ConfigError("[attack] byzantine_count: 0 <= count <= K violated");
        for (long k = 0; k < n; ++k) plan.net.client_specs[k].byzantine = true;
    }
    if (const auto* v = get("attack", "byzantine_set")) {
        for (const auto& item : split_list(*v)) {
            const long id = parse_int("attack", "byzantine_set", item);
            if (id < 0 || id >= plan.net.clients)
                throw ConfigError("[attack] byzantine_set: client id out of range: " + item);
            plan.net.client_specs[id].byzantine = true;
        }
    }
    if (const auto* v = get("attack", "attack_probability")) {
        plan.net.attack_prob = parse_double("attack", "attack_probability", *v);
        if (plan.net.attack_prob < 0.0 || plan.net.attack_prob > 1.0)
            throw ConfigError("[attack] attack_probability: p_a in [0,1] violated");
    }
    if (const auto* v = get("attack", "attack_variance")) {
        plan.net.attack_var = parse_double("attack", "attack_variance", *v);
        if (plan.net.attack_var < 0.0)
            throw ConfigError("[attack] attack_variance: sigma_B^2 >= 0 violated");
    }

    if (const auto* v = get("algorithm", "name")) {
        if (*v == "psofed") plan.algorithm = Algorithm::kPsoFed;
        else if (*v == "onlinefed") plan.algorithm = Algorithm::kOnlineFed;
        else if (*v == "signsgd") plan.algorithm = Algorithm::kSignSgd;
        else throw ConfigError("[algorithm] name: unknown algorithm '" + *v + "'");
    }

    if (const auto* v = get("experiment", "iterations")) plan.iterations = static_cast<int>(parse_int("experiment", "iterations", *v));
    if (const auto* v = get("experiment", "replicas")) plan.replicas = static_cast<int>(parse_int("experiment", "replicas", *v));
    if (const auto* v = get("experiment", "seed")) plan.seed = static_cast<std::uint64_t>(parse_int("experiment", "seed", *v));
    if (const auto* v = get("experiment", "window")) plan.window = static_cast<int>(parse_int("experiment", "window", *v));
    if (const auto* v = get("experiment", "test_size")) plan.test_size = static_cast<int>(parse_int("experiment", "test_size", *v));
    if (const auto* v = get("experiment", "neumann_j")) plan.series_terms = static_cast<int>(parse_int("experiment", "neumann_j", *v));
    if (const auto* v = get("experiment", "small_step_approx")) plan.small_step_approx = parse_bool("experiment", "small_step_approx", *v);

    const auto* sp = get("experiment", "sweep_parameter");
    const auto* sv = get("experiment", "sweep_values");
    if ((sp == nullptr) != (sv == nullptr))
        throw ConfigError("[experiment] sweep_parameter and sweep_values must be given together");
    if (sp) {
        SweepAxis axis;
        axis.parameter = *sp;
        for (const auto& item : cfgdetail::split_list(*sv))
            axis.values.push_back(parse_double("experiment", "sweep_values", item));
        if (axis.values.empty()) throw ConfigError("[experiment] sweep_values: empty list");
        plan.sweep = axis;
    }

    plan.validate();
    return plan;
}

inline ExperimentPlan parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    RawConfig raw = read_config_text(in);
    return plan_from_raw(raw);
}

inline ExperimentPlan parse_config_string(const std::string& text) {
    std::istringstream in(text);
    RawConfig raw = read_config_text(in);
    return plan_from_raw(raw);
}

// Canonical text form: every key explicit, fixed order. parse(serialize(p))
// reproduces p, and serialize(parse(f)) is the canonical form of f.
inline std::string serialize_config(const ExperimentPlan& plan) {
    std::ostringstream o;
    o.precision(17);
    o << "[network]\n";
    o << "clients = " << plan.net.clients << "\n";
    o << "dimension = " << plan.net.dim << "\n";
    o << "shared_entries = " << plan.net.shared << "\n";
    o << "round_size = " << plan.net.round_size << "\n";
    o << "stepsize = " << plan.net.stepsize << "\n";
    o << "mask_mode = " << to_string(plan.net.mask_mode) << "\n";
    auto list_or = [&](bool random, auto getter) {
        if (random) return std::string("random");
        std::ostringstream s;
        s.precision(17);
        for (int k = 0; k < plan.net.clients; ++k) {
            if (k) s << ",";
            s << getter(plan.net.client_specs[k]);
        }
        return s.str();
    };
    o << "input_variances = "
      << list_or(plan.random_input_var, [](const ClientSpec& c) { return c.input_variance; }) << "\n";
    o << "noise_variances = "
      << list_or(plan.random_noise_var, [](const ClientSpec& c) { return c.noise_variance; }) << "\n";
    if (plan.net.true_model.size() == 0) {
        o << "true_model = ones_normalized\n";
    } else {
        o << "true_model = ";
        for (int d = 0; d < plan.net.dim; ++d) {
            if (d) o << ",";
            o << plan.net.true_model[d];
        }
        o << "\n";
    }
    o << "\n[attack]\n";
    o << "byzantine_set = ";
    bool first = true;
    for (int k = 0; k < static_cast<int>(plan.net.client_specs.size()); ++k)
        if (plan.net.client_specs[k].byzantine) {
            if (!first) o << ",";
            o << k;
            first = false;
        }
    o << "\n";
    o << "attack_probability = " << plan.net.attack_prob << "\n";
    o << "attack_variance = " << plan.net.attack_var << "\n";
    o << "\n[algorithm]\n";
    o << "name = " << to_string(plan.algorithm) << "\n";
    o << "\n[experiment]\n";
    o << "iterations = " << plan.iterations << "\n";
    o << "replicas = " << plan.replicas << "\n";
    o << "seed = " << plan.seed << "\n";
    o << "window = " << plan.window << "\n";
    o << "test_size = " << plan.test_size << "\n";
    o << "neumann_j = " << plan.series_terms << "\n";
    o << "small_step_approx = " << (plan.small_step_approx ? "true" : "false") << "\n";
    if (plan.sweep) {
        o << "sweep_parameter = " << plan.sweep->parameter << "\n";
        o << "sweep_values = ";
        for (std::size_t i = 0; i < plan.sweep->values.size(); ++i) {
            if (i) o << ",";
            o << plan.sweep->values[i];
        }
        o << "\n";
    }
    return o.str();
}

}  // namespace byzfed
