#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "byzfed/config.hpp"
#include "byzfed/csv.hpp"
#include "byzfed/report.hpp"

using namespace byzfed;

TEST_CASE("minimal config takes the documented defaults") {
    ExperimentPlan p = parse_config_string("");
    REQUIRE(p.net.clients == 50);
    REQUIRE(p.net.dim == 5);
    REQUIRE(p.net.shared == 1);
    REQUIRE(p.net.round_size == 5);
    REQUIRE(p.iterations == 3000);
    REQUIRE(p.net.stepsize == 0.15);
    REQUIRE(p.window == 200);
    REQUIRE(p.test_size == 50);
    REQUIRE(p.algorithm == Algorithm::kPsoFed);
    REQUIRE(p.net.byzantine_count() == 0);
}

TEST_CASE("oversized mask width is rejected with the violated constraint") {
    const std::string cfg = "[network]\ndimension = 5\nshared_entries = 6\n";
    try {
        parse_config_string(cfg);
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("M <= D") != std::string::npos);
        REQUIRE(std::string(e.what()).find("shared_entries") != std::string::npos);
    }
}

TEST_CASE("unknown keys and sections are rejected") {
    REQUIRE_THROWS_AS(parse_config_string("[network]\nbogus = 1\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_string("[nonsense]\nclients = 3\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_string("[network]\nclients = 5\nclients = 6\n"),
                      ConfigError);
}

TEST_CASE("algorithm names are validated") {
    REQUIRE(parse_config_string("[algorithm]\nname = signsgd\n").algorithm ==
            Algorithm::kSignSgd);
    REQUIRE_THROWS_AS(parse_config_string("[algorithm]\nname = magic\n"), ConfigError);
}

TEST_CASE("explicit variance lists must match the client count") {
    const std::string good =
        "[network]\nclients = 3\ninput_variances = 0.5, 0.7, 0.9\n";
    ExperimentPlan p = parse_config_string(good);
    REQUIRE_FALSE(p.random_input_var);
    REQUIRE(p.net.client_specs[2].input_variance == 0.9);
    REQUIRE_THROWS_AS(
        parse_config_string("[network]\nclients = 3\ninput_variances = 0.5, 0.7\n"),
        ConfigError);
}

TEST_CASE("byzantine selection accepts a count or an id set, not both") {
    ExperimentPlan p =
        parse_config_string("[network]\nclients = 5\n[attack]\nbyzantine_count = 2\n");
    REQUIRE(p.net.client_specs[0].byzantine);
    REQUIRE(p.net.client_specs[1].byzantine);
    REQUIRE_FALSE(p.net.client_specs[2].byzantine);
    ExperimentPlan q =
        parse_config_string("[network]\nclients = 5\n[attack]\nbyzantine_set = 1, 4\n");
    REQUIRE(q.net.client_specs[4].byzantine);
    REQUIRE_FALSE(q.net.client_specs[0].byzantine);
    REQUIRE_THROWS_AS(parse_config_string("[attack]\nbyzantine_count = 1\nbyzantine_set = 2\n"),
                      ConfigError);
}

TEST_CASE("round-trip: parse then serialize is canonical and stable") {
    const std::string cfg =
        "[network]\nclients = 4\ndimension = 3\nshared_entries = 2\n"
        "input_variances = 0.5,0.6,0.7,0.8\n"
        "[attack]\nbyzantine_set = 1,3\nattack_probability = 0.2\nattack_variance = 0.5\n"
        "[experiment]\niterations = 100\nreplicas = 5\nwindow = 50\nseed = 9\n"
        "sweep_parameter = stepsize\nsweep_values = 0.05, 0.1\n";
    ExperimentPlan p = parse_config_string(cfg);
    const std::string canon = serialize_config(p);
    ExperimentPlan q = parse_config_string(canon);
    REQUIRE(serialize_config(q) == canon);
    REQUIRE(q.net.clients == 4);
    REQUIRE(q.net.client_specs[3].byzantine);
    REQUIRE(q.sweep->parameter == "stepsize");
    REQUIRE(q.sweep->values == std::vector<double>{0.05, 0.1});
}

TEST_CASE("results CSV renders the fixed column contract") {
    CsvRow row;
    row.sweep_param = "stepsize";
    row.sweep_value = 0.05;
    row.algorithm = "psofed";
    row.sim_test_mse = 0.0123456789;
    row.sim_network_mse = 0.0234567891;
    row.replicas = 10;
    row.seed = 7;
    const std::string text = render_csv({row});
    std::istringstream in(text);
    std::string header, line;
    std::getline(in, header);
    REQUIRE(header == std::string(kCsvHeader));
    std::getline(in, line);
    // theory columns empty, not zero
    REQUIRE(line == "stepsize,0.05,psofed,0.0123456789,0.0234567891,,,,,,,,10,7");
}

TEST_CASE("CSV bytes are identical across repeated runs of the same plan") {
    ExperimentPlan p;
    p.net.clients = 5;
    p.net.dim = 3;
    p.net.round_size = 2;
    p.net.client_specs.assign(5, ClientSpec{0.7, 0.01, false});
    p.random_input_var = p.random_noise_var = false;
    p.iterations = 120;
    p.window = 40;
    p.replicas = 4;
    p.seed = 5;
    p.sweep = SweepAxis{"stepsize", {0.05, 0.1}};
    auto render = [&] {
        std::vector<CsvRow> rows;
        for (const auto& r : run_sweep(p))
            rows.push_back(to_csv_row(p, p.sweep->parameter, r.value, r.sim, r.theory));
        return render_csv(rows);
    };
    const std::string a = render(), b = render();
    REQUIRE(a == b);
}

TEST_CASE("theory columns in emitted rows satisfy the decomposition identity") {
    ExperimentPlan p;
    p.net.clients = 5;
    p.net.dim = 3;
    p.net.round_size = 2;
    p.net.stepsize = 0.08;
    p.net.attack_prob = 0.3;
    p.net.client_specs.assign(5, ClientSpec{0.7, 0.01, false});
    p.net.client_specs[0].byzantine = true;
    p.random_input_var = p.random_noise_var = false;
    p.iterations = 150;
    p.window = 50;
    p.replicas = 4;
    p.sweep = SweepAxis{"attack_variance", {0.2, 0.6}};
    for (const auto& r : run_sweep(p)) {
        REQUIRE(r.theory.has_value());
        const auto& t = r.theory->mse;
        REQUIRE(std::abs(t.total - (t.e_phi + t.e_omega + t.e_theta)) < 1e-9);
    }
}

TEST_CASE("atomic write leaves no temporary and full content") {
    const std::string path = "test_atomic_out.csv";
    write_file_atomic(path, "hello\n");
    std::ifstream in(path);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    REQUIRE(content == "hello\n");
    std::ifstream tmp(path + ".tmp");
    REQUIRE_FALSE(tmp.good());
    std::remove(path.c_str());
}

TEST_CASE("round-robin configs parse but are rejected by the theory path") {
    ExperimentPlan p = parse_config_string("[network]\nmask_mode = round_robin\n");
    REQUIRE(p.net.mask_mode == MaskMode::kRoundRobin);
    REQUIRE_THROWS_AS(theory_view(resolve_network(p)), UnsupportedLawError);
}
