#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "modalchain/cli.hpp"

namespace mc = modalchain::cli;

namespace {

std::uint64_t parse_seed(const std::string& s) {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos, 0);
    if (pos != s.size()) throw mc::ConfigError("invalid seed '" + s + "'");
    return v;
}

std::set<std::string> parse_emit(const std::string& s) {
    std::set<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t end = s.find(',', start);
        const std::string tok = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
        if (!tok.empty()) {
            if (!mc::emit_names().count(tok))
                throw mc::ConfigError("unknown emit kind '" + tok + "' (summary, trajectories, matrices, timeseries)");
            out.insert(tok);
        }
        if (end == std::string::npos) break;
        start = end + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"modalchain: stochastic ontic-state dynamics experiments"};
    app.require_subcommand(1);

    std::string config, seed, out, emit;
    int workers = 0;

    auto* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("config", config, "TOML config file")->required();
    run->add_option("--seed", seed, "override the run seed (decimal or 0x hex)");
    run->add_option("--out", out, "override the output directory");
    run->add_option("--emit", emit, "comma separated: summary,trajectories,matrices,timeseries");
    run->add_option("--workers", workers, "worker threads (default MODALCHAIN_WORKERS or 1)");

    auto* validate = app.add_subcommand("validate", "check a config without running it");
    validate->add_option("config", config, "TOML config file")->required();

    app.add_subcommand("list-scenarios", "print the scenario names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand("list-scenarios")) {
            for (const auto& n : mc::scenario_names()) std::cout << n << "\n";
            return 0;
        }
        mc::Overrides ov;
        if (!seed.empty()) ov.seed = parse_seed(seed);
        if (!out.empty()) ov.out = out;
        if (!emit.empty()) ov.emit = parse_emit(emit);
        ov.workers = workers;
        const mc::ExperimentConfig cfg = mc::load_config(config, ov);
        if (app.got_subcommand("validate")) {
            mc::validate_config(cfg);
            std::cout << "ok: " << cfg.scenario << "\n";
            return 0;
        }
        const mc::RunOutcome res = mc::run(cfg);
        for (const auto& line : res.summary) std::cout << line << "\n";
        for (const auto& c : res.checks)
            std::cout << (c.asserted ? (c.pass ? "PASS " : "FAIL ") : "INFO ") << c.name << " " << c.measured << " "
                      << c.relation << " " << c.tolerance << "\n";
        if (!res.message.empty()) std::cerr << "error: " << res.message << "\n";
        return res.exit_code;
    } catch (const mc::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
