#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "modalchain/chain.hpp"
#include "modalchain/scenarios.hpp"

namespace modalchain::cli {

inline constexpr std::uint64_t kDefaultSeed = 0x5EED;
inline constexpr const char* kArtifactVersion = "0.1.0";

// Bad or incomplete configuration; maps to exit status 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

const std::vector<std::string>& scenario_names();
const std::set<std::string>& emit_names();

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::optional<std::set<std::string>> emit;
    int workers = 0;  // 0: MODALCHAIN_WORKERS or 1
};

struct ExperimentConfig {
    std::string scenario;
    std::uint64_t seed = kDefaultSeed;
    std::filesystem::path output = "out";
    std::set<std::string> emit;
    int workers = 1;
    std::string source;  // raw config text
    std::string echo;    // config as a JSON document
};

ExperimentConfig parse_config(const std::string& text, const Overrides& ov = {});
ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& ov = {});

// Builds every scenario-level config object without running anything.
void validate_config(const ExperimentConfig& cfg);

struct RunOutcome {
    int exit_code = 0;
    std::string message;
    std::vector<scenarios::Check> checks;
    std::vector<std::string> summary;
};

RunOutcome run(const ExperimentConfig& cfg);

void emit_trajectories(const std::vector<Trajectory>& trajs, const std::filesystem::path& path);
void emit_timeseries(const std::vector<std::string>& names, const std::vector<std::vector<double>>& columns,
                     const std::filesystem::path& path);

std::string format_double(double x);

}  // namespace modalchain::cli
