#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "modalchain/cli.hpp"

namespace mc = modalchain::cli;
namespace fs = std::filesystem;
using modalchain::Trajectory;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("modalchain_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

const char* kNaive = R"(scenario = "naive"
[parameters]
c = [0.8366600265340756, 0.5477225575051661]
n_dev = 8
steps = 40
n_traj = 30
)";

}  // namespace

TEST(Config, DefaultSeedAndEmit) {
    const mc::ExperimentConfig c = mc::parse_config(kNaive);
    EXPECT_EQ(c.seed, 0x5EEDu);
    EXPECT_EQ(c.emit, mc::emit_names());
    EXPECT_EQ(c.scenario, "naive");
}

TEST(Config, OverridesWin) {
    mc::Overrides ov;
    ov.seed = 9;
    ov.out = "elsewhere";
    ov.emit = std::set<std::string>{"summary"};
    const mc::ExperimentConfig c = mc::parse_config(std::string(kNaive) + "seed = 3\n", ov);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.output, fs::path("elsewhere"));
    EXPECT_EQ(c.emit.size(), 1u);
}

TEST(Config, UnknownScenarioListsNames) {
    try {
        (void)mc::parse_config("scenario = \"bogus\"\n");
        FAIL();
    } catch (const mc::ConfigError& e) {
        const std::string msg = e.what();
        for (const auto& n : mc::scenario_names()) EXPECT_NE(msg.find(n), std::string::npos) << n;
    }
}

TEST(Config, MissingFieldIsNamed) {
    mc::ExperimentConfig c = mc::parse_config("scenario = \"naive\"\n[parameters]\nn_dev = 4\n");
    c.output = scratch("missing");
    const mc::RunOutcome r = mc::run(c);
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.message.find("parameters.c"), std::string::npos);
    EXPECT_THROW(mc::validate_config(c), mc::ConfigError);
}

TEST(Config, MalformedConfigsExitOne) {
    const std::vector<std::string> bad = {
        "scenario = ",
        "seed = 4\n",
        "scenario = 4\n",
        "scenario = \"naive\"\nemit = [\"plots\"]\n",
        "scenario = \"naive\"\nseed = 1.5\n",
        "scenario = \"naive\"\nparameters = 3\n",
    };
    for (const auto& text : bad) EXPECT_THROW((void)mc::parse_config(text), mc::ConfigError) << text;
    const std::vector<std::string> bad_params = {
        "scenario = \"naive\"\n[parameters]\nc = [0.5, 0.5]\n",
        "scenario = \"naive\"\n[parameters]\nc = \"x\"\n",
        "scenario = \"naive\"\n[parameters]\nc = [1.0, 0.0]\nn_dev = 2.5\n",
        "scenario = \"realistic\"\n[parameters]\nf = [[1.0], [0.0, 1.0]]\n",
        "scenario = \"typicality\"\n[parameters]\nd_a = 2\n",
        "scenario = \"chain-analyze\"\n[parameters]\nmode = \"other\"\n",
        "scenario = \"crossover\"\n[parameters]\np0 = 0.4\na1 = 1.0\na2 = -1.0\ndelta = 1e-8\neta = 0.5\n",
    };
    int k = 0;
    for (const auto& text : bad_params) {
        mc::ExperimentConfig c = mc::parse_config(text);
        c.output = scratch("bad" + std::to_string(k++));
        EXPECT_EQ(mc::run(c).exit_code, 1) << text;
    }
}

TEST(Run, NaivePureOutcome) {
    mc::ExperimentConfig c = mc::parse_config("scenario = \"naive\"\n[parameters]\nc = [1.0, 0.0]\nn_dev = 4\n");
    c.output = scratch("pure");
    const mc::RunOutcome r = mc::run(c);
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(slurp(c.output / "summary.txt").find("p = (1, 0)"), std::string::npos);
}

TEST(Run, EprSummaryReportsS) {
    mc::ExperimentConfig c = mc::parse_config(R"(scenario = "epr"
[parameters]
chsh_angles_a = [0.0, 1.5707963267948966]
chsh_angles_b = [0.7853981633974483, 2.356194490192345]
)");
    c.output = scratch("epr");
    const mc::RunOutcome r = mc::run(c);
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(slurp(c.output / "summary.txt").find("S = 2.828427"), std::string::npos);
}

TEST(Run, FailedAssertionExitsTwo) {
    mc::ExperimentConfig c = mc::parse_config(std::string(kNaive) + "[tolerances]\ntransport = -1.0\n");
    c.output = scratch("fail");
    const mc::RunOutcome r = mc::run(c);
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.message.find("probability_transport"), std::string::npos);
}

TEST(Run, ManifestListsEveryCheckOnce) {
    mc::ExperimentConfig c = mc::parse_config(kNaive);
    c.output = scratch("manifest");
    const mc::RunOutcome r = mc::run(c);
    const std::string m = slurp(c.output / "manifest.json");
    for (const auto& ch : r.checks) {
        const std::string key = "\"name\": \"" + ch.name + "\"";
        const auto first = m.find(key);
        ASSERT_NE(first, std::string::npos) << ch.name;
        EXPECT_EQ(m.find(key, first + 1), std::string::npos) << ch.name;
    }
    EXPECT_NE(m.find("\"artifact_version\""), std::string::npos);
    EXPECT_NE(m.find("\"wall_clock_seconds\""), std::string::npos);
}

TEST(Run, DeterministicAcrossRunsAndWorkers) {
    mc::ExperimentConfig a = mc::parse_config(kNaive), b = a;
    a.output = scratch("det_a");
    b.output = scratch("det_b");
    b.workers = 3;
    (void)mc::run(a);
    (void)mc::run(b);
    for (const char* f : {"summary.txt", "timeseries.csv", "matrices.json", "trajectories.jsonl"})
        EXPECT_EQ(slurp(a.output / f), slurp(b.output / f)) << f;
}

TEST(Run, EmitSubsetOnly) {
    mc::Overrides ov;
    ov.emit = std::set<std::string>{"timeseries"};
    mc::ExperimentConfig c = mc::parse_config(kNaive, ov);
    c.output = scratch("subset");
    (void)mc::run(c);
    EXPECT_TRUE(fs::exists(c.output / "timeseries.csv"));
    EXPECT_TRUE(fs::exists(c.output / "manifest.json"));
    EXPECT_FALSE(fs::exists(c.output / "trajectories.jsonl"));
    EXPECT_FALSE(fs::exists(c.output / "summary.txt"));
}

TEST(Emit, TrajectoryLineCount) {
    std::vector<Trajectory> t(2);
    t[0].seed = 9;
    t[1].seed = 4;
    for (auto& tr : t) {
        tr.labels = {0, 1, 1, 0};
        tr.times = {0.0, 0.1, 0.2, 0.30000000000000004};
    }
    const fs::path p = scratch("traj.jsonl");
    mc::emit_trajectories(t, p);
    const std::string s = slurp(p);
    EXPECT_EQ(lines(s), 8);
    EXPECT_EQ(s.rfind("{\"seed\":4,\"step_index\":0,\"time\":0,\"label\":0}", 0), 0u);
    EXPECT_NE(s.find("\"time\":0.30000000000000004"), std::string::npos);
}

TEST(Emit, ConstantTrajectory) {
    Trajectory t;
    t.seed = 1;
    t.labels = {2, 2, 2};
    t.times = {0, 1, 2};
    const fs::path p = scratch("const.jsonl");
    mc::emit_trajectories({t}, p);
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) EXPECT_NE(line.find("\"label\":2}"), std::string::npos);
}

TEST(Emit, TimeseriesFormat) {
    const fs::path p = scratch("ts.csv");
    mc::emit_timeseries({}, {}, p);
    EXPECT_EQ(slurp(p), "\n");
    mc::emit_timeseries({"t", "x"}, {{0.0, 0.1}, {1.0 / 3, 2.0}}, p);
    EXPECT_EQ(slurp(p), "t,x\n0,0.33333333333333331\n0.10000000000000001,2\n");
    EXPECT_THROW(mc::emit_timeseries({"t", "x"}, {{0.0}, {1.0, 2.0}}, p), std::invalid_argument);
}

TEST(Emit, CrossoverColumns) {
    mc::ExperimentConfig c = mc::parse_config(R"(scenario = "crossover"
[parameters]
p0 = 0.4
a1 = 1.0
a2 = -1.0
delta = 1e-8
eta = [1e-3]
)");
    c.output = scratch("crossover");
    EXPECT_EQ(mc::run(c).exit_code, 0);
    const std::string s = slurp(c.output / "timeseries.csv");
    EXPECT_EQ(s.substr(0, s.find('\n')), "t,p_plus,p_minus,theta");
}

TEST(Emit, NaiveThreeOutcomeOnset) {
    mc::ExperimentConfig c = mc::parse_config(R"(scenario = "naive"
[parameters]
c = [0.7071067811865476, 0.5477225575051661, 0.4472135954999579]
n_dev = 8
separation = 0.9
steps = 50
)");
    c.output = scratch("naive3");
    EXPECT_EQ(mc::run(c).exit_code, 0);
    std::istringstream in(slurp(c.output / "timeseries.csv"));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line.substr(0, 13), "t,p_0,p_1,p_2");
    // The smallest label probability only grows from its t = 0 value of zero.
    double prev = -1;
    int rows = 0;
    while (std::getline(in, line)) {
        const double last = std::stod(line.substr(line.rfind(',') + 1));
        EXPECT_GE(last, prev - 1e-12);
        prev = last;
        ++rows;
    }
    EXPECT_EQ(rows, 51);
}
