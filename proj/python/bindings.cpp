#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "modalchain/cli.hpp"
#include "modalchain/scenarios.hpp"

namespace py = pybind11;
using namespace modalchain;
namespace sc = modalchain::scenarios;

namespace {

py::list checks_list(const std::vector<sc::Check>& checks) {
    py::list out;
    for (const auto& c : checks) {
        py::dict d;
        d["name"] = c.name;
        d["measured"] = c.measured;
        d["tolerance"] = c.tolerance;
        d["relation"] = c.relation;
        d["pass"] = c.pass;
        d["asserted"] = c.asserted;
        out.append(d);
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_modalchain, m) {
    m.doc() = "Stochastic ontic-state dynamics: core routines and scenario runner";

    py::register_exception<cli::ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("scenario_names", &cli::scenario_names);

    m.def(
        "run_config",
        [](const std::string& text, const std::filesystem::path& out, std::optional<std::uint64_t> seed, int workers) {
            cli::Overrides ov;
            ov.out = out;
            ov.seed = seed;
            ov.workers = workers;
            cli::RunOutcome r;
            {
                py::gil_scoped_release release;
                r = cli::run(cli::parse_config(text, ov));
            }
            py::dict d;
            d["exit_code"] = r.exit_code;
            d["message"] = r.message;
            d["summary"] = r.summary;
            d["checks"] = checks_list(r.checks);
            return d;
        },
        py::arg("text"), py::arg("out"), py::arg("seed") = py::none(), py::arg("workers") = 0,
        "Run a TOML experiment config and write its artifacts to `out`.");

    m.def(
        "ontic_decompose",
        [](const CVec& amp, const std::vector<int>& dims, const std::vector<int>& cut) {
            const OnticDecomposition d = ontic_decompose(StateVector(amp, DimSignature(dims)), cut);
            py::dict r;
            r["probs"] = d.probs;
            r["ontic"] = d.ontic;
            r["mirrors"] = d.mirrors;
            r["rank"] = d.rank;
            return r;
        },
        py::arg("amp"), py::arg("dims"), py::arg("cut"));

    m.def(
        "reduced_density",
        [](const CVec& amp, const std::vector<int>& dims, const std::vector<int>& keep) {
            return reduced_density(StateVector(amp, DimSignature(dims)), keep).mat;
        },
        py::arg("amp"), py::arg("dims"), py::arg("keep"));

    m.def(
        "propagate", [](const CMat& h, double dt) { return propagate(h, dt).mat; }, py::arg("h"), py::arg("dt"));

    m.def(
        "haar_state", [](long dim, std::uint64_t seed) { return haar_random_state(dim, seed).amp; }, py::arg("dim"),
        py::arg("seed"));

    m.def(
        "transition_matrix",
        [](const RMat& v, const RVec& p, double eta) {
            const TransitionStep st = transition_matrix(v, p, eta);
            return py::make_tuple(st.cond, st.consistent);
        },
        py::arg("v"), py::arg("p_prev"), py::arg("eta"));

    m.def(
        "toy_chain", [](int d, double p, std::uint64_t seed) { return toy_chain(d, p, seed).cond; }, py::arg("d"),
        py::arg("p"), py::arg("seed") = cli::kDefaultSeed);

    m.def(
        "equilibrium_convergence",
        [](int d, double p, std::uint64_t seed, int n_max) {
            const ConvergenceReport r = equilibrium_convergence(toy_chain(d, p, seed), n_max);
            py::dict out;
            out["stationary"] = r.stationary;
            out["decay_steps"] = r.decay_steps;
            out["max_deviation"] = r.max_deviation;
            out["converged"] = r.converged;
            return out;
        },
        py::arg("d"), py::arg("p"), py::arg("seed"), py::arg("n_max"));

    m.def(
        "epr_joint",
        [](cplx c_plus, cplx c_minus, double theta, double phi) {
            return Eigen::MatrixXd(sc::epr_analytic(c_plus, c_minus, theta, phi).joint);
        },
        py::arg("c_plus"), py::arg("c_minus"), py::arg("theta"), py::arg("phi"));

    m.def("chsh", &sc::chsh, py::arg("c_plus"), py::arg("c_minus"), py::arg("angles_a"), py::arg("angles_b"));

    m.def(
        "typicality",
        [](int d_a, int d_e, int n_samples, std::uint64_t seed) {
            sc::TypicalityConfig c;
            c.d_a = d_a;
            c.d_e = d_e;
            c.n_samples = n_samples;
            c.seed = seed;
            const sc::TypicalityResult r = sc::run_typicality(c);
            py::dict out;
            out["mean_purity"] = r.mean_purity;
            out["purity_stderr"] = r.purity_stderr;
            out["mean_trace_distance"] = r.mean_distance;
            return out;
        },
        py::arg("d_a"), py::arg("d_e"), py::arg("n_samples") = 200, py::arg("seed") = cli::kDefaultSeed);
}
