#include "modalchain/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>
#include <toml.hpp>

namespace modalchain::cli {

using nlohmann::json;
namespace sc = modalchain::scenarios;
namespace ct = modalchain::continuum;

const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names{"naive",     "realistic", "binned",     "epr",
                                                "chsh",      "crossover", "typicality", "chain-analyze"};
    return names;
}

const std::set<std::string>& emit_names() {
    static const std::set<std::string> names{"summary", "trajectories", "matrices", "timeseries"};
    return names;
}

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace {

std::string short_num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

std::string vec_str(const RVec& v) {
    std::string s = "(";
    for (long i = 0; i < v.size(); ++i) s += (i ? ", " : "") + short_num(v(i));
    return s + ")";
}

json to_json(const toml::node& n) {
    if (const auto* t = n.as_table()) {
        json j = json::object();
        for (const auto& [k, v] : *t) j[std::string(k.str())] = to_json(v);
        return j;
    }
    if (const auto* a = n.as_array()) {
        json j = json::array();
        for (const auto& v : *a) j.push_back(to_json(v));
        return j;
    }
    if (const auto* v = n.as_integer()) return v->get();
    if (const auto* v = n.as_floating_point()) return v->get();
    if (const auto* v = n.as_boolean()) return v->get();
    if (const auto* v = n.as_string()) return v->get();
    throw ConfigError("config values must be numbers, strings, booleans, arrays or tables");
}

json mat_json(const RMat& m) {
    json j = json::array();
    for (long r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (long c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        j.push_back(row);
    }
    return j;
}

json vec_json(const RVec& v) {
    json j = json::array();
    for (long i = 0; i < v.size(); ++i) j.push_back(v(i));
    return j;
}

// Typed access to the [parameters] table with field-naming errors.
class Params {
public:
    Params(const toml::table* t, std::string prefix) : t_(t), prefix_(std::move(prefix)) {}

    [[nodiscard]] bool has(const std::string& k) const { return t_ && t_->contains(k); }

    [[nodiscard]] const toml::node& req(const std::string& k) const {
        if (!has(k)) throw ConfigError("missing required field '" + name(k) + "'");
        return *t_->get(k);
    }

    [[nodiscard]] double num(const std::string& k, double def) const { return has(k) ? to_num(req(k), k) : def; }
    [[nodiscard]] double num(const std::string& k) const { return to_num(req(k), k); }

    [[nodiscard]] int integer(const std::string& k, int def) const {
        if (!has(k)) return def;
        const auto v = req(k).value<int64_t>();
        if (!v || req(k).is_floating_point()) throw ConfigError("field '" + name(k) + "' must be an integer");
        return static_cast<int>(*v);
    }

    [[nodiscard]] bool boolean(const std::string& k, bool def) const {
        if (!has(k)) return def;
        const auto v = req(k).value<bool>();
        if (!v) throw ConfigError("field '" + name(k) + "' must be a boolean");
        return *v;
    }

    [[nodiscard]] std::string str(const std::string& k, const std::string& def) const {
        if (!has(k)) return def;
        const auto v = req(k).value<std::string>();
        if (!v) throw ConfigError("field '" + name(k) + "' must be a string");
        return *v;
    }

    [[nodiscard]] std::vector<double> nums(const std::string& k) const {
        const auto* a = req(k).as_array();
        if (!a) throw ConfigError("field '" + name(k) + "' must be an array of numbers");
        std::vector<double> out;
        for (const auto& e : *a) out.push_back(to_num(e, k));
        return out;
    }

    [[nodiscard]] std::vector<double> nums(const std::string& k, std::vector<double> def) const {
        return has(k) ? nums(k) : def;
    }

    [[nodiscard]] cplx complex(const std::string& k, cplx def) const { return has(k) ? to_cplx(req(k), k) : def; }

    [[nodiscard]] std::vector<cplx> cvec(const std::string& k) const {
        const auto* a = req(k).as_array();
        if (!a) throw ConfigError("field '" + name(k) + "' must be an array of amplitudes");
        std::vector<cplx> out;
        for (const auto& e : *a) out.push_back(to_cplx(e, k));
        return out;
    }

    [[nodiscard]] CMat cmat(const std::string& k) const {
        const auto* a = req(k).as_array();
        if (!a || a->empty()) throw ConfigError("field '" + name(k) + "' must be a nonempty array of rows");
        std::vector<std::vector<cplx>> rows;
        for (const auto& r : *a) {
            const auto* ra = r.as_array();
            if (!ra) throw ConfigError("field '" + name(k) + "' must be an array of rows");
            std::vector<cplx> row;
            for (const auto& e : *ra) row.push_back(to_cplx(e, k));
            if (!rows.empty() && row.size() != rows.front().size())
                throw ConfigError("field '" + name(k) + "' has rows of different lengths");
            rows.push_back(std::move(row));
        }
        CMat m(rows.size(), rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
        return m;
    }

    [[nodiscard]] Params sub(const std::string& k) const {
        if (!has(k)) return Params(nullptr, name(k));
        const auto* t = req(k).as_table();
        if (!t) throw ConfigError("field '" + name(k) + "' must be a table");
        return Params(t, name(k));
    }

private:
    [[nodiscard]] std::string name(const std::string& k) const { return prefix_.empty() ? k : prefix_ + "." + k; }

    [[nodiscard]] double to_num(const toml::node& n, const std::string& k) const {
        const auto v = n.value<double>();
        if (!v || !(n.is_integer() || n.is_floating_point())) throw ConfigError("field '" + name(k) + "' must be a number");
        return *v;
    }

    [[nodiscard]] cplx to_cplx(const toml::node& n, const std::string& k) const {
        if (const auto* a = n.as_array()) {
            if (a->size() != 2) throw ConfigError("field '" + name(k) + "': complex entries are [re, im]");
            return {to_num(*a->get(0), k), to_num(*a->get(1), k)};
        }
        return {to_num(n, k), 0.0};
    }

    const toml::table* t_;
    std::string prefix_;
};

sc::Tolerances read_tolerances(const toml::table& root) {
    sc::Tolerances tol;
    if (const auto* t = root["tolerances"].as_table()) {
        for (const auto& [k, v] : *t) {
            const auto d = v.value<double>();
            if (!d) throw ConfigError("field 'tolerances." + std::string(k.str()) + "' must be a number");
            tol[std::string(k.str())] = *d;
        }
    }
    return tol;
}

struct Output {
    std::vector<sc::Check> checks;
    std::vector<std::string> summary;
    std::vector<std::string> series_names;
    std::vector<std::vector<double>> columns;
    json matrices = json::object();
    std::vector<Trajectory> trajs;
};

void label_series(Output& out, const std::vector<double>& times, const std::vector<RVec>& probs) {
    out.series_names = {"t"};
    out.columns = {times};
    const long n = probs.empty() ? 0 : probs.front().size();
    for (long a = 0; a < n; ++a) {
        out.series_names.push_back("p_" + std::to_string(a));
        std::vector<double> col;
        for (const RVec& p : probs) col.push_back(p(a));
        out.columns.push_back(std::move(col));
    }
}

// ---------------------------------------------------------------- scenario builders

sc::NaiveConfig naive_config(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    sc::NaiveConfig nc;
    nc.c = p.cvec("c");
    nc.n_dev = p.integer("n_dev", 12);
    nc.steps = p.integer("steps", 200);
    nc.T = p.num("T", 1.0);
    nc.v_mode = p.str("v_mode", "exact");
    nc.n_traj = p.integer("n_traj", 0);
    const std::string schedule = p.str("schedule", "uniform");
    if (schedule == "uniform")
        nc.theta = sc::uniform_schedule(nc.d_p(), nc.n_dev, p.num("separation", 0.45 * M_PI));
    else if (schedule == "binary")
        nc.theta = sc::binary_schedule(nc.d_p(), nc.n_dev);
    else
        throw ConfigError("field 'parameters.schedule' must be uniform or binary");
    nc.seed = cfg.seed;
    nc.workers = cfg.workers;
    nc.tol = tol;
    sc::validate(nc);
    return nc;
}

Output run_naive(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    const sc::NaiveConfig nc = naive_config(p, cfg, tol);
    const sc::NaiveResult r = sc::run_naive(nc);
    Output out;
    out.checks = r.checks;
    out.summary.push_back("p = " + vec_str(r.branch_probs));
    out.summary.push_back("max_branch_overlap = " + short_num(r.max_overlap));
    out.summary.push_back("decoherence_time = " + short_num(r.tau));
    if (r.outcome_freq.size() > 0) out.summary.push_back("outcome_frequency = " + vec_str(r.outcome_freq));
    label_series(out, r.times, r.probs);
    out.matrices["composed"] = mat_json(r.composed);
    out.matrices["branch_overlap"] = mat_json(r.branch_overlap);
    out.matrices["branch_probs"] = vec_json(r.branch_probs);
    out.matrices["label_branch"] = r.label_branch;
    out.trajs = r.trajectories;
    if (p.has("probe_s")) {
        const sc::ProbeSweep sw = sc::near_degenerate_sweep(p.nums("probe_s"), nc);
        out.checks.insert(out.checks.end(), sw.checks.begin(), sw.checks.end());
        out.summary.push_back("probe_exponent = " + short_num(sw.exponent));
        json pts = json::array();
        for (const auto& pt : sw.points) pts.push_back({{"s", pt.s}, {"align_time", pt.align_time}});
        out.matrices["probe"] = pts;
    }
    return out;
}

sc::RealisticConfig realistic_config(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    sc::RealisticConfig rc;
    rc.f = p.cmat("f");
    rc.device_qubits = p.integer("device_qubits", 4);
    rc.env_dim = p.integer("env_dim", 64);
    rc.delta = p.num("delta", 1e-8);
    rc.coupling = p.num("coupling", 1.0);
    rc.eta = p.num("eta", 0.02);
    rc.steps = p.integer("steps", 200);
    rc.v_mode = p.str("v_mode", "exact");
    rc.threshold = p.num("threshold", kPartitionThreshold);
    rc.require_separation = p.boolean("require_separation", true);
    rc.n_traj = p.integer("n_traj", 0);
    rc.seed = cfg.seed;
    rc.workers = cfg.workers;
    rc.tol = tol;
    sc::validate(rc);
    return rc;
}

Output run_realistic(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    const sc::RealisticResult r = sc::run_realistic(realistic_config(p, cfg, tol));
    Output out;
    out.checks = r.checks;
    out.summary.push_back("ergodic_sets = " + std::to_string(r.partition.sets.size()));
    out.summary.push_back("expected = " + vec_str(r.expected));
    out.summary.push_back("inclusive = " + vec_str(r.inclusive_final));
    out.summary.push_back("max_branch_overlap = " + short_num(r.max_overlap));
    out.summary.push_back("cross_set_probability = " + short_num(r.cross_prob));
    out.summary.push_back("decoherence_time = " + short_num(r.tau));
    label_series(out, r.times, r.probs);
    json sets = json::array();
    for (const auto& s : r.partition.sets) sets.push_back(s);
    out.matrices["ergodic_sets"] = sets;
    out.matrices["null_set"] = r.partition.null_set;
    out.matrices["label_sector"] = r.label_sector;
    out.matrices["xi_overlap_abs"] = mat_json(r.xi_overlap.cwiseAbs());
    out.matrices["inclusive_final"] = vec_json(r.inclusive_final);
    out.matrices["inclusive_pushed"] = vec_json(r.inclusive_pushed);
    out.trajs = r.trajectories;
    return out;
}

sc::BinnedConfig binned_config(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    sc::BinnedConfig bc;
    if (p.has("grid")) {
        bc.grid = p.nums("grid");
    } else {
        const double lo = p.num("grid_min"), hi = p.num("grid_max");
        const int n = p.integer("grid_points", 0);
        if (n < 2) throw ConfigError("missing required field 'parameters.grid_points' (at least 2)");
        for (int k = 0; k < n; ++k) bc.grid.push_back(lo + (hi - lo) * k / (n - 1));
    }
    if (p.has("xi")) {
        bc.xi = p.cvec("xi");
    } else {
        const Params g = p.sub("gaussian");
        const double mu = g.num("mu"), sigma = g.num("sigma");
        for (double x : bc.grid) bc.xi.emplace_back(std::exp(-0.25 * (x - mu) * (x - mu) / (sigma * sigma)), 0.0);
    }
    bc.edges = p.nums("edges");
    bc.n_dev = p.integer("n_dev", 8);
    bc.steps = p.integer("steps", 100);
    bc.T = p.num("T", 1.0);
    bc.n_traj = p.integer("n_traj", 0);
    bc.seed = cfg.seed;
    bc.workers = cfg.workers;
    bc.tol = tol;
    (void)sc::bin_masses(bc);
    return bc;
}

Output run_binned(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    const sc::BinnedResult r = sc::run_binned_position(binned_config(p, cfg, tol));
    Output out;
    out.checks = r.checks;
    out.summary.push_back("bin_masses = " + vec_str(r.masses));
    out.summary.push_back("p = " + vec_str(r.naive.branch_probs));
    out.summary.push_back("max_branch_overlap = " + short_num(r.naive.max_overlap));
    label_series(out, r.naive.times, r.naive.probs);
    out.matrices["bin_masses"] = vec_json(r.masses);
    out.matrices["composed"] = mat_json(r.naive.composed);
    out.matrices["branch_overlap"] = mat_json(r.naive.branch_overlap);
    out.trajs = r.naive.trajectories;
    return out;
}

sc::EprConfig epr_config(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    sc::EprConfig ec;
    ec.c_plus = p.complex("c_plus", ec.c_plus);
    ec.c_minus = p.complex("c_minus", ec.c_minus);
    ec.theta = p.num("theta", ec.theta);
    ec.phi = p.num("phi", ec.phi);
    ec.a_first = p.boolean("a_first", true);
    ec.t_a = p.num("t_a", ec.t_a);
    ec.width = p.num("width", ec.width);
    ec.t_b = p.num("t_b", ec.t_b);
    ec.t_end = p.num("t_end", ec.t_end);
    ec.eta = p.num("eta", ec.eta);
    ec.n_traj = p.integer("n_traj", 0);
    ec.seed = cfg.seed;
    ec.workers = cfg.workers;
    ec.tol = tol;
    (void)sc::epr_analytic(ec.c_plus, ec.c_minus, ec.theta, ec.phi);
    return ec;
}

std::pair<double, double> angle_pair(const Params& p, const std::string& k, std::pair<double, double> def) {
    if (!p.has(k)) return def;
    const auto v = p.nums(k);
    if (v.size() != 2) throw ConfigError("field 'parameters." + k + "' must hold two angles");
    return {v[0], v[1]};
}

Output run_epr(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    const sc::EprConfig ec = epr_config(p, cfg, tol);
    const sc::EprResult r = sc::run_epr(ec);
    Output out;
    out.checks = r.checks;
    const auto flat = [](const Eigen::Matrix2d& j) {
        RVec v(4);
        v << j(0, 0), j(0, 1), j(1, 0), j(1, 1);
        return v;
    };
    out.summary.push_back("joint_analytic(++,+-,-+,--) = " + vec_str(flat(r.analytic.joint)));
    out.summary.push_back("joint_dynamics(++,+-,-+,--) = " + vec_str(flat(r.dynamics.joint)));
    out.summary.push_back("p_A = " + vec_str(r.analytic.p_a));
    out.summary.push_back("outcome_violation = " + short_num(r.outcome_violation));
    if (ec.n_traj > 0) out.summary.push_back("joint_sampled(++,+-,-+,--) = " + vec_str(flat(r.sampled_joint)));
    if (p.has("chsh_angles_a") || p.has("chsh_angles_b")) {
        const double s = sc::chsh(ec.c_plus, ec.c_minus, angle_pair(p, "chsh_angles_a", {0.0, M_PI / 2}),
                                  angle_pair(p, "chsh_angles_b", {M_PI / 4, 3 * M_PI / 4}));
        out.summary.push_back("S = " + format_double(s));
    }
    std::vector<double> times{0.0};
    std::vector<RVec> probs{r.dynamics.initial};
    for (const auto& st : r.dynamics.steps) {
        times.push_back(st.time + st.eta);
        probs.push_back(st.cond * probs.back());
    }
    label_series(out, times, probs);
    out.matrices["joint_analytic"] = mat_json(r.analytic.joint);
    out.matrices["joint_dynamics"] = mat_json(r.dynamics.joint);
    out.matrices["cond_b"] = mat_json(r.analytic.cond_b);
    if (ec.n_traj > 0) {
        out.matrices["joint_sampled"] = mat_json(r.sampled_joint);
        out.matrices["outcomes"] = r.outcomes;
    }
    out.trajs = r.trajectories;
    return out;
}

Output run_chsh(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    const sc::EprConfig ec = epr_config(p, cfg, tol);
    const auto a = angle_pair(p, "angles_a", {0.0, M_PI / 2});
    const auto b = angle_pair(p, "angles_b", {M_PI / 4, 3 * M_PI / 4});
    const double s = sc::chsh(ec.c_plus, ec.c_minus, a, b);
    Output out;
    out.summary.push_back("S = " + format_double(s));
    out.checks.push_back(sc::check_le("tsirelson_bound", s - 2 * std::sqrt(2.0), sc::tolerance(tol, "tsirelson", 1e-9)));
    out.matrices["S"] = s;
    if (ec.n_traj > 0) {
        const sc::ChshResult cs = sc::chsh_sampled(ec, a, b, ec.n_traj);
        out.summary.push_back("S_sampled = " + format_double(cs.s));
        out.summary.push_back("S_stderr = " + format_double(cs.stderr_));
        out.checks.push_back(
            sc::check_le("sampled_S_sigmas", std::abs(cs.s - s) / cs.stderr_, sc::tolerance(tol, "sampled_sigmas", 5.0)));
        out.matrices["S_sampled"] = cs.s;
        out.matrices["S_stderr"] = cs.stderr_;
        out.matrices["E_sampled"] = cs.e;
    }
    return out;
}

ct::CrossoverModel crossover_model(const Params& p) {
    ct::CrossoverModel m;
    m.p0 = p.num("p0");
    m.a1 = p.num("a1");
    m.a2 = p.num("a2");
    m.delta = p.num("delta");
    m.q_plus = p.num("q_plus", -1.0);
    m.q_minus = p.num("q_minus", -1.0);
    m.validate();
    return m;
}

Output run_crossover(const Params& p, const ExperimentConfig&, const sc::Tolerances& tol) {
    const ct::CrossoverModel m = crossover_model(p);
    const std::vector<double> etas = p.nums("eta", {5e-4, 1e-3, 2e-3});
    const double t0 = p.num("t0", -0.0203), t1 = p.num("t1", 0.0197), dt = p.num("continuum_dt", 1e-5);
    if (etas.empty()) throw ConfigError("field 'parameters.eta' must not be empty");
    Output out;
    std::vector<ct::MacroflipReport> reps;
    for (double eta : etas) {
        ct::check_regime(m, eta);
        reps.push_back(ct::macroflip_compare(m, eta, t0, t1, dt));
    }
    double worst_cross = 0, flip = reps.front().continuum_flip_prob;
    bool keep = true, same = true;
    for (const auto& r : reps) {
        worst_cross = std::max(worst_cross, r.coarse_cross_prob);
        keep = keep && r.coarse_labels_keep_content;
        same = same && r.coarse_end_content == reps.front().coarse_end_content;
        flip = std::min(flip, r.continuum_flip_prob);
    }
    out.checks.push_back(sc::check_ge("continuum_flip_probability", flip, sc::tolerance(tol, "continuum_flip", 0.9)));
    out.checks.push_back(sc::check_le("coarse_cross_probability", worst_cross, sc::tolerance(tol, "coarse_cross", 1e-4)));
    out.checks.push_back(sc::check_ge("coarse_labels_keep_content", keep ? 1.0 : 0.0, 1.0));
    out.checks.push_back(sc::check_ge("coarse_labels_eta_invariant", same ? 1.0 : 0.0, 1.0));
    out.summary.push_back("continuum_flip_probability = " + short_num(flip));
    out.summary.push_back("coarse_cross_probability = " + short_num(worst_cross));
    out.summary.push_back("flip_window = " + short_num(reps.front().flip_window));
    out.summary.push_back("tau = " + short_num(m.tau()));
    const auto& r0 = reps.front();
    out.series_names = {"t", "p_plus", "p_minus", "theta"};
    out.columns = {r0.times, r0.p_plus, r0.p_minus, r0.theta};
    json per = json::array();
    for (const auto& r : reps)
        per.push_back({{"eta", r.eta},
                       {"coarse_cross_prob", r.coarse_cross_prob},
                       {"continuum_flip_prob", r.continuum_flip_prob},
                       {"flip_window", r.flip_window},
                       {"coarse_start_content", r.coarse_start_content},
                       {"coarse_end_content", r.coarse_end_content}});
    out.matrices["reports"] = per;
    return out;
}

sc::TypicalityConfig typicality_config(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    sc::TypicalityConfig tc;
    tc.d_a = p.integer("d_a", 0);
    tc.d_e = p.integer("d_e", 0);
    if (!p.has("d_a")) (void)p.req("d_a");
    if (!p.has("d_e")) (void)p.req("d_e");
    tc.n_samples = p.integer("n_samples", 200);
    tc.mode = p.str("mode", "none");
    tc.d_r = p.integer("d_r", 0);
    tc.epsilon = p.num("epsilon", 1.0);
    tc.excitations = p.integer("excitations", 0);
    tc.seed = cfg.seed;
    tc.workers = cfg.workers;
    tc.tol = tol;
    return tc;
}

Output run_typicality(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    const sc::TypicalityResult r = sc::run_typicality(typicality_config(p, cfg, tol));
    Output out;
    out.checks = r.checks;
    out.summary.push_back("mean_purity = " + short_num(r.mean_purity));
    out.summary.push_back("purity_stderr = " + short_num(r.purity_stderr));
    if (r.purity_target > 0) out.summary.push_back("purity_target = " + short_num(r.purity_target));
    out.summary.push_back("mean_trace_distance = " + short_num(r.mean_distance));
    out.summary.push_back("max_trace_distance = " + short_num(r.max_distance));
    if (r.beta != 0) out.summary.push_back("beta = " + short_num(r.beta));
    out.matrices["reference"] = mat_json(r.reference.real());
    return out;
}

Output run_chain_analyze(const Params& p, const ExperimentConfig& cfg, const sc::Tolerances& tol) {
    const std::string mode = p.str("mode", "weak-coupling");
    Output out;
    if (mode == "weak-coupling") {
        const int d_a = p.integer("d_a", 2), d_e = p.integer("d_e", 8);
        const int instances = p.integer("instances", 100), steps = p.integer("steps", 20);
        const double eta = p.num("eta", 0.05), coupling = p.num("coupling", 0.1);
        if (instances < 1 || steps < 1 || !(eta > 0)) throw ConfigError("chain-analyze: instances, steps and eta must be positive");
        const bool convergence = p.boolean("convergence", false);
        std::vector<sc::SumRuleStats> stats(instances);
        std::vector<double> ratio(instances, 0.0);
        sc::parallel_for(instances, cfg.workers, [&](long k) {
            const auto inst = sc::weak_coupling_instance(d_a, d_e, sc::derive_seed(cfg.seed, k), coupling);
            stats[k] = sc::weak_coupling_sum_rules(inst, eta, steps);
            if (convergence)
                ratio[k] = sc::perturbative_discrepancy(inst, eta) / sc::perturbative_discrepancy(inst, eta / 2);
        });
        double row = 0, col = 0, tr = 0;
        int consistent = 0, total = 0;
        std::vector<double> idx, rows, cols, trs;
        for (int k = 0; k < instances; ++k) {
            row = std::max(row, stats[k].max_row);
            col = std::max(col, stats[k].max_col);
            tr = std::max(tr, stats[k].max_transport);
            consistent += stats[k].consistent_steps;
            total += stats[k].total_steps;
            idx.push_back(k);
            rows.push_back(stats[k].max_row);
            cols.push_back(stats[k].max_col);
            trs.push_back(stats[k].max_transport);
        }
        out.checks.push_back(sc::check_le("sum_rule_rows", row, sc::tolerance(tol, "sum_rule", 1e-9)));
        out.checks.push_back(sc::check_le("sum_rule_columns", col, sc::tolerance(tol, "sum_rule", 1e-9)));
        out.checks.push_back(sc::check_le("probability_transport", tr, sc::tolerance(tol, "transport", 1e-8)));
        out.summary.push_back("consistent_steps = " + std::to_string(consistent) + " / " + std::to_string(total));
        out.summary.push_back("max_sum_rule_residual = " + short_num(std::max(row, col)));
        out.summary.push_back("max_transport_error = " + short_num(tr));
        out.series_names = {"instance", "max_row", "max_col", "max_transport"};
        out.columns = {idx, rows, cols, trs};
        if (convergence) {
            const auto [lo, hi] = std::minmax_element(ratio.begin(), ratio.end());
            out.checks.push_back(sc::check_ge("halving_ratio_min", *lo, sc::tolerance(tol, "ratio_min", 3.0)));
            out.checks.push_back(sc::check_le("halving_ratio_max", *hi, sc::tolerance(tol, "ratio_max", 5.0)));
            out.summary.push_back("halving_ratio_range = (" + short_num(*lo) + ", " + short_num(*hi) + ")");
            out.series_names.push_back("halving_ratio");
            out.columns.push_back(ratio);
        }
    } else if (mode == "toy") {
        const int d = p.integer("d", 8);
        const double prob = p.num("p", 0.01), eta = p.num("eta", 1.0);
        const double tau = 2 * eta / (prob * d);
        const int n_max = p.integer("n_max", static_cast<int>(std::ceil(50 * tau / eta)));
        const TransitionStep st = toy_chain(d, prob, cfg.seed, eta);
        const ConvergenceReport rep = equilibrium_convergence(st, n_max);
        const double fitted = rep.decay_steps * eta;
        out.checks.push_back(sc::check_le("convergence_time_rel_error", std::abs(fitted - tau) / tau,
                                          sc::tolerance(tol, "convergence_time", 0.1)));
        out.checks.push_back(sc::check_le("final_column_deviation",
                                          rep.max_deviation.empty() ? 1.0 : rep.max_deviation.back(),
                                          sc::tolerance(tol, "stationary", 1e-6)));
        out.summary.push_back("fitted_convergence_time = " + short_num(fitted));
        out.summary.push_back("predicted_convergence_time = " + short_num(tau));
        out.summary.push_back("steps = " + std::to_string(n_max));
        std::vector<double> ks(rep.steps.begin(), rep.steps.end());
        out.series_names = {"step", "max_deviation"};
        out.columns = {ks, rep.max_deviation};
        out.matrices["transition"] = mat_json(st.cond);
        out.matrices["stationary"] = vec_json(rep.stationary);
    } else {
        throw ConfigError("field 'parameters.mode' must be weak-coupling or toy");
    }
    return out;
}

using Runner = Output (*)(const Params&, const ExperimentConfig&, const sc::Tolerances&);

Runner runner_for(const std::string& s) {
    if (s == "naive") return run_naive;
    if (s == "realistic") return run_realistic;
    if (s == "binned") return run_binned;
    if (s == "epr") return run_epr;
    if (s == "chsh") return run_chsh;
    if (s == "crossover") return run_crossover;
    if (s == "typicality") return run_typicality;
    if (s == "chain-analyze") return run_chain_analyze;
    std::string list;
    for (const auto& n : scenario_names()) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown scenario '" + s + "'; valid scenarios: " + list);
}

json checks_json(const std::vector<sc::Check>& checks) {
    json arr = json::array();
    for (const auto& c : checks)
        arr.push_back({{"name", c.name},
                       {"measured", c.measured},
                       {"tolerance", c.tolerance},
                       {"relation", c.relation},
                       {"pass", c.pass},
                       {"asserted", c.asserted}});
    return arr;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

toml::table parse_toml(const std::string& text) {
    try {
        return toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << "config parse error: " << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(os.str());
    }
}

int env_workers() {
    if (const char* w = std::getenv("MODALCHAIN_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(w, &end, 10);
        if (end != w && *end == '\0' && v > 0) return static_cast<int>(v);
    }
    return 1;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const Overrides& ov) {
    const toml::table root = parse_toml(text);
    ExperimentConfig cfg;
    cfg.source = text;
    const auto sc_name = root["scenario"].value<std::string>();
    if (!root.contains("scenario")) throw ConfigError("missing required field 'scenario'");
    if (!sc_name) throw ConfigError("field 'scenario' must be a string");
    cfg.scenario = *sc_name;
    (void)runner_for(cfg.scenario);
    if (root.contains("seed")) {
        const auto s = root["seed"].value<int64_t>();
        if (!s || !root["seed"].is_integer()) throw ConfigError("field 'seed' must be an integer");
        cfg.seed = static_cast<std::uint64_t>(*s);
    }
    if (root.contains("output")) {
        const auto o = root["output"].value<std::string>();
        if (!o) throw ConfigError("field 'output' must be a string");
        cfg.output = *o;
    }
    cfg.emit = emit_names();
    if (root.contains("emit")) {
        const auto* a = root["emit"].as_array();
        if (!a) throw ConfigError("field 'emit' must be an array of strings");
        cfg.emit.clear();
        for (const auto& e : *a) {
            const auto v = e.value<std::string>();
            if (!v || !emit_names().count(*v))
                throw ConfigError("field 'emit' entries must be summary, trajectories, matrices or timeseries");
            cfg.emit.insert(*v);
        }
    }
    if (root.contains("parameters") && !root["parameters"].is_table())
        throw ConfigError("field 'parameters' must be a table");
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.out) cfg.output = *ov.out;
    if (ov.emit) cfg.emit = *ov.emit;
    cfg.workers = ov.workers > 0 ? ov.workers : env_workers();
    json echo = to_json(root);
    echo["seed"] = cfg.seed;
    cfg.echo = echo.dump();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& ov) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), ov);
}

void validate_config(const ExperimentConfig& cfg) {
    const toml::table root = parse_toml(cfg.source);
    const Params p(root["parameters"].as_table(), "parameters");
    const sc::Tolerances tol = read_tolerances(root);
    try {
        if (cfg.scenario == "naive") {
            (void)naive_config(p, cfg, tol);
        } else if (cfg.scenario == "realistic") {
            (void)realistic_config(p, cfg, tol);
        } else if (cfg.scenario == "binned") {
            (void)binned_config(p, cfg, tol);
        } else if (cfg.scenario == "epr" || cfg.scenario == "chsh") {
            (void)epr_config(p, cfg, tol);
        } else if (cfg.scenario == "crossover") {
            const ct::CrossoverModel m = crossover_model(p);
            for (double eta : p.nums("eta", {5e-4, 1e-3, 2e-3})) ct::check_regime(m, eta);
        } else if (cfg.scenario == "typicality") {
            sc::TypicalityConfig tc = typicality_config(p, cfg, tol);
            tc.n_samples = std::min(tc.n_samples, 1);
            (void)sc::run_typicality(tc);
        } else if (cfg.scenario == "chain-analyze") {
            const std::string mode = p.str("mode", "weak-coupling");
            if (mode != "weak-coupling" && mode != "toy") throw ConfigError("field 'parameters.mode' must be weak-coupling or toy");
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    } catch (const std::domain_error& e) {
        throw ConfigError(e.what());
    }
}

void emit_trajectories(const std::vector<Trajectory>& trajs, const std::filesystem::path& path) {
    std::vector<const Trajectory*> order;
    for (const auto& t : trajs) order.push_back(&t);
    std::stable_sort(order.begin(), order.end(), [](const Trajectory* a, const Trajectory* b) { return a->seed < b->seed; });
    std::string out;
    for (const Trajectory* t : order)
        for (std::size_t k = 0; k < t->labels.size(); ++k) {
            out += "{\"seed\":" + std::to_string(t->seed) + ",\"step_index\":" + std::to_string(k) +
                   ",\"time\":" + format_double(t->times.at(k)) + ",\"label\":" + std::to_string(t->labels[k]) + "}\n";
        }
    write_text(path, out);
}

void emit_timeseries(const std::vector<std::string>& names, const std::vector<std::vector<double>>& columns,
                     const std::filesystem::path& path) {
    if (names.size() != columns.size()) throw std::invalid_argument("emit_timeseries: names and columns differ in count");
    for (const auto& c : columns)
        if (c.size() != columns.front().size()) throw std::invalid_argument("emit_timeseries: column lengths differ");
    std::string out;
    for (std::size_t k = 0; k < names.size(); ++k) out += (k ? "," : "") + names[k];
    out += "\n";
    const std::size_t rows = columns.empty() ? 0 : columns.front().size();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < columns.size(); ++k) out += (k ? "," : "") + format_double(columns[k][r]);
        out += "\n";
    }
    write_text(path, out);
}

RunOutcome run(const ExperimentConfig& cfg) {
    RunOutcome res;
    const auto start = std::chrono::steady_clock::now();
    Output out;
    try {
        const toml::table root = parse_toml(cfg.source);
        const Params p(root["parameters"].as_table(), "parameters");
        out = runner_for(cfg.scenario)(p, cfg, read_tolerances(root));
        res.exit_code = sc::all_pass(out.checks) ? 0 : 2;
        if (res.exit_code == 2) {
            for (const auto& c : out.checks)
                if (c.asserted && !c.pass) res.message += (res.message.empty() ? "assertion failed: " : ", ") + c.name;
        }
    } catch (const ConfigError& e) {
        res.exit_code = 1;
        res.message = e.what();
    } catch (const sc::SeparationError& e) {
        res.exit_code = 2;
        res.message = e.what();
    } catch (const std::invalid_argument& e) {
        res.exit_code = 1;
        res.message = e.what();
    } catch (const std::domain_error& e) {
        res.exit_code = 2;
        res.message = e.what();
    } catch (const std::exception& e) {
        res.exit_code = 1;
        res.message = e.what();
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.checks = out.checks;
    res.summary = out.summary;

    std::filesystem::create_directories(cfg.output);
    json manifest;
    manifest["artifact_version"] = kArtifactVersion;
    manifest["scenario"] = cfg.scenario;
    manifest["seed"] = cfg.seed;
    manifest["config"] = json::parse(cfg.echo);
    manifest["exit_code"] = res.exit_code;
    manifest["message"] = res.message;
    manifest["checks"] = checks_json(out.checks);
    manifest["wall_clock_seconds"] = wall;
    write_text(cfg.output / "manifest.json", manifest.dump(2) + "\n");
    if (res.exit_code == 1) return res;

    if (cfg.emit.count("summary")) {
        std::string s = "scenario = " + cfg.scenario + "\nseed = " + std::to_string(cfg.seed) + "\n";
        for (const auto& line : out.summary) s += line + "\n";
        for (const auto& c : out.checks)
            s += std::string(c.asserted ? (c.pass ? "PASS " : "FAIL ") : "INFO ") + c.name + " " + short_num(c.measured) +
                 " " + c.relation + " " + short_num(c.tolerance) + "\n";
        if (!res.message.empty()) s += "error: " + res.message + "\n";
        write_text(cfg.output / "summary.txt", s);
    }
    if (cfg.emit.count("timeseries") && !out.series_names.empty())
        emit_timeseries(out.series_names, out.columns, cfg.output / "timeseries.csv");
    if (cfg.emit.count("matrices")) write_text(cfg.output / "matrices.json", out.matrices.dump(1) + "\n");
    if (cfg.emit.count("trajectories") && !out.trajs.empty())
        emit_trajectories(out.trajs, cfg.output / "trajectories.jsonl");
    return res;
}

}  // namespace modalchain::cli
