#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <unsupported/Eigen/KroneckerProduct>

#include "modalchain/scenarios.hpp"

namespace modalchain::scenarios {

namespace {

// Spin eigenstates along an axis at angle a to z in the (x, z) plane; column 0 = +, 1 = -.
Eigen::Matrix2cd axis_states(double a) {
    const double c = std::cos(a / 2), s = std::sin(a / 2);
    Eigen::Matrix2cd m;
    m << c, -s, s, c;
    return m;
}

Eigen::Matrix2cd sigma_axis(double a) {
    Eigen::Matrix2cd m;
    m << std::cos(a), std::sin(a), std::sin(a), -std::cos(a);
    return m;
}

// Device pointer states after a full window: column 0 = +, 1 = -.
Eigen::Matrix2cd pointer_states() {
    Eigen::Matrix2cd m;
    const double r = 1.0 / std::sqrt(2.0);
    m << r, r, -r, r;
    return m;
}

void check_amplitudes(cplx cp, cplx cm) {
    const double n = std::norm(cp) + std::norm(cm);
    if (std::abs(n - 1.0) > 1e-12) {
        std::ostringstream os;
        os << "epr: |c_+|^2 + |c_-|^2 = " << n << " differs from 1";
        throw std::invalid_argument(os.str());
    }
}

void validate(const EprConfig& cfg) {
    check_amplitudes(cfg.c_plus, cfg.c_minus);
    if (!(cfg.eta > 0) || !(cfg.width > 0)) throw std::invalid_argument("epr: eta and width must be positive");
    const double first = std::min(cfg.t_a, cfg.t_b), second = std::max(cfg.t_a, cfg.t_b);
    if (first < 0 || first + cfg.width > second + 1e-12 || second + cfg.width > cfg.t_end + 1e-12)
        throw std::invalid_argument("epr: interaction windows must be ordered, disjoint and end before t_end");
}

double overlap_len(double lo, double hi, double a, double b) { return std::max(0.0, std::min(hi, b) - std::max(lo, a)); }

Eigen::Matrix2d pointer_diagonal(const StateVector& psi) {
    const DensityMatrix rho = reduced_density(psi, {2, 3});
    const Eigen::Matrix2cd p = pointer_states();
    Eigen::Matrix2d out;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            Eigen::Vector4cd v;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) v(a * 2 + b) = p(a, i) * p(b, j);
            out(i, j) = (v.adjoint() * rho.mat * v)(0, 0).real();
        }
    return out;
}

}  // namespace

EprAnalytic epr_analytic(cplx c_plus, cplx c_minus, double theta, double phi) {
    check_amplitudes(c_plus, c_minus);
    const double ct = std::cos(theta / 2), st = std::sin(theta / 2);
    // psi(:, i) in the (z+, z-) basis.
    Eigen::Matrix2cd psi;
    psi.col(0) << c_minus * st, c_plus * ct;
    psi.col(1) << c_minus * ct, -c_plus * st;
    const Eigen::Matrix2cd m = axis_states(phi);
    EprAnalytic out;
    for (int i = 0; i < 2; ++i) {
        out.p_a(i) = psi.col(i).squaredNorm();
        for (int j = 0; j < 2; ++j) out.joint(i, j) = std::norm(m.col(j).dot(psi.col(i)));
    }
    out.p_b = out.joint.colwise().sum().transpose();
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) out.cond_b(j, i) = out.p_a(i) > 0 ? out.joint(i, j) / out.p_a(i) : 0.0;
    return out;
}

EprDynamics epr_dynamics(const EprConfig& cfg) {
    validate(cfg);
    const DimSignature dims({2, 2, 2, 2});
    const std::vector<int> cut{2, 3};
    CVec amp = CVec::Zero(16);
    // |A_0 B_0> (x) (c_+ |z+ z-> + c_- |z- z+>), factor order (1, 2, A, B).
    amp(dims.flat_index({0, 1, 0, 0})) = cfg.c_plus;
    amp(dims.flat_index({1, 0, 0, 0})) = cfg.c_minus;
    StateVector psi(amp, dims);

    Eigen::Matrix2cd sy;
    sy << 0, cplx(0, -1), cplx(0, 1), 0;
    const double g = -M_PI / (2 * cfg.width);
    const CMat h_a = embed_operator(CMat(g * 0.5 * Eigen::kroneckerProduct(sigma_axis(cfg.theta), sy)), dims, {0, 2});
    const CMat h_b = embed_operator(CMat(g * 0.5 * Eigen::kroneckerProduct(sigma_axis(cfg.phi), sy)), dims, {1, 3});
    const double ta = cfg.a_first ? cfg.t_a : cfg.t_b;
    const double tb = cfg.a_first ? cfg.t_b : cfg.t_a;

    EprDynamics dyn;
    const int n_steps = static_cast<int>(std::lround(cfg.t_end / cfg.eta));
    OnticDecomposition prev = ontic_decompose(psi, cut, 0.0);
    dyn.initial = prev.probs;
    std::optional<DensityMatrix> rho2_before;
    for (int k = 0; k < n_steps; ++k) {
        const double t = k * cfg.eta, tn = (k + 1) * cfg.eta;
        if (!rho2_before && tn > ta) rho2_before = reduced_density(psi, {1});
        const double da = overlap_len(t, tn, ta, ta + cfg.width);
        const double db = overlap_len(t, tn, tb, tb + cfg.width);
        const Propagator u = (da > 0 || db > 0) ? propagate(CMat(h_a * (da / cfg.eta) + h_b * (db / cfg.eta)), cfg.eta)
                                                : Propagator{CMat::Identity(16, 16), cfg.eta};
        psi = StateVector(u.mat * psi.amp, dims);
        if (rho2_before && t < ta + cfg.width && tn >= ta + cfg.width - 1e-12) {
            const DensityMatrix after = reduced_density(psi, {1});
            dyn.rho2_change = (after.mat - rho2_before->mat).cwiseAbs().maxCoeff();
        }
        OnticDecomposition next = match_labels(prev, ontic_decompose(psi, cut, tn)).first;
        TransitionStep st = transition_matrix(v_exact(prev, next, u), prev.probs, cfg.eta, t);
        if (!st.consistent) {
            std::ostringstream os;
            os << "epr: transition step " << k << " at t=" << t << " is inconsistent; use a smaller eta (max outflow "
               << st.outflow_max << ")";
            throw std::domain_error(os.str());
        }
        dyn.transport_err = std::max(dyn.transport_err, (st.cond * prev.probs - next.probs).cwiseAbs().maxCoeff());
        dyn.steps.push_back(std::move(st));
        prev = std::move(next);
    }
    dyn.final_dec = prev;
    dyn.final_state = psi;
    dyn.joint = pointer_diagonal(psi);

    const Eigen::Matrix2cd p = pointer_states();
    for (int a = 0; a < prev.labels(); ++a) {
        std::array<double, 4> w{};
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                Eigen::Vector4cd v;
                for (int x = 0; x < 2; ++x)
                    for (int y = 0; y < 2; ++y) v(x * 2 + y) = p(x, i) * p(y, j);
                w[i * 2 + j] = std::norm(v.dot(prev.ontic[a]));
            }
        dyn.readout.push_back(w);
    }
    return dyn;
}

std::vector<int> epr_readout(const EprDynamics& dyn, const std::vector<Trajectory>& trajs) {
    std::vector<int> out;
    out.reserve(trajs.size());
    const std::uint64_t counter = dyn.steps.size() + 1;
    for (const Trajectory& tr : trajs) {
        const auto& w = dyn.readout.at(tr.labels.back());
        out.push_back(sample_categorical(Eigen::Map<const RVec>(w.data(), 4), counter_uniform(tr.seed, counter)));
    }
    return out;
}

namespace {

Eigen::Matrix2d sample_joint(const EprDynamics& dyn, int n_traj, std::uint64_t seed, int workers,
                             std::vector<Trajectory>* keep, std::vector<int>* outcomes) {
    std::vector<Trajectory> trajs(n_traj);
    parallel_for(n_traj, workers,
                 [&](long k) { trajs[k] = sample_trajectory(dyn.steps, dyn.initial, derive_seed(seed, k)); });
    const std::vector<int> res = epr_readout(dyn, trajs);
    Eigen::Matrix2d j = Eigen::Matrix2d::Zero();
    for (int r : res) j(r / 2, r % 2) += 1.0;
    if (n_traj > 0) j /= n_traj;
    if (keep) *keep = std::move(trajs);
    if (outcomes) *outcomes = res;
    return j;
}

double correlation(const Eigen::Matrix2d& j) { return j(0, 0) + j(1, 1) - j(0, 1) - j(1, 0); }

}  // namespace

EprResult run_epr(const EprConfig& cfg) {
    EprResult res;
    res.analytic = epr_analytic(cfg.c_plus, cfg.c_minus, cfg.theta, cfg.phi);
    res.dynamics = epr_dynamics(cfg);
    res.max_joint_diff = (res.analytic.joint - res.dynamics.joint).cwiseAbs().maxCoeff();

    // Parameter independence: A's marginal at a second B setting, analytic and dynamical.
    const double phi2 = cfg.phi + 1.0;
    EprConfig other = cfg;
    other.phi = phi2;
    const EprAnalytic an2 = epr_analytic(cfg.c_plus, cfg.c_minus, cfg.theta, phi2);
    const EprDynamics dyn2 = epr_dynamics(other);
    const Eigen::Vector2d pa_dyn = res.dynamics.joint.rowwise().sum();
    const Eigen::Vector2d pa_dyn2 = dyn2.joint.rowwise().sum();
    Eigen::Vector2d closed;
    const double c2 = std::pow(std::cos(cfg.theta / 2), 2), s2 = std::pow(std::sin(cfg.theta / 2), 2);
    closed << std::norm(cfg.c_plus) * c2 + std::norm(cfg.c_minus) * s2, std::norm(cfg.c_minus) * c2 + std::norm(cfg.c_plus) * s2;
    res.param_independence = std::max({(pa_dyn - pa_dyn2).cwiseAbs().maxCoeff(),
                                       (res.analytic.joint.rowwise().sum() - an2.joint.rowwise().sum()).cwiseAbs().maxCoeff(),
                                       (res.analytic.p_a - closed).cwiseAbs().maxCoeff()});
    res.outcome_violation = std::abs(res.analytic.cond_b(0, 0) - res.analytic.p_b(0));

    EprConfig swapped = cfg;
    swapped.a_first = !cfg.a_first;
    res.frame_diff = (epr_dynamics(swapped).joint - res.dynamics.joint).cwiseAbs().maxCoeff();

    const double norm_err = std::abs(res.dynamics.joint.sum() - 1.0);
    res.checks.push_back(check_le("joint_analytic_vs_dynamics", res.max_joint_diff, tolerance(cfg.tol, "joint", 1e-9)));
    res.checks.push_back(check_le("joint_normalization", norm_err, tolerance(cfg.tol, "normalization", 1e-10)));
    res.checks.push_back(check_le("rho2_unchanged", res.dynamics.rho2_change, tolerance(cfg.tol, "rho2", 1e-12)));
    res.checks.push_back(
        check_le("parameter_independence", res.param_independence, tolerance(cfg.tol, "parameter_independence", 1e-12)));
    res.checks.push_back(check_le("probability_transport", res.dynamics.transport_err, tolerance(cfg.tol, "transport", 1e-8)));
    res.checks.push_back(check_le("frame_invariance", res.frame_diff, tolerance(cfg.tol, "frame", 1e-9)));
    res.checks.push_back(check_ge("outcome_violation", res.outcome_violation, tolerance(cfg.tol, "outcome_violation", 0.1),
                                  false));

    if (cfg.n_traj > 0) {
        res.sampled_joint = sample_joint(res.dynamics, cfg.n_traj, cfg.seed, cfg.workers, &res.trajectories, &res.outcomes);
        double sig = 0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const double p = res.dynamics.joint(i, j);
                const double se = std::sqrt(std::max(p * (1 - p), 1e-300) / cfg.n_traj);
                sig = std::max(sig, std::abs(res.sampled_joint(i, j) - p) / se);
            }
        res.checks.push_back(check_le("sampled_joint_sigmas", sig, tolerance(cfg.tol, "sampled_sigmas", 5.0)));
    }
    return res;
}

double chsh(cplx c_plus, cplx c_minus, std::pair<double, double> angles_a, std::pair<double, double> angles_b) {
    const auto e = [&](double a, double b) { return correlation(epr_analytic(c_plus, c_minus, a, b).joint); };
    return std::abs(e(angles_a.first, angles_b.first) - e(angles_a.first, angles_b.second) +
                    e(angles_a.second, angles_b.first) + e(angles_a.second, angles_b.second));
}

ChshResult chsh_sampled(const EprConfig& base, std::pair<double, double> angles_a, std::pair<double, double> angles_b,
                        int n_traj) {
    if (n_traj < 1) throw std::invalid_argument("chsh_sampled: n_traj must be positive");
    ChshResult out;
    const std::array<std::pair<double, double>, 4> settings{{{angles_a.first, angles_b.first},
                                                             {angles_a.first, angles_b.second},
                                                             {angles_a.second, angles_b.first},
                                                             {angles_a.second, angles_b.second}}};
    const std::array<double, 4> sign{1, -1, 1, 1};
    double s = 0, var = 0;
    for (int k = 0; k < 4; ++k) {
        EprConfig cfg = base;
        cfg.theta = settings[k].first;
        cfg.phi = settings[k].second;
        const EprDynamics dyn = epr_dynamics(cfg);
        const Eigen::Matrix2d j = sample_joint(dyn, n_traj, derive_seed(base.seed, 1000 + k), base.workers, nullptr, nullptr);
        out.e[k] = correlation(j);
        s += sign[k] * out.e[k];
        var += (1 - out.e[k] * out.e[k]) / n_traj;
    }
    out.s = std::abs(s);
    out.stderr_ = std::sqrt(var);
    return out;
}

JointTable joint_factorization(const StateVector& psi, const std::vector<int>& cut_a, const std::vector<int>& cut_b,
                               double tol) {
    std::set<int> seen;
    for (int k : cut_a) seen.insert(k);
    for (int k : cut_b)
        if (!seen.insert(k).second) throw std::invalid_argument("joint_factorization: cuts overlap");
    if (cut_a.empty() || cut_b.empty()) throw std::invalid_argument("joint_factorization: cuts must be nonempty");
    if (static_cast<int>(seen.size()) >= psi.dims.size())
        throw std::invalid_argument("joint_factorization: environment factor is empty");
    std::vector<int> cut_ab = cut_a;
    cut_ab.insert(cut_ab.end(), cut_b.begin(), cut_b.end());

    const OnticDecomposition da = ontic_decompose(psi, cut_a);
    const OnticDecomposition db = ontic_decompose(psi, cut_b);
    const OnticDecomposition dab = ontic_decompose(psi, cut_ab);

    JointTable out;
    out.p_a = da.probs;
    out.p_b = db.probs;
    out.table = RMat::Zero(da.labels(), db.labels());
    for (int m = 0; m < dab.labels(); ++m) {
        if (dab.is_null(m)) continue;
        double best = -1;
        std::pair<int, int> arg{-1, -1};
        for (int i = 0; i < da.labels(); ++i) {
            if (da.is_null(i)) continue;
            for (int a = 0; a < db.labels(); ++a) {
                if (db.is_null(a)) continue;
                const CVec prod = Eigen::kroneckerProduct(da.ontic[i], db.ontic[a]);
                const double ov = std::norm(prod.dot(dab.ontic[m]));
                if (ov > best) {
                    best = ov;
                    arg = {i, a};
                }
            }
        }
        if (best < out.worst_overlap) {
            out.worst_overlap = best;
            out.worst_state = m;
        }
        out.map.push_back(arg);
        if (arg.first >= 0) out.table(arg.first, arg.second) += dab.probs(m);
    }
    if (out.worst_overlap < 1.0 - tol) {
        out.refused = true;
        std::ostringstream os;
        os << "quantum ontology: ontic state " << out.worst_state << " of A+B has best product overlap "
           << out.worst_overlap << " < 1 - " << tol;
        out.reason = os.str();
        return out;
    }
    out.marginal_residual = std::max((out.table.rowwise().sum() - out.p_a).cwiseAbs().maxCoeff(),
                                     (out.table.colwise().sum().transpose() - out.p_b).cwiseAbs().maxCoeff());
    return out;
}

}  // namespace modalchain::scenarios
