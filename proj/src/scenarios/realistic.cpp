#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "modalchain/scenarios.hpp"

namespace modalchain::scenarios {

namespace {

struct Layout {
    int d_p = 0;
    int n_b = 0;
    int bits = 0;
    long dev = 0;   // device dimension
    long env = 0;   // environment dimension
    long r = 0;     // device residual per pointer value
    long q = 0;     // environment residual per record value
    long D() const { return dev * env; }
    long index(long ptr, long res, long rec, long qq) const { return (ptr * r + res) * env + rec * q + qq; }
};

Layout layout(const RealisticConfig& cfg) {
    Layout l;
    l.d_p = static_cast<int>(cfg.f.rows());
    l.n_b = static_cast<int>(cfg.f.cols());
    while ((1 << l.bits) < l.n_b) ++l.bits;
    l.bits = std::max(l.bits, 1);
    l.dev = 1L << cfg.device_qubits;
    l.env = cfg.env_dim;
    l.r = l.dev >> l.bits;
    l.q = l.env >> l.bits;
    return l;
}

// Device (x) environment dynamics: independent blocks per (pointer, record) sector plus a
// cross-sector coupling of strength delta, applied as I_P (x) U on the full vector.
struct SectorPropagator {
    Layout lay;
    CMat u;
    CMat h;

    [[nodiscard]] CVec apply_local(const CVec& x, bool generator) const { return (generator ? h : u) * x; }

    [[nodiscard]] CVec apply(const CVec& x, bool generator = false) const {
        const long d = lay.D();
        CVec y(x.size());
        for (int i = 0; i < lay.d_p; ++i) y.segment(i * d, d) = apply_local(x.segment(i * d, d), generator);
        return y;
    }
};

SectorPropagator make_propagator(const Layout& lay, const RealisticConfig& cfg) {
    const long D = lay.D();
    const long sectors = 1L << lay.bits;
    std::vector<long> block(D);
    SectorPropagator sp;
    sp.lay = lay;
    sp.h = CMat::Zero(D, D);
    for (long ptr = 0; ptr < sectors; ++ptr)
        for (long rec = 0; rec < sectors; ++rec) {
            std::vector<long> id;
            for (long res = 0; res < lay.r; ++res)
                for (long qq = 0; qq < lay.q; ++qq) id.push_back(lay.index(ptr, res, rec, qq));
            const CMat hb = random_hermitian(static_cast<int>(id.size()),
                                             derive_seed(cfg.seed, 100 + ptr * sectors + rec), cfg.coupling);
            for (std::size_t a = 0; a < id.size(); ++a) {
                block[id[a]] = ptr * sectors + rec;
                for (std::size_t b = 0; b < id.size(); ++b) sp.h(id[a], id[b]) = hb(a, b);
            }
        }
    if (cfg.delta > 0) {
        const CMat hc = random_hermitian(static_cast<int>(D), derive_seed(cfg.seed, 99), cfg.coupling);
        for (long a = 0; a < D; ++a)
            for (long b = 0; b < D; ++b)
                if (block[a] != block[b]) sp.h(a, b) += cfg.delta * hc(a, b);
    }
    sp.u = propagate(sp.h, cfg.eta).mat;
    return sp;
}

double trace_norm(const CMat& m) {
    Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (m + m.adjoint()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().sum();
}

int sector_of(const CVec& dev_vec, const Layout& lay) {
    const long sectors = 1L << lay.bits;
    int best = 0;
    double bw = -1;
    for (long s = 0; s < sectors; ++s) {
        const double w = dev_vec.segment(s * lay.r, lay.r).squaredNorm();
        if (w > bw) {
            bw = w;
            best = static_cast<int>(s);
        }
    }
    return best;
}

}  // namespace

void validate(const RealisticConfig& cfg) {
    if (cfg.f.size() == 0) throw std::invalid_argument("realistic: error matrix f is empty");
    const double norm = cfg.f.squaredNorm();
    if (std::abs(norm - 1.0) > 1e-10) {
        std::ostringstream os;
        os << "realistic: sum |f_ij|^2 = " << norm << " differs from 1";
        throw std::invalid_argument(os.str());
    }
    if (cfg.device_qubits < 2 || cfg.device_qubits > 8)
        throw std::invalid_argument("realistic: device_qubits must lie in [2, 8]");
    const Layout lay = layout(cfg);
    if (lay.bits >= cfg.device_qubits) throw std::invalid_argument("realistic: too many branches for the device");
    if (cfg.env_dim < 16 * lay.d_p) {
        std::ostringstream os;
        os << "realistic: env_dim=" << cfg.env_dim << " must be at least 16 * d_P = " << 16 * lay.d_p;
        throw std::invalid_argument(os.str());
    }
    if (cfg.env_dim % (1 << lay.bits) != 0)
        throw std::invalid_argument("realistic: env_dim must be divisible by the number of pointer sectors");
    if (!(cfg.delta >= 0 && cfg.delta < 0.5)) throw std::invalid_argument("realistic: delta must lie in [0, 0.5)");
    if (!(cfg.eta > 0) || cfg.steps < 1) throw std::invalid_argument("realistic: eta and steps must be positive");
    if (cfg.v_mode != "exact" && cfg.v_mode != "perturbative")
        throw std::invalid_argument("realistic: v_mode must be exact or perturbative");
}

PruneResult collapse_prune(const ErgodicPartition& partition, int realized, const DensityMatrix& rho_a,
                           const std::vector<CVec>& ontic) {
    if (realized < 0 || realized >= static_cast<int>(partition.sets.size()))
        throw std::invalid_argument("collapse_prune: realized set index out of range");
    if (partition.sets[realized].empty()) throw std::invalid_argument("collapse_prune: realized set is empty");
    if (partition.sets.size() == 1 && partition.null_set.empty()) return PruneResult{rho_a, 0.0};
    const long d = rho_a.mat.rows();
    CMat basis(d, partition.sets[realized].size());
    for (std::size_t k = 0; k < partition.sets[realized].size(); ++k) basis.col(k) = ontic.at(partition.sets[realized][k]);
    const CMat proj = basis * basis.adjoint();
    CMat comp = proj * rho_a.mat * proj;
    const double mass = comp.trace().real();
    if (!(mass > 0)) throw std::domain_error("collapse_prune: realized set carries no weight");
    comp /= mass;
    comp = 0.5 * (comp + comp.adjoint()).eval();
    return PruneResult{DensityMatrix(comp, rho_a.dims), 1.0 - mass};
}

RealisticResult run_realistic(const RealisticConfig& cfg) {
    validate(cfg);
    const Layout lay = layout(cfg);
    const long D = lay.D();
    const DimSignature dims({lay.d_p, static_cast<int>(lay.dev), static_cast<int>(lay.env)});
    const std::vector<int> cut{1};
    RealisticResult res;

    // Branch states of device + environment.
    std::vector<CVec> phi(lay.n_b);
    for (int j = 0; j < lay.n_b; ++j) {
        const StateVector h = haar_random_state(lay.r * lay.q, derive_seed(cfg.seed, 10 + j));
        CVec base = CVec::Zero(D);
        for (long rr = 0; rr < lay.r; ++rr)
            for (long qq = 0; qq < lay.q; ++qq) base(lay.index(j, rr, j, qq)) = h.amp(rr * lay.q + qq);
        CVec g = haar_random_state(D, derive_seed(cfg.seed, 20 + j)).amp;
        for (long rr = 0; rr < lay.r; ++rr)
            for (long e = 0; e < lay.env; ++e) g((j * lay.r + rr) * lay.env + e) = 0.0;
        g.normalize();
        phi[j] = (base + cfg.delta * g).normalized();
        CVec outside = phi[j];
        for (long rr = 0; rr < lay.r; ++rr)
            for (long e = 0; e < lay.env; ++e) outside((j * lay.r + rr) * lay.env + e) = 0.0;
        res.leakage = std::max(res.leakage, outside.norm());
    }
    for (int i = 0; i < lay.n_b; ++i)
        for (int j = i + 1; j < lay.n_b; ++j) res.max_overlap = std::max(res.max_overlap, std::abs(phi[i].dot(phi[j])));

    CVec amp = CVec::Zero(lay.d_p * D);
    for (int i = 0; i < lay.d_p; ++i)
        for (int j = 0; j < lay.n_b; ++j) amp.segment(i * D, D) += cfg.f(i, j) * phi[j];
    amp.normalize();
    StateVector psi(amp, dims);

    res.expected = RVec::Zero(lay.n_b);
    for (int j = 0; j < lay.n_b; ++j) res.expected(j) = cfg.f.col(j).squaredNorm();
    res.xi_states.resize(lay.n_b);
    for (int j = 0; j < lay.n_b; ++j)
        res.xi_states[j] = res.expected(j) > 0 ? CVec(cfg.f.col(j) / std::sqrt(res.expected(j))) : CVec(CVec::Zero(lay.d_p));
    res.xi_overlap = CMat(lay.n_b, lay.n_b);
    for (int i = 0; i < lay.n_b; ++i)
        for (int j = 0; j < lay.n_b; ++j) res.xi_overlap(i, j) = res.xi_states[i].dot(res.xi_states[j]);

    const SectorPropagator bp = make_propagator(lay, cfg);
    const LinearMap u = [&bp](const CVec& x) -> CVec { return bp.apply(x); };
    const LinearMap h = [&bp](const CVec& x) -> CVec { return bp.apply(x, true); };

    OnticDecomposition prev = ontic_decompose(psi, cut, 0.0);
    const OnticDecomposition first = prev;
    res.times.push_back(0.0);
    res.probs.push_back(prev.probs);
    for (int k = 0; k < cfg.steps; ++k) {
        const double t = k * cfg.eta, tn = (k + 1) * cfg.eta;
        psi = StateVector(u(psi.amp).normalized(), dims);
        for (auto& p : phi) p = bp.apply_local(p, false);
        OnticDecomposition next = match_labels(prev, ontic_decompose(psi, cut, tn)).first;
        const RMat V = cfg.v_mode == "exact" ? v_exact(prev, next, u) : v_perturbative(prev, h, cfg.eta);
        TransitionStep st = transition_matrix(V, prev.probs, cfg.eta, t);
        if (!st.consistent) {
            std::ostringstream os;
            os << "realistic: transition step " << k << " at t=" << t
               << " is inconsistent; use a smaller eta (max outflow " << st.outflow_max << ")";
            throw std::domain_error(os.str());
        }
        res.steps.push_back(std::move(st));
        res.times.push_back(tn);
        res.probs.push_back(next.probs);
        prev = std::move(next);
    }
    const OnticDecomposition& fin = prev;
    const RMat composed = compose(res.steps);
    res.tau = decoherence_time(res.steps);
    res.partition = ergodic_partition(composed, fin.probs, cfg.threshold);

    const int labels = fin.labels();
    std::vector<int> sector0(labels);
    res.label_sector.resize(labels);
    for (int a = 0; a < labels; ++a) {
        res.label_sector[a] = sector_of(fin.ontic[a], lay);
        sector0[a] = sector_of(first.ontic[a], lay);
    }
    const long sectors = 1L << lay.bits;
    res.inclusive_final = RVec::Zero(sectors);
    res.inclusive_pushed = RVec::Zero(sectors);
    const RVec pushed = composed * first.probs;
    for (int a = 0; a < labels; ++a) {
        res.inclusive_final(res.label_sector[a]) += fin.probs(a);
        res.inclusive_pushed(res.label_sector[a]) += pushed(a);
    }
    res.inclusive_final.conservativeResize(lay.n_b);
    res.inclusive_pushed.conservativeResize(lay.n_b);
    for (int j = 0; j < labels; ++j) {
        if (first.probs(j) <= kNullCutoff) continue;
        double out = 0;
        for (int i = 0; i < labels; ++i)
            if (res.label_sector[i] != sector0[j]) out += composed(i, j);
        res.cross_prob = std::max(res.cross_prob, out);
    }
    res.min_intra = res.partition.min_intra;

    int occupied_branches = 0;
    for (int j = 0; j < lay.n_b; ++j)
        if (res.expected(j) > kNullCutoff) ++occupied_branches;
    const int n_sets = static_cast<int>(res.partition.sets.size());
    if (cfg.require_separation && n_sets != occupied_branches) {
        std::ostringstream os;
        os << "realistic: ergodic partition found " << n_sets << " sets for " << occupied_branches
           << " branches; measured branch overlap " << res.max_overlap << " is too large to separate them"
           << " (max cross-set composed entry " << res.partition.max_cross << ", threshold " << cfg.threshold << ")";
        throw SeparationError(os.str(), res.max_overlap);
    }

    // Ontic states of A+P against |Xi^(j)> (x) |psi_a>.
    {
        const OnticDecomposition ap = ontic_decompose(psi, {0, 1}, fin.time);
        res.ap_alignment = 1.0;
        for (int b = 0; b < ap.labels(); ++b) {
            if (ap.probs(b) < 1e-6) continue;
            double best = 0;
            for (int a = 0; a < labels; ++a) {
                if (fin.probs(a) < 1e-9) continue;
                Eigen::VectorXcd prod(lay.d_p * lay.dev);
                const CVec& x = res.xi_states[std::min(res.label_sector[a], lay.n_b - 1)];
                for (int i = 0; i < lay.d_p; ++i) prod.segment(i * lay.dev, lay.dev) = x(i) * fin.ontic[a];
                best = std::max(best, std::norm(prod.dot(ap.ontic[b])));
            }
            res.ap_alignment = std::min(res.ap_alignment, best);
        }
    }

    // Pruned component against the component reduced density matrix of each branch.
    {
        const DensityMatrix rho = reduced_density(psi, cut);
        const DimSignature de({static_cast<int>(lay.dev), static_cast<int>(lay.env)});
        for (std::size_t s = 0; s < res.partition.sets.size(); ++s) {
            const int sector = res.label_sector[res.partition.sets[s].front()];
            if (sector >= lay.n_b) continue;
            const PruneResult pr = collapse_prune(res.partition, static_cast<int>(s), rho, fin.ontic);
            const DensityMatrix comp = reduced_density(StateVector(phi[sector].normalized(), de), {0});
            res.prune_distance = std::max(res.prune_distance, trace_norm(pr.rho.mat - comp.mat));
        }
    }

    const double factor = tolerance(cfg.tol, "inclusive_factor", 10.0);
    const double floor = tolerance(cfg.tol, "inclusive_floor", 1e-12);
    const double inc_tol = factor * res.max_overlap + floor;
    double inc_err = 0, push_err = 0;
    for (int j = 0; j < lay.n_b; ++j) {
        inc_err = std::max(inc_err, std::abs(res.inclusive_final(j) - res.expected(j)));
        push_err = std::max(push_err, std::abs(res.inclusive_pushed(j) - res.expected(j)));
    }
    res.checks.push_back(check_le("ergodic_set_count_error", std::abs(n_sets - occupied_branches), 0.0,
                                  cfg.require_separation));
    res.checks.push_back(check_le("inclusive_probs_final", inc_err, inc_tol));
    res.checks.push_back(check_le("inclusive_probs_pushed", push_err, inc_tol));
    res.checks.push_back(check_ge("a_plus_p_alignment", res.ap_alignment, 1.0 - tolerance(cfg.tol, "ap_alignment", 1e-6),
                                  false));
    res.checks.push_back(check_le("prune_distance", res.prune_distance,
                                  tolerance(cfg.tol, "prune_factor", 20.0) * res.leakage + floor, false));

    if (cfg.n_traj > 0) {
        res.trajectories.resize(cfg.n_traj);
        parallel_for(cfg.n_traj, cfg.workers, [&](long k) {
            res.trajectories[k] = sample_trajectory(res.steps, first.probs, derive_seed(cfg.seed, k));
        });
    }
    return res;
}

}  // namespace modalchain::scenarios
