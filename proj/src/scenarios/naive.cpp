#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "modalchain/scenarios.hpp"

namespace modalchain::scenarios {

namespace {

std::vector<int> device_cut(int n_dev) {
    std::vector<int> cut(n_dev);
    std::iota(cut.begin(), cut.end(), 1);
    return cut;
}

DimSignature naive_dims(int d_p, int n_dev) {
    std::vector<int> f{d_p};
    f.insert(f.end(), n_dev, 2);
    return DimSignature(f);
}

// Normalised device branch state for outcome i at time t.
CVec branch_state(const NaiveConfig& cfg, int i, double t) {
    CVec v = CVec::Ones(1);
    for (int k = 0; k < cfg.n_dev; ++k) {
        const double chi = cfg.theta(i, k) * t / cfg.T;
        // The new qubit is the least significant digit.
        CVec r(2 * v.size());
        for (long b = 0; b < v.size(); ++b) {
            r(2 * b) = v(b) * std::cos(chi);
            r(2 * b + 1) = v(b) * std::sin(chi);
        }
        v = std::move(r);
    }
    return v;
}

// Applies per-qubit 2x2 maps m[k] to a 2^n block in place.
template <typename F>
void for_each_qubit(CVec& x, long offset, int n, F&& apply) {
    const long dim = 1L << n;
    for (int k = 0; k < n; ++k) {
        const long stride = 1L << (n - 1 - k);
        for (long base = 0; base < dim; base += 2 * stride)
            for (long b = base; b < base + stride; ++b) apply(k, x(offset + b), x(offset + b + stride));
    }
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y, double* r2) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sx += x[k];
        sy += y[k];
        sxx += x[k] * x[k];
        sxy += x[k] * y[k];
        syy += y[k] * y[k];
    }
    const double cov = sxy - sx * sy / n, vx = sxx - sx * sx / n, vy = syy - sy * sy / n;
    if (r2) *r2 = vy > 0 ? cov * cov / (vx * vy) : 1.0;
    return cov / vx;
}

}  // namespace

RMat uniform_schedule(int d_p, int n_dev, double sep) {
    RMat th(d_p, n_dev);
    for (int i = 0; i < d_p; ++i) th.row(i).setConstant(sep * i / std::max(1, d_p - 1));
    return th;
}

RMat binary_schedule(int d_p, int n_dev) {
    RMat th = RMat::Zero(d_p, n_dev);
    int bits = 0;
    while ((1 << bits) < d_p) ++bits;
    if (bits == 0) return th;
    if (n_dev < bits) throw std::invalid_argument("binary_schedule: need at least one qubit per bit of the outcome index");
    const int group = n_dev / bits;
    for (int i = 0; i < d_p; ++i)
        for (int k = 0; k < n_dev; ++k) {
            const int b = std::min(k / group, bits - 1);
            if ((i >> b) & 1) th(i, k) = M_PI / 2;
        }
    return th;
}

void validate(const NaiveConfig& cfg) {
    if (cfg.c.empty()) throw std::invalid_argument("naive: amplitude vector c is empty");
    double norm = 0;
    for (const auto& z : cfg.c) norm += std::norm(z);
    if (std::abs(norm - 1.0) > 1e-12) {
        std::ostringstream os;
        os << "naive: sum |c_i|^2 = " << norm << " differs from 1";
        throw std::invalid_argument(os.str());
    }
    if (cfg.n_dev < 1 || cfg.n_dev > 16) throw std::invalid_argument("naive: n_dev must lie in [1, 16]");
    if (cfg.theta.rows() != cfg.d_p() || cfg.theta.cols() != cfg.n_dev)
        throw std::invalid_argument("naive: rotation schedule must be d_P x n_dev");
    if (cfg.steps < 1 || !(cfg.T > 0)) throw std::invalid_argument("naive: steps and T must be positive");
    if (cfg.v_mode != "exact" && cfg.v_mode != "perturbative")
        throw std::invalid_argument("naive: v_mode must be exact or perturbative");
    for (int i = 0; i < cfg.d_p(); ++i)
        for (int j = i + 1; j < cfg.d_p(); ++j) {
            const double widest = (cfg.theta.row(i) - cfg.theta.row(j)).cwiseAbs().maxCoeff();
            if (widest <= 0) throw std::invalid_argument("naive: two outcomes share the same rotation schedule");
            if (widest > M_PI / 2 + 1e-12)
                throw std::invalid_argument("naive: per-qubit separation beyond pi/2 is not monotone");
        }
}

StateVector naive_state(const NaiveConfig& cfg, double t) {
    const long dd = 1L << cfg.n_dev;
    CVec amp = CVec::Zero(cfg.d_p() * dd);
    for (int i = 0; i < cfg.d_p(); ++i) {
        if (cfg.c[i] == cplx(0)) continue;
        amp.segment(i * dd, dd) = cfg.c[i] * branch_state(cfg, i, t);
    }
    return StateVector(amp, naive_dims(cfg.d_p(), cfg.n_dev));
}

LinearMap naive_step(const NaiveConfig& cfg, double eta) {
    const long dd = 1L << cfg.n_dev;
    RMat cs(cfg.d_p(), cfg.n_dev), sn(cfg.d_p(), cfg.n_dev);
    for (int i = 0; i < cfg.d_p(); ++i)
        for (int k = 0; k < cfg.n_dev; ++k) {
            cs(i, k) = std::cos(cfg.theta(i, k) * eta / cfg.T);
            sn(i, k) = std::sin(cfg.theta(i, k) * eta / cfg.T);
        }
    const int n = cfg.n_dev, dp = cfg.d_p();
    return [cs, sn, n, dp, dd](const CVec& x) -> CVec {
        CVec y = x;
        for (int i = 0; i < dp; ++i)
            for_each_qubit(y, i * dd, n, [&](int k, cplx& lo, cplx& hi) {
                const cplx a = lo, b = hi;
                lo = cs(i, k) * a - sn(i, k) * b;
                hi = sn(i, k) * a + cs(i, k) * b;
            });
        return y;
    };
}

namespace {

LinearMap naive_generator(const NaiveConfig& cfg) {
    const long dd = 1L << cfg.n_dev;
    const RMat rate = cfg.theta / cfg.T;
    const int n = cfg.n_dev, dp = cfg.d_p();
    return [rate, n, dp, dd](const CVec& x) -> CVec {
        CVec y = CVec::Zero(x.size());
        for (int i = 0; i < dp; ++i)
            for (int k = 0; k < n; ++k) {
                if (rate(i, k) == 0.0) continue;
                const long stride = 1L << (n - 1 - k);
                for (long base = 0; base < dd; base += 2 * stride)
                    for (long b = base; b < base + stride; ++b) {
                        const long lo = i * dd + b, hi = lo + stride;
                        // sigma_y = [[0, -i], [i, 0]]
                        y(lo) += rate(i, k) * cplx(0, -1) * x(hi);
                        y(hi) += rate(i, k) * cplx(0, 1) * x(lo);
                    }
            }
        return y;
    };
}

}  // namespace

NaiveResult run_naive(const NaiveConfig& cfg) {
    validate(cfg);
    const int dp = cfg.d_p();
    const double eta = cfg.eta();
    const std::vector<int> cut = device_cut(cfg.n_dev);
    const LinearMap u = naive_step(cfg, eta);
    const LinearMap h = naive_generator(cfg);
    const double transport_tol = tolerance(cfg.tol, "transport", 1e-8);

    NaiveResult res;
    OnticDecomposition prev = ontic_decompose(naive_state(cfg, 0.0), cut, 0.0);
    res.decs.push_back(prev);
    res.times.push_back(0.0);
    res.probs.push_back(prev.probs);
    double transport = 0.0;
    for (int k = 0; k < cfg.steps; ++k) {
        const double t = k * eta, tn = (k + 1) * eta;
        auto [next, mr] = match_labels(prev, ontic_decompose(naive_state(cfg, tn), cut, tn));
        const RMat V = cfg.v_mode == "exact" ? v_exact(prev, next, u) : v_perturbative(prev, h, eta);
        TransitionStep st = transition_matrix(V, prev.probs, eta, t);
        st.rank_changed = mr.rank_changed;
        if (!st.consistent) {
            std::ostringstream os;
            os << "naive: transition step " << k << " at t=" << t << " is inconsistent; use a smaller eta (more steps)";
            throw std::domain_error(os.str());
        }
        transport = std::max(transport, (st.cond * prev.probs - next.probs).cwiseAbs().maxCoeff());
        res.steps.push_back(std::move(st));
        res.times.push_back(tn);
        res.probs.push_back(next.probs);
        prev = std::move(next);
    }
    res.decs.push_back(prev);
    res.composed = compose(res.steps);
    res.tau = decoherence_time(res.steps);

    // Branch bookkeeping at T.
    std::vector<CVec> branches(dp);
    for (int i = 0; i < dp; ++i) branches[i] = branch_state(cfg, i, cfg.T);
    res.branch_overlap = overlap_matrix(branches);
    for (int i = 0; i < dp; ++i)
        for (int j = 0; j < dp; ++j)
            if (i != j && cfg.c[i] != cplx(0) && cfg.c[j] != cplx(0))
                res.max_overlap = std::max(res.max_overlap, res.branch_overlap(i, j));

    const OnticDecomposition& fin = prev;
    res.branch_probs = RVec::Zero(dp);
    res.label_branch.assign(fin.labels(), 0);
    for (int a = 0; a < fin.labels(); ++a) {
        int best = 0;
        double bw = -1;
        for (int b = 0; b < dp; ++b) {
            const double w = std::norm(fin.mirrors[a](b));
            if (w > bw) {
                bw = w;
                best = b;
            }
        }
        res.label_branch[a] = best;
        res.branch_probs(best) += fin.probs(a);
    }

    for (int i = 0; i < dp; ++i)
        for (int j = i + 1; j < dp; ++j)
            if (cfg.c[i] != cplx(0) && cfg.c[j] != cplx(0) && std::abs(std::norm(cfg.c[i]) - std::norm(cfg.c[j])) < 1e-9)
                res.degenerate_final = true;

    // Flow against the final descending-p order.
    std::vector<int> order(fin.labels());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fin.probs(a) > fin.probs(b); });
    std::vector<int> rank(fin.labels());
    for (int r = 0; r < fin.labels(); ++r) rank[order[r]] = r;
    for (const auto& st : res.steps)
        for (int i = 0; i < fin.labels(); ++i)
            for (int j = 0; j < fin.labels(); ++j)
                if (i != j && rank[i] < rank[j]) res.max_upper_flow = std::max(res.max_upper_flow, st.cond(i, j));

    // Spread of occupied ontic states over branch states.
    for (int a = 0; a < fin.labels(); ++a) {
        if (fin.probs(a) < 1e-9) continue;
        std::vector<double> w;
        for (int b = 0; b < dp; ++b)
            if (cfg.c[b] != cplx(0)) w.push_back(std::abs(branches[b].dot(fin.ontic[a])));
        std::sort(w.rbegin(), w.rend());
        if (w.size() > 1) res.max_spread = std::max(res.max_spread, w[1]);
    }

    double born = 0;
    for (int b = 0; b < dp; ++b) born = std::max(born, std::abs(res.branch_probs(b) - std::norm(cfg.c[b])));
    const double born_tol =
        tolerance(cfg.tol, "born_factor", 10.0) * res.max_overlap + tolerance(cfg.tol, "born_floor", 1e-12);
    res.checks.push_back(check_le("born_rule_branch_probs", born, born_tol));
    if (cfg.v_mode == "exact") res.checks.push_back(check_le("probability_transport", transport, transport_tol));
    res.checks.push_back(check_le("triangular_transitions", res.max_upper_flow,
                                  tolerance(cfg.tol, "triangular", 1e-9), !res.degenerate_final));
    res.checks.push_back(check_le("ontic_spread", res.max_spread,
                                  res.max_overlap + tolerance(cfg.tol, "spread_floor", 1e-9), false));

    if (cfg.n_traj > 0) {
        const RVec init = res.decs.front().probs;
        res.trajectories.resize(cfg.n_traj);
        parallel_for(cfg.n_traj, cfg.workers, [&](long k) {
            res.trajectories[k] = sample_trajectory(res.steps, init, derive_seed(cfg.seed, k));
        });
        res.outcome_freq = RVec::Zero(dp);
        for (const auto& tr : res.trajectories) res.outcome_freq(res.label_branch[tr.labels.back()]) += 1.0;
        res.outcome_freq /= cfg.n_traj;
        double worst = 0;
        for (int b = 0; b < dp; ++b) {
            const double p = std::norm(cfg.c[b]);
            const double sigma = std::sqrt(p * (1 - p) / cfg.n_traj);
            const double dev = std::abs(res.outcome_freq(b) - p);
            worst = std::max(worst, sigma > 0 ? dev / sigma : (dev > 0 ? INFINITY : 0.0));
        }
        res.checks.push_back(check_le("sampled_outcome_sigmas", worst, tolerance(cfg.tol, "traj_sigmas", 4.0)));
    }
    return res;
}

double near_degenerate_probe(double s, const NaiveConfig& base, int grid) {
    if (base.d_p() != 2) throw std::invalid_argument("near_degenerate_probe: needs d_P = 2");
    if (!(s >= 0) || std::exp(-s) >= 0.5)
        throw std::invalid_argument("near_degenerate_probe: e^{-s} must be below 1/2");
    NaiveConfig cfg = base;
    cfg.c = {std::sqrt(0.5 + std::exp(-s)), std::sqrt(0.5 - std::exp(-s))};
    validate(cfg);
    const std::vector<int> cut = device_cut(cfg.n_dev);

    auto aligned = [&](double t) {
        const auto d = ontic_decompose(naive_state(cfg, t), cut, t);
        const CVec b0 = branch_state(cfg, 0, t), b1 = branch_state(cfg, 1, t);
        int best0 = -1, best1 = -1;
        double w0 = 0, w1 = 0;
        for (int a = 0; a < d.labels(); ++a) {
            const double o0 = std::norm(b0.dot(d.ontic[a])), o1 = std::norm(b1.dot(d.ontic[a]));
            if (o0 > w0) {
                w0 = o0;
                best0 = a;
            }
            if (o1 > w1) {
                w1 = o1;
                best1 = a;
            }
        }
        return w0 > 0.99 && w1 > 0.99 && best0 != best1;
    };

    int last_bad = -1;
    for (int g = grid; g >= 0; --g) {
        if (!aligned(cfg.T * g / grid)) {
            last_bad = g;
            break;
        }
    }
    if (last_bad == grid)
        throw std::domain_error("near_degenerate_probe: ontic states not aligned with branches by T; widen the schedule");
    if (last_bad < 0) return 0.0;
    double lo = cfg.T * last_bad / grid, hi = cfg.T * (last_bad + 1) / grid;
    for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        (aligned(mid) ? hi : lo) = mid;
    }
    return hi;
}

ProbeSweep near_degenerate_sweep(const std::vector<double>& s_values, const NaiveConfig& cfg) {
    ProbeSweep sw;
    std::vector<double> lx, ly;
    for (double s : s_values) {
        const double t = near_degenerate_probe(s, cfg);
        sw.points.push_back({s, t});
        lx.push_back(std::log(s));
        ly.push_back(std::log(t));
    }
    sw.monotone = true;
    for (std::size_t k = 1; k < sw.points.size(); ++k)
        if (!(sw.points[k].align_time > sw.points[k - 1].align_time)) sw.monotone = false;
    if (sw.points.size() >= 2) sw.exponent = fit_slope(lx, ly, &sw.fit_r2);
    for (const auto& p : sw.points) {
        const double pred = sw.points.front().align_time * std::sqrt(p.s / sw.points.front().s);
        sw.sqrt_ratio_err = std::max(sw.sqrt_ratio_err, std::abs(p.align_time - pred) / pred);
    }
    sw.checks.push_back(check_ge("probe_monotone", sw.monotone ? 1.0 : 0.0, 1.0));
    sw.checks.push_back(check_ge("probe_fit_r2", sw.fit_r2, tolerance(cfg.tol, "probe_r2", 0.95)));
    sw.checks.push_back(check_le("probe_sqrt_deviation", sw.sqrt_ratio_err, 0.2, false));
    return sw;
}

RVec bin_masses(const BinnedConfig& cfg) {
    if (cfg.grid.size() != cfg.xi.size()) throw std::invalid_argument("binned: grid and xi lengths differ");
    if (cfg.edges.size() < 2) throw std::invalid_argument("binned: need at least two bin edges");
    for (std::size_t k = 1; k < cfg.edges.size(); ++k)
        if (!(cfg.edges[k] > cfg.edges[k - 1])) throw std::invalid_argument("binned: bin edges must increase");
    const int nb = static_cast<int>(cfg.edges.size()) - 1;
    RVec mass = RVec::Zero(nb);
    std::vector<int> count(nb, 0);
    for (std::size_t g = 0; g < cfg.grid.size(); ++g) {
        const double x = cfg.grid[g];
        if (x < cfg.edges.front() || x > cfg.edges.back()) continue;
        int b = static_cast<int>(std::upper_bound(cfg.edges.begin(), cfg.edges.end(), x) - cfg.edges.begin()) - 1;
        b = std::min(b, nb - 1);
        mass(b) += std::norm(cfg.xi[g]);
        ++count[b];
    }
    for (int b = 0; b < nb; ++b)
        if (count[b] < 8) {
            std::ostringstream os;
            os << "binned: bin " << b << " holds " << count[b] << " grid points; at least 8 are required";
            throw std::invalid_argument(os.str());
        }
    if (!(mass.sum() > 0)) throw std::invalid_argument("binned: xi has no weight inside the bins");
    return mass / mass.sum();
}

BinnedResult run_binned_position(const BinnedConfig& cfg) {
    BinnedResult res;
    res.masses = bin_masses(cfg);
    const int nb = static_cast<int>(res.masses.size());
    NaiveConfig nc;
    for (int b = 0; b < nb; ++b) nc.c.push_back(std::sqrt(res.masses(b)));
    double norm = 0;
    for (const auto& z : nc.c) norm += std::norm(z);
    for (auto& z : nc.c) z /= std::sqrt(norm);
    nc.n_dev = cfg.n_dev;
    nc.theta = binary_schedule(nb, cfg.n_dev);
    nc.steps = cfg.steps;
    nc.T = cfg.T;
    nc.n_traj = cfg.n_traj;
    nc.seed = cfg.seed;
    nc.workers = cfg.workers;
    nc.tol = cfg.tol;
    res.naive = run_naive(nc);
    res.checks = res.naive.checks;
    double diff = 0;
    for (int b = 0; b < nb; ++b) diff = std::max(diff, std::abs(res.naive.branch_probs(b) - res.masses(b)));
    res.checks.push_back(check_le("bin_masses", diff, tolerance(cfg.tol, "binned", 1e-10)));
    for (auto& c : res.checks)
        if (c.name == "ontic_spread") c.asserted = !res.naive.degenerate_final;
    return res;
}

}  // namespace modalchain::scenarios
