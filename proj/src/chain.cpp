#include "modalchain/chain.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace modalchain {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Tarjan on the graph with edge j -> i whenever adj(i, j).
std::vector<std::vector<int>> strongly_connected(const std::vector<int>& nodes,
                                                 const std::function<bool(int, int)>& edge) {
    const int n = static_cast<int>(nodes.size());
    std::vector<int> index(n, -1), low(n, 0), stack;
    std::vector<char> on(n, 0);
    std::vector<std::vector<int>> comps;
    int counter = 0;
    std::function<void(int)> visit = [&](int v) {
        index[v] = low[v] = counter++;
        stack.push_back(v);
        on[v] = 1;
        for (int w = 0; w < n; ++w) {
            if (w == v || !edge(nodes[v], nodes[w])) continue;
            if (index[w] < 0) {
                visit(w);
                low[v] = std::min(low[v], low[w]);
            } else if (on[w]) {
                low[v] = std::min(low[v], index[w]);
            }
        }
        if (low[v] == index[v]) {
            std::vector<int> comp;
            int w;
            do {
                w = stack.back();
                stack.pop_back();
                on[w] = 0;
                comp.push_back(nodes[w]);
            } while (w != v);
            std::sort(comp.begin(), comp.end());
            comps.push_back(comp);
        }
    };
    for (int v = 0; v < n; ++v)
        if (index[v] < 0) visit(v);
    std::sort(comps.begin(), comps.end());
    return comps;
}

}  // namespace

RMat v_exact(const OnticDecomposition& prev, const OnticDecomposition& next, const LinearMap& u) {
    if (!(prev.dims == next.dims) || prev.cut != next.cut || prev.labels() != next.labels())
        throw std::invalid_argument("v_exact: decompositions do not share a cut");
    const int n = prev.labels();
    std::vector<CVec> out(n);
    for (int i = 0; i < n; ++i)
        if (next.probs(i) > 0.0) out[i] = next.product_state(i);
    RMat v = RMat::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        if (prev.probs(j) <= 0.0) continue;
        const CVec x = prev.product_state(j);
        const CVec ux = u(x);
        if (ux.size() != x.size()) throw std::invalid_argument("v_exact: propagator dimension mismatch");
        for (int i = 0; i < n; ++i) {
            if (next.probs(i) <= 0.0) continue;
            v(i, j) = std::sqrt(next.probs(i) * prev.probs(j)) * out[i].dot(ux).real();
        }
    }
    return v;
}

RMat v_exact(const OnticDecomposition& prev, const OnticDecomposition& next, const Propagator& u) {
    if (u.mat.rows() != prev.dims.total()) throw std::invalid_argument("v_exact: propagator dimension mismatch");
    return v_exact(prev, next, LinearMap([&u](const CVec& x) -> CVec { return u.mat * x; }));
}

RMat v_perturbative(const OnticDecomposition& dec, const LinearMap& h_int, double eta) {
    const int n = dec.labels();
    std::vector<CVec> x(n), hx(n);
    for (int j = 0; j < n; ++j) {
        if (dec.probs(j) <= 0.0) continue;
        x[j] = dec.product_state(j);
        hx[j] = h_int(x[j]);
    }
    RMat v = RMat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        if (dec.probs(i) <= 0.0) continue;
        for (int j = i + 1; j < n; ++j) {
            if (dec.probs(j) <= 0.0) continue;
            const double val = eta * std::sqrt(dec.probs(i) * dec.probs(j)) * x[i].dot(hx[j]).imag();
            v(i, j) = val;
            v(j, i) = -val;
        }
    }
    return v;
}

RMat v_perturbative(const OnticDecomposition& dec, const CMat& h_int, double eta) {
    if (h_int.rows() != dec.dims.total()) throw std::invalid_argument("v_perturbative: H_int dimension mismatch");
    return v_perturbative(dec, LinearMap([&h_int](const CVec& x) -> CVec { return h_int * x; }), eta);
}

TransitionStep transition_matrix(const RMat& V, const RVec& p_prev, double eta, double time) {
    const long n = V.rows();
    if (V.cols() != n || p_prev.size() != n) throw std::invalid_argument("transition_matrix: shape mismatch");
    TransitionStep st;
    st.time = time;
    st.eta = eta;
    st.V = V;
    st.cond = RMat::Zero(n, n);
    for (long j = 0; j < n; ++j) {
        if (p_prev(j) <= kNullCutoff) {
            st.cond(j, j) = 1.0;
            continue;
        }
        double out = 0.0;
        for (long i = 0; i < n; ++i) {
            if (i == j) continue;
            const double c = std::max(V(i, j) - V(j, i), 0.0) / p_prev(j);
            st.cond(i, j) = c;
            out += c;
        }
        st.cond(j, j) = 1.0 - out;
        st.outflow_max = std::max(st.outflow_max, out);
    }
    st.consistent = (st.cond.array() >= 0.0).all() && (st.cond.array() <= 1.0).all();
    return st;
}

double decoherence_time(const std::vector<TransitionStep>& steps) {
    if (steps.empty()) throw std::invalid_argument("decoherence_time: no steps");
    double rate = 0.0;
    for (std::size_t k = 0; k < steps.size(); ++k) {
        if (!steps[k].consistent)
            throw std::domain_error("decoherence_time: step " + std::to_string(k) + " is inconsistent");
        rate = std::max(rate, steps[k].outflow_max / steps[k].eta);
    }
    if (rate <= 0.0) return std::numeric_limits<double>::infinity();
    return 1.0 / rate;
}

RMat compose(const std::vector<TransitionStep>& steps) {
    if (steps.empty()) throw std::invalid_argument("compose: no steps");
    RMat c = RMat::Identity(steps[0].cond.rows(), steps[0].cond.cols());
    for (std::size_t k = 0; k < steps.size(); ++k) {
        if (!steps[k].consistent) throw std::domain_error("compose: step " + std::to_string(k) + " is inconsistent");
        if (k > 0) {
            const double expect = steps[k - 1].time + steps[k - 1].eta;
            if (std::abs(steps[k].time - expect) > 1e-9 * std::max(1.0, std::abs(expect))) {
                std::ostringstream os;
                os << "compose: timestamp gap before step " << k << " (expected t=" << expect
                   << ", got t=" << steps[k].time << ")";
                throw std::invalid_argument(os.str());
            }
        }
        c = (steps[k].cond * c).eval();
    }
    return c;
}

double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
    const std::uint64_t z = splitmix64(splitmix64(seed) ^ (counter * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

int sample_categorical(const RVec& weights, double u) {
    const double total = weights.sum();
    double acc = 0.0;
    const double target = u * total;
    int last = -1;
    for (long k = 0; k < weights.size(); ++k) {
        if (weights(k) <= 0.0) continue;
        acc += weights(k);
        last = static_cast<int>(k);
        if (target < acc) return last;
    }
    return last;
}

namespace {

Trajectory walk(const std::vector<TransitionStep>& steps, int start, std::uint64_t seed) {
    Trajectory tr;
    tr.seed = seed;
    tr.labels.reserve(steps.size() + 1);
    tr.times.reserve(steps.size() + 1);
    tr.labels.push_back(start);
    tr.times.push_back(steps.empty() ? 0.0 : steps[0].time);
    int cur = start;
    for (std::size_t k = 0; k < steps.size(); ++k) {
        if (!steps[k].consistent) {
            std::ostringstream os;
            os << "sample_trajectory: step " << k << " at t=" << steps[k].time
               << " is inconsistent; use a smaller eta";
            throw std::domain_error(os.str());
        }
        cur = sample_categorical(steps[k].cond.col(cur), counter_uniform(seed, k + 1));
        tr.labels.push_back(cur);
        tr.times.push_back(steps[k].time + steps[k].eta);
    }
    return tr;
}

}  // namespace

Trajectory sample_trajectory(const std::vector<TransitionStep>& steps, int initial, std::uint64_t seed) {
    if (!steps.empty() && (initial < 0 || initial >= steps[0].cond.cols()))
        throw std::invalid_argument("sample_trajectory: initial label out of range");
    return walk(steps, initial, seed);
}

Trajectory sample_trajectory(const std::vector<TransitionStep>& steps, const RVec& initial, std::uint64_t seed) {
    const int start = sample_categorical(initial, counter_uniform(seed, 0));
    return walk(steps, start, seed);
}

ErgodicPartition ergodic_partition(const RMat& composed, const RVec& probs, double threshold) {
    const int n = static_cast<int>(composed.rows());
    if (composed.cols() != n || probs.size() != n) throw std::invalid_argument("ergodic_partition: shape mismatch");
    ErgodicPartition part;
    part.threshold = threshold;
    std::vector<int> live;
    for (int a = 0; a < n; ++a) {
        if (probs(a) < kNullCutoff)
            part.null_set.push_back(a);
        else
            live.push_back(a);
    }
    part.sets = strongly_connected(live, [&](int from, int to) { return composed(to, from) > threshold; });
    std::vector<int> set_of(n, -1);
    for (std::size_t s = 0; s < part.sets.size(); ++s)
        for (int a : part.sets[s]) set_of[a] = static_cast<int>(s);
    for (const auto& set : part.sets) {
        double mass = 0.0;
        for (int a : set) mass += probs(a);
        part.inclusive_probs.push_back(mass);
    }
    part.max_cross = 0.0;
    part.min_intra = 1.0;
    for (int i : live)
        for (int j : live) {
            if (i == j) continue;
            if (set_of[i] != set_of[j])
                part.max_cross = std::max(part.max_cross, composed(i, j));
            else
                part.min_intra = std::min(part.min_intra, composed(i, j));
        }
    return part;
}

ConvergenceReport equilibrium_convergence(const TransitionStep& step, int n_max) {
    if (!step.consistent) throw std::domain_error("equilibrium_convergence: step is inconsistent");
    const RMat& p = step.cond;
    const int n = static_cast<int>(p.rows());
    ConvergenceReport rep;

    std::vector<int> all(n);
    for (int k = 0; k < n; ++k) all[k] = k;
    const auto comps = strongly_connected(all, [&](int from, int to) { return p(to, from) > 0.0; });
    // Closed classes: no positive entry leaving the component.
    for (const auto& c : comps) {
        bool closed = true;
        for (int j : c)
            for (int i = 0; i < n; ++i)
                if (p(i, j) > 0.0 && std::find(c.begin(), c.end(), i) == c.end()) closed = false;
        if (closed) rep.ergodic_sets.push_back(c);
    }
    if (rep.ergodic_sets.size() != 1) {
        rep.rate = 0.0;
        rep.converged = false;
        rep.stationary = RVec::Zero(n);
        return rep;
    }

    Eigen::EigenSolver<RMat> es(p);
    int best = 0;
    for (int k = 1; k < n; ++k)
        if (std::abs(es.eigenvalues()(k) - 1.0) < std::abs(es.eigenvalues()(best) - 1.0)) best = k;
    RVec pi = es.eigenvectors().col(best).real();
    pi /= pi.sum();
    rep.stationary = pi;

    RMat m = RMat::Identity(n, n);
    for (int k = 1; k <= n_max; ++k) {
        m = (p * m).eval();
        double dev = 0.0;
        for (int j = 0; j < n; ++j) dev = std::max(dev, (m.col(j) - pi).cwiseAbs().maxCoeff());
        rep.steps.push_back(k);
        rep.max_deviation.push_back(dev);
    }
    rep.converged = !rep.max_deviation.empty() && rep.max_deviation.back() <= 1e-6;

    // Log-linear fit on the asymptotic stretch.
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < rep.steps.size(); ++k) {
        const double d = rep.max_deviation[k];
        if (d < 1e-2 && d > 1e-11) {
            xs.push_back(rep.steps[k]);
            ys.push_back(std::log(d));
        }
    }
    if (xs.size() < 3) {
        xs.clear();
        ys.clear();
        for (std::size_t k = rep.steps.size() / 2; k < rep.steps.size(); ++k) {
            if (rep.max_deviation[k] <= 0.0) continue;
            xs.push_back(rep.steps[k]);
            ys.push_back(std::log(rep.max_deviation[k]));
        }
    }
    if (xs.size() >= 2) {
        const double nn = static_cast<double>(xs.size());
        double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            sx += xs[k];
            sy += ys[k];
            sxx += xs[k] * xs[k];
            sxy += xs[k] * ys[k];
            syy += ys[k] * ys[k];
        }
        const double cov = sxy - sx * sy / nn, vx = sxx - sx * sx / nn, vy = syy - sy * sy / nn;
        const double slope = cov / vx;
        rep.rate = std::max(0.0, -slope);
        rep.decay_steps = rep.rate > 0.0 ? 1.0 / rep.rate : std::numeric_limits<double>::infinity();
        rep.fit_r2 = vy > 0.0 ? cov * cov / (vx * vy) : 1.0;
    }
    return rep;
}

TransitionStep toy_chain(int d, double p, std::uint64_t seed, double eta) {
    if (d < 2) throw std::invalid_argument("toy_chain: need at least two labels");
    if (p <= 0.0 || p * (d - 1) > 1.0) throw std::invalid_argument("toy_chain: p out of range");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    const int lo = (d - 1) / 2, hi = d / 2;
    RMat c = RMat::Zero(d, d);
    for (int attempt = 0; attempt < 100000; ++attempt) {
        c.setZero();
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) {
                if (coin(rng))
                    c(i, j) = p;
                else
                    c(j, i) = p;
            }
        bool balanced = true;
        for (int j = 0; j < d; ++j) {
            const int out = static_cast<int>((c.col(j).array() > 0.0).count());
            balanced = balanced && out >= lo && out <= hi;
        }
        if (balanced) break;
    }
    for (int j = 0; j < d; ++j) c(j, j) = 1.0 - c.col(j).sum();
    TransitionStep st;
    st.eta = eta;
    st.V = RMat::Zero(d, d);
    st.cond = c;
    st.consistent = (c.array() >= 0.0).all() && (c.array() <= 1.0).all();
    for (int j = 0; j < d; ++j) st.outflow_max = std::max(st.outflow_max, 1.0 - c(j, j));
    return st;
}

}  // namespace modalchain
