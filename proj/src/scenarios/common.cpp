#include <algorithm>
#include <cmath>
#include <thread>

#include "modalchain/scenarios.hpp"

namespace modalchain::scenarios {

double tolerance(const Tolerances& t, const std::string& name, double fallback) {
    const auto it = t.find(name);
    return it == t.end() ? fallback : it->second;
}

Check check_le(const std::string& name, double measured, double tol, bool asserted) {
    return Check{name, measured, tol, "<=", std::isfinite(measured) && measured <= tol, asserted};
}

Check check_ge(const std::string& name, double measured, double tol, bool asserted) {
    return Check{name, measured, tol, ">=", std::isfinite(measured) && measured >= tol, asserted};
}

bool all_pass(const std::vector<Check>& checks) {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return !c.asserted || c.pass; });
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed ^ (0x9E3779B97F4A7C15ULL * (index + 1));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void parallel_for(long n, int workers, const std::function<void(long)>& body) {
    if (n <= 0) return;
    const long w = std::clamp<long>(workers, 1, n);
    if (w == 1) {
        for (long i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(w);
    pool.reserve(w);
    for (long k = 0; k < w; ++k) {
        const long lo = n * k / w, hi = n * (k + 1) / w;
        pool.emplace_back([&, lo, hi, k] {
            try {
                for (long i = lo; i < hi; ++i) body(i);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

WeakCouplingInstance weak_coupling_instance(int d_a, int d_e, std::uint64_t seed, double coupling) {
    if (d_a < 1 || d_e < 1) throw std::invalid_argument("weak_coupling_instance: dimensions must be positive");
    WeakCouplingInstance inst;
    inst.dims = DimSignature({d_a, d_e});
    inst.h.h_a = random_hermitian(d_a, derive_seed(seed, 1));
    inst.h.h_e = random_hermitian(d_e, derive_seed(seed, 2));
    inst.h.h_int = random_hermitian(d_a * d_e, derive_seed(seed, 3), coupling);
    inst.h_int = inst.h.h_int;
    inst.h_total = inst.h.total();
    inst.psi0 = haar_random_state(inst.dims, derive_seed(seed, 0));
    return inst;
}

SumRuleStats weak_coupling_sum_rules(const WeakCouplingInstance& inst, double eta, int n_steps) {
    const Propagator u = propagate(inst.h_total, eta);
    const std::vector<int> cut{0};
    StateVector psi = inst.psi0;
    OnticDecomposition prev = ontic_decompose(psi, cut, 0.0);
    SumRuleStats st;
    for (int k = 0; k < n_steps; ++k) {
        const double t = k * eta;
        psi = StateVector(u.mat * psi.amp, psi.dims);
        OnticDecomposition next = match_labels(prev, ontic_decompose(psi, cut, t + eta)).first;
        const RMat V = v_exact(prev, next, u);
        st.max_row = std::max(st.max_row, (V.rowwise().sum() - next.probs).cwiseAbs().maxCoeff());
        st.max_col = std::max(st.max_col, (V.colwise().sum().transpose() - prev.probs).cwiseAbs().maxCoeff());
        const TransitionStep step = transition_matrix(V, prev.probs, eta, t);
        ++st.total_steps;
        if (step.consistent) {
            ++st.consistent_steps;
            st.max_transport = std::max(st.max_transport, (step.cond * prev.probs - next.probs).cwiseAbs().maxCoeff());
            st.max_stochastic = std::max(
                st.max_stochastic, (step.cond.colwise().sum().array() - 1.0).abs().maxCoeff());
        }
        prev = std::move(next);
    }
    return st;
}

double perturbative_discrepancy(const WeakCouplingInstance& inst, double eta) {
    const std::vector<int> cut{0};
    const Propagator u = propagate(inst.h_total, eta);
    const OnticDecomposition d0 = ontic_decompose(inst.psi0, cut, 0.0);
    const StateVector psi1(u.mat * inst.psi0.amp, inst.psi0.dims);
    const OnticDecomposition d1 = match_labels(d0, ontic_decompose(psi1, cut, eta)).first;
    const RMat ve = v_exact(d0, d1, u);
    const RMat vp = v_perturbative(d0, inst.h_int, eta);
    RMat diff = ve - vp;
    diff.diagonal().setZero();
    return diff.cwiseAbs().maxCoeff();
}

}  // namespace modalchain::scenarios
