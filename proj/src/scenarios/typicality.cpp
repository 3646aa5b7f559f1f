#include <bit>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "modalchain/scenarios.hpp"

namespace modalchain::scenarios {

namespace {

double trace_distance(const CMat& a, const CMat& b) {
    Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * ((a - b) + (a - b).adjoint()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().sum();
}

void validate(const TypicalityConfig& cfg) {
    if (cfg.d_a < 1 || cfg.d_e < 1) throw std::invalid_argument("typicality: dimensions must be positive");
    if (cfg.d_a > cfg.d_e && cfg.d_e != 1) throw std::invalid_argument("typicality: d_A must not exceed d_E");
    if (cfg.n_samples < 1) throw std::invalid_argument("typicality: n_samples must be at least 1");
    if (cfg.mode == "constraint") {
        if (cfg.d_r < 1 || cfg.d_r > cfg.d_a * cfg.d_e) {
            std::ostringstream os;
            os << "typicality: constraint rank d_R=" << cfg.d_r << " is inconsistent with d_A*d_E=" << cfg.d_a * cfg.d_e;
            throw std::invalid_argument(os.str());
        }
    } else if (cfg.mode == "beta") {
        if (cfg.d_a != 2) throw std::invalid_argument("typicality: beta mode needs d_A = 2");
        if (!std::has_single_bit(static_cast<unsigned>(cfg.d_e)) || cfg.d_e < 2)
            throw std::invalid_argument("typicality: beta mode needs d_E a power of two");
        const int n = std::countr_zero(static_cast<unsigned>(cfg.d_e));
        if (cfg.excitations < 1 || cfg.excitations > n)
            throw std::invalid_argument("typicality: beta mode needs 1 <= excitations <= log2(d_E)");
        if (!(cfg.epsilon > 0)) throw std::invalid_argument("typicality: epsilon must be positive");
    } else if (cfg.mode != "none") {
        throw std::invalid_argument("typicality: mode must be none, constraint or beta");
    }
}

}  // namespace

TypicalityResult run_typicality(const TypicalityConfig& cfg) {
    validate(cfg);
    const long d = static_cast<long>(cfg.d_a) * cfg.d_e;
    const DimSignature dims({cfg.d_a, cfg.d_e});
    TypicalityResult res;

    // Orthonormal basis of the sampled subspace (empty = whole space).
    CMat basis;
    res.reference = CMat::Identity(cfg.d_a, cfg.d_a) / static_cast<double>(cfg.d_a);
    if (cfg.mode == "constraint") {
        const CVec g = haar_random_state(d * cfg.d_r, derive_seed(cfg.seed, 1ULL << 32)).amp;
        const CMat gm = Eigen::Map<const CMat>(g.data(), d, cfg.d_r);
        basis = Eigen::HouseholderQR<CMat>(gm).householderQ() * CMat::Identity(d, cfg.d_r);
        const CMat proj = basis * basis.adjoint() / static_cast<double>(cfg.d_r);
        res.reference = partial_trace(DensityMatrix(0.5 * (proj + proj.adjoint()), dims), {0}).mat;
    } else if (cfg.mode == "beta") {
        const int n = std::countr_zero(static_cast<unsigned>(cfg.d_e));
        const int k = cfg.excitations;
        std::vector<long> idx;
        for (int a = 0; a < 2; ++a)
            for (long e = 0; e < cfg.d_e; ++e)
                if (a + std::popcount(static_cast<unsigned long>(e)) == k) idx.push_back(a * cfg.d_e + e);
        basis = CMat::Zero(d, static_cast<long>(idx.size()));
        for (std::size_t c = 0; c < idx.size(); ++c) basis(idx[c], static_cast<long>(c)) = 1.0;
        res.beta = std::log((n - k + 1.0) / k) / cfg.epsilon;
        const double w0 = 1.0, w1 = std::exp(-res.beta * cfg.epsilon);
        res.reference = CMat::Zero(2, 2);
        res.reference(0, 0) = w0 / (w0 + w1);
        res.reference(1, 1) = w1 / (w0 + w1);
    }

    std::vector<double> purity(cfg.n_samples), dist(cfg.n_samples);
    parallel_for(cfg.n_samples, cfg.workers, [&](long s) {
        CVec amp;
        if (basis.size() == 0) {
            amp = haar_random_state(d, derive_seed(cfg.seed, s)).amp;
        } else {
            amp = basis * haar_random_state(basis.cols(), derive_seed(cfg.seed, s)).amp;
            amp.normalize();
        }
        const DensityMatrix rho = reduced_density(StateVector(amp, dims), {0});
        purity[s] = (rho.mat * rho.mat).trace().real();
        dist[s] = trace_distance(rho.mat, res.reference);
    });

    double sp = 0, sp2 = 0, sd = 0;
    for (int s = 0; s < cfg.n_samples; ++s) {
        sp += purity[s];
        sp2 += purity[s] * purity[s];
        sd += dist[s];
        res.max_distance = std::max(res.max_distance, dist[s]);
    }
    const double n = cfg.n_samples;
    res.mean_purity = sp / n;
    res.mean_distance = sd / n;
    res.purity_stderr = n > 1 ? std::sqrt(std::max(0.0, (sp2 - n * res.mean_purity * res.mean_purity) / (n - 1)) / n) : 0.0;
    if (cfg.mode == "none") {
        res.purity_target = (cfg.d_a + cfg.d_e) / (static_cast<double>(cfg.d_a) * cfg.d_e + 1.0);
        const double z = res.purity_stderr > 0 ? std::abs(res.mean_purity - res.purity_target) / res.purity_stderr
                                               : std::abs(res.mean_purity - res.purity_target) / 1e-15;
        res.checks.push_back(check_le("mean_purity_sigmas", z, tolerance(cfg.tol, "purity_sigmas", 4.0), cfg.n_samples > 1));
    }
    res.checks.push_back(
        check_le("mean_trace_distance", res.mean_distance, tolerance(cfg.tol, "distance", 0.2), cfg.d_e > 1));
    return res;
}

}  // namespace modalchain::scenarios
