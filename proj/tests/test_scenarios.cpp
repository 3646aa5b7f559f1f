#include <gtest/gtest.h>

#include <atomic>
#include <set>

#include <unsupported/Eigen/KroneckerProduct>

#include "modalchain/scenarios.hpp"

using namespace modalchain;
using namespace modalchain::scenarios;

namespace {

NaiveConfig naive_07(int n_dev = 8) {
    NaiveConfig c;
    c.c = {std::sqrt(0.7), std::sqrt(0.3)};
    c.n_dev = n_dev;
    c.theta = uniform_schedule(2, n_dev, 0.45 * M_PI);
    c.steps = 60;
    return c;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST(Common, DeriveSeedDistinct) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t k = 0; k < 1000; ++k) seen.insert(derive_seed(0x5EED, k));
    EXPECT_EQ(seen.size(), 1000u);
    EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
}

TEST(Common, ParallelForCoversRangeForAnyWorkerCount) {
    for (int w : {1, 2, 3, 8}) {
        std::vector<int> hit(101, 0);
        parallel_for(101, w, [&](long k) { hit[k] += 1; });
        for (int h : hit) EXPECT_EQ(h, 1);
    }
}

TEST(Common, ParallelForRethrows) {
    EXPECT_THROW(parallel_for(10, 3, [](long k) {
                     if (k == 7) throw std::runtime_error("boom");
                 }),
                 std::runtime_error);
}

TEST(Common, ToleranceOverride) {
    Tolerances t{{"born", 0.5}};
    EXPECT_EQ(tolerance(t, "born", 1.0), 0.5);
    EXPECT_EQ(tolerance(t, "other", 1.0), 1.0);
    EXPECT_TRUE(check_le("x", 1.0, 1.0).pass);
    EXPECT_FALSE(check_ge("x", 0.5, 1.0).pass);
    EXPECT_TRUE(all_pass({check_ge("y", 0.5, 1.0, false)}));
}

TEST(WeakCoupling, SumRulesSmallInstances) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto inst = weak_coupling_instance(3, 9, s);
        const SumRuleStats st = weak_coupling_sum_rules(inst, 0.05, 10);
        EXPECT_LT(std::max(st.max_row, st.max_col), 1e-9);
        EXPECT_LT(st.max_transport, 1e-8);
    }
}

TEST(WeakCoupling, PerturbativeErrorScalesQuadratically) {
    const auto inst = weak_coupling_instance(2, 8, 4);
    const double r = perturbative_discrepancy(inst, 0.02) / perturbative_discrepancy(inst, 0.01);
    EXPECT_GT(r, 3.0);
    EXPECT_LT(r, 5.0);
}

TEST(Naive, BornRuleAndTriangularFlow) {
    const NaiveResult r = run_naive(naive_07());
    EXPECT_NEAR(r.branch_probs(0), 0.7, 1e-6);
    EXPECT_NEAR(r.branch_probs(1), 0.3, 1e-6);
    EXPECT_LT(r.max_upper_flow, 1e-9);
    EXPECT_TRUE(all_pass(r.checks));
}

TEST(Naive, BranchOverlapIsCosinePower) {
    const NaiveConfig c = naive_07(6);
    const NaiveResult r = run_naive(c);
    EXPECT_NEAR(r.max_overlap, std::pow(std::cos(0.45 * M_PI), 6), 1e-12);
}

TEST(Naive, ProbabilitiesSumToOne) {
    NaiveConfig c = naive_07();
    c.c = {std::sqrt(0.5), std::sqrt(0.3), std::sqrt(0.2)};
    c.n_dev = 12;
    c.theta = uniform_schedule(3, c.n_dev, 0.5 * M_PI);
    const NaiveResult r = run_naive(c);
    for (const RVec& p : r.probs) EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_NEAR(r.max_overlap, std::pow(std::cos(0.25 * M_PI), 12), 1e-12);
    EXPECT_NEAR(r.branch_probs(2), 0.2, 10 * r.max_overlap);
}

TEST(Naive, TrajectoriesDeterministicAcrossWorkers) {
    NaiveConfig c = naive_07();
    c.n_traj = 200;
    c.workers = 1;
    const NaiveResult a = run_naive(c);
    c.workers = 4;
    const NaiveResult b = run_naive(c);
    ASSERT_EQ(a.trajectories.size(), b.trajectories.size());
    for (std::size_t k = 0; k < a.trajectories.size(); ++k) EXPECT_EQ(a.trajectories[k].labels, b.trajectories[k].labels);
}

TEST(Naive, RejectsBadConfig) {
    NaiveConfig c = naive_07();
    c.c = {0.5, 0.5};
    EXPECT_THROW(validate(c), std::invalid_argument);
    c = naive_07();
    c.theta = uniform_schedule(2, c.n_dev, 0.0);
    EXPECT_THROW(validate(c), std::invalid_argument);
}

TEST(Binned, MassesMatchGaussianIntegral) {
    BinnedConfig c;
    const int n = 4001;
    for (int k = 0; k < n; ++k) {
        const double x = -6.0 + 12.0 * k / (n - 1);
        c.grid.push_back(x);
        c.xi.emplace_back(std::exp(-0.25 * x * x), 0.0);
    }
    c.edges = {-6.0, -1.0, 0.5, 6.0};
    const RVec m = bin_masses(c);
    EXPECT_NEAR(m(0), normal_cdf(-1.0), 1e-3);
    EXPECT_NEAR(m(1), normal_cdf(0.5) - normal_cdf(-1.0), 1e-3);
    EXPECT_NEAR(m(2), 1 - normal_cdf(0.5), 1e-3);
}

TEST(Binned, RejectsSparseBins) {
    BinnedConfig c;
    c.grid = {0, 1, 2, 3};
    c.xi = {1, 1, 1, 1};
    c.edges = {0, 1.5, 3};
    EXPECT_THROW((void)bin_masses(c), std::invalid_argument);
}

TEST(Epr, SingletClosedForm) {
    const cplx s = 1 / std::sqrt(2.0);
    for (double phi : {0.3, M_PI / 3, M_PI / 2, 2.0}) {
        const EprAnalytic a = epr_analytic(s, -s, 0.0, phi);
        // Singlet: p(same) = sin^2(phi/2) / 2, p(different) = cos^2(phi/2) / 2.
        EXPECT_NEAR(a.joint(0, 0), 0.5 * std::pow(std::sin(phi / 2), 2), 1e-14);
        EXPECT_NEAR(a.joint(0, 1), 0.5 * std::pow(std::cos(phi / 2), 2), 1e-14);
        EXPECT_NEAR(a.joint.sum(), 1.0, 1e-14);
        EXPECT_NEAR(a.p_a(0), 0.5, 1e-14);
        EXPECT_NEAR(a.p_b(0), 0.5, 1e-14);
    }
}

TEST(Epr, DynamicsMatchesAnalytic) {
    EprConfig c;
    const EprResult r = run_epr(c);
    EXPECT_LT(r.max_joint_diff, 1e-9);
    EXPECT_LT(r.dynamics.rho2_change, 1e-12);
    EXPECT_LT(r.frame_diff, 1e-9);
}

TEST(Epr, OutcomeViolationIsHalfCosine) {
    EprConfig c;
    c.phi = M_PI / 4;
    const EprResult r = run_epr(c);
    EXPECT_NEAR(r.outcome_violation, 0.5 * std::cos(M_PI / 4), 1e-9);
}

TEST(Epr, ProductStateHasNoViolation) {
    EprConfig c;
    c.c_plus = 1.0;
    c.c_minus = 0.0;
    const EprResult r = run_epr(c);
    EXPECT_LT(r.outcome_violation, 1e-12);
}

TEST(Epr, RejectsOverlappingWindows) {
    EprConfig c;
    c.t_b = c.t_a + 0.1;
    EXPECT_THROW((void)run_epr(c), std::invalid_argument);
}

TEST(Chsh, SingletReachesTsirelson) {
    const cplx s = 1 / std::sqrt(2.0);
    EXPECT_NEAR(chsh(s, -s, {0, M_PI / 2}, {M_PI / 4, 3 * M_PI / 4}), 2 * std::sqrt(2.0), 1e-12);
    // Correlation -cos(a - b) with aligned settings gives S = 2.
    EXPECT_NEAR(chsh(s, -s, {0, 0}, {0, 0}), 2.0, 1e-12);
}

TEST(Chsh, ProductStateWithinClassicalBound) {
    for (double a : {0.0, 0.4, 1.1})
        EXPECT_LE(chsh(1.0, 0.0, {a, a + 1.0}, {0.3, 2.0}), 2.0 + 1e-12);
}

TEST(Typicality, PurityNearPageValue) {
    TypicalityConfig c;
    c.d_e = 64;
    c.n_samples = 400;
    const TypicalityResult r = run_typicality(c);
    EXPECT_NEAR(r.purity_target, 66.0 / 129.0, 1e-15);
    EXPECT_LT(std::abs(r.mean_purity - r.purity_target), 4 * r.purity_stderr);
}

TEST(Typicality, BetaReferenceIsGibbs) {
    TypicalityConfig c;
    c.d_e = 64;
    c.mode = "beta";
    c.excitations = 2;
    c.n_samples = 10;
    const TypicalityResult r = run_typicality(c);
    EXPECT_NEAR(r.beta, std::log(5.0 / 2.0), 1e-14);
    // Excitation counting: C(6,2) states with A in 0, C(6,1) with A in 1.
    EXPECT_NEAR(r.reference(0, 0).real(), 15.0 / 21.0, 1e-12);
}

TEST(Typicality, ConstraintRankChecked) {
    TypicalityConfig c;
    c.d_e = 8;
    c.mode = "constraint";
    c.d_r = 17;
    EXPECT_THROW((void)run_typicality(c), std::invalid_argument);
    c.d_r = 4;
    c.n_samples = 5;
    EXPECT_NO_THROW((void)run_typicality(c));
}

TEST(JointFactorization, ProductOfBranchesFactorizes) {
    // A and B each correlated with disjoint environment records.
    const DimSignature dims({2, 2, 4});
    CVec v = CVec::Zero(16);
    const double w[2][2] = {{0.4, 0.1}, {0.2, 0.3}};
    for (int i = 0; i < 2; ++i)
        for (int a = 0; a < 2; ++a) v(dims.flat_index({i, a, 2 * i + a})) = std::sqrt(w[i][a]);
    const JointTable t = joint_factorization(StateVector(v, dims), {0}, {1}, 1e-9);
    ASSERT_FALSE(t.refused);
    EXPECT_NEAR(t.table.sum(), 1.0, 1e-12);
    EXPECT_LT(t.marginal_residual, 1e-12);
}

TEST(JointFactorization, RefusesEntangledDevices) {
    const DimSignature dims({2, 2, 2});
    CVec v = CVec::Zero(8);
    v(dims.flat_index({0, 0, 0})) = std::sqrt(0.5);
    v(dims.flat_index({1, 1, 0})) = std::sqrt(0.5);
    v /= v.norm();
    const JointTable t = joint_factorization(StateVector(v, dims), {0}, {1}, 1e-9);
    EXPECT_TRUE(t.refused);
    EXPECT_NE(t.reason.find("quantum ontology"), std::string::npos);
}

TEST(Realistic, ValidationMessages) {
    RealisticConfig c;
    c.f = CMat::Identity(2, 2) / std::sqrt(2.0);
    c.env_dim = 16;
    EXPECT_THROW(validate(c), std::invalid_argument);
    c.env_dim = 64;
    c.f *= 2.0;
    EXPECT_THROW(validate(c), std::invalid_argument);
    c.f /= 2.0;
    c.v_mode = "other";
    EXPECT_THROW(validate(c), std::invalid_argument);
}

TEST(Realistic, SmallDeviceSeparatesBranches) {
    RealisticConfig c;
    c.f.resize(2, 2);
    c.f << std::sqrt(0.6), std::sqrt(0.1), std::sqrt(0.05), std::sqrt(0.25);
    c.device_qubits = 3;
    c.env_dim = 32;
    c.steps = 100;
    c.eta = 0.04;
    const RealisticResult r = run_realistic(c);
    ASSERT_EQ(r.partition.sets.size(), 2u);
    EXPECT_NEAR(r.expected(0), 0.65, 1e-12);
    EXPECT_LT((r.inclusive_final - r.expected).cwiseAbs().maxCoeff(), 10 * r.max_overlap + 1e-12);
}

TEST(Realistic, LargeOverlapRaisesSeparationError) {
    RealisticConfig c;
    c.f.resize(2, 2);
    c.f << std::sqrt(0.6), std::sqrt(0.1), std::sqrt(0.05), std::sqrt(0.25);
    c.device_qubits = 3;
    c.env_dim = 32;
    c.steps = 20;
    c.eta = 0.04;
    c.delta = 0.3;
    EXPECT_THROW((void)run_realistic(c), SeparationError);
}
