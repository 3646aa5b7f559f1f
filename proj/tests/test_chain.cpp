#include <gtest/gtest.h>

#include <algorithm>

#include <Eigen/Eigenvalues>

#include "modalchain/chain.hpp"
#include "modalchain/scenarios.hpp"

using namespace modalchain;

namespace {

struct StepFixture {
    OnticDecomposition prev, next;
    RMat v;
};

StepFixture random_step(std::uint64_t seed, double eta) {
    const DimSignature dims({3, 6});
    const StateVector psi = haar_random_state(dims, seed);
    const CMat h = random_hermitian(18, seed + 1000);
    const Propagator u = propagate(h, eta);
    StepFixture f;
    f.prev = ontic_decompose(psi, {0});
    f.next = match_labels(f.prev, ontic_decompose(StateVector((u.mat * psi.amp).normalized(), dims), {0})).first;
    f.v = v_exact(f.prev, f.next, u);
    return f;
}

}  // namespace

TEST(VExact, SumRulesProperty) {
    for (std::uint64_t s = 0; s < 25; ++s) {
        const StepFixture f = random_step(s, 0.01);
        EXPECT_LT((f.v.rowwise().sum() - f.next.probs).cwiseAbs().maxCoeff(), 1e-10) << "seed " << s;
        EXPECT_LT((f.v.colwise().sum().transpose() - f.prev.probs).cwiseAbs().maxCoeff(), 1e-10) << "seed " << s;
    }
}

TEST(TransitionMatrix, ColumnStochasticAndTransports) {
    for (std::uint64_t s = 0; s < 25; ++s) {
        const StepFixture f = random_step(s, 0.005);
        const TransitionStep st = transition_matrix(f.v, f.prev.probs, 0.005);
        if (!st.consistent) continue;
        EXPECT_LT((st.cond.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
        EXPECT_GE(st.cond.minCoeff(), 0.0);
        EXPECT_LT((st.cond * f.prev.probs - f.next.probs).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(TransitionMatrix, NullColumnIsIdentity) {
    RMat v = RMat::Zero(3, 3);
    v(0, 1) = 0.1;
    RVec p(3);
    p << 0.5, 0.5, 0.0;
    const TransitionStep st = transition_matrix(v, p, 1.0);
    EXPECT_EQ(st.cond(2, 2), 1.0);
    EXPECT_EQ(st.cond.col(2).sum(), 1.0);
    EXPECT_NEAR(st.cond(0, 1), 0.2, 1e-15);
    EXPECT_NEAR(st.cond(1, 1), 0.8, 1e-15);
}

TEST(TransitionMatrix, OnlyNetFlowMoves) {
    RMat v(2, 2);
    v << 0.4, 0.05, 0.15, 0.4;
    RVec p(2);
    p << 0.45, 0.55;
    const TransitionStep st = transition_matrix(v, p, 1.0);
    EXPECT_NEAR(st.cond(1, 0), 0.1 / 0.45, 1e-15);
    EXPECT_EQ(st.cond(0, 1), 0.0);
}

TEST(TransitionMatrix, FlagsInconsistentStep) {
    RMat v(2, 2);
    v << 0, 0, 0.9, 0;
    RVec p(2);
    p << 0.5, 0.5;
    EXPECT_FALSE(transition_matrix(v, p, 1.0).consistent);
}

TEST(Compose, ChainsConditionals) {
    TransitionStep a, b;
    a.cond = RMat::Identity(2, 2);
    a.cond << 0.9, 0.2, 0.1, 0.8;
    b.cond = RMat::Identity(2, 2);
    b.cond << 0.5, 0.0, 0.5, 1.0;
    EXPECT_LT((compose({a, b}) - b.cond * a.cond).cwiseAbs().maxCoeff(), 1e-15);
    b.consistent = false;
    EXPECT_THROW((void)compose({a, b}), std::domain_error);
}

TEST(Sampling, CounterUniformDeterministic) {
    for (std::uint64_t k = 0; k < 100; ++k) {
        const double u = counter_uniform(7, k);
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        EXPECT_EQ(u, counter_uniform(7, k));
    }
    EXPECT_NE(counter_uniform(7, 0), counter_uniform(8, 0));
}

TEST(Sampling, CategoricalEdges) {
    RVec w(3);
    w << 0.25, 0.0, 0.75;
    EXPECT_EQ(sample_categorical(w, 0.0), 0);
    EXPECT_EQ(sample_categorical(w, 0.2499), 0);
    EXPECT_EQ(sample_categorical(w, 0.25), 2);
    EXPECT_EQ(sample_categorical(w, 0.999999), 2);
}

TEST(Sampling, TrajectoryLengthAndFrequencies) {
    TransitionStep st;
    st.eta = 1.0;
    st.cond.resize(2, 2);
    st.cond << 0.7, 0.0, 0.3, 1.0;
    std::vector<TransitionStep> steps(3, st);
    for (int k = 0; k < 3; ++k) steps[k].time = k;
    const Trajectory t = sample_trajectory(steps, 0, 5);
    EXPECT_EQ(t.labels.size(), 4u);
    EXPECT_EQ(t.times.back(), 3.0);
    // Absorbing label 1: P(still 0 after 3 steps) = 0.343.
    int stay = 0;
    const int n = 20000;
    for (int k = 0; k < n; ++k) stay += sample_trajectory(steps, 0, 100 + k).labels.back() == 0;
    EXPECT_NEAR(stay / double(n), 0.343, 4 * std::sqrt(0.343 * 0.657 / n));
}

TEST(Sampling, InconsistentStepNamesStep) {
    TransitionStep st;
    st.eta = 0.1;
    st.cond = RMat::Identity(2, 2);
    std::vector<TransitionStep> steps(3, st);
    steps[2].consistent = false;
    try {
        (void)sample_trajectory(steps, 0, 1);
        FAIL();
    } catch (const std::domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("smaller eta"), std::string::npos);
    }
}

TEST(ErgodicPartition, BlockDiagonal) {
    RMat c = RMat::Zero(4, 4);
    c.block(0, 0, 2, 2) << 0.5, 0.5, 0.5, 0.5;
    c.block(2, 2, 2, 2) << 0.9, 0.1, 0.1, 0.9;
    RVec p(4);
    p << 0.3, 0.3, 0.4, 0.0;
    const ErgodicPartition part = ergodic_partition(c, p);
    ASSERT_EQ(part.sets.size(), 2u);
    EXPECT_EQ(part.null_set, std::vector<int>{3});
    double total = 0;
    for (double q : part.inclusive_probs) total += q;
    EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(ErgodicPartition, OneWayFlowSplits) {
    RMat c(2, 2);
    c << 1.0, 0.0, 1e-3, 1.0;  // 0 -> 1 only
    RVec p(2);
    p << 0.5, 0.5;
    EXPECT_EQ(ergodic_partition(c, p).sets.size(), 2u);
}

TEST(ToyChain, BalancedAndStochastic) {
    const TransitionStep st = toy_chain(8, 0.01, 3);
    EXPECT_TRUE(st.consistent);
    EXPECT_LT((st.cond.colwise().sum().array() - 1.0).abs().maxCoeff(), 1e-14);
    for (int i = 0; i < 8; ++i)
        for (int j = i + 1; j < 8; ++j) EXPECT_EQ((st.cond(i, j) > 0) + (st.cond(j, i) > 0), 1);
}

TEST(EquilibriumConvergence, UniformStationary) {
    const TransitionStep st = toy_chain(8, 0.01, 3);
    const ConvergenceReport rep = equilibrium_convergence(st, 1250);
    EXPECT_TRUE(rep.converged);
    EXPECT_LT((st.cond * rep.stationary - rep.stationary).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(rep.stationary.sum(), 1.0, 1e-14);
    EXPECT_LT((rep.stationary.array() - 1.0 / 8).abs().maxCoeff(), 0.05);
    EXPECT_EQ(rep.ergodic_sets.size(), 1u);
    // Asymptotic decay is set by the second-largest eigenvalue modulus.
    Eigen::EigenSolver<RMat> es(st.cond);
    std::vector<double> mods;
    for (long k = 0; k < 8; ++k) mods.push_back(std::abs(es.eigenvalues()(k)));
    std::sort(mods.rbegin(), mods.rend());
    EXPECT_NEAR(rep.decay_steps, -1.0 / std::log(mods[1]), 0.05 * rep.decay_steps);
}

TEST(DecoherenceTime, InfiniteWithoutFlow) {
    TransitionStep st;
    st.eta = 0.1;
    st.cond = RMat::Identity(2, 2);
    EXPECT_TRUE(std::isinf(decoherence_time({st})));
}
