#include <gtest/gtest.h>

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "modalchain/qcore.hpp"

using namespace modalchain;

namespace {

CMat pauli_x() {
    CMat x(2, 2);
    x << 0, 1, 1, 0;
    return x;
}

}  // namespace

TEST(DimSignature, FlatIndexRoundTrip) {
    const DimSignature d({2, 3, 4});
    EXPECT_EQ(d.total(), 24);
    for (long k = 0; k < d.total(); ++k) EXPECT_EQ(d.flat_index(d.multi_index(k)), k);
    EXPECT_EQ(d.multi_index(23), (std::vector<int>{1, 2, 3}));
    EXPECT_EQ(d.complement({1}), (std::vector<int>{0, 2}));
}

TEST(StateVector, RejectsUnnormalized) {
    CVec v = CVec::Ones(4);
    EXPECT_THROW(StateVector(v, DimSignature({2, 2})), std::invalid_argument);
    EXPECT_THROW(StateVector(v.normalized(), DimSignature({2, 3})), std::invalid_argument);
}

TEST(PartialTrace, MatchesExplicitSum) {
    const DimSignature d({2, 3, 2});
    const StateVector psi = haar_random_state(d, 7);
    const DensityMatrix r = reduced_density(psi, {0, 2});
    CMat ref = CMat::Zero(4, 4);
    for (int a = 0; a < 2; ++a)
        for (int c = 0; c < 2; ++c)
            for (int a2 = 0; a2 < 2; ++a2)
                for (int c2 = 0; c2 < 2; ++c2)
                    for (int b = 0; b < 3; ++b)
                        ref(a * 2 + c, a2 * 2 + c2) +=
                            psi.amp(d.flat_index({a, b, c})) * std::conj(psi.amp(d.flat_index({a2, b, c2})));
    EXPECT_LT((r.mat - ref).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(r.mat.trace().real(), 1.0, 1e-12);
}

TEST(PartialTrace, FromDensityAgreesWithState) {
    const DimSignature d({3, 2, 2});
    const StateVector psi = haar_random_state(d, 11);
    const DensityMatrix full = DensityMatrix::from_state(psi);
    EXPECT_LT((partial_trace(full, {1}).mat - reduced_density(psi, {1}).mat).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Propagate, MatchesMatrixExponential) {
    const CMat h = random_hermitian(6, 3);
    const Propagator u = propagate(h, 0.37);
    const CMat ref = (cplx(0, -0.37) * h).exp();
    EXPECT_LT((u.mat - ref).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(is_unitary(u.mat));
}

TEST(Propagate, RejectsNonHermitian) {
    CMat h = random_hermitian(3, 1);
    h(0, 1) += 0.5;
    EXPECT_THROW((void)propagate(h, 0.1), std::invalid_argument);
}

TEST(Haar, DeterministicPerSeed) {
    const StateVector a = haar_random_state(16, 42), b = haar_random_state(16, 42), c = haar_random_state(16, 43);
    EXPECT_EQ(a.amp, b.amp);
    EXPECT_GT((a.amp - c.amp).norm(), 1e-3);
    EXPECT_NEAR(a.norm(), 1.0, 1e-14);
}

TEST(Haar, MeanPurityProperty) {
    // E[tr rho_A^2] = (dA + dE) / (dA dE + 1) for Haar states.
    const int da = 2, de = 16, n = 2000;
    double s = 0;
    for (int k = 0; k < n; ++k) {
        const DensityMatrix r = reduced_density(haar_random_state(DimSignature({da, de}), 1000 + k), {0});
        s += (r.mat * r.mat).trace().real();
    }
    EXPECT_NEAR(s / n, (da + de) / (da * de + 1.0), 0.01);
}

TEST(EmbedOperator, MatchesKronecker) {
    const DimSignature d({2, 2, 2});
    const CMat e = embed_operator(pauli_x(), d, {1});
    const CMat i2 = CMat::Identity(2, 2);
    const CMat ref = Eigen::kroneckerProduct(i2, Eigen::kroneckerProduct(pauli_x(), i2).eval()).eval();
    EXPECT_LT((e - ref).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PermuteFactors, InverseRestores) {
    const DimSignature d({2, 3, 4});
    const StateVector psi = haar_random_state(d, 5);
    const CVec p = permute_factors(psi.amp, d, {2, 0, 1});
    const CVec back = permute_factors(p, DimSignature({4, 2, 3}), {1, 2, 0});
    EXPECT_LT((back - psi.amp).norm(), 1e-15);
}

TEST(Tensor, ProductAndCut) {
    const StateVector a = haar_random_state(2, 1), b = haar_random_state(3, 2);
    const StateVector ab = tensor(a, b);
    const CMat m = bipartite_matrix(ab, {0});
    EXPECT_LT((m - a.amp * b.amp.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((join_cut(a.amp, b.amp, ab.dims, {0}) - ab.amp).norm(), 1e-15);
}

TEST(HamiltonianSplit, TotalIsHermitian) {
    HamiltonianSplit h{random_hermitian(2, 1), random_hermitian(3, 2), random_hermitian(6, 3, 0.1)};
    const CMat t = h.total();
    EXPECT_EQ(t.rows(), 6);
    EXPECT_TRUE(is_hermitian(t));
}
