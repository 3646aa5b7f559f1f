#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace modalchain {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

// Linear map on a flat state vector; lets scenarios supply structured propagators.
using LinearMap = std::function<CVec(const CVec&)>;

class DimSignature {
public:
    DimSignature() = default;
    explicit DimSignature(std::vector<int> factors);

    [[nodiscard]] const std::vector<int>& factors() const { return factors_; }
    [[nodiscard]] int size() const { return static_cast<int>(factors_.size()); }
    [[nodiscard]] int operator[](int k) const { return factors_.at(k); }
    [[nodiscard]] long total() const { return total_; }

    // Row-major: factor 0 is the most significant digit.
    [[nodiscard]] std::vector<int> multi_index(long flat) const;
    [[nodiscard]] long flat_index(const std::vector<int>& multi) const;

    [[nodiscard]] DimSignature select(const std::vector<int>& keep) const;
    [[nodiscard]] DimSignature concat(const DimSignature& other) const;
    [[nodiscard]] std::vector<int> complement(const std::vector<int>& keep) const;

    bool operator==(const DimSignature& o) const { return factors_ == o.factors_; }

private:
    std::vector<int> factors_;
    long total_ = 1;
};

struct StateVector {
    CVec amp;
    DimSignature dims;

    StateVector() = default;
    StateVector(CVec a, DimSignature d);
    static StateVector basis(const DimSignature& d, long index);
    [[nodiscard]] double norm() const { return amp.norm(); }
};

struct DensityMatrix {
    CMat mat;
    DimSignature dims;

    DensityMatrix() = default;
    DensityMatrix(CMat m, DimSignature d);
    static DensityMatrix from_state(const StateVector& s);
};

struct Propagator {
    CMat mat;
    double step = 0.0;
};

// H = H_A (x) I + I (x) H_E + H_int over a bipartition A|E.
struct HamiltonianSplit {
    CMat h_a;
    CMat h_e;
    CMat h_int;

    [[nodiscard]] CMat total() const;
};

constexpr double kNormTol = 1e-12;
constexpr double kHermTol = 1e-10;

StateVector tensor(const StateVector& a, const StateVector& b);

// Permute the factors of a flat vector so that `order` becomes the new factor order.
CVec permute_factors(const CVec& v, const DimSignature& dims, const std::vector<int>& order);

// Amplitude matrix M(a, e) for the cut keep|complement.
CMat bipartite_matrix(const StateVector& psi, const std::vector<int>& keep);

// Inverse of bipartite_matrix for a product a (x) e.
CVec join_cut(const CVec& a, const CVec& e, const DimSignature& dims, const std::vector<int>& keep);

DensityMatrix partial_trace(const DensityMatrix& rho, const std::vector<int>& keep);
DensityMatrix reduced_density(const StateVector& psi, const std::vector<int>& keep);

Propagator propagate(const CMat& h, double dt);

StateVector haar_random_state(long dim, std::uint64_t seed);
StateVector haar_random_state(const DimSignature& dims, std::uint64_t seed);
CMat random_hermitian(int dim, std::uint64_t seed, double scale = 1.0);

// Operator acting on factor `site` of dims, identity elsewhere.
CMat embed_operator(const CMat& op, const DimSignature& dims, const std::vector<int>& sites);

bool is_hermitian(const CMat& m, double tol = kHermTol);
bool is_unitary(const CMat& m, double tol = 1e-10);

}  // namespace modalchain
