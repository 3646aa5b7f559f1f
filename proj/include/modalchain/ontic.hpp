#pragma once

#include <string>
#include <vector>

#include "modalchain/qcore.hpp"

namespace modalchain {

constexpr double kNullCutoff = 1e-12;
constexpr double kDegeneracyTol = 1e-10;

struct OnticDecomposition {
    double time = 0.0;
    RVec probs;                 // label order; descending at creation
    std::vector<CVec> ontic;    // states of A
    std::vector<CVec> mirrors;  // states of the complement
    int rank = 0;               // count of probs > null cutoff
    DimSignature dims;          // full system
    std::vector<int> cut;       // factor indices of A
    bool swapped = false;       // d_A > d_E: labels limited to d_E
    bool degenerate = false;    // some retained eigenvalues within kDegeneracyTol

    [[nodiscard]] int labels() const { return static_cast<int>(probs.size()); }
    [[nodiscard]] bool is_null(int i) const { return probs(i) <= kNullCutoff; }
    // |psi_i> (x) |mirror_i> as a flat vector in the full system ordering.
    [[nodiscard]] CVec product_state(int i) const;
    [[nodiscard]] CVec reconstruct() const;
};

struct MatchReport {
    std::vector<int> permutation;  // next label i came from backend index permutation[i]
    std::vector<double> overlaps;  // |<psi_i(next)|psi_i(prev)>|^2
    double min_overlap = 1.0;
    bool continuity_degraded = false;  // min_overlap < 0.5
    bool rank_changed = false;
};

OnticDecomposition ontic_decompose(const StateVector& psi, const std::vector<int>& cut, double time = 0.0);

std::pair<OnticDecomposition, MatchReport> match_labels(const OnticDecomposition& prev, const OnticDecomposition& next);

RMat overlap_matrix(const std::vector<CVec>& states);
RMat overlap_matrix(const std::vector<StateVector>& states);

// log of exp(-N L^2 / ell^2).
double gaussian_distinctness(double n, double length, double ell);

// Exact maximum-weight perfect assignment on a square matrix; result[row] = column.
std::vector<int> max_weight_assignment(const RMat& weight);

}  // namespace modalchain
