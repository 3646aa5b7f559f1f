#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "modalchain/chain.hpp"

namespace modalchain::continuum {

// Thrown when parameters leave the window tau*Delta << eta << tau.
class RegimeError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct RateMatrix {
    RMat J;  // antisymmetric probability flow
    RMat T;  // nonnegative rates, zero diagonal
};

struct CrossoverModel {
    double p0 = 0.4;
    double a1 = 1.0;
    double a2 = -1.0;
    double delta = 1e-8;
    // Masses of the two spectator states chi_+ and chi_-; negative means split 1 - 2 p0 as 65/35.
    double q_plus = -1.0;
    double q_minus = -1.0;

    [[nodiscard]] double a() const { return 0.5 * (a1 - a2); }
    [[nodiscard]] double tau() const;
    [[nodiscard]] double qp() const;
    [[nodiscard]] double qm() const;
    void validate() const;
};

struct CrossoverEigen {
    double p_plus = 0.0;
    double p_minus = 0.0;
    double theta = 0.0;
    Eigen::Vector2d psi_plus;   // components on (phi_+, phi_-)
    Eigen::Vector2d psi_minus;
};

// The continuum Bell process. Kept apart from the coarse-grained process on purpose:
// it is the comparator that exhibits macro-flips.
namespace foil {

RateMatrix j_matrix(const OnticDecomposition& dec, const CMat& h);
RateMatrix j_matrix(const OnticDecomposition& dec, const LinearMap& h);
RateMatrix bell_rates(const RMat& J, const RVec& p);

struct MasterSeries {
    std::vector<double> times;
    std::vector<RVec> p;
};

using RateProvider = std::function<RMat(double)>;

// Explicit RK4 on dp_i/dt = sum_j (T_ij p_j - T_ji p_i).
MasterSeries integrate_master(const RateProvider& rates, const RVec& p0, double t0, double t1, double dt);

}  // namespace foil

CrossoverEigen crossover_eigensystem(const CrossoverModel& m, double t);

// Explicit 4 (x) 4 realization: A basis (phi_+, phi_-, chi_+, chi_-).
StateVector crossover_state(const CrossoverModel& m, double t);
CMat crossover_generator(const CrossoverModel& m, double t);  // H(t), dPsi/dt = -i H Psi
CMat crossover_step(const CrossoverModel& m, double t, double eta);  // exact U(t+eta, t) on Psi

// Index of the A basis state carrying more than half of the weight of psi, or -1.
int crossover_content(const CVec& psi);

struct MacroflipReport {
    double eta = 0.0;
    double t0 = 0.0;
    double t1 = 0.0;
    double continuum_dt = 0.0;
    double continuum_flip_prob = 0.0;
    double flip_window = 0.0;        // t(10% phi_+) - t(90% phi_+) of the tracked eigenvector
    double flip_window_tau_delta = 0.0;
    double coarse_cross_prob = 0.0;
    double ratio = 0.0;              // coarse / continuum
    int coarse_start_label = -1;
    std::vector<int> coarse_start_content;
    std::vector<int> coarse_end_content;
    bool coarse_labels_keep_content = false;
    double coarse_min_overlap = 1.0;
    // Series for emission.
    std::vector<double> times;
    std::vector<double> p_plus, p_minus, theta;
    std::vector<RVec> continuum_occupation;
};

void check_regime(const CrossoverModel& m, double eta);

MacroflipReport macroflip_compare(const CrossoverModel& m, double eta, double t0, double t1,
                                  double continuum_dt = 1e-5);

}  // namespace modalchain::continuum
