#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "modalchain/chain.hpp"
#include "modalchain/continuum.hpp"

namespace modalchain::scenarios {

using Tolerances = std::map<std::string, double>;

double tolerance(const Tolerances& t, const std::string& name, double fallback);

struct Check {
    std::string name;
    double measured = 0.0;
    double tolerance = 0.0;
    std::string relation;  // "<=", ">=", "flag"
    bool pass = false;
    bool asserted = true;
};

Check check_le(const std::string& name, double measured, double tol, bool asserted = true);
Check check_ge(const std::string& name, double measured, double tol, bool asserted = true);
bool all_pass(const std::vector<Check>& checks);

// Independent per-trajectory seeds derived from a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// Splits [0, n) over workers; output never depends on the worker count.
void parallel_for(long n, int workers, const std::function<void(long)>& body);

// ---------------------------------------------------------------- weak coupling

struct WeakCouplingInstance {
    DimSignature dims;  // {d_A, d_E}
    HamiltonianSplit h;
    CMat h_total;
    CMat h_int;  // embedded in the full space
    StateVector psi0;
};

WeakCouplingInstance weak_coupling_instance(int d_a, int d_e, std::uint64_t seed, double coupling = 0.1);

struct SumRuleStats {
    double max_row = 0.0;        // |sum_j V_ij - p_i(t+eta)|
    double max_col = 0.0;        // |sum_i V_ij - p_j(t)|
    double max_transport = 0.0;  // consistent steps only
    double max_stochastic = 0.0;
    int consistent_steps = 0;
    int total_steps = 0;
};

SumRuleStats weak_coupling_sum_rules(const WeakCouplingInstance& inst, double eta, int n_steps);

// Largest off-diagonal |V_exact - V_perturbative| for one step from psi0.
double perturbative_discrepancy(const WeakCouplingInstance& inst, double eta);

// ---------------------------------------------------------------- naive measurement

struct NaiveConfig {
    std::vector<cplx> c;
    int n_dev = 12;
    // Final rotation angle per outcome and qubit (d_P x n_dev); the schedule ramps linearly from 0.
    RMat theta;
    int steps = 200;
    double T = 1.0;
    std::string v_mode = "exact";
    int n_traj = 0;
    std::uint64_t seed = 0x5EED;
    int workers = 1;
    Tolerances tol;

    [[nodiscard]] int d_p() const { return static_cast<int>(c.size()); }
    [[nodiscard]] double eta() const { return T / steps; }
};

// Equal angle on every qubit; outcomes evenly spaced over [0, sep].
RMat uniform_schedule(int d_p, int n_dev, double sep);
// Outcome i gets angle pi/2 on the qubit group of each set bit of i.
RMat binary_schedule(int d_p, int n_dev);

struct NaiveResult {
    std::vector<double> times;
    std::vector<RVec> probs;  // per time, label order
    std::vector<TransitionStep> steps;
    std::vector<OnticDecomposition> decs;
    RMat composed;
    RVec branch_probs;       // final probability per outcome
    std::vector<int> label_branch;  // final label -> outcome
    RMat branch_overlap;     // |<psi_i(T)|psi_j(T)>|
    double max_overlap = 0.0;
    double tau = 0.0;
    double max_upper_flow = 0.0;  // flow against the descending-p order
    double max_spread = 0.0;      // second-largest branch weight of an occupied ontic state
    bool degenerate_final = false;
    std::vector<Trajectory> trajectories;
    RVec outcome_freq;
    std::vector<Check> checks;
};

void validate(const NaiveConfig& cfg);
StateVector naive_state(const NaiveConfig& cfg, double t);
LinearMap naive_step(const NaiveConfig& cfg, double eta);
NaiveResult run_naive(const NaiveConfig& cfg);

struct ProbeResult {
    double s = 0.0;
    double align_time = 0.0;
};

struct ProbeSweep {
    std::vector<ProbeResult> points;
    double exponent = 0.0;  // fitted power of s
    double fit_r2 = 0.0;
    double sqrt_ratio_err = 0.0;  // max relative deviation from t ~ sqrt(s)
    bool monotone = false;
    std::vector<Check> checks;
};

double near_degenerate_probe(double s, const NaiveConfig& cfg, int grid = 2000);
ProbeSweep near_degenerate_sweep(const std::vector<double>& s_values, const NaiveConfig& cfg);

// ---------------------------------------------------------------- binned position

struct BinnedConfig {
    std::vector<double> grid;
    std::vector<cplx> xi;
    std::vector<double> edges;
    int n_dev = 8;
    int steps = 100;
    double T = 1.0;
    int n_traj = 0;
    std::uint64_t seed = 0x5EED;
    int workers = 1;
    Tolerances tol;
};

RVec bin_masses(const BinnedConfig& cfg);

struct BinnedResult {
    RVec masses;
    NaiveResult naive;
    std::vector<Check> checks;
};

BinnedResult run_binned_position(const BinnedConfig& cfg);

// ---------------------------------------------------------------- realistic measurement

class SeparationError : public std::runtime_error {
public:
    SeparationError(const std::string& what, double overlap) : std::runtime_error(what), overlap(overlap) {}
    double overlap;
};

struct RealisticConfig {
    CMat f;                // d_P x n_branches
    int device_qubits = 4;
    int env_dim = 64;
    double delta = 1e-8;   // leakage amplitude of each branch into the other pointer sectors
    double coupling = 1.0;
    double eta = 0.02;
    int steps = 200;
    std::string v_mode = "exact";
    double threshold = kPartitionThreshold;
    bool require_separation = true;
    int n_traj = 0;
    std::uint64_t seed = 0x5EED;
    int workers = 1;
    Tolerances tol;
};

struct RealisticResult {
    ErgodicPartition partition;
    RVec expected;            // column masses of |f|^2
    RVec inclusive_final;     // per pointer sector from final eigenvalues
    RVec inclusive_pushed;    // per pointer sector from composed * p(0)
    std::vector<int> label_sector;
    double max_overlap = 0.0;  // max |<Phi_i|Phi_j>|
    double leakage = 0.0;
    double cross_prob = 0.0;   // max over sources of composed mass into another sector
    double min_intra = 0.0;
    double tau = 0.0;
    std::vector<CVec> xi_states;  // |Xi^(j)> on P
    CMat xi_overlap;
    double ap_alignment = 0.0;    // min overlap^2 of A+P ontic states with Xi (x) psi_a
    double prune_distance = 0.0;  // trace norm of pruned component minus true component, largest over sets
    std::vector<double> times;
    std::vector<RVec> probs;
    std::vector<TransitionStep> steps;
    std::vector<Trajectory> trajectories;
    std::vector<Check> checks;
};

void validate(const RealisticConfig& cfg);
RealisticResult run_realistic(const RealisticConfig& cfg);

struct PruneResult {
    DensityMatrix rho;
    double pruned_mass = 0.0;
};

PruneResult collapse_prune(const ErgodicPartition& partition, int realized, const DensityMatrix& rho_a,
                           const std::vector<CVec>& ontic);

// ---------------------------------------------------------------- EPR-Bohm

struct EprConfig {
    cplx c_plus = 1.0 / std::sqrt(2.0);
    cplx c_minus = -1.0 / std::sqrt(2.0);
    double theta = 0.0;
    double phi = M_PI / 3;
    bool a_first = true;
    double t_a = 0.25;
    double width = 0.25;
    double t_b = 0.75;
    double t_end = 1.25;
    double eta = 0.01;
    int n_traj = 0;
    std::uint64_t seed = 0x5EED;
    int workers = 1;
    Tolerances tol;
};

struct EprAnalytic {
    Eigen::Matrix2d joint;   // joint(i, j) = p(A_i B_j), index 0 = +, 1 = -
    Eigen::Vector2d p_a;     // <psi^i|psi^i>
    Eigen::Vector2d p_b;
    Eigen::Matrix2d cond_b;  // cond_b(j, i) = p(B_j | A_i)
};

EprAnalytic epr_analytic(cplx c_plus, cplx c_minus, double theta, double phi);

struct EprDynamics {
    Eigen::Matrix2d joint;             // pointer-basis diagonal of rho_AB at the end
    std::vector<TransitionStep> steps;
    RVec initial;                      // label probabilities at t = 0
    OnticDecomposition final_dec;      // devices A+B
    double rho2_change = 0.0;          // qubit 2 across A's interaction
    double transport_err = 0.0;
    std::vector<std::array<double, 4>> readout;  // per final label, weights on (++, +-, -+, --)
    StateVector final_state;
};

EprDynamics epr_dynamics(const EprConfig& cfg);

struct EprResult {
    EprAnalytic analytic;
    EprDynamics dynamics;
    double max_joint_diff = 0.0;
    double param_independence = 0.0;
    double outcome_violation = 0.0;
    double frame_diff = 0.0;  // final joints, A-first vs B-first
    Eigen::Matrix2d sampled_joint = Eigen::Matrix2d::Zero();
    std::vector<Trajectory> trajectories;
    std::vector<int> outcomes;  // per trajectory, index into (++, +-, -+, --)
    std::vector<Check> checks;
};

// Draws each trajectory's pointer outcome after sampling the chain.
std::vector<int> epr_readout(const EprDynamics& dyn, const std::vector<Trajectory>& trajs);

EprResult run_epr(const EprConfig& cfg);

struct ChshResult {
    double s = 0.0;
    double stderr_ = 0.0;
    std::array<double, 4> e{};
};

double chsh(cplx c_plus, cplx c_minus, std::pair<double, double> angles_a, std::pair<double, double> angles_b);
ChshResult chsh_sampled(const EprConfig& base, std::pair<double, double> angles_a,
                        std::pair<double, double> angles_b, int n_traj);

// ---------------------------------------------------------------- typicality

struct TypicalityConfig {
    int d_a = 2;
    int d_e = 256;
    int n_samples = 200;
    std::uint64_t seed = 0x5EED;
    std::string mode = "none";  // none | constraint | beta
    int d_r = 0;                // constraint rank
    double epsilon = 1.0;       // beta mode: H_A = diag(0, epsilon), bath of log2(d_e) qubits
    int excitations = 0;        // beta mode: total excitation number
    int workers = 1;
    Tolerances tol;
};

struct TypicalityResult {
    double mean_purity = 0.0;
    double purity_stderr = 0.0;
    double purity_target = 0.0;
    double mean_distance = 0.0;
    double max_distance = 0.0;
    double beta = 0.0;
    CMat reference;
    std::vector<Check> checks;
};

TypicalityResult run_typicality(const TypicalityConfig& cfg);

// ---------------------------------------------------------------- joint factorization

struct JointTable {
    bool refused = false;
    std::string reason;
    int worst_state = -1;
    double worst_overlap = 1.0;
    std::vector<std::pair<int, int>> map;  // m(i, a) per occupied A+B label
    RMat table;                            // p(i, a)
    RVec p_a, p_b;
    double marginal_residual = 0.0;
};

JointTable joint_factorization(const StateVector& psi, const std::vector<int>& cut_a, const std::vector<int>& cut_b,
                               double tol);

}  // namespace modalchain::scenarios
