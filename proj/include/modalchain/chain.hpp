#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "modalchain/ontic.hpp"

namespace modalchain {

struct TransitionStep {
    double time = 0.0;
    double eta = 0.0;
    RMat V;
    RMat cond;  // cond(i, j) = p_{i|j}
    bool consistent = true;
    double outflow_max = 0.0;
    bool rank_changed = false;
};

struct Trajectory {
    std::uint64_t seed = 0;
    std::vector<int> labels;
    std::vector<double> times;
};

struct ErgodicPartition {
    std::vector<std::vector<int>> sets;
    std::vector<int> null_set;
    std::vector<double> inclusive_probs;
    double threshold = 1e-6;
    double max_cross = 0.0;   // largest composed entry between different sets
    double min_intra = 1.0;   // smallest composed entry inside a set (excluding singletons)
};

struct ConvergenceReport {
    std::vector<int> steps;
    std::vector<double> max_deviation;  // max_{i,j} |p_{i|j}(n) - pi_i|
    RVec stationary;
    double rate = 0.0;         // fitted decay per step
    double decay_steps = std::numeric_limits<double>::infinity();
    double fit_r2 = 0.0;
    bool converged = false;
    std::vector<std::vector<int>> ergodic_sets;  // more than one for reducible chains
};

constexpr double kPartitionThreshold = 1e-6;

RMat v_exact(const OnticDecomposition& prev, const OnticDecomposition& next, const LinearMap& u);
RMat v_exact(const OnticDecomposition& prev, const OnticDecomposition& next, const Propagator& u);

RMat v_perturbative(const OnticDecomposition& dec, const CMat& h_int, double eta);
RMat v_perturbative(const OnticDecomposition& dec, const LinearMap& h_int, double eta);

TransitionStep transition_matrix(const RMat& V, const RVec& p_prev, double eta, double time = 0.0);

double decoherence_time(const std::vector<TransitionStep>& steps);

RMat compose(const std::vector<TransitionStep>& steps);

// Counter-based uniform draw in [0, 1) for (seed, counter).
double counter_uniform(std::uint64_t seed, std::uint64_t counter);
int sample_categorical(const RVec& weights, double u);

Trajectory sample_trajectory(const std::vector<TransitionStep>& steps, int initial, std::uint64_t seed);
Trajectory sample_trajectory(const std::vector<TransitionStep>& steps, const RVec& initial, std::uint64_t seed);

ErgodicPartition ergodic_partition(const RMat& composed, const RVec& probs, double threshold = kPartitionThreshold);

ConvergenceReport equilibrium_convergence(const TransitionStep& step, int n_max);

// Homogeneous toy chain: for each pair one direction carries p, the other 0.
// Out-degrees are kept balanced (floor/ceil of (d-1)/2), which is what p_i ~ 1/d requires.
TransitionStep toy_chain(int d, double p, std::uint64_t seed, double eta = 1.0);

}  // namespace modalchain
