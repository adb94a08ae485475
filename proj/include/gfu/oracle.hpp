#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gfu/dag.hpp"

namespace gfu {

constexpr double kDefaultEnumCap = 1e6;

// Exact flows of an enumerable DAG, kept in log space so reward ratios up to
// ~1e6 stay well-conditioned. Linear-space views are provided for callers.
struct ExactFlows {
    Eigen::VectorXd log_state_flow;  // per state
    Eigen::VectorXd log_edge_flow;   // per edge
    double log_partition = 0.0;
    Eigen::VectorXd terminal_dist;   // aligned with env.terminals

    double state_flow(int s) const { return std::exp(log_state_flow[s]); }
    double edge_flow(int e) const { return std::exp(log_edge_flow[e]); }
    double partition() const { return std::exp(log_partition); }
};

// Reverse topological recursion: F(x) = R(x) at terminals,
// F(s,s') = F(s') P_B(s|s'), F(s) = sum over children of F(s,s').
ExactFlows exact_flows(const DagEnv& env, const PolicySet& backward);

// Forward sweep of reaching probabilities; sums to 1 up to roundoff.
Eigen::VectorXd terminal_distribution(const DagEnv& env, const PolicySet& forward);

double exact_log_likelihood(const DagEnv& env, const PolicySet& forward, int x);

// Number of complete trajectories (initial -> any terminal), computed by
// dynamic programming without enumerating them.
double count_trajectories(const DagEnv& env);

// All complete trajectories with log densities filled in under `policy`.
// Throws CapExceeded when the trajectory count exceeds `cap`.
std::vector<Trajectory> enumerate_trajectories(const DagEnv& env, const PolicySet& policy,
                                               double cap = kDefaultEnumCap);

// All trajectories terminating at x, each weighted by P_B(tau|x).
std::vector<Trajectory> enumerate_trajectories_to(const DagEnv& env, const PolicySet& policy,
                                                  int x, double cap = kDefaultEnumCap);

// sum over tau ending at x of P_B(tau|x) [log P_F(tau) - log P_B(tau|x)],
// exact by enumeration.
double exact_elbo(const DagEnv& env, const PolicySet& policy, int x,
                  double cap = kDefaultEnumCap);

// Policy whose forward/backward transition probabilities and state flows are
// the ones induced by `flows` (P_F = F(s,s')/F(s), P_B = F(s,s')/F(s')).
PolicySet policy_from_flows(const DagEnv& env, const ExactFlows& flows);

nlohmann::ordered_json flows_to_json(const DagEnv& env, const ExactFlows& flows);

}  // namespace gfu
