#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "gfu/dag.hpp"
#include "gfu/oracle.hpp"

namespace gfu {

enum class Estimator { ExactEnumeration, MonteCarlo };

// Which blocks of a PolicySet a loss differentiates. Gradients are packed
// flat in block order [forward | backward | state flows | log Z]; state-flow
// slots exist only for non-terminal states (terminal flows are clamped to
// log R(x) and never trained).
struct TrainableSet {
    bool forward_logits = true;
    bool backward_logits = false;
    bool state_flows = false;
    bool log_z = false;
};

struct ParamLayout {
    TrainableSet set;
    int n_edges = 0;
    int forward_off = -1;
    int backward_off = -1;
    int flows_off = -1;
    int logz_off = -1;
    std::vector<int> flow_slot;  // state -> slot within the flow block, -1 if none
    int size = 0;
};

ParamLayout make_layout(const DagEnv& env, TrainableSet set);
Eigen::VectorXd pack_params(const ParamLayout& layout, const PolicySet& policy);
void apply_params(const ParamLayout& layout, const Eigen::VectorXd& theta, PolicySet& policy);

struct LossReport {
    double value = 0.0;
    Eigen::VectorXd gradient;  // layout order; empty when layout.size == 0
    Estimator estimator = Estimator::ExactEnumeration;
    long n_samples = 0;
};

// Squared inflow/outflow mismatch at a single intermediate state, with edge
// flows F(s,s') = exp(forward_logits). The default is the raw (linear-space)
// residual; `log_space` switches to (log inflow - log outflow)^2.
LossReport fm_loss(const DagEnv& env, const PolicySet& policy, int state,
                   bool log_space = false, TrainableSet set = {});

// (log F(s) + log P_F(s'|s) - log F(s') - log P_B(s|s'))^2 for one edge.
LossReport db_loss(const DagEnv& env, const PolicySet& policy, int edge_id,
                   TrainableSet set = {.forward_logits = true, .backward_logits = false,
                                       .state_flows = true, .log_z = false});

// (log Z + log P_F(tau) - log R(x) - log P_B(tau|x))^2 for one trajectory.
LossReport tb_loss(const DagEnv& env, const PolicySet& policy, const Trajectory& traj,
                   TrainableSet set = {.forward_logits = true, .backward_logits = false,
                                       .state_flows = false, .log_z = true});

struct KlTbLoss {
    LossReport report;
    // Two independent routes to the same number: report.value computed as a
    // trajectory-space KL, and -E_{p_d}[ELBO] - H[p_d] computed from the
    // per-terminal enumeration oracle. Their sum with the entropy is ~0.
    double neg_expected_elbo = 0.0;
    double entropy = 0.0;
};

// KL( p_d(x) P_B(tau|x) || P_F(tau) ), exact by enumeration. data_dist is a
// probability vector aligned with env.terminals.
KlTbLoss kl_tb_loss(const DagEnv& env, const PolicySet& policy,
                    const Eigen::VectorXd& data_dist, TrainableSet set = {},
                    double cap = kDefaultEnumCap);

// Single-sample estimator log P_B(tau|x) - log P_F(tau) with tau ~ P_B(.|x);
// the backward policy is frozen, so only forward gradients exist.
LossReport mle_fixed_backward_loss(const DagEnv& env, const PolicySet& policy, int x,
                                   std::uint64_t seed, TrainableSet set = {});

// log of the K-sample importance-weighted likelihood estimate at x.
double iwae_bound(const DagEnv& env, const PolicySet& policy, int x, int k,
                  std::uint64_t seed);

enum class Objective {
    FlowMatching,
    DetailedBalance,
    TrajectoryBalance,
    KlTrajectoryBalance,
    MleFixedBackward,
};

struct OptimizerSpec {
    enum class Algo { Adam, Gd };
    Algo algo = Algo::Adam;
    double lr = 1e-2;
    int steps = 5000;
    double final_lr = 0.0;  // >0 enables exponential decay from lr to final_lr
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainSpec {
    Objective objective = Objective::TrajectoryBalance;
    bool fm_log_space = false;
    bool train_backward = false;                 // KL-TB / TB only
    std::optional<Eigen::VectorXd> data_dist;    // over terminals; defaults to R/Z
    double enum_cap = kDefaultEnumCap;
    int mc_batch = 64;                           // used when enumeration is capped
};

struct TraceRow {
    int step;
    double loss;
    double log_z;
    double tv;  // TV(terminal distribution, target); NaN when not enumerable
};

struct TrainResult {
    PolicySet policy;
    std::vector<TraceRow> trace;
    bool enumerable = true;
};

// Full-batch training over the enumerated trajectory set when the env is
// under the enumeration cap, Monte Carlo batches otherwise. Deterministic
// for a given seed. Throws NonFiniteLoss with the offending step index.
TrainResult train(const DagEnv& env, const PolicySet& init, const TrainSpec& spec,
                  const OptimizerSpec& opt, std::uint64_t seed);

// Full-batch value+gradient of the training objective at the current policy
// (the quantity train() descends). Exposed for gradient verification.
LossReport training_loss(const DagEnv& env, const PolicySet& policy, const TrainSpec& spec,
                         const ParamLayout& layout);

ParamLayout training_layout(const DagEnv& env, const TrainSpec& spec);

}  // namespace gfu
