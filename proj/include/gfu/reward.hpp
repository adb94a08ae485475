#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "gfu/dag.hpp"
#include "gfu/objectives.hpp"

namespace gfu {

// Tabular energy over terminals; the induced reward is R(x) = exp(-E(x)).
struct EnergyModel {
    Eigen::VectorXd energy;  // aligned with env.terminals

    Eigen::VectorXd rewards() const { return (-energy.array()).exp(); }
    Eigen::VectorXd induced_dist() const {
        Eigen::VectorXd r = rewards();
        return r / r.sum();
    }
};

// Tabular discriminator over terminals; D(x) = sigmoid(logit(x)).
struct Discriminator {
    Eigen::VectorXd logit;  // aligned with env.terminals

    Eigen::VectorXd probs() const {
        return (1.0 / (1.0 + (-logit.array()).exp())).matrix();
    }
};

struct AlternationOptions {
    double energy_lr = 1.0;      // EB-GFN energy step size
    int inner_steps = 40;        // sampler updates per round
    double inner_lr = 5e-2;      // sampler learning rate
    int d_steps = 50;            // discriminator updates per round
    double d_lr = 1.0;           // discriminator learning rate
    bool exact_discriminator = false;  // inject D = p_d/(p_d+p_g) analytically
    int n_negative_samples = 0;  // 0: exact expectation over p_g
};

struct EbgfnRound {
    int round;
    double tv;
    double mean_energy_data;
    double mean_energy_model;
};

struct EbgfnResult {
    EnergyModel energy;
    PolicySet policy;
    std::vector<EbgfnRound> trace;
};

// Contrastive energy update against the sampler's own terminal distribution,
// alternated with trajectory-balance updates of the sampler under the reward
// exp(-E). Negatives come from the exact terminal distribution by default
// (n_negative_samples = 0) or from forward rollouts.
EbgfnResult ebgfn_alternate(const DagEnv& env, const PolicySet& init,
                            const Eigen::VectorXd& data_dist, int rounds,
                            const AlternationOptions& opt, std::uint64_t seed);

struct GanflowRound {
    int round;
    double tv;
    double d_gap;  // max deviation of D from p_d/(p_d+p_g)
};

struct GanflowResult {
    Discriminator discriminator;
    PolicySet policy;
    std::vector<GanflowRound> trace;
};

// Alternates logistic-loss discriminator updates with trajectory-balance
// updates under the corrected log-reward log(D/(1-D)) + log p_g, where p_g is
// the sampler's exact terminal distribution. Throws DegenerateD when D leaves
// (1e-6, 1 - 1e-6).
GanflowResult ganflow_alternate(const DagEnv& env, const PolicySet& init,
                                const Eigen::VectorXd& data_dist, int rounds,
                                const AlternationOptions& opt, std::uint64_t seed);

// Same loop with the uncorrected reward R = D(x), where D is the analytically
// optimal discriminator each round. Converges to the fixed point of
// p_g proportional to p_d/(p_d+p_g), not to p_d.
GanflowResult naive_gan_train(const DagEnv& env, const PolicySet& init,
                              const Eigen::VectorXd& data_dist, int rounds,
                              const AlternationOptions& opt, std::uint64_t seed);

// Solves p = normalize(p_d ./ (p_d + p)) by damped iteration (damping 0.5,
// tolerance 1e-10 in sup norm); throws NoConvergence after 1e5 iterations.
Eigen::VectorXd naive_gan_reward_fixed_point(const Eigen::VectorXd& data_dist);

// Empirical terminal distribution from a newline-delimited file of terminal
// labels ('#' comments allowed). Every label must name a terminal of env.
Eigen::VectorXd empirical_distribution_from_file(const DagEnv& env, const std::string& path);

}  // namespace gfu
