#include "gfu/reward.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "gfu/numeric.hpp"
#include "gfu/oracle.hpp"
#include "gfu/rng.hpp"

namespace gfu {

namespace {

void check_data_dist(const DagEnv& env, const Eigen::VectorXd& data_dist) {
    if (data_dist.size() != static_cast<Eigen::Index>(env.terminals.size()))
        throw ValidationError("data_dist length does not match terminal count");
    if ((data_dist.array() < 0.0).any() || std::abs(data_dist.sum() - 1.0) > 1e-9)
        throw ValidationError("data_dist is not a probability vector");
}

// TB updates of the sampler against the env's current rewards, warm-started.
PolicySet inner_tb(const DagEnv& env, const PolicySet& policy, int steps, double lr,
                   std::uint64_t seed) {
    TrainSpec spec;
    spec.objective = Objective::TrajectoryBalance;
    OptimizerSpec opt;
    opt.lr = lr;
    opt.steps = steps;
    return train(env, policy, spec, opt, seed).policy;
}

}  // namespace

EbgfnResult ebgfn_alternate(const DagEnv& env, const PolicySet& init,
                            const Eigen::VectorXd& data_dist, int rounds,
                            const AlternationOptions& opt, std::uint64_t seed) {
    check_data_dist(env, data_dist);
    EbgfnResult out;
    out.energy = EnergyModel{Eigen::VectorXd::Zero(env.terminals.size())};
    out.policy = init;

    for (int round = 1; round <= rounds; ++round) {
        DagEnv cur = with_terminal_rewards(env, out.energy.rewards());
        const Eigen::VectorXd p_g = terminal_distribution(cur, out.policy);

        // Contrastive step on E_{p_d}[E] - E_{p_g}[E]; negatives are either
        // the exact expectation or forward rollouts from the sampler.
        Eigen::VectorXd neg = p_g;
        if (opt.n_negative_samples > 0) {
            neg = Eigen::VectorXd::Zero(env.terminals.size());
            Rng rng(derive_seed(seed, round));
            for (int i = 0; i < opt.n_negative_samples; ++i) {
                const Trajectory traj = sample_forward(cur, out.policy, rng.raw());
                neg[env.terminal_index(traj.terminal)] += 1.0;
            }
            neg /= opt.n_negative_samples;
        }
        out.energy.energy -= opt.energy_lr * (data_dist - neg);
        if (!out.energy.energy.allFinite())
            throw NonFiniteLoss("ebgfn: non-finite energy at round " + std::to_string(round),
                                round);

        cur = with_terminal_rewards(env, out.energy.rewards());
        out.policy = inner_tb(cur, out.policy, opt.inner_steps, opt.inner_lr,
                              derive_seed(seed, 1000000 + round));

        EbgfnRound row;
        row.round = round;
        row.tv = tv_distance(terminal_distribution(cur, out.policy), data_dist);
        row.mean_energy_data = data_dist.dot(out.energy.energy);
        row.mean_energy_model = p_g.dot(out.energy.energy);
        out.trace.push_back(row);
    }
    return out;
}

namespace {

GanflowResult gan_loop(const DagEnv& env, const PolicySet& init,
                       const Eigen::VectorXd& data_dist, int rounds,
                       const AlternationOptions& opt, std::uint64_t seed, bool corrected) {
    check_data_dist(env, data_dist);
    GanflowResult out;
    out.discriminator = Discriminator{Eigen::VectorXd::Zero(env.terminals.size())};
    out.policy = init;

    for (int round = 1; round <= rounds; ++round) {
        const Eigen::VectorXd p_g = terminal_distribution(env, out.policy);
        const Eigen::VectorXd d_star =
            (data_dist.array() / (data_dist.array() + p_g.array())).matrix();

        if (opt.exact_discriminator || !corrected) {
            out.discriminator.logit =
                (d_star.array() / (1.0 - d_star.array())).log().matrix();
        } else {
            // Logistic loss -E_{p_d}[log D] - E_{p_g}[log(1-D)], full gradient.
            for (int k = 0; k < opt.d_steps; ++k) {
                const Eigen::VectorXd d = out.discriminator.probs();
                const Eigen::VectorXd grad =
                    (-data_dist.array() * (1.0 - d.array()) + p_g.array() * d.array())
                        .matrix();
                out.discriminator.logit -= opt.d_lr * grad;
            }
        }
        const Eigen::VectorXd d = out.discriminator.probs();
        if ((d.array() <= 1e-6).any() || (d.array() >= 1.0 - 1e-6).any())
            throw DegenerateD("discriminator saturated at round " + std::to_string(round));

        // Corrected reward: log D/(1-D) + log p_g. Naive reward: D itself.
        Eigen::VectorXd log_reward(env.terminals.size());
        if (corrected)
            log_reward = (d.array() / (1.0 - d.array())).log() + p_g.array().log();
        else
            log_reward = d.array().log();
        if (!log_reward.allFinite())
            throw NonFiniteLoss("gan: non-finite reward at round " + std::to_string(round),
                                round);

        const DagEnv cur = with_terminal_rewards(env, log_reward.array().exp());
        out.policy = inner_tb(cur, out.policy, opt.inner_steps, opt.inner_lr,
                              derive_seed(seed, round));

        GanflowRound row;
        row.round = round;
        row.tv = tv_distance(terminal_distribution(env, out.policy), data_dist);
        row.d_gap = (d - d_star).cwiseAbs().maxCoeff();
        out.trace.push_back(row);
    }
    return out;
}

}  // namespace

GanflowResult ganflow_alternate(const DagEnv& env, const PolicySet& init,
                                const Eigen::VectorXd& data_dist, int rounds,
                                const AlternationOptions& opt, std::uint64_t seed) {
    return gan_loop(env, init, data_dist, rounds, opt, seed, true);
}

GanflowResult naive_gan_train(const DagEnv& env, const PolicySet& init,
                              const Eigen::VectorXd& data_dist, int rounds,
                              const AlternationOptions& opt, std::uint64_t seed) {
    return gan_loop(env, init, data_dist, rounds, opt, seed, false);
}

Eigen::VectorXd empirical_distribution_from_file(const DagEnv& env, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open sample file " + path);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(env.terminals.size());
    std::string line;
    int lineno = 0;
    long total = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string label;
        if (!(ls >> label)) continue;
        const int s = env.state_of(label);
        if (s < 0 || !env.is_terminal[s])
            throw ValidationError(path + " line " + std::to_string(lineno) + ": '" + label +
                                  "' is not a terminal");
        counts[env.terminal_index(s)] += 1.0;
        ++total;
    }
    if (total == 0) throw ValidationError(path + ": no samples");
    return counts / static_cast<double>(total);
}

Eigen::VectorXd naive_gan_reward_fixed_point(const Eigen::VectorXd& data_dist) {
    const Eigen::Index n = data_dist.size();
    if ((data_dist.array() <= 0.0).any() || std::abs(data_dist.sum() - 1.0) > 1e-9)
        throw ValidationError("fixed point: data_dist must be strictly positive and normalized");
    Eigen::VectorXd p = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    for (int it = 0; it < 100000; ++it) {
        Eigen::VectorXd q = (data_dist.array() / (data_dist.array() + p.array())).matrix();
        q /= q.sum();
        const Eigen::VectorXd next = 0.5 * p + 0.5 * q;
        const double delta = (next - p).cwiseAbs().maxCoeff();
        p = next;
        if (delta < 1e-10) return p;
    }
    throw NoConvergence("naive reward fixed point did not converge in 1e5 iterations");
}

}  // namespace gfu
