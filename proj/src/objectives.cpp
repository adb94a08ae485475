#include "gfu/objectives.hpp"

#include <cmath>

#include "gfu/numeric.hpp"
#include "gfu/rng.hpp"

namespace gfu {

ParamLayout make_layout(const DagEnv& env, TrainableSet set) {
    ParamLayout layout;
    layout.set = set;
    layout.n_edges = env.n_edges();
    int off = 0;
    if (set.forward_logits) {
        layout.forward_off = off;
        off += env.n_edges();
    }
    if (set.backward_logits) {
        layout.backward_off = off;
        off += env.n_edges();
    }
    layout.flow_slot.assign(env.n_states(), -1);
    if (set.state_flows) {
        layout.flows_off = off;
        int slot = 0;
        for (int s = 0; s < env.n_states(); ++s)
            if (!env.is_terminal[s]) layout.flow_slot[s] = slot++;
        off += slot;
    }
    if (set.log_z) {
        layout.logz_off = off;
        off += 1;
    }
    layout.size = off;
    return layout;
}

Eigen::VectorXd pack_params(const ParamLayout& layout, const PolicySet& policy) {
    Eigen::VectorXd theta(layout.size);
    if (layout.forward_off >= 0)
        theta.segment(layout.forward_off, layout.n_edges) = policy.forward_logits;
    if (layout.backward_off >= 0)
        theta.segment(layout.backward_off, layout.n_edges) = policy.backward_logits;
    if (layout.flows_off >= 0)
        for (std::size_t s = 0; s < layout.flow_slot.size(); ++s)
            if (layout.flow_slot[s] >= 0)
                theta[layout.flows_off + layout.flow_slot[s]] = policy.log_state_flow[s];
    if (layout.logz_off >= 0) theta[layout.logz_off] = policy.log_z;
    return theta;
}

void apply_params(const ParamLayout& layout, const Eigen::VectorXd& theta, PolicySet& policy) {
    if (layout.forward_off >= 0)
        policy.forward_logits = theta.segment(layout.forward_off, layout.n_edges);
    if (layout.backward_off >= 0)
        policy.backward_logits = theta.segment(layout.backward_off, layout.n_edges);
    if (layout.flows_off >= 0)
        for (std::size_t s = 0; s < layout.flow_slot.size(); ++s)
            if (layout.flow_slot[s] >= 0)
                policy.log_state_flow[s] = theta[layout.flows_off + layout.flow_slot[s]];
    if (layout.logz_off >= 0) policy.log_z = theta[layout.logz_off];
}

namespace {

// Per-state softmax tables plus edge -> local-position maps, rebuilt once per
// loss evaluation so trajectory sums and gradient accumulation stay O(degree).
struct Tables {
    std::vector<Eigen::VectorXd> fwd_lp, fwd_p;
    std::vector<Eigen::VectorXd> bwd_lp, bwd_p;
    std::vector<int> pos_in_parent, pos_in_child;

    Tables(const DagEnv& env, const PolicySet& policy) {
        fwd_lp.resize(env.n_states());
        fwd_p.resize(env.n_states());
        bwd_lp.resize(env.n_states());
        bwd_p.resize(env.n_states());
        pos_in_parent.assign(env.n_edges(), -1);
        pos_in_child.assign(env.n_edges(), -1);
        for (int s = 0; s < env.n_states(); ++s) {
            if (!env.children[s].empty()) {
                fwd_lp[s] = forward_log_probs(env, policy, s);
                fwd_p[s] = fwd_lp[s].array().exp();
                for (std::size_t i = 0; i < env.children[s].size(); ++i)
                    pos_in_parent[env.children[s][i]] = static_cast<int>(i);
            }
            if (!env.parents[s].empty()) {
                bwd_lp[s] = backward_log_probs(env, policy, s);
                bwd_p[s] = bwd_lp[s].array().exp();
                for (std::size_t i = 0; i < env.parents[s].size(); ++i)
                    pos_in_child[env.parents[s][i]] = static_cast<int>(i);
            }
        }
    }

    double log_pf_edge(const DagEnv& env, int e) const {
        return fwd_lp[env.edges[e].parent][pos_in_parent[e]];
    }
    double log_pb_edge(const DagEnv& env, int e) const {
        return bwd_lp[env.edges[e].child][pos_in_child[e]];
    }
    double log_pf(const DagEnv& env, const std::vector<int>& edge_ids) const {
        double lp = 0.0;
        for (int e : edge_ids) lp += log_pf_edge(env, e);
        return lp;
    }
    double log_pb(const DagEnv& env, const std::vector<int>& edge_ids) const {
        double lp = 0.0;
        for (int e : edge_ids) lp += log_pb_edge(env, e);
        return lp;
    }
};

struct GradAccum {
    const DagEnv& env;
    const ParamLayout& layout;
    const Tables& tables;
    Eigen::VectorXd& g;

    // coeff * d log P_F(edge e | parent(e)) / d forward logits
    void log_pf_step(int e, double coeff) {
        if (layout.forward_off < 0) return;
        const int s = env.edges[e].parent;
        const auto& ch = env.children[s];
        const auto& p = tables.fwd_p[s];
        for (std::size_t i = 0; i < ch.size(); ++i)
            g[layout.forward_off + ch[i]] -= coeff * p[i];
        g[layout.forward_off + e] += coeff;
    }

    // coeff * d log P_B(edge e | child(e)) / d backward logits
    void log_pb_step(int e, double coeff) {
        if (layout.backward_off < 0) return;
        const int s = env.edges[e].child;
        const auto& pa = env.parents[s];
        const auto& p = tables.bwd_p[s];
        for (std::size_t i = 0; i < pa.size(); ++i)
            g[layout.backward_off + pa[i]] -= coeff * p[i];
        g[layout.backward_off + e] += coeff;
    }

    void log_pf_traj(const std::vector<int>& edge_ids, double coeff) {
        for (int e : edge_ids) log_pf_step(e, coeff);
    }
    void log_pb_traj(const std::vector<int>& edge_ids, double coeff) {
        for (int e : edge_ids) log_pb_step(e, coeff);
    }

    void state_flow(int s, double coeff) {
        if (layout.flows_off < 0 || layout.flow_slot[s] < 0) return;
        g[layout.flows_off + layout.flow_slot[s]] += coeff;
    }

    void log_z(double coeff) {
        if (layout.logz_off >= 0) g[layout.logz_off] += coeff;
    }
};

double edge_flow_sum(const PolicySet& policy, const std::vector<int>& ids) {
    double sum = 0.0;
    for (int e : ids) sum += std::exp(policy.forward_logits[e]);
    return sum;
}

// residual and gradient of the conservation mismatch at `state`, where
// `target` replaces the outflow (terminal reward matching) when nonnegative.
void fm_accumulate(const DagEnv& env, const PolicySet& policy, int state, bool log_space,
                   const ParamLayout& layout, double scale, double& value,
                   Eigen::VectorXd& g) {
    const double inflow = edge_flow_sum(policy, env.parents[state]);
    const bool terminal = env.is_terminal[state];
    const double outflow =
        terminal ? env.reward[state] : edge_flow_sum(policy, env.children[state]);
    const double r = log_space ? std::log(inflow) - std::log(outflow) : inflow - outflow;
    value += scale * r * r;
    if (layout.forward_off < 0) return;
    const double c = scale * 2.0 * r;
    for (int e : env.parents[state]) {
        const double f = std::exp(policy.forward_logits[e]);
        g[layout.forward_off + e] += c * (log_space ? f / inflow : f);
    }
    if (!terminal)
        for (int e : env.children[state]) {
            const double f = std::exp(policy.forward_logits[e]);
            g[layout.forward_off + e] -= c * (log_space ? f / outflow : f);
        }
}

double db_residual(const DagEnv& env, const PolicySet& policy, const Tables& tables, int e) {
    const int s = env.edges[e].parent;
    const int sp = env.edges[e].child;
    return log_flow_clamped(env, policy, s) + tables.log_pf_edge(env, e) -
           log_flow_clamped(env, policy, sp) - tables.log_pb_edge(env, e);
}

void db_accumulate(const DagEnv& env, const PolicySet& policy, const Tables& tables, int e,
                   const ParamLayout& layout, double scale, double& value, Eigen::VectorXd& g) {
    const double r = db_residual(env, policy, tables, e);
    value += scale * r * r;
    GradAccum acc{env, layout, tables, g};
    const double c = scale * 2.0 * r;
    acc.log_pf_step(e, c);
    acc.log_pb_step(e, -c);
    acc.state_flow(env.edges[e].parent, c);
    acc.state_flow(env.edges[e].child, -c);
}

double tb_residual(const DagEnv& env, const PolicySet& policy, const Tables& tables,
                   const std::vector<int>& edge_ids, int terminal) {
    return policy.log_z + tables.log_pf(env, edge_ids) - std::log(env.reward[terminal]) -
           tables.log_pb(env, edge_ids);
}

void tb_accumulate(const DagEnv& env, const PolicySet& policy, const Tables& tables,
                   const std::vector<int>& edge_ids, int terminal, const ParamLayout& layout,
                   double scale, double& value, Eigen::VectorXd& g) {
    const double r = tb_residual(env, policy, tables, edge_ids, terminal);
    value += scale * r * r;
    GradAccum acc{env, layout, tables, g};
    const double c = scale * 2.0 * r;
    acc.log_pf_traj(edge_ids, c);
    acc.log_pb_traj(edge_ids, -c);
    acc.log_z(c);
}

Eigen::VectorXd default_data_dist(const DagEnv& env) {
    Eigen::VectorXd r = env.terminal_rewards();
    return r / r.sum();
}

}  // namespace

LossReport fm_loss(const DagEnv& env, const PolicySet& policy, int state, bool log_space,
                   TrainableSet set) {
    if (state < 0 || state >= env.n_states())
        throw InvalidState("fm_loss: unknown state id");
    if (state == env.initial || env.is_terminal[state])
        throw InvalidState("fm_loss: state " + env.labels[state] +
                           " is not an intermediate state");
    set.backward_logits = false;
    set.state_flows = false;
    set.log_z = false;
    const ParamLayout layout = make_layout(env, set);
    LossReport report;
    report.gradient = Eigen::VectorXd::Zero(layout.size);
    fm_accumulate(env, policy, state, log_space, layout, 1.0, report.value, report.gradient);
    report.estimator = Estimator::ExactEnumeration;
    report.n_samples = 1;
    return report;
}

LossReport db_loss(const DagEnv& env, const PolicySet& policy, int edge_id, TrainableSet set) {
    if (edge_id < 0 || edge_id >= env.n_edges()) throw InvalidState("db_loss: unknown edge id");
    const ParamLayout layout = make_layout(env, set);
    const Tables tables(env, policy);
    LossReport report;
    report.gradient = Eigen::VectorXd::Zero(layout.size);
    db_accumulate(env, policy, tables, edge_id, layout, 1.0, report.value, report.gradient);
    report.estimator = Estimator::ExactEnumeration;
    report.n_samples = 1;
    return report;
}

LossReport tb_loss(const DagEnv& env, const PolicySet& policy, const Trajectory& traj,
                   TrainableSet set) {
    const ParamLayout layout = make_layout(env, set);
    const Tables tables(env, policy);
    LossReport report;
    report.gradient = Eigen::VectorXd::Zero(layout.size);
    tb_accumulate(env, policy, tables, traj.edge_ids, traj.states.back(), layout, 1.0,
                  report.value, report.gradient);
    report.estimator = Estimator::ExactEnumeration;
    report.n_samples = 1;
    return report;
}

KlTbLoss kl_tb_loss(const DagEnv& env, const PolicySet& policy,
                    const Eigen::VectorXd& data_dist, TrainableSet set, double cap) {
    if (data_dist.size() != static_cast<Eigen::Index>(env.terminals.size()))
        throw ValidationError("kl_tb_loss: data_dist length does not match terminal count");
    set.state_flows = false;
    set.log_z = false;
    const ParamLayout layout = make_layout(env, set);
    const Tables tables(env, policy);

    KlTbLoss out;
    out.report.gradient = Eigen::VectorXd::Zero(layout.size);
    out.report.estimator = Estimator::ExactEnumeration;
    GradAccum acc{env, layout, tables, out.report.gradient};

    const std::vector<Trajectory> trajs = enumerate_trajectories(env, policy, cap);
    out.report.n_samples = static_cast<long>(trajs.size());
    for (const Trajectory& traj : trajs) {
        const double pd = data_dist[env.terminal_index(traj.terminal)];
        if (pd <= 0.0) continue;
        const double log_pb = std::log(pd) + tables.log_pb(env, traj.edge_ids);
        const double log_pf = tables.log_pf(env, traj.edge_ids);
        const double w = std::exp(log_pb);
        const double delta = log_pb - log_pf;
        out.report.value += w * delta;
        acc.log_pf_traj(traj.edge_ids, -w);
        if (set.backward_logits) acc.log_pb_traj(traj.edge_ids, w * (delta + 1.0));
    }

    // Independent route for the same quantity, per terminal.
    for (std::size_t i = 0; i < env.terminals.size(); ++i)
        if (data_dist[i] > 0.0)
            out.neg_expected_elbo -= data_dist[i] * exact_elbo(env, policy, env.terminals[i], cap);
    out.entropy = entropy(data_dist);
    return out;
}

LossReport mle_fixed_backward_loss(const DagEnv& env, const PolicySet& policy, int x,
                                   std::uint64_t seed, TrainableSet set) {
    if (set.backward_logits)
        throw ValidationError("mle_fixed_backward_loss: backward policy is frozen");
    set.state_flows = false;
    set.log_z = false;
    const ParamLayout layout = make_layout(env, set);
    const Trajectory traj = sample_backward(env, policy, x, seed);
    LossReport report;
    report.value = traj.log_pb_given_x - traj.log_pf;
    report.gradient = Eigen::VectorXd::Zero(layout.size);
    const Tables tables(env, policy);
    GradAccum acc{env, layout, tables, report.gradient};
    acc.log_pf_traj(traj.edge_ids, -1.0);
    report.estimator = Estimator::MonteCarlo;
    report.n_samples = 1;
    return report;
}

double iwae_bound(const DagEnv& env, const PolicySet& policy, int x, int k,
                  std::uint64_t seed) {
    if (k < 1) throw ValidationError("iwae_bound: k must be >= 1");
    Eigen::VectorXd log_w(k);
    for (int i = 0; i < k; ++i) {
        const Trajectory traj = sample_backward(env, policy, x, derive_seed(seed, i));
        log_w[i] = traj.log_pf - traj.log_pb_given_x;
    }
    return log_sum_exp(log_w) - std::log(static_cast<double>(k));
}

ParamLayout training_layout(const DagEnv& env, const TrainSpec& spec) {
    TrainableSet set;
    switch (spec.objective) {
        case Objective::FlowMatching:
            set = {.forward_logits = true, .backward_logits = false, .state_flows = false,
                   .log_z = false};
            break;
        case Objective::DetailedBalance:
            set = {.forward_logits = true, .backward_logits = false, .state_flows = true,
                   .log_z = false};
            break;
        case Objective::TrajectoryBalance:
            set = {.forward_logits = true, .backward_logits = spec.train_backward,
                   .state_flows = false, .log_z = true};
            break;
        case Objective::KlTrajectoryBalance:
            set = {.forward_logits = true, .backward_logits = spec.train_backward,
                   .state_flows = false, .log_z = false};
            break;
        case Objective::MleFixedBackward:
            set = {.forward_logits = true, .backward_logits = false, .state_flows = false,
                   .log_z = false};
            break;
    }
    return make_layout(env, set);
}

namespace {

struct EnumCache {
    std::vector<std::vector<int>> edge_ids;
    std::vector<int> terminal;
};

LossReport enumerated_loss(const DagEnv& env, const PolicySet& policy, const TrainSpec& spec,
                           const ParamLayout& layout, const EnumCache& cache,
                           const Eigen::VectorXd& data_dist) {
    LossReport report;
    report.gradient = Eigen::VectorXd::Zero(layout.size);
    report.estimator = Estimator::ExactEnumeration;
    const Tables tables(env, policy);
    GradAccum acc{env, layout, tables, report.gradient};

    switch (spec.objective) {
        case Objective::FlowMatching: {
            for (int s = 0; s < env.n_states(); ++s)
                if (s != env.initial)
                    fm_accumulate(env, policy, s, spec.fm_log_space, layout, 1.0, report.value,
                                  report.gradient);
            report.n_samples = env.n_states() - 1;
            break;
        }
        case Objective::DetailedBalance: {
            const double scale = 1.0 / env.n_edges();
            for (int e = 0; e < env.n_edges(); ++e)
                db_accumulate(env, policy, tables, e, layout, scale, report.value,
                              report.gradient);
            report.n_samples = env.n_edges();
            break;
        }
        case Objective::TrajectoryBalance: {
            const double scale = 1.0 / static_cast<double>(cache.edge_ids.size());
            for (std::size_t i = 0; i < cache.edge_ids.size(); ++i)
                tb_accumulate(env, policy, tables, cache.edge_ids[i], cache.terminal[i], layout,
                              scale, report.value, report.gradient);
            report.n_samples = static_cast<long>(cache.edge_ids.size());
            break;
        }
        case Objective::KlTrajectoryBalance:
        case Objective::MleFixedBackward: {
            // KL(P_B || P_F) and the fixed-backward MLE objective differ by
            // the constant H[p_d]; both descend the same landscape, so only
            // the reported value differs.
            const bool with_entropy = spec.objective == Objective::KlTrajectoryBalance;
            for (std::size_t i = 0; i < cache.edge_ids.size(); ++i) {
                const double pd = data_dist[env.terminal_index(cache.terminal[i])];
                if (pd <= 0.0) continue;
                const double log_pb_x = tables.log_pb(env, cache.edge_ids[i]);
                const double log_pf = tables.log_pf(env, cache.edge_ids[i]);
                const double w = pd * std::exp(log_pb_x);
                const double delta =
                    (with_entropy ? std::log(pd) : 0.0) + log_pb_x - log_pf;
                report.value += w * delta;
                acc.log_pf_traj(cache.edge_ids[i], -w);
                if (layout.backward_off >= 0)
                    acc.log_pb_traj(cache.edge_ids[i], w * (delta + 1.0));
            }
            report.n_samples = static_cast<long>(cache.edge_ids.size());
            break;
        }
    }
    return report;
}

LossReport monte_carlo_loss(const DagEnv& env, const PolicySet& policy, const TrainSpec& spec,
                            const ParamLayout& layout, const Eigen::VectorXd& data_dist,
                            std::uint64_t step_seed) {
    if (layout.backward_off >= 0)
        throw ValidationError("learnable backward policies require exact enumeration");
    LossReport report;
    report.gradient = Eigen::VectorXd::Zero(layout.size);
    report.estimator = Estimator::MonteCarlo;
    report.n_samples = spec.mc_batch;
    const Tables tables(env, policy);
    GradAccum acc{env, layout, tables, report.gradient};
    Rng rng(step_seed);
    const double scale = 1.0 / spec.mc_batch;

    for (int b = 0; b < spec.mc_batch; ++b) {
        switch (spec.objective) {
            case Objective::FlowMatching: {
                const Trajectory traj = sample_forward(env, policy, rng.raw());
                for (std::size_t i = 1; i < traj.states.size(); ++i)
                    fm_accumulate(env, policy, traj.states[i], spec.fm_log_space, layout, scale,
                                  report.value, report.gradient);
                break;
            }
            case Objective::DetailedBalance: {
                const Trajectory traj = sample_forward(env, policy, rng.raw());
                const double s2 = scale / static_cast<double>(traj.edge_ids.size());
                for (int e : traj.edge_ids)
                    db_accumulate(env, policy, tables, e, layout, s2, report.value,
                                  report.gradient);
                break;
            }
            case Objective::TrajectoryBalance: {
                const Trajectory traj = sample_forward(env, policy, rng.raw());
                tb_accumulate(env, policy, tables, traj.edge_ids, traj.terminal, layout, scale,
                              report.value, report.gradient);
                break;
            }
            case Objective::KlTrajectoryBalance:
            case Objective::MleFixedBackward: {
                const Eigen::Index ti = rng.categorical(data_dist);
                const Trajectory traj =
                    sample_backward(env, policy, env.terminals[ti], rng.raw());
                const double extra = spec.objective == Objective::KlTrajectoryBalance
                                         ? std::log(data_dist[ti])
                                         : 0.0;
                report.value += scale * (extra + traj.log_pb_given_x - traj.log_pf);
                acc.log_pf_traj(traj.edge_ids, -scale);
                break;
            }
        }
    }
    return report;
}

}  // namespace

LossReport training_loss(const DagEnv& env, const PolicySet& policy, const TrainSpec& spec,
                         const ParamLayout& layout) {
    const Eigen::VectorXd data_dist = spec.data_dist.value_or(default_data_dist(env));
    EnumCache cache;
    for (const Trajectory& traj : enumerate_trajectories(env, policy, spec.enum_cap)) {
        cache.edge_ids.push_back(traj.edge_ids);
        cache.terminal.push_back(traj.terminal);
    }
    return enumerated_loss(env, policy, spec, layout, cache, data_dist);
}

TrainResult train(const DagEnv& env, const PolicySet& init, const TrainSpec& spec,
                  const OptimizerSpec& opt, std::uint64_t seed) {
    const ParamLayout layout = training_layout(env, spec);
    const Eigen::VectorXd data_dist = spec.data_dist.value_or(default_data_dist(env));
    if (data_dist.size() != static_cast<Eigen::Index>(env.terminals.size()))
        throw ValidationError("train: data_dist length does not match terminal count");

    TrainResult result;
    result.enumerable = count_trajectories(env) <= spec.enum_cap;
    EnumCache cache;
    if (result.enumerable) {
        for (const Trajectory& traj : enumerate_trajectories(env, init, spec.enum_cap)) {
            cache.edge_ids.push_back(traj.edge_ids);
            cache.terminal.push_back(traj.terminal);
        }
    }

    PolicySet policy = init;
    Eigen::VectorXd theta = pack_params(layout, policy);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(layout.size);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(layout.size);
    result.trace.reserve(opt.steps);

    for (int step = 1; step <= opt.steps; ++step) {
        const LossReport report =
            result.enumerable
                ? enumerated_loss(env, policy, spec, layout, cache, data_dist)
                : monte_carlo_loss(env, policy, spec, layout, data_dist,
                                   derive_seed(seed, step));
        if (!std::isfinite(report.value))
            throw NonFiniteLoss("non-finite loss at step " + std::to_string(step), step);

        TraceRow row;
        row.step = step;
        row.loss = report.value;
        row.log_z = policy.log_z;
        row.tv = result.enumerable
                     ? tv_distance(terminal_distribution(env, policy), data_dist)
                     : std::numeric_limits<double>::quiet_NaN();
        result.trace.push_back(row);

        double lr = opt.lr;
        if (opt.final_lr > 0.0 && opt.steps > 1)
            lr = opt.lr * std::pow(opt.final_lr / opt.lr,
                                   static_cast<double>(step - 1) / (opt.steps - 1));
        if (opt.algo == OptimizerSpec::Algo::Gd) {
            theta -= lr * report.gradient;
        } else {
            m = opt.beta1 * m + (1.0 - opt.beta1) * report.gradient;
            v = opt.beta2 * v +
                (1.0 - opt.beta2) * report.gradient.cwiseProduct(report.gradient);
            const double bc1 = 1.0 - std::pow(opt.beta1, step);
            const double bc2 = 1.0 - std::pow(opt.beta2, step);
            theta -= lr * (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + opt.eps).matrix());
        }
        apply_params(layout, theta, policy);
    }

    result.policy = policy;
    return result;
}

}  // namespace gfu
