#include "gfu/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "gfu/numeric.hpp"

namespace gfu {

ExactFlows exact_flows(const DagEnv& env, const PolicySet& backward) {
    const std::vector<int> order = validate_dag(env);
    ExactFlows out;
    out.log_state_flow = Eigen::VectorXd::Constant(env.n_states(), kNegInf);
    out.log_edge_flow = Eigen::VectorXd::Constant(env.n_edges(), kNegInf);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int s = *it;
        if (env.is_terminal[s]) {
            out.log_state_flow[s] = std::log(env.reward[s]);
            continue;
        }
        // Children are later in topological order, so their flows are final;
        // each child hands back F(s') P_B(s|s') through its incoming edge.
        Eigen::VectorXd parts(env.children[s].size());
        for (std::size_t i = 0; i < env.children[s].size(); ++i) {
            const int e = env.children[s][i];
            const int child = env.edges[e].child;
            out.log_edge_flow[e] =
                out.log_state_flow[child] + log_backward_prob(env, backward, e);
            parts[i] = out.log_edge_flow[e];
        }
        out.log_state_flow[s] = log_sum_exp(parts);
    }
    out.log_partition = out.log_state_flow[env.initial];

    out.terminal_dist = Eigen::VectorXd(env.terminals.size());
    for (std::size_t i = 0; i < env.terminals.size(); ++i)
        out.terminal_dist[i] =
            std::exp(std::log(env.reward[env.terminals[i]]) - out.log_partition);
    return out;
}

Eigen::VectorXd terminal_distribution(const DagEnv& env, const PolicySet& forward) {
    const std::vector<int> order = validate_dag(env);
    Eigen::VectorXd log_reach = Eigen::VectorXd::Constant(env.n_states(), kNegInf);
    log_reach[env.initial] = 0.0;
    for (int s : order) {
        if (env.is_terminal[s]) continue;
        const Eigen::VectorXd lp = forward_log_probs(env, forward, s);
        for (std::size_t i = 0; i < env.children[s].size(); ++i) {
            const int child = env.edges[env.children[s][i]].child;
            const double add = log_reach[s] + lp[i];
            log_reach[child] = log_reach[child] == kNegInf
                                   ? add
                                   : log_sum_exp(Eigen::Vector2d(log_reach[child], add));
        }
    }
    Eigen::VectorXd dist(env.terminals.size());
    for (std::size_t i = 0; i < env.terminals.size(); ++i)
        dist[i] = std::exp(log_reach[env.terminals[i]]);
    return dist;
}

double exact_log_likelihood(const DagEnv& env, const PolicySet& forward, int x) {
    const int ti = env.terminal_index(x);
    if (ti < 0) throw InvalidState("exact_log_likelihood: state is not a terminal");
    const double p = terminal_distribution(env, forward)[ti];
    if (!(p > 0.0)) throw ZeroMass("no trajectory reaches " + env.labels[x]);
    return std::log(p);
}

double count_trajectories(const DagEnv& env) {
    const std::vector<int> order = validate_dag(env);
    Eigen::VectorXd paths = Eigen::VectorXd::Zero(env.n_states());
    paths[env.initial] = 1.0;
    double total = 0.0;
    for (int s : order) {
        if (env.is_terminal[s]) {
            total += paths[s];
            continue;
        }
        for (int e : env.children[s]) paths[env.edges[e].child] += paths[s];
    }
    return total;
}

namespace {

void fill_densities(const DagEnv& env, const PolicySet& policy, Trajectory& traj) {
    traj.log_pf = traj_log_pf(env, policy, traj);
    traj.log_pb_given_x = traj_log_pb(env, policy, traj);
    traj.terminal = traj.states.back();
}

void dfs_forward(const DagEnv& env, const PolicySet& policy, std::vector<int>& states,
                 std::vector<int>& edge_ids, std::vector<Trajectory>& out) {
    const int s = states.back();
    if (env.is_terminal[s]) {
        Trajectory traj;
        traj.states = states;
        traj.edge_ids = edge_ids;
        fill_densities(env, policy, traj);
        out.push_back(std::move(traj));
        return;
    }
    for (int e : env.children[s]) {
        states.push_back(env.edges[e].child);
        edge_ids.push_back(e);
        dfs_forward(env, policy, states, edge_ids, out);
        states.pop_back();
        edge_ids.pop_back();
    }
}

}  // namespace

std::vector<Trajectory> enumerate_trajectories(const DagEnv& env, const PolicySet& policy,
                                               double cap) {
    const double count = count_trajectories(env);
    if (count > cap)
        throw CapExceeded("enumeration would visit " + std::to_string(count) +
                          " trajectories, above the cap of " + std::to_string(cap));
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(count));
    std::vector<int> states{env.initial};
    std::vector<int> edge_ids;
    dfs_forward(env, policy, states, edge_ids, out);
    return out;
}

std::vector<Trajectory> enumerate_trajectories_to(const DagEnv& env, const PolicySet& policy,
                                                  int x, double cap) {
    if (x < 0 || x >= env.n_states() || !env.is_terminal[x])
        throw InvalidState("enumerate_trajectories_to: state is not a terminal");
    const double count = count_trajectories(env);
    if (count > cap)
        throw CapExceeded("enumeration would visit " + std::to_string(count) +
                          " trajectories, above the cap of " + std::to_string(cap));
    std::vector<Trajectory> out;
    // Walk parents from x; trajectories are collected reversed and flipped.
    std::vector<int> rev_states{x};
    std::vector<int> rev_edges;
    auto dfs = [&](auto&& self, int s) -> void {
        if (s == env.initial) {
            Trajectory traj;
            traj.states.assign(rev_states.rbegin(), rev_states.rend());
            traj.edge_ids.assign(rev_edges.rbegin(), rev_edges.rend());
            fill_densities(env, policy, traj);
            out.push_back(std::move(traj));
            return;
        }
        for (int e : env.parents[s]) {
            rev_states.push_back(env.edges[e].parent);
            rev_edges.push_back(e);
            self(self, env.edges[e].parent);
            rev_states.pop_back();
            rev_edges.pop_back();
        }
    };
    dfs(dfs, x);
    return out;
}

double exact_elbo(const DagEnv& env, const PolicySet& policy, int x, double cap) {
    double elbo = 0.0;
    for (const Trajectory& traj : enumerate_trajectories_to(env, policy, x, cap))
        elbo += std::exp(traj.log_pb_given_x) * (traj.log_pf - traj.log_pb_given_x);
    return elbo;
}

PolicySet policy_from_flows(const DagEnv&, const ExactFlows& flows) {
    PolicySet p;
    // Softmax of log edge flows over the children of s is F(s,s')/F(s), and
    // over the parents of s' is F(s,s')/F(s'); one logit vector serves both.
    p.forward_logits = flows.log_edge_flow;
    p.backward_logits = flows.log_edge_flow;
    p.log_state_flow = flows.log_state_flow;
    p.log_z = flows.log_partition;
    return p;
}

nlohmann::ordered_json flows_to_json(const DagEnv& env, const ExactFlows& flows) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json state_flow;
    for (int s = 0; s < env.n_states(); ++s)
        state_flow[env.labels[s]] = flows.state_flow(s);
    nlohmann::ordered_json edge_flow;
    for (int e = 0; e < env.n_edges(); ++e)
        edge_flow[env.labels[env.edges[e].parent] + "->" + env.labels[env.edges[e].child]] =
            flows.edge_flow(e);
    nlohmann::ordered_json terminal_dist;
    for (std::size_t i = 0; i < env.terminals.size(); ++i)
        terminal_dist[env.labels[env.terminals[i]]] = flows.terminal_dist[i];
    j["state_flow"] = state_flow;
    j["edge_flow"] = edge_flow;
    j["partition"] = flows.partition();
    j["terminal_dist"] = terminal_dist;
    return j;
}

}  // namespace gfu
