#include "gfu/dag.hpp"

#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include "gfu/numeric.hpp"
#include "gfu/rng.hpp"

namespace gfu {

int DagEnv::state_of(const std::string& label) const {
    for (int s = 0; s < n_states(); ++s)
        if (labels[s] == label) return s;
    return -1;
}

int DagEnv::terminal_index(int state) const {
    for (std::size_t i = 0; i < terminals.size(); ++i)
        if (terminals[i] == state) return static_cast<int>(i);
    return -1;
}

Eigen::VectorXd DagEnv::terminal_rewards() const {
    Eigen::VectorXd r(terminals.size());
    for (std::size_t i = 0; i < terminals.size(); ++i) r[i] = reward[terminals[i]];
    return r;
}

DagEnv make_env(const std::string& initial_label,
                const std::vector<std::pair<std::string, std::string>>& edge_labels,
                const std::vector<TerminalSpec>& terminal_specs) {
    DagEnv env;
    std::map<std::string, int> ids;
    auto intern = [&](const std::string& label) {
        auto it = ids.find(label);
        if (it != ids.end()) return it->second;
        const int id = static_cast<int>(env.labels.size());
        ids.emplace(label, id);
        env.labels.push_back(label);
        return id;
    };

    env.initial = intern(initial_label);
    std::set<std::pair<int, int>> seen;
    for (const auto& [p, c] : edge_labels) {
        const int a = intern(p), b = intern(c);
        if (!seen.insert({a, b}).second)
            throw ValidationError("duplicate edge " + p + " -> " + c);
        env.edges.push_back({a, b});
    }
    env.children.assign(env.labels.size(), {});
    env.parents.assign(env.labels.size(), {});
    for (int e = 0; e < env.n_edges(); ++e) {
        env.children[env.edges[e].parent].push_back(e);
        env.parents[env.edges[e].child].push_back(e);
    }
    env.is_terminal.assign(env.labels.size(), 0);
    env.reward = Eigen::VectorXd::Zero(env.labels.size());
    for (const auto& t : terminal_specs) {
        const int s = env.state_of(t.label);
        if (s < 0) throw ValidationError("terminal " + t.label + " does not appear in any edge");
        if (env.is_terminal[s]) throw ValidationError("terminal " + t.label + " declared twice");
        if (!(t.reward > 0.0)) throw ValidationError("terminal " + t.label + " has non-positive reward");
        env.is_terminal[s] = 1;
        env.terminals.push_back(s);
        env.reward[s] = t.reward;
    }
    validate_dag(env);
    return env;
}

DagEnv parse_env_text(std::istream& in) {
    std::string initial;
    bool have_initial = false;
    std::vector<std::pair<std::string, std::string>> edges;
    std::vector<TerminalSpec> terminals;

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string tok;
        if (!(ls >> tok)) continue;
        const std::string where = "line " + std::to_string(lineno);
        if (tok == "initial") {
            if (have_initial) throw ValidationError(where + ": initial declared twice");
            if (!(ls >> initial)) throw ValidationError(where + ": initial needs a state id");
            have_initial = true;
        } else if (tok == "terminal") {
            TerminalSpec t;
            if (!(ls >> t.label >> t.reward))
                throw ValidationError(where + ": terminal needs '<id> <reward>'");
            terminals.push_back(t);
        } else {
            std::string child;
            if (!(ls >> child)) throw ValidationError(where + ": edge needs '<parent> <child>'");
            edges.emplace_back(tok, child);
        }
        std::string extra;
        if (ls >> extra) throw ValidationError(where + ": trailing token '" + extra + "'");
    }
    if (!have_initial) throw ValidationError("missing 'initial <id>' line");
    if (terminals.empty()) throw ValidationError("no terminal declared");
    return make_env(initial, edges, terminals);
}

DagEnv load_env_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open env file " + path);
    try {
        return parse_env_text(in);
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

std::string format_env_text(const DagEnv& env) {
    std::ostringstream out;
    out << "initial " << env.labels[env.initial] << "\n";
    for (const auto& e : env.edges)
        out << env.labels[e.parent] << " " << env.labels[e.child] << "\n";
    out.precision(17);
    for (int t : env.terminals)
        out << "terminal " << env.labels[t] << " " << env.reward[t] << "\n";
    return out.str();
}

std::vector<int> validate_dag(const DagEnv& env) {
    const int n = env.n_states();
    // Kahn's algorithm; whatever retains in-degree at the end sits on a cycle.
    std::vector<int> indeg(n, 0);
    for (const auto& e : env.edges) ++indeg[e.child];
    std::deque<int> queue;
    for (int s = 0; s < n; ++s)
        if (indeg[s] == 0) queue.push_back(s);
    std::vector<int> order;
    order.reserve(n);
    while (!queue.empty()) {
        const int s = queue.front();
        queue.pop_front();
        order.push_back(s);
        for (int e : env.children[s])
            if (--indeg[env.edges[e].child] == 0) queue.push_back(env.edges[e].child);
    }
    if (static_cast<int>(order.size()) != n) {
        std::string bad;
        for (int s = 0; s < n; ++s)
            if (indeg[s] > 0) bad += (bad.empty() ? "" : ", ") + env.labels[s];
        throw CycleDetected("cycle through state(s): " + bad);
    }

    // Terminals must be sinks; non-terminal sinks are dead ends.
    for (int s = 0; s < n; ++s) {
        if (env.is_terminal[s] && !env.children[s].empty())
            throw DeadEnd("terminal state " + env.labels[s] + " has outgoing edges");
        if (!env.is_terminal[s] && env.children[s].empty())
            throw DeadEnd("non-terminal state " + env.labels[s] + " has no outgoing edges");
    }

    // Forward reachability from the initial state.
    std::vector<char> reach(n, 0);
    reach[env.initial] = 1;
    for (int s : order)
        if (reach[s])
            for (int e : env.children[s]) reach[env.edges[e].child] = 1;
    for (int s = 0; s < n; ++s)
        if (!reach[s])
            throw UnreachableState("state " + env.labels[s] + " is unreachable from " +
                                   env.labels[env.initial]);

    // Co-reachability: every state must lead to some terminal.
    std::vector<char> coreach(n, 0);
    for (int t : env.terminals) coreach[t] = 1;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        for (int e : env.children[*it])
            if (coreach[env.edges[e].child]) coreach[*it] = 1;
    for (int s = 0; s < n; ++s)
        if (!coreach[s])
            throw DeadEnd("state " + env.labels[s] + " cannot reach any terminal");

    // Initial must be a source in this formulation.
    if (!env.parents[env.initial].empty())
        throw CycleDetected("initial state " + env.labels[env.initial] + " has incoming edges");
    return order;
}

DagEnv with_terminal_rewards(const DagEnv& env, const Eigen::VectorXd& rewards) {
    if (rewards.size() != static_cast<Eigen::Index>(env.terminals.size()))
        throw ValidationError("reward vector length does not match terminal count");
    DagEnv out = env;
    for (std::size_t i = 0; i < env.terminals.size(); ++i) {
        if (!(rewards[i] > 0.0))
            throw ValidationError("non-positive reward for terminal " +
                                  env.labels[env.terminals[i]]);
        out.reward[env.terminals[i]] = rewards[i];
    }
    return out;
}

PolicySet PolicySet::uniform(const DagEnv& env) {
    PolicySet p;
    p.forward_logits = Eigen::VectorXd::Zero(env.n_edges());
    p.backward_logits = Eigen::VectorXd::Zero(env.n_edges());
    p.log_state_flow = Eigen::VectorXd::Zero(env.n_states());
    p.log_z = 0.0;
    return p;
}

double log_flow_clamped(const DagEnv& env, const PolicySet& policy, int state) {
    if (env.is_terminal[state]) return std::log(env.reward[state]);
    return policy.log_state_flow[state];
}

static Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<int>& idx) {
    Eigen::VectorXd out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
    return out;
}

Eigen::VectorXd forward_log_probs(const DagEnv& env, const PolicySet& policy, int state) {
    return log_softmax(gather(policy.forward_logits, env.children[state]));
}

Eigen::VectorXd backward_log_probs(const DagEnv& env, const PolicySet& policy, int state) {
    return log_softmax(gather(policy.backward_logits, env.parents[state]));
}

double log_forward_prob(const DagEnv& env, const PolicySet& policy, int edge_id) {
    const auto& siblings = env.children[env.edges[edge_id].parent];
    const Eigen::VectorXd lp = log_softmax(gather(policy.forward_logits, siblings));
    for (std::size_t i = 0; i < siblings.size(); ++i)
        if (siblings[i] == edge_id) return lp[i];
    return kNegInf;
}

double log_backward_prob(const DagEnv& env, const PolicySet& policy, int edge_id) {
    const auto& siblings = env.parents[env.edges[edge_id].child];
    const Eigen::VectorXd lp = log_softmax(gather(policy.backward_logits, siblings));
    for (std::size_t i = 0; i < siblings.size(); ++i)
        if (siblings[i] == edge_id) return lp[i];
    return kNegInf;
}

double traj_log_pf(const DagEnv& env, const PolicySet& policy, const Trajectory& traj) {
    double lp = 0.0;
    for (int e : traj.edge_ids) lp += log_forward_prob(env, policy, e);
    return lp;
}

double traj_log_pb(const DagEnv& env, const PolicySet& policy, const Trajectory& traj) {
    double lp = 0.0;
    for (int e : traj.edge_ids) lp += log_backward_prob(env, policy, e);
    return lp;
}

Trajectory sample_forward(const DagEnv& env, const PolicySet& policy, std::uint64_t seed) {
    Rng rng(seed);
    Trajectory traj;
    int s = env.initial;
    traj.states.push_back(s);
    while (!env.is_terminal[s]) {
        const Eigen::VectorXd lp = forward_log_probs(env, policy, s);
        const Eigen::Index k = rng.categorical(lp.array().exp());
        const int e = env.children[s][k];
        traj.edge_ids.push_back(e);
        traj.log_pf += lp[k];
        s = env.edges[e].child;
        traj.states.push_back(s);
    }
    traj.terminal = s;
    traj.log_pb_given_x = traj_log_pb(env, policy, traj);
    return traj;
}

Trajectory sample_backward(const DagEnv& env, const PolicySet& policy, int x, std::uint64_t seed) {
    if (x < 0 || x >= env.n_states() || !env.is_terminal[x])
        throw InvalidState("sample_backward: state is not a terminal");
    Rng rng(seed);
    std::vector<int> rev_states{x};
    std::vector<int> rev_edges;
    double log_pb = 0.0;
    int s = x;
    while (s != env.initial) {
        const Eigen::VectorXd lp = backward_log_probs(env, policy, s);
        const Eigen::Index k = rng.categorical(lp.array().exp());
        const int e = env.parents[s][k];
        rev_edges.push_back(e);
        log_pb += lp[k];
        s = env.edges[e].parent;
        rev_states.push_back(s);
    }
    Trajectory traj;
    traj.states.assign(rev_states.rbegin(), rev_states.rend());
    traj.edge_ids.assign(rev_edges.rbegin(), rev_edges.rend());
    traj.terminal = x;
    traj.log_pb_given_x = log_pb;
    traj.log_pf = traj_log_pf(env, policy, traj);
    return traj;
}

}  // namespace gfu
