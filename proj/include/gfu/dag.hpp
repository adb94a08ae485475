#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gfu/errors.hpp"

namespace gfu {

struct Edge {
    int parent;
    int child;
};

// Enumerable DAG environment. States are dense integer ids with a label side
// table; edges are identified by their index into `edges`. Immutable once
// built (and then safe to share across threads for read-only sampling).
struct DagEnv {
    std::vector<std::string> labels;        // state id -> label
    int initial = 0;
    std::vector<Edge> edges;                // edge id -> (parent, child)
    std::vector<std::vector<int>> children; // state id -> outgoing edge ids
    std::vector<std::vector<int>> parents;  // state id -> incoming edge ids
    std::vector<int> terminals;             // in declaration order
    std::vector<char> is_terminal;          // state id -> flag
    Eigen::VectorXd reward;                 // per state; 0 on non-terminals

    int n_states() const { return static_cast<int>(labels.size()); }
    int n_edges() const { return static_cast<int>(edges.size()); }
    int state_of(const std::string& label) const;          // -1 if unknown
    int terminal_index(int state) const;                   // index into `terminals`, -1 if not terminal
    Eigen::VectorXd terminal_rewards() const;              // aligned with `terminals`
    double partition() const { return terminal_rewards().sum(); }
};

struct TerminalSpec {
    std::string label;
    double reward;
};

// Builds and fully validates an environment. Labels are opaque tokens; ids
// are assigned in first-appearance order (initial, then edge endpoints, then
// terminals), which keeps the layout deterministic for a given description.
DagEnv make_env(const std::string& initial_label,
                const std::vector<std::pair<std::string, std::string>>& edge_labels,
                const std::vector<TerminalSpec>& terminal_specs);

// Text format, one item per line:
//   initial <id>
//   terminal <id> <reward>
//   <parent> <child>
// '#' starts a comment; blank lines are skipped.
DagEnv parse_env_text(std::istream& in);
DagEnv load_env_file(const std::string& path);
std::string format_env_text(const DagEnv& env);

// Returns a topological order (initial first). Throws CycleDetected /
// UnreachableState / DeadEnd naming the offending states.
std::vector<int> validate_dag(const DagEnv& env);

// Returns a copy with terminal rewards replaced (aligned with env.terminals).
DagEnv with_terminal_rewards(const DagEnv& env, const Eigen::VectorXd& rewards);

// Tabular policies over a DagEnv. Forward transition probabilities are the
// softmax of `forward_logits` over the outgoing edges of a state; backward
// probabilities the softmax of `backward_logits` over incoming edges. The
// softmax keeps every transition probability strictly positive.
struct PolicySet {
    Eigen::VectorXd forward_logits;   // per edge
    Eigen::VectorXd backward_logits;  // per edge
    Eigen::VectorXd log_state_flow;   // per state; terminals read as log R(x)
    double log_z = 0.0;

    static PolicySet uniform(const DagEnv& env);
};

// log F(s) with the terminal clamp applied.
double log_flow_clamped(const DagEnv& env, const PolicySet& policy, int state);

// Per-edge log probabilities, grouped by state.
Eigen::VectorXd forward_log_probs(const DagEnv& env, const PolicySet& policy, int state);
Eigen::VectorXd backward_log_probs(const DagEnv& env, const PolicySet& policy, int state);
double log_forward_prob(const DagEnv& env, const PolicySet& policy, int edge_id);
double log_backward_prob(const DagEnv& env, const PolicySet& policy, int edge_id);

struct Trajectory {
    std::vector<int> states;    // s0 ... x
    std::vector<int> edge_ids;  // states.size() - 1 entries
    int terminal = -1;
    double log_pf = 0.0;
    double log_pb_given_x = 0.0;
};

// Recompute trajectory log densities under a (possibly different) policy.
double traj_log_pf(const DagEnv& env, const PolicySet& policy, const Trajectory& traj);
double traj_log_pb(const DagEnv& env, const PolicySet& policy, const Trajectory& traj);

// Roll out the forward policy from the initial state until a terminal is hit.
// Deterministic for a given seed.
Trajectory sample_forward(const DagEnv& env, const PolicySet& policy, std::uint64_t seed);

// Ancestor-sample the backward policy from terminal x down to the initial
// state; the returned trajectory is ordered forward (s0 first).
Trajectory sample_backward(const DagEnv& env, const PolicySet& policy, int x, std::uint64_t seed);

}  // namespace gfu
