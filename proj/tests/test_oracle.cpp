#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gfu/dag.hpp"
#include "gfu/numeric.hpp"
#include "gfu/oracle.hpp"
#include "gfu/rng.hpp"

using namespace gfu;

namespace {

DagEnv diamond() {
    return make_env("s0", {{"s0", "A"}, {"s0", "B"}, {"A", "X1"}, {"A", "X2"}, {"B", "X2"}},
                    {{"X1", 1.0}, {"X2", 3.0}});
}

int edge_id(const DagEnv& env, const std::string& a, const std::string& b) {
    for (int e = 0; e < env.n_edges(); ++e)
        if (env.labels[env.edges[e].parent] == a && env.labels[env.edges[e].child] == b)
            return e;
    REQUIRE(false);
    return -1;
}

}  // namespace

TEST_CASE("diamond oracle flows: hand recursion values") {
    const DagEnv env = diamond();
    const ExactFlows flows = exact_flows(env, PolicySet::uniform(env));
    CHECK(flows.state_flow(env.state_of("X1")) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(flows.state_flow(env.state_of("X2")) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(flows.state_flow(env.state_of("A")) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(flows.state_flow(env.state_of("B")) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(flows.partition() == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(flows.edge_flow(edge_id(env, "A", "X1")) == doctest::Approx(1.0));
    CHECK(flows.edge_flow(edge_id(env, "A", "X2")) == doctest::Approx(1.5));
    CHECK(flows.edge_flow(edge_id(env, "B", "X2")) == doctest::Approx(1.5));
    CHECK(flows.terminal_dist[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(flows.terminal_dist[1] == doctest::Approx(0.75).epsilon(1e-12));

    // Cross-check: summing trajectory flows per terminal reproduces R(x).
    const PolicySet induced = policy_from_flows(env, flows);
    Eigen::VectorXd per_terminal = Eigen::VectorXd::Zero(2);
    for (const Trajectory& traj : enumerate_trajectories(env, induced))
        per_terminal[env.terminal_index(traj.terminal)] +=
            std::exp(flows.log_partition + traj.log_pf);
    CHECK(per_terminal[0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(per_terminal[1] == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("single chain carries all flow") {
    const DagEnv env = make_env("s0", {{"s0", "a"}, {"a", "b"}, {"b", "X"}}, {{"X", 2.5}});
    const ExactFlows flows = exact_flows(env, PolicySet::uniform(env));
    for (int s = 0; s < env.n_states(); ++s)
        CHECK(flows.state_flow(s) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(flows.partition() == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("partition equals the reward sum for random envs") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const double r1 = std::exp(2.0 * rng.normal());
        const double r2 = std::exp(2.0 * rng.normal());
        const DagEnv env =
            make_env("s0", {{"s0", "A"}, {"s0", "B"}, {"A", "X1"}, {"A", "X2"}, {"B", "X2"}},
                     {{"X1", r1}, {"X2", r2}});
        PolicySet backward = PolicySet::uniform(env);
        backward.backward_logits = rng.normal_vector(env.n_edges());
        const ExactFlows flows = exact_flows(env, backward);
        CHECK(flows.partition() == doctest::Approx(r1 + r2).epsilon(1e-10));
    }
}

TEST_CASE("flow matching identity holds on oracle outputs") {
    const DagEnv env = diamond();
    Rng rng(11);
    PolicySet backward = PolicySet::uniform(env);
    backward.backward_logits = rng.normal_vector(env.n_edges());
    const ExactFlows flows = exact_flows(env, backward);
    for (int s = 0; s < env.n_states(); ++s) {
        if (s == env.initial || env.is_terminal[s]) continue;
        double in = 0.0, out = 0.0;
        for (int e : env.parents[s]) in += flows.edge_flow(e);
        for (int e : env.children[s]) out += flows.edge_flow(e);
        CHECK(std::abs(in - out) / flows.state_flow(s) < 1e-10);
    }
}

TEST_CASE("detailed balance holds identically for induced policies") {
    const DagEnv env = diamond();
    Rng rng(13);
    PolicySet backward = PolicySet::uniform(env);
    backward.backward_logits = rng.normal_vector(env.n_edges());
    const ExactFlows flows = exact_flows(env, backward);
    const PolicySet induced = policy_from_flows(env, flows);
    for (int e = 0; e < env.n_edges(); ++e) {
        const double lhs =
            flows.log_state_flow[env.edges[e].parent] + log_forward_prob(env, induced, e);
        const double rhs =
            flows.log_state_flow[env.edges[e].child] + log_backward_prob(env, induced, e);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("terminal distribution of the diamond under the uniform policy") {
    const DagEnv env = diamond();
    const Eigen::VectorXd dist = terminal_distribution(env, PolicySet::uniform(env));
    CHECK(dist[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(dist[1] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(dist.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("near-Dirac forward policy concentrates the terminal distribution") {
    const DagEnv env = diamond();
    PolicySet policy = PolicySet::uniform(env);
    // Push all mass onto s0 -> A -> X1 (softmax keeps probabilities positive).
    policy.forward_logits[0] = 60.0;
    policy.forward_logits[2] = 60.0;
    const Eigen::VectorXd dist = terminal_distribution(env, policy);
    CHECK(dist[env.terminal_index(env.state_of("X1"))] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tree envs: terminal probability is the unique trajectory product") {
    const DagEnv env = make_env(
        "r", {{"r", "0"}, {"r", "1"}, {"0", "00"}, {"0", "01"}, {"1", "10"}, {"1", "11"}},
        {{"00", 1.0}, {"01", 2.0}, {"10", 3.0}, {"11", 4.0}});
    Rng rng(4);
    PolicySet policy = PolicySet::uniform(env);
    policy.forward_logits = rng.normal_vector(env.n_edges());
    const Eigen::VectorXd dist = terminal_distribution(env, policy);
    for (std::size_t i = 0; i < env.terminals.size(); ++i) {
        const auto trajs = enumerate_trajectories_to(env, policy, env.terminals[i]);
        REQUIRE(trajs.size() == 1);
        CHECK(dist[i] == doctest::Approx(std::exp(trajs[0].log_pf)).epsilon(1e-12));
    }
}

TEST_CASE("exact_log_likelihood is the log terminal probability") {
    const DagEnv env = diamond();
    const PolicySet policy = PolicySet::uniform(env);
    CHECK(exact_log_likelihood(env, policy, env.state_of("X1")) ==
          doctest::Approx(std::log(0.25)).epsilon(1e-12));
    CHECK_THROWS_AS(exact_log_likelihood(env, policy, env.state_of("A")), InvalidState);
}

TEST_CASE("exact_elbo equals the log-likelihood when the bound is tight") {
    // P_B(tau|x) proportional to P_F(tau) per terminal is exactly the posterior.
    const DagEnv env = diamond();
    Rng rng(21);
    PolicySet policy = PolicySet::uniform(env);
    policy.forward_logits = rng.normal_vector(env.n_edges());
    // Induce the backward policy from the flows generated by the forward
    // policy itself: P_B(s|s') = F(s,s')/F(s') with F built from P_F.
    // Building those flows: run the forward sweep to get reach probabilities,
    // then edge flows F(s,s') = Z * reach(s) * P_F(s'|s) with R implied.
    // Equivalent shortcut: backward logits = log(reach(s)) + log P_F(e).
    Eigen::VectorXd log_reach = Eigen::VectorXd::Constant(env.n_states(), kNegInf);
    log_reach[env.initial] = 0.0;
    for (int s = 0; s < env.n_states(); ++s) {
        // States were created in topological order for this env.
        if (env.is_terminal[s]) continue;
        const Eigen::VectorXd lp = forward_log_probs(env, policy, s);
        for (std::size_t i = 0; i < env.children[s].size(); ++i) {
            const int c = env.edges[env.children[s][i]].child;
            const double add = log_reach[s] + lp[i];
            log_reach[c] = log_reach[c] == kNegInf
                               ? add
                               : log_sum_exp(Eigen::Vector2d(log_reach[c], add));
        }
    }
    for (int e = 0; e < env.n_edges(); ++e)
        policy.backward_logits[e] =
            log_reach[env.edges[e].parent] + log_forward_prob(env, policy, e);

    for (int x : env.terminals)
        CHECK(exact_elbo(env, policy, x) ==
              doctest::Approx(exact_log_likelihood(env, policy, x)).epsilon(1e-10));
}

TEST_CASE("exact_elbo on a tree is the unique trajectory log-probability") {
    const DagEnv env = make_env(
        "r", {{"r", "0"}, {"r", "1"}, {"0", "00"}, {"0", "01"}, {"1", "10"}, {"1", "11"}},
        {{"00", 1.0}, {"01", 1.0}, {"10", 1.0}, {"11", 1.0}});
    Rng rng(8);
    PolicySet policy = PolicySet::uniform(env);
    policy.forward_logits = rng.normal_vector(env.n_edges());
    for (int x : env.terminals) {
        const auto trajs = enumerate_trajectories_to(env, policy, x);
        CHECK(exact_elbo(env, policy, x) == doctest::Approx(trajs[0].log_pf).epsilon(1e-12));
    }
}

TEST_CASE("exact_elbo never exceeds the exact log-likelihood") {
    const DagEnv env = diamond();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        PolicySet policy = PolicySet::uniform(env);
        policy.forward_logits = rng.normal_vector(env.n_edges());
        policy.backward_logits = rng.normal_vector(env.n_edges());
        for (int x : env.terminals)
            CHECK(exact_elbo(env, policy, x) <=
                  exact_log_likelihood(env, policy, x) + 1e-12);
    }
}

TEST_CASE("log-space arithmetic survives reward ratios of 1e6") {
    const DagEnv env =
        make_env("s0", {{"s0", "A"}, {"s0", "B"}, {"A", "X1"}, {"A", "X2"}, {"B", "X2"}},
                 {{"X1", 1e-3}, {"X2", 1e3}});
    const ExactFlows flows = exact_flows(env, PolicySet::uniform(env));
    CHECK(flows.partition() == doctest::Approx(1000.001).epsilon(1e-12));
    CHECK(flows.state_flow(env.state_of("A")) == doctest::Approx(500.001).epsilon(1e-12));
    CHECK(flows.terminal_dist[0] == doctest::Approx(1e-3 / 1000.001).epsilon(1e-12));
    CHECK(flows.terminal_dist.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("trajectory counting and the enumeration cap") {
    const DagEnv env = diamond();
    CHECK(count_trajectories(env) == doctest::Approx(3.0));
    CHECK(enumerate_trajectories(env, PolicySet::uniform(env)).size() == 3);
    CHECK_THROWS_AS(enumerate_trajectories(env, PolicySet::uniform(env), 2.0), CapExceeded);
    CHECK_THROWS_AS(exact_elbo(env, PolicySet::uniform(env), env.state_of("X2"), 2.0),
                    CapExceeded);
}

TEST_CASE("oracle invariants hold on random layered DAGs") {
    // Random layered envs: every consecutive layer pair gets a random edge
    // set, patched so each node keeps at least one inbound and one outbound
    // edge. Rewards and the backward policy are random too.
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        Rng rng(derive_seed(2024, trial));
        const int n_layers = 2 + static_cast<int>(rng.raw() % 3);
        std::vector<int> widths{1};
        for (int l = 1; l <= n_layers; ++l)
            widths.push_back(2 + static_cast<int>(rng.raw() % 3));
        auto name = [](int l, int i) { return std::to_string(l) + "_" + std::to_string(i); };
        std::vector<std::pair<std::string, std::string>> edges;
        for (int l = 0; l < n_layers; ++l) {
            std::vector<char> has_out(widths[l], 0), has_in(widths[l + 1], 0);
            for (int i = 0; i < widths[l]; ++i)
                for (int j = 0; j < widths[l + 1]; ++j)
                    if (rng.uniform() < 0.45) {
                        edges.emplace_back(name(l, i), name(l + 1, j));
                        has_out[i] = has_in[j] = 1;
                    }
            for (int i = 0; i < widths[l]; ++i)
                if (!has_out[i]) {
                    const int j = static_cast<int>(rng.raw() % widths[l + 1]);
                    edges.emplace_back(name(l, i), name(l + 1, j));
                    has_in[j] = 1;
                }
            for (int j = 0; j < widths[l + 1]; ++j)
                if (!has_in[j]) {
                    const int i = static_cast<int>(rng.raw() % widths[l]);
                    edges.emplace_back(name(l, i), name(l + 1, j));
                }
        }
        std::vector<TerminalSpec> terminals;
        for (int j = 0; j < widths[n_layers]; ++j)
            terminals.push_back({name(n_layers, j), std::exp(2.0 * rng.normal())});
        const DagEnv env = make_env(name(0, 0), edges, terminals);

        PolicySet policy = PolicySet::uniform(env);
        policy.forward_logits = rng.normal_vector(env.n_edges());
        policy.backward_logits = rng.normal_vector(env.n_edges());
        const ExactFlows flows = exact_flows(env, policy);

        CHECK(std::abs(flows.partition() - env.partition()) / env.partition() < 1e-12);
        CHECK(std::abs(flows.terminal_dist.sum() - 1.0) < 1e-12);
        for (int s = 0; s < env.n_states(); ++s) {
            if (s == env.initial || env.is_terminal[s]) continue;
            double in = 0.0, out = 0.0;
            for (int e : env.parents[s]) in += flows.edge_flow(e);
            for (int e : env.children[s]) out += flows.edge_flow(e);
            CHECK(std::abs(in - out) / flows.state_flow(s) < 1e-10);
        }
        const PolicySet induced = policy_from_flows(env, flows);
        for (int e = 0; e < env.n_edges(); ++e) {
            const double r = flows.log_state_flow[env.edges[e].parent] +
                             log_forward_prob(env, induced, e) -
                             flows.log_state_flow[env.edges[e].child] -
                             log_backward_prob(env, induced, e);
            CHECK(std::abs(r) < 1e-10);
        }
        for (int x : env.terminals)
            CHECK(exact_elbo(env, policy, x) <= exact_log_likelihood(env, policy, x) + 1e-12);
    }
}

TEST_CASE("oracle JSON export carries all four blocks") {
    const DagEnv env = diamond();
    const ExactFlows flows = exact_flows(env, PolicySet::uniform(env));
    const nlohmann::ordered_json j = flows_to_json(env, flows);
    CHECK(j.at("partition").get<double>() == doctest::Approx(4.0));
    CHECK(j.at("state_flow").at("A").get<double>() == doctest::Approx(2.5));
    CHECK(j.at("edge_flow").at("A->X2").get<double>() == doctest::Approx(1.5));
    CHECK(j.at("terminal_dist").at("X2").get<double>() == doctest::Approx(0.75));
}
