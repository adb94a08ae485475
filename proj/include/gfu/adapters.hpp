#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gfu/dag.hpp"
#include "gfu/oracle.hpp"

namespace gfu {

// Bottom-up hierarchical latent-variable model with discrete layers. The data
// variable is treated as the (L+1)-th layer. Conditionals are stored as
// logits; rows normalize over the receiving layer's values.
struct HvaeSpec {
    int n_layers = 0;                          // L
    std::vector<int> latent_cardinalities;     // |Z_1| .. |Z_L|
    int data_cardinality = 0;                  // |X|
    Eigen::VectorXd prior_logits;              // over Z_1
    std::vector<Eigen::MatrixXd> decoder_logits;  // layer i: |Z_i| x |Z_{i+1}|
    std::vector<Eigen::MatrixXd> encoder_logits;  // layer i: |Z_{i+1}| x |Z_i|
    std::optional<Eigen::VectorXd> data_dist;  // over X, optional target

    int layer_cardinality(int layer) const {   // layer in [1, L+1]
        return layer <= n_layers ? latent_cardinalities[layer - 1] : data_cardinality;
    }
    static HvaeSpec random(int n_layers, const std::vector<int>& latent_cardinalities,
                           int data_cardinality, std::uint64_t seed);
};

struct EnvWithPolicy {
    DagEnv env;
    PolicySet policy;
};

// Layered DAG with one node per (layer, value); decoder rows become forward
// logits, encoder rows become backward logits. Terminal rewards come from
// spec.data_dist when present, else are uniform.
EnvWithPolicy hvae_to_env(const HvaeSpec& spec, double cap = kDefaultEnumCap);

// Tabular autoregressive model over fixed-length strings with natural
// ordering. States are prefixes; the backward policy is the deterministic
// prefix removal, so the state graph is a tree.
struct ArSpec {
    int seq_len = 0;
    std::vector<std::string> alphabet;
    // conditional_logits[t] has |A|^t rows (prefix index, base-|A|, first
    // symbol most significant) and |A| columns.
    std::vector<Eigen::MatrixXd> conditional_logits;

    int n_symbols() const { return static_cast<int>(alphabet.size()); }
    static ArSpec random(int seq_len, const std::vector<std::string>& alphabet,
                         std::uint64_t seed);
};

EnvWithPolicy ar_to_env(const ArSpec& spec, double cap = kDefaultEnumCap);

// Invertible layers for the flow adapter. Forward and inverse log-dets are
// implemented independently so the two likelihood routes share no code.
struct NfLayer {
    enum class Kind { DiagonalAffine, AffineCoupling };
    Kind kind = Kind::DiagonalAffine;

    // DiagonalAffine: y = x .* exp(log_scale) + shift
    Eigen::VectorXd log_scale, shift;

    // AffineCoupling: the kept half conditions a scalar affine map of the
    // other half: y_c = x_c * exp(s(x_k)) + t(x_k).
    int keep = 0;  // 0: first half kept, 1: second half kept
    Eigen::VectorXd scale_w, shift_w;
    double scale_b = 0.0, shift_b = 0.0;

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    Eigen::VectorXd inverse(const Eigen::VectorXd& y) const;
    double forward_log_det(const Eigen::VectorXd& x) const;  // log|det J_f(x)|
    double inverse_log_det(const Eigen::VectorXd& y) const;  // log|det J_{f^-1}(y)|
};

struct NfSpec {
    int dim = 0;
    std::vector<NfLayer> layers;  // applied in order: z1 -> ... -> x

    static NfSpec random_coupling(int dim, int n_layers, std::uint64_t seed);
};

struct NfTwoWays {
    double cov_value;   // change-of-variables route
    double traj_value;  // trajectory route (base draw + forward log-dets)
};

// Both log-likelihood routes at x. Throws NonInvertible when a layer fails to
// round-trip within 1e-8.
NfTwoWays nf_log_likelihood_two_ways(const NfSpec& spec, const Eigen::VectorXd& x);

// Full inverse pass: the latent chain (z_1, ..., z_{L+1} = x).
std::vector<Eigen::VectorXd> nf_inverse_chain(const NfSpec& spec, const Eigen::VectorXd& x);

// JSON (de)serialization; schemas documented in the README.
nlohmann::ordered_json hvae_to_json(const HvaeSpec& spec);
HvaeSpec hvae_from_json(const nlohmann::json& j);
nlohmann::ordered_json ar_to_json(const ArSpec& spec);
ArSpec ar_from_json(const nlohmann::json& j);
nlohmann::ordered_json nf_to_json(const NfSpec& spec);
NfSpec nf_from_json(const nlohmann::json& j);

HvaeSpec load_hvae_file(const std::string& path);
ArSpec load_ar_file(const std::string& path);
NfSpec load_nf_file(const std::string& path);

}  // namespace gfu
