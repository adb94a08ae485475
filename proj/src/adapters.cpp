#include "gfu/adapters.hpp"

#include <cmath>
#include <fstream>

#include "gfu/numeric.hpp"
#include "gfu/rng.hpp"

namespace gfu {

HvaeSpec HvaeSpec::random(int n_layers, const std::vector<int>& latent_cardinalities,
                          int data_cardinality, std::uint64_t seed) {
    HvaeSpec spec;
    spec.n_layers = n_layers;
    spec.latent_cardinalities = latent_cardinalities;
    spec.data_cardinality = data_cardinality;
    Rng rng(seed);
    spec.prior_logits = rng.normal_vector(latent_cardinalities.at(0));
    for (int i = 1; i <= n_layers; ++i) {
        const int from = spec.layer_cardinality(i);
        const int to = spec.layer_cardinality(i + 1);
        Eigen::MatrixXd dec(from, to), enc(to, from);
        for (int r = 0; r < from; ++r) dec.row(r) = rng.normal_vector(to).transpose();
        for (int r = 0; r < to; ++r) enc.row(r) = rng.normal_vector(from).transpose();
        spec.decoder_logits.push_back(dec);
        spec.encoder_logits.push_back(enc);
    }
    return spec;
}

EnvWithPolicy hvae_to_env(const HvaeSpec& spec, double cap) {
    if (spec.n_layers < 1) throw ValidationError("hvae: n_layers must be >= 1");
    if (static_cast<int>(spec.latent_cardinalities.size()) != spec.n_layers)
        throw ValidationError("hvae: latent_cardinalities must have n_layers entries");
    double n_configs = 1.0;
    for (int i = 1; i <= spec.n_layers + 1; ++i) {
        if (spec.layer_cardinality(i) < 2)
            throw ValidationError("hvae: every layer needs cardinality >= 2");
        n_configs *= spec.layer_cardinality(i);
    }
    if (n_configs > cap)
        throw CapExceeded("hvae: " + std::to_string(n_configs) +
                          " latent configurations exceed the enumeration cap");

    auto node_label = [&](int layer, int value) {
        const std::string name = layer == spec.n_layers + 1 ? "x" : "z" + std::to_string(layer);
        return name + "=" + std::to_string(value);
    };

    std::vector<std::pair<std::string, std::string>> edges;
    for (int v = 0; v < spec.layer_cardinality(1); ++v)
        edges.emplace_back("s0", node_label(1, v));
    for (int layer = 1; layer <= spec.n_layers; ++layer)
        for (int u = 0; u < spec.layer_cardinality(layer); ++u)
            for (int v = 0; v < spec.layer_cardinality(layer + 1); ++v)
                edges.emplace_back(node_label(layer, u), node_label(layer + 1, v));

    std::vector<TerminalSpec> terminals;
    for (int v = 0; v < spec.data_cardinality; ++v) {
        const double r = spec.data_dist ? (*spec.data_dist)[v] : 1.0;
        terminals.push_back({node_label(spec.n_layers + 1, v), r});
    }

    EnvWithPolicy out{make_env("s0", edges, terminals), {}};
    out.policy = PolicySet::uniform(out.env);

    int e = 0;
    for (int v = 0; v < spec.layer_cardinality(1); ++v, ++e) {
        out.policy.forward_logits[e] = spec.prior_logits[v];
        out.policy.backward_logits[e] = 0.0;  // single parent
    }
    for (int layer = 1; layer <= spec.n_layers; ++layer)
        for (int u = 0; u < spec.layer_cardinality(layer); ++u)
            for (int v = 0; v < spec.layer_cardinality(layer + 1); ++v, ++e) {
                out.policy.forward_logits[e] = spec.decoder_logits[layer - 1](u, v);
                out.policy.backward_logits[e] = spec.encoder_logits[layer - 1](v, u);
            }
    return out;
}

ArSpec ArSpec::random(int seq_len, const std::vector<std::string>& alphabet,
                      std::uint64_t seed) {
    ArSpec spec;
    spec.seq_len = seq_len;
    spec.alphabet = alphabet;
    Rng rng(seed);
    int n_prefixes = 1;
    for (int t = 0; t < seq_len; ++t) {
        Eigen::MatrixXd logits(n_prefixes, alphabet.size());
        for (int r = 0; r < n_prefixes; ++r)
            logits.row(r) = rng.normal_vector(alphabet.size()).transpose();
        spec.conditional_logits.push_back(logits);
        n_prefixes *= static_cast<int>(alphabet.size());
    }
    return spec;
}

EnvWithPolicy ar_to_env(const ArSpec& spec, double cap) {
    const int a = spec.n_symbols();
    if (a < 2) throw ValidationError("ar: alphabet needs at least 2 symbols");
    if (spec.seq_len < 1) throw ValidationError("ar: seq_len must be >= 1");
    if (std::pow(static_cast<double>(a), spec.seq_len) > cap)
        throw CapExceeded("ar: |alphabet|^seq_len exceeds the enumeration cap");
    if (static_cast<int>(spec.conditional_logits.size()) != spec.seq_len)
        throw ValidationError("ar: conditional_logits must have seq_len levels");

    // The empty prefix doubles as the abstract initial state.
    auto prefix_label = [&](int t, long idx) {
        if (t == 0) return std::string("<>");
        std::string s;
        for (int pos = t - 1; pos >= 0; --pos) {
            long div = 1;
            for (int k = 0; k < pos; ++k) div *= a;
            s += spec.alphabet[(idx / div) % a];
        }
        return s;
    };

    std::vector<std::pair<std::string, std::string>> edges;
    long n_prefixes = 1;
    for (int t = 0; t < spec.seq_len; ++t) {
        for (long idx = 0; idx < n_prefixes; ++idx)
            for (int sym = 0; sym < a; ++sym)
                edges.emplace_back(prefix_label(t, idx), prefix_label(t + 1, idx * a + sym));
        n_prefixes *= a;
    }
    std::vector<TerminalSpec> terminals;
    for (long idx = 0; idx < n_prefixes; ++idx)
        terminals.push_back({prefix_label(spec.seq_len, idx), 1.0});

    EnvWithPolicy out{make_env("<>", edges, terminals), {}};
    out.policy = PolicySet::uniform(out.env);
    int e = 0;
    n_prefixes = 1;
    for (int t = 0; t < spec.seq_len; ++t) {
        for (long idx = 0; idx < n_prefixes; ++idx)
            for (int sym = 0; sym < a; ++sym, ++e)
                out.policy.forward_logits[e] = spec.conditional_logits[t](idx, sym);
        n_prefixes *= a;
    }
    return out;
}

namespace {

std::pair<int, int> coupling_split(const NfLayer& layer, int dim) {
    const int half = dim / 2;
    const int keep_begin = layer.keep == 0 ? 0 : half;
    const int keep_len = layer.keep == 0 ? half : dim - half;
    return {keep_begin, keep_len};
}

}  // namespace

Eigen::VectorXd NfLayer::forward(const Eigen::VectorXd& x) const {
    if (kind == Kind::DiagonalAffine)
        return (x.array() * log_scale.array().exp() + shift.array()).matrix();
    const auto [kb, kl] = coupling_split(*this, static_cast<int>(x.size()));
    const Eigen::VectorXd xk = x.segment(kb, kl);
    const double s = scale_w.dot(xk) + scale_b;
    const double t = shift_w.dot(xk) + shift_b;
    Eigen::VectorXd y = x;
    for (int i = 0; i < x.size(); ++i)
        if (i < kb || i >= kb + kl) y[i] = x[i] * std::exp(s) + t;
    return y;
}

Eigen::VectorXd NfLayer::inverse(const Eigen::VectorXd& y) const {
    if (kind == Kind::DiagonalAffine)
        return ((y.array() - shift.array()) * (-log_scale.array()).exp()).matrix();
    const auto [kb, kl] = coupling_split(*this, static_cast<int>(y.size()));
    const Eigen::VectorXd yk = y.segment(kb, kl);
    const double s = scale_w.dot(yk) + scale_b;
    const double t = shift_w.dot(yk) + shift_b;
    Eigen::VectorXd x = y;
    for (int i = 0; i < y.size(); ++i)
        if (i < kb || i >= kb + kl) x[i] = (y[i] - t) * std::exp(-s);
    return x;
}

double NfLayer::forward_log_det(const Eigen::VectorXd& x) const {
    if (kind == Kind::DiagonalAffine) return log_scale.sum();
    const auto [kb, kl] = coupling_split(*this, static_cast<int>(x.size()));
    const double s = scale_w.dot(x.segment(kb, kl)) + scale_b;
    return s * (static_cast<double>(x.size()) - kl);
}

double NfLayer::inverse_log_det(const Eigen::VectorXd& y) const {
    if (kind == Kind::DiagonalAffine) return -log_scale.sum();
    const auto [kb, kl] = coupling_split(*this, static_cast<int>(y.size()));
    const double s = scale_w.dot(y.segment(kb, kl)) + scale_b;
    return -s * (static_cast<double>(y.size()) - kl);
}

NfSpec NfSpec::random_coupling(int dim, int n_layers, std::uint64_t seed) {
    NfSpec spec;
    spec.dim = dim;
    Rng rng(seed);
    for (int i = 0; i < n_layers; ++i) {
        NfLayer layer;
        layer.kind = NfLayer::Kind::AffineCoupling;
        layer.keep = i % 2;
        const int half = dim / 2;
        const int keep_len = layer.keep == 0 ? half : dim - half;
        layer.scale_w = 0.5 * rng.normal_vector(keep_len);
        layer.shift_w = 0.5 * rng.normal_vector(keep_len);
        layer.scale_b = 0.3 * rng.normal();
        layer.shift_b = 0.3 * rng.normal();
        spec.layers.push_back(layer);
    }
    return spec;
}

std::vector<Eigen::VectorXd> nf_inverse_chain(const NfSpec& spec, const Eigen::VectorXd& x) {
    std::vector<Eigen::VectorXd> chain{x};
    Eigen::VectorXd cur = x;
    for (auto it = spec.layers.rbegin(); it != spec.layers.rend(); ++it) {
        const Eigen::VectorXd prev = it->inverse(cur);
        const double err = (it->forward(prev) - cur).cwiseAbs().maxCoeff();
        if (!(err <= 1e-8) || !prev.allFinite())
            throw NonInvertible("nf: layer inverse fails to round-trip within 1e-8");
        cur = prev;
        chain.push_back(cur);
    }
    std::reverse(chain.begin(), chain.end());  // z1 first, x last
    return chain;
}

NfTwoWays nf_log_likelihood_two_ways(const NfSpec& spec, const Eigen::VectorXd& x) {
    if (x.size() != spec.dim) throw ValidationError("nf: point has wrong dimension");
    const std::vector<Eigen::VectorXd> chain = nf_inverse_chain(spec, x);
    const Eigen::VectorXd& z1 = chain.front();
    double log_base = 0.0;
    for (int d = 0; d < spec.dim; ++d) log_base += normal_log_pdf(z1[d], 0.0, 1.0);

    // Route 1: change of variables, inverse-direction Jacobians at the
    // downstream points.
    NfTwoWays out{log_base, log_base};
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        out.cov_value += spec.layers[i].inverse_log_det(chain[i + 1]);

    // Route 2: trajectory view, one stochastic base step then deterministic
    // transitions each contributing the forward log-det at the upstream point.
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        out.traj_value -= spec.layers[i].forward_log_det(chain[i]);
    return out;
}

namespace {

Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    Eigen::VectorXd v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

nlohmann::ordered_json vec_to_json(const Eigen::VectorXd& v) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

Eigen::MatrixXd mat_from_json(const nlohmann::json& j) {
    const std::size_t rows = j.size();
    const std::size_t cols = rows ? j[0].size() : 0;
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (j[r].size() != cols) throw ValidationError("ragged matrix in JSON spec");
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

nlohmann::ordered_json mat_to_json(const Eigen::MatrixXd& m) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) j.push_back(vec_to_json(m.row(r)));
    return j;
}

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

}  // namespace

nlohmann::ordered_json hvae_to_json(const HvaeSpec& spec) {
    nlohmann::ordered_json j;
    j["type"] = "hvae";
    j["n_layers"] = spec.n_layers;
    j["latent_cardinalities"] = spec.latent_cardinalities;
    j["data_cardinality"] = spec.data_cardinality;
    j["prior_logits"] = vec_to_json(spec.prior_logits);
    j["decoder_logits"] = nlohmann::ordered_json::array();
    j["encoder_logits"] = nlohmann::ordered_json::array();
    for (const auto& m : spec.decoder_logits) j["decoder_logits"].push_back(mat_to_json(m));
    for (const auto& m : spec.encoder_logits) j["encoder_logits"].push_back(mat_to_json(m));
    if (spec.data_dist) j["data_dist"] = vec_to_json(*spec.data_dist);
    return j;
}

HvaeSpec hvae_from_json(const nlohmann::json& j) {
    if (j.value("type", "") != "hvae") throw ValidationError("spec type is not 'hvae'");
    HvaeSpec spec;
    spec.n_layers = j.at("n_layers").get<int>();
    spec.latent_cardinalities = j.at("latent_cardinalities").get<std::vector<int>>();
    spec.data_cardinality = j.at("data_cardinality").get<int>();
    spec.prior_logits = vec_from_json(j.at("prior_logits"));
    for (const auto& m : j.at("decoder_logits")) spec.decoder_logits.push_back(mat_from_json(m));
    for (const auto& m : j.at("encoder_logits")) spec.encoder_logits.push_back(mat_from_json(m));
    if (j.contains("data_dist")) spec.data_dist = vec_from_json(j.at("data_dist"));
    return spec;
}

nlohmann::ordered_json ar_to_json(const ArSpec& spec) {
    nlohmann::ordered_json j;
    j["type"] = "ar";
    j["seq_len"] = spec.seq_len;
    j["alphabet"] = spec.alphabet;
    j["conditional_logits"] = nlohmann::ordered_json::array();
    for (const auto& m : spec.conditional_logits)
        j["conditional_logits"].push_back(mat_to_json(m));
    return j;
}

ArSpec ar_from_json(const nlohmann::json& j) {
    if (j.value("type", "") != "ar") throw ValidationError("spec type is not 'ar'");
    ArSpec spec;
    spec.seq_len = j.at("seq_len").get<int>();
    spec.alphabet = j.at("alphabet").get<std::vector<std::string>>();
    for (const auto& m : j.at("conditional_logits"))
        spec.conditional_logits.push_back(mat_from_json(m));
    return spec;
}

nlohmann::ordered_json nf_to_json(const NfSpec& spec) {
    nlohmann::ordered_json j;
    j["type"] = "nf";
    j["dim"] = spec.dim;
    j["layers"] = nlohmann::ordered_json::array();
    for (const auto& layer : spec.layers) {
        nlohmann::ordered_json lj;
        if (layer.kind == NfLayer::Kind::DiagonalAffine) {
            lj["kind"] = "diagonal_affine";
            lj["log_scale"] = vec_to_json(layer.log_scale);
            lj["shift"] = vec_to_json(layer.shift);
        } else {
            lj["kind"] = "affine_coupling";
            lj["keep"] = layer.keep;
            lj["scale_w"] = vec_to_json(layer.scale_w);
            lj["scale_b"] = layer.scale_b;
            lj["shift_w"] = vec_to_json(layer.shift_w);
            lj["shift_b"] = layer.shift_b;
        }
        j["layers"].push_back(lj);
    }
    return j;
}

NfSpec nf_from_json(const nlohmann::json& j) {
    if (j.value("type", "") != "nf") throw ValidationError("spec type is not 'nf'");
    NfSpec spec;
    spec.dim = j.at("dim").get<int>();
    for (const auto& lj : j.at("layers")) {
        NfLayer layer;
        const std::string kind = lj.at("kind").get<std::string>();
        if (kind == "diagonal_affine") {
            layer.kind = NfLayer::Kind::DiagonalAffine;
            layer.log_scale = vec_from_json(lj.at("log_scale"));
            layer.shift = vec_from_json(lj.at("shift"));
        } else if (kind == "affine_coupling") {
            layer.kind = NfLayer::Kind::AffineCoupling;
            layer.keep = lj.at("keep").get<int>();
            layer.scale_w = vec_from_json(lj.at("scale_w"));
            layer.scale_b = lj.at("scale_b").get<double>();
            layer.shift_w = vec_from_json(lj.at("shift_w"));
            layer.shift_b = lj.at("shift_b").get<double>();
        } else {
            throw ValidationError("unknown nf layer kind '" + kind + "'");
        }
        spec.layers.push_back(layer);
    }
    return spec;
}

HvaeSpec load_hvae_file(const std::string& path) { return hvae_from_json(load_json_file(path)); }
ArSpec load_ar_file(const std::string& path) { return ar_from_json(load_json_file(path)); }
NfSpec load_nf_file(const std::string& path) { return nf_from_json(load_json_file(path)); }

}  // namespace gfu
