#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "gfu/errors.hpp"
#include "gfu/rng.hpp"

namespace gfu::sde {

// Ito process dx = f(x,t) dt + g(t) dw on [0,1], discretized with n_steps
// Euler-Maruyama steps, started from an axis-aligned Gaussian.
struct SdeSpec {
    enum class Kind { Ou, Custom };

    int dim = 1;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> drift;
    std::function<double(double)> diffusion;
    int n_steps = 1000;
    Eigen::VectorXd init_mean;
    Eigen::VectorXd init_var;
    Kind kind = Kind::Custom;

    double step() const { return 1.0 / n_steps; }

    // Canonical laboratory process: f(x) = -x, g = sqrt(2). Its marginals and
    // score are in closed form, so every check here has an analytic oracle.
    static SdeSpec ou(int dim, double mean0, double var0, int n_steps = 1000);
};

struct Gaussian1 {
    double mean;
    double var;
};

// m(t) = m0 e^{-t}, v(t) = v0 e^{-2t} + 1 - e^{-2t}, per dimension.
// Throws WrongSpec unless the spec was built by SdeSpec::ou.
Gaussian1 ou_marginal(const SdeSpec& spec, double t);

// d/dx log p_t(x) of the OU marginal, per dimension.
Eigen::VectorXd ou_score(const SdeSpec& spec, const Eigen::VectorXd& x, double t);

// One forward step: x + h f(x,t) + sqrt(h) g(t) delta.
Eigen::VectorXd em_forward_step(const SdeSpec& spec, const Eigen::VectorXd& x, double t,
                                double h, Rng& rng);

// Affine-in-space score model with piecewise-linear time dependence:
// s(x, t) = a(t) x + b(t). The OU score is exactly representable.
struct ScoreModel {
    Eigen::VectorXd knots;  // strictly increasing, covering [0,1]
    Eigen::VectorXd a;      // one slope per knot
    Eigen::MatrixXd b;      // dim x knots

    double slope_at(double t) const;
    Eigen::VectorXd offset_at(double t) const;
    Eigen::VectorXd eval(const Eigen::VectorXd& x, double t) const;

    static ScoreModel constant(int dim, double a0, double b0);
    static ScoreModel ou_true(const SdeSpec& spec, int n_knots);
};

// One modeled reverse step producing x_t from x_{t+h}; drift, diffusion and
// score are all evaluated at the upper time t+h.
Eigen::VectorXd em_backward_step(const SdeSpec& spec, const ScoreModel& score,
                                 const Eigen::VectorXd& x_next, double t, double h, Rng& rng);

// Gaussian log transition densities of the two discretized kernels.
double log_forward_kernel(const SdeSpec& spec, const Eigen::VectorXd& x_next,
                          const Eigen::VectorXd& x, double t, double h);
double log_backward_kernel(const SdeSpec& spec, const ScoreModel& score,
                           const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_next,
                           double t, double h);

// Density table on a uniform 1-D spatial grid at a set of time knots; each
// knot must carry unit trapezoid mass to 1e-6.
struct GridDensity {
    Eigen::VectorXd xs;
    Eigen::VectorXd times;
    Eigen::MatrixXd values;  // xs.size() x times.size()

    GridDensity(Eigen::VectorXd xs, Eigen::VectorXd times, Eigen::MatrixXd values);
    double dx() const { return xs[1] - xs[0]; }
    int knot_index(double t) const;  // exact match required

    static GridDensity ou_analytic(const SdeSpec& spec, int m, double extent,
                                   const Eigen::VectorXd& times);
};

// max_x | integral p(x',t) k_h(x|x') dx' - p(x, t+h) | with the one-step
// Euler-Maruyama Gaussian kernel and trapezoid quadrature.
double chapman_kolmogorov_residual(const GridDensity& grid, const SdeSpec& spec, double t,
                                   double h);

// max over interior grid points of | d_t p + d_x(p f) - 1/2 d_xx(p g^2) |
// with second-order central stencils; t must be an interior time knot.
double fokker_planck_residual(const GridDensity& grid, const SdeSpec& spec, double t);

struct DbLimit {
    double residual;   // scaled one-step balance mismatch
    double predicted;  // eps . (s(x_t,t) - grad log p_t(x_t))
};

// (1/(sqrt(h) g(t))) [log p_t(x_t) + log P_F(x_{t+h}|x_t)
//                     - log p_{t+h}(x_{t+h}) - log P_B(x_t|x_{t+h})]
// with x_{t+h} = x_t + h f + sqrt(h) g eps, against its h -> 0 limit.
DbLimit db_limit_residual(const SdeSpec& spec, const ScoreModel& score,
                          const Eigen::VectorXd& x_t, double t, const Eigen::VectorXd& eps,
                          double h);

struct SsmLoss {
    double value;
    Eigen::VectorXd grad;  // [a knots | b column-major], matching pack order
};

// Monte Carlo sliced score matching objective
//   mean_i [ eps_i^T grad_x s(x_i) eps_i + 1/2 (eps_i^T s(x_i, t_i))^2 ]
// with its analytic gradient in the score parameters.
SsmLoss ssm_loss(const ScoreModel& score, const Eigen::MatrixXd& xs,
                 const Eigen::VectorXd& ts, const Eigen::MatrixXd& eps);

// Draws n samples per knot from the analytic OU marginal, one Gaussian slice
// per sample, and fits the affine score by Adam on the SSM objective.
ScoreModel fit_score_ssm(const SdeSpec& spec, int n_knots, int n_samples_per_knot,
                         int steps, double lr, std::uint64_t seed);

struct ReverseSamples {
    std::vector<double> times;
    std::vector<Eigen::MatrixXd> samples;  // per recorded time: dim x n_paths
};

// Integrates the modeled reverse process from the t=1 marginal down to t=0,
// recording the requested knots. Path p uses the substream derive_seed(seed, p).
ReverseSamples reverse_sampler(const SdeSpec& spec, const ScoreModel& score, int n_paths,
                               std::uint64_t seed,
                               const std::vector<double>& record_times = {0.0, 0.5, 1.0});

}  // namespace gfu::sde
