#include "gfu/sde.hpp"

#include <algorithm>
#include <cmath>

#include "gfu/numeric.hpp"

namespace gfu::sde {

SdeSpec SdeSpec::ou(int dim, double mean0, double var0, int n_steps) {
    SdeSpec spec;
    spec.dim = dim;
    spec.drift = [](const Eigen::VectorXd& x, double) { return (-x).eval(); };
    spec.diffusion = [](double) { return std::sqrt(2.0); };
    spec.n_steps = n_steps;
    spec.init_mean = Eigen::VectorXd::Constant(dim, mean0);
    spec.init_var = Eigen::VectorXd::Constant(dim, var0);
    spec.kind = Kind::Ou;
    return spec;
}

Gaussian1 ou_marginal(const SdeSpec& spec, double t) {
    if (spec.kind != SdeSpec::Kind::Ou)
        throw WrongSpec("ou_marginal: spec is not the canonical OU process");
    const double m0 = spec.init_mean[0];
    const double v0 = spec.init_var[0];
    const double e = std::exp(-t);
    return {m0 * e, v0 * e * e + 1.0 - e * e};
}

Eigen::VectorXd ou_score(const SdeSpec& spec, const Eigen::VectorXd& x, double t) {
    const Gaussian1 g = ou_marginal(spec, t);
    return (-(x.array() - g.mean) / g.var).matrix();
}

Eigen::VectorXd em_forward_step(const SdeSpec& spec, const Eigen::VectorXd& x, double t,
                                double h, Rng& rng) {
    return x + h * spec.drift(x, t) +
           std::sqrt(h) * spec.diffusion(t) * rng.normal_vector(x.size());
}

namespace {

// Bracketing segment of t: index k and interpolation weight w in [0, 1].
std::pair<Eigen::Index, double> knot_weight(const Eigen::VectorXd& knots, double t) {
    const Eigen::Index n = knots.size();
    if (n == 1 || t <= knots[0]) return {0, 0.0};
    if (t >= knots[n - 1]) return {n - 2, 1.0};
    const double* begin = knots.data();
    Eigen::Index k = std::upper_bound(begin, begin + n, t) - begin - 1;
    return {k, (t - knots[k]) / (knots[k + 1] - knots[k])};
}

}  // namespace

double ScoreModel::slope_at(double t) const {
    if (knots.size() == 1) return a[0];
    const auto [k, w] = knot_weight(knots, t);
    return (1.0 - w) * a[k] + w * a[k + 1];
}

Eigen::VectorXd ScoreModel::offset_at(double t) const {
    if (knots.size() == 1) return b.col(0);
    const auto [k, w] = knot_weight(knots, t);
    return (1.0 - w) * b.col(k) + w * b.col(k + 1);
}

Eigen::VectorXd ScoreModel::eval(const Eigen::VectorXd& x, double t) const {
    return slope_at(t) * x + offset_at(t);
}

ScoreModel ScoreModel::constant(int dim, double a0, double b0) {
    ScoreModel s;
    s.knots = Eigen::VectorXd::Zero(1);
    s.a = Eigen::VectorXd::Constant(1, a0);
    s.b = Eigen::MatrixXd::Constant(dim, 1, b0);
    return s;
}

ScoreModel ScoreModel::ou_true(const SdeSpec& spec, int n_knots) {
    ScoreModel s;
    s.knots = Eigen::VectorXd::LinSpaced(n_knots, 0.0, 1.0);
    s.a = Eigen::VectorXd(n_knots);
    s.b = Eigen::MatrixXd(spec.dim, n_knots);
    for (int k = 0; k < n_knots; ++k) {
        const Gaussian1 g = ou_marginal(spec, s.knots[k]);
        s.a[k] = -1.0 / g.var;
        s.b.col(k) = Eigen::VectorXd::Constant(spec.dim, g.mean / g.var);
    }
    return s;
}

Eigen::VectorXd em_backward_step(const SdeSpec& spec, const ScoreModel& score,
                                 const Eigen::VectorXd& x_next, double t, double h, Rng& rng) {
    const double tu = t + h;
    const double g = spec.diffusion(tu);
    return x_next +
           h * (g * g * score.eval(x_next, tu) - spec.drift(x_next, tu)) +
           std::sqrt(h) * g * rng.normal_vector(x_next.size());
}

double log_forward_kernel(const SdeSpec& spec, const Eigen::VectorXd& x_next,
                          const Eigen::VectorXd& x, double t, double h) {
    const Eigen::VectorXd mean = x + h * spec.drift(x, t);
    const double var = h * spec.diffusion(t) * spec.diffusion(t);
    double lp = 0.0;
    for (Eigen::Index d = 0; d < x.size(); ++d)
        lp += normal_log_pdf(x_next[d], mean[d], var);
    return lp;
}

double log_backward_kernel(const SdeSpec& spec, const ScoreModel& score,
                           const Eigen::VectorXd& x_prev, const Eigen::VectorXd& x_next,
                           double t, double h) {
    const double tu = t + h;
    const double g = spec.diffusion(tu);
    const Eigen::VectorXd mean =
        x_next + h * (g * g * score.eval(x_next, tu) - spec.drift(x_next, tu));
    const double var = h * g * g;
    double lp = 0.0;
    for (Eigen::Index d = 0; d < x_prev.size(); ++d)
        lp += normal_log_pdf(x_prev[d], mean[d], var);
    return lp;
}

GridDensity::GridDensity(Eigen::VectorXd xs_in, Eigen::VectorXd times_in,
                         Eigen::MatrixXd values_in)
    : xs(std::move(xs_in)), times(std::move(times_in)), values(std::move(values_in)) {
    if (xs.size() < 3) throw ValidationError("grid: need at least 3 spatial points");
    const double d = xs[1] - xs[0];
    for (Eigen::Index i = 1; i + 1 < xs.size(); ++i)
        if (std::abs((xs[i + 1] - xs[i]) - d) > 1e-9 * std::abs(d))
            throw ValidationError("grid: spatial grid is not uniform");
    if (values.rows() != xs.size() || values.cols() != times.size())
        throw ValidationError("grid: value table shape mismatch");
    if ((values.array() < 0.0).any()) throw ValidationError("grid: negative density value");
    for (Eigen::Index k = 0; k < times.size(); ++k) {
        const double mass = trapezoid(values.col(k), d);
        if (std::abs(mass - 1.0) > 1e-6)
            throw ValidationError("grid: knot " + std::to_string(k) +
                                  " carries trapezoid mass " + std::to_string(mass));
    }
}

int GridDensity::knot_index(double t) const {
    for (Eigen::Index k = 0; k < times.size(); ++k)
        if (std::abs(times[k] - t) < 1e-12) return static_cast<int>(k);
    throw ValidationError("grid: time " + std::to_string(t) + " is not a knot");
}

GridDensity GridDensity::ou_analytic(const SdeSpec& spec, int m, double extent,
                                     const Eigen::VectorXd& times) {
    const Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(m, -extent, extent);
    Eigen::MatrixXd values(m, times.size());
    for (Eigen::Index k = 0; k < times.size(); ++k) {
        const Gaussian1 g = ou_marginal(spec, times[k]);
        for (int i = 0; i < m; ++i) values(i, k) = normal_pdf(xs[i], g.mean, g.var);
    }
    return GridDensity(xs, times, values);
}

double chapman_kolmogorov_residual(const GridDensity& grid, const SdeSpec& spec, double t,
                                   double h) {
    const int k0 = grid.knot_index(t);
    const int k1 = grid.knot_index(t + h);
    const Eigen::Index m = grid.xs.size();
    const double var = h * spec.diffusion(t) * spec.diffusion(t);

    // One-step kernel means from every source point.
    Eigen::VectorXd mean(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        Eigen::VectorXd xj(1);
        xj[0] = grid.xs[j];
        mean[j] = grid.xs[j] + h * spec.drift(xj, t)[0];
    }

    double residual = 0.0;
    Eigen::VectorXd integrand(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j)
            integrand[j] = grid.values(j, k0) *
                           (var > 0.0 ? normal_pdf(grid.xs[i], mean[j], var)
                                      : (i == j ? 1.0 / grid.dx() : 0.0));
        const double propagated = var > 0.0 ? trapezoid(integrand, grid.dx())
                                            : grid.values(i, k0);
        residual = std::max(residual, std::abs(propagated - grid.values(i, k1)));
    }
    return residual;
}

double fokker_planck_residual(const GridDensity& grid, const SdeSpec& spec, double t) {
    const int k = grid.knot_index(t);
    if (k == 0 || k + 1 >= grid.times.size())
        throw ValidationError("fokker_planck_residual: t must be an interior knot");
    const double dt_lo = grid.times[k] - grid.times[k - 1];
    const double dt_hi = grid.times[k + 1] - grid.times[k];
    if (std::abs(dt_hi - dt_lo) > 1e-9 * dt_lo)
        throw ValidationError("fokker_planck_residual: non-uniform time knots around t");

    const Eigen::Index m = grid.xs.size();
    const double dx = grid.dx();
    const double g2 = spec.diffusion(t) * spec.diffusion(t);

    Eigen::VectorXd flux(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::VectorXd xi(1);
        xi[0] = grid.xs[i];
        flux[i] = grid.values(i, k) * spec.drift(xi, t)[0];
    }

    double residual = 0.0;
    for (Eigen::Index i = 1; i + 1 < m; ++i) {
        const double dt_p = (grid.values(i, k + 1) - grid.values(i, k - 1)) / (dt_lo + dt_hi);
        const double dx_flux = (flux[i + 1] - flux[i - 1]) / (2.0 * dx);
        const double dxx_pg2 = g2 *
                               (grid.values(i + 1, k) - 2.0 * grid.values(i, k) +
                                grid.values(i - 1, k)) /
                               (dx * dx);
        residual = std::max(residual, std::abs(dt_p + dx_flux - 0.5 * dxx_pg2));
    }
    return residual;
}

DbLimit db_limit_residual(const SdeSpec& spec, const ScoreModel& score,
                          const Eigen::VectorXd& x_t, double t, const Eigen::VectorXd& eps,
                          double h) {
    const double g = spec.diffusion(t);
    const Eigen::VectorXd x_next = x_t + h * spec.drift(x_t, t) + std::sqrt(h) * g * eps;

    const Gaussian1 p_lo = ou_marginal(spec, t);
    const Gaussian1 p_hi = ou_marginal(spec, t + h);
    double log_p_lo = 0.0, log_p_hi = 0.0;
    for (Eigen::Index d = 0; d < x_t.size(); ++d) {
        log_p_lo += normal_log_pdf(x_t[d], p_lo.mean, p_lo.var);
        log_p_hi += normal_log_pdf(x_next[d], p_hi.mean, p_hi.var);
    }

    DbLimit out;
    out.residual = (log_p_lo + log_forward_kernel(spec, x_next, x_t, t, h) - log_p_hi -
                    log_backward_kernel(spec, score, x_t, x_next, t, h)) /
                   (std::sqrt(h) * g);
    out.predicted = eps.dot(score.eval(x_t, t) - ou_score(spec, x_t, t));
    return out;
}

SsmLoss ssm_loss(const ScoreModel& score, const Eigen::MatrixXd& xs, const Eigen::VectorXd& ts,
                 const Eigen::MatrixXd& eps) {
    const Eigen::Index n = xs.cols();
    const Eigen::Index dim = xs.rows();
    const Eigen::Index nk = score.knots.size();
    if (eps.cols() != n || ts.size() != n)
        throw ValidationError("ssm_loss: sample/slice shape mismatch");

    SsmLoss out;
    out.value = 0.0;
    out.grad = Eigen::VectorXd::Zero(nk + dim * nk);
    auto b_index = [&](Eigen::Index d, Eigen::Index k) { return nk + k * dim + d; };

    for (Eigen::Index i = 0; i < n; ++i) {
        const double t = ts[i];
        const auto [k0, w] = nk > 1 ? knot_weight(score.knots, t)
                                    : std::pair<Eigen::Index, double>{0, 0.0};
        const double a_t = score.slope_at(t);
        const Eigen::VectorXd s = a_t * xs.col(i) + score.offset_at(t);
        const double ee = eps.col(i).squaredNorm();
        const double es = eps.col(i).dot(s);
        const double ex = eps.col(i).dot(xs.col(i));
        out.value += a_t * ee + 0.5 * es * es;

        const double da = ee + es * ex;
        out.grad[k0] += (1.0 - w) * da;
        for (Eigen::Index d = 0; d < dim; ++d)
            out.grad[b_index(d, k0)] += (1.0 - w) * es * eps(d, i);
        if (nk > 1) {
            out.grad[k0 + 1] += w * da;
            for (Eigen::Index d = 0; d < dim; ++d)
                out.grad[b_index(d, k0 + 1)] += w * es * eps(d, i);
        }
    }
    out.value /= static_cast<double>(n);
    out.grad /= static_cast<double>(n);
    return out;
}

ScoreModel fit_score_ssm(const SdeSpec& spec, int n_knots, int n_samples_per_knot, int steps,
                         double lr, std::uint64_t seed) {
    if (spec.kind != SdeSpec::Kind::Ou)
        throw WrongSpec("fit_score_ssm: sampling the marginals needs the OU spec");
    const int dim = spec.dim;
    ScoreModel model;
    model.knots = Eigen::VectorXd::LinSpaced(n_knots, 0.0, 1.0);
    model.a = Eigen::VectorXd::Zero(n_knots);
    model.b = Eigen::MatrixXd::Zero(dim, n_knots);

    // Samples sit exactly at the knots, so the objective is quadratic per
    // knot; its sufficient statistics make each optimization step O(1).
    Eigen::VectorXd s_ee(n_knots), s_uu(n_knots);
    Eigen::MatrixXd s_ue(dim, n_knots);
    std::vector<Eigen::MatrixXd> s_eps_outer(n_knots);
    for (int k = 0; k < n_knots; ++k) {
        Rng rng(derive_seed(seed, k));
        const Gaussian1 marg = ou_marginal(spec, model.knots[k]);
        double ee = 0.0, uu = 0.0;
        Eigen::VectorXd ue = Eigen::VectorXd::Zero(dim);
        Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(dim, dim);
        for (int i = 0; i < n_samples_per_knot; ++i) {
            const Eigen::VectorXd x =
                (marg.mean + std::sqrt(marg.var) * rng.normal_vector(dim).array()).matrix();
            const Eigen::VectorXd e = rng.normal_vector(dim);
            const double u = e.dot(x);
            ee += e.squaredNorm();
            uu += u * u;
            ue += u * e;
            outer += e * e.transpose();
        }
        const double n = n_samples_per_knot;
        s_ee[k] = ee / n;
        s_uu[k] = uu / n;
        s_ue.col(k) = ue / n;
        s_eps_outer[k] = outer / n;
    }

    // Adam on [a | b], gradient of mean_k [ a_k s_ee + 1/2 E(a_k u + eps.b_k)^2 ].
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(n_knots + dim * n_knots);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());
    for (int step = 1; step <= steps; ++step) {
        Eigen::VectorXd grad(theta.size());
        for (int k = 0; k < n_knots; ++k) {
            const double a = theta[k];
            const Eigen::VectorXd b = theta.segment(n_knots + k * dim, dim);
            grad[k] = (s_ee[k] + a * s_uu[k] + b.dot(s_ue.col(k))) / n_knots;
            grad.segment(n_knots + k * dim, dim) =
                (a * s_ue.col(k) + s_eps_outer[k] * b) / n_knots;
        }
        m = 0.9 * m + 0.1 * grad;
        v = 0.999 * v + 0.001 * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(0.9, step);
        const double bc2 = 1.0 - std::pow(0.999, step);
        theta -= lr * (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + 1e-8).matrix());
    }
    model.a = theta.head(n_knots);
    for (int k = 0; k < n_knots; ++k) model.b.col(k) = theta.segment(n_knots + k * dim, dim);
    return model;
}

ReverseSamples reverse_sampler(const SdeSpec& spec, const ScoreModel& score, int n_paths,
                               std::uint64_t seed, const std::vector<double>& record_times) {
    const int n = spec.n_steps;
    const double h = spec.step();

    std::vector<int> record_knots;
    ReverseSamples out;
    for (double t : record_times) {
        const int k = static_cast<int>(std::lround(t * n));
        if (k < 0 || k > n) throw ValidationError("reverse_sampler: record time outside [0,1]");
        record_knots.push_back(k);
        out.times.push_back(static_cast<double>(k) * h);
        out.samples.emplace_back(spec.dim, n_paths);
    }

    for (int p = 0; p < n_paths; ++p) {
        Rng rng(derive_seed(seed, p));
        Eigen::VectorXd x(spec.dim);
        if (spec.kind == SdeSpec::Kind::Ou) {
            const Gaussian1 marg = ou_marginal(spec, 1.0);
            x = (marg.mean + std::sqrt(marg.var) * rng.normal_vector(spec.dim).array()).matrix();
        } else {
            for (int d = 0; d < spec.dim; ++d)
                x[d] = spec.init_mean[d] + std::sqrt(spec.init_var[d]) * rng.normal();
            for (int k = 0; k < n; ++k)
                x = em_forward_step(spec, x, k * h, h, rng);
        }
        for (std::size_t r = 0; r < record_knots.size(); ++r)
            if (record_knots[r] == n) out.samples[r].col(p) = x;
        for (int k = n; k >= 1; --k) {
            x = em_backward_step(spec, score, x, (k - 1) * h, h, rng);
            for (std::size_t r = 0; r < record_knots.size(); ++r)
                if (record_knots[r] == k - 1) out.samples[r].col(p) = x;
        }
    }
    return out;
}

}  // namespace gfu::sde
