#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gfu/numeric.hpp"
#include "gfu/sde.hpp"

using namespace gfu;
using namespace gfu::sde;

namespace {

SdeSpec brownian() {
    SdeSpec spec;
    spec.dim = 1;
    spec.drift = [](const Eigen::VectorXd& x, double) {
        return Eigen::VectorXd::Zero(x.size()).eval();
    };
    spec.diffusion = [](double) { return 1.0; };
    spec.init_mean = Eigen::VectorXd::Zero(1);
    spec.init_var = Eigen::VectorXd::Ones(1);
    return spec;
}

struct Moments {
    double mean, var;
};

template <typename Step>
Moments mc_moments(int n, Step&& step) {
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = step(i);
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    return {mean, sum2 / n - mean * mean};
}

}  // namespace

TEST_CASE("forward kernel: Brownian increment moments") {
    SdeSpec spec = brownian();
    const double h = 0.01;
    const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 0.7);
    Rng rng(0);
    const int n = 100000;
    const Moments m = mc_moments(n, [&](int) { return em_forward_step(spec, x0, 0.3, h, rng)[0]; });
    CHECK(std::abs(m.mean - 0.7) < 3.0 * std::sqrt(h / n));
    CHECK(std::abs(m.var - h) < 3.0 * h * std::sqrt(2.0 / n));
}

TEST_CASE("forward kernel: OU plug-in mean and variance") {
    const SdeSpec spec = SdeSpec::ou(1, 0.0, 1.0);
    const double h = 0.01;
    const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 1.0);
    Rng rng(1);
    const int n = 100000;
    const Moments m = mc_moments(n, [&](int) { return em_forward_step(spec, x0, 0.2, h, rng)[0]; });
    CHECK(std::abs(m.mean - 0.99) < 3.0 * std::sqrt(0.02 / n));
    CHECK(std::abs(m.var - 0.02) < 3.0 * 0.02 * std::sqrt(2.0 / n));
}

TEST_CASE("backward kernel: OU with s(x) = -x contracts as x(1-h)") {
    const SdeSpec spec = SdeSpec::ou(1, 0.0, 1.0);
    const ScoreModel score = ScoreModel::constant(1, -1.0, 0.0);
    const double h = 0.01;
    const Eigen::VectorXd x1 = Eigen::VectorXd::Constant(1, 1.0);
    // mean = x + [g^2 s - f] h = x - x h; var = h g^2 = 0.02.
    Rng rng(2);
    const int n = 100000;
    const Moments m =
        mc_moments(n, [&](int) { return em_backward_step(spec, score, x1, 0.2, h, rng)[0]; });
    CHECK(std::abs(m.mean - 0.99) < 3.0 * std::sqrt(0.02 / n));
    CHECK(std::abs(m.var - 0.02) < 3.0 * 0.02 * std::sqrt(2.0 / n));
}

TEST_CASE("kernel log-densities integrate the step they describe") {
    const SdeSpec spec = SdeSpec::ou(1, 0.0, 1.0);
    const double h = 1e-3;
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.4);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 0.35);
    const double lf = log_forward_kernel(spec, y, x, 0.5, h);
    CHECK(lf == doctest::Approx(normal_log_pdf(0.35, 0.4 * (1.0 - h), 2.0 * h)).epsilon(1e-12));
    const ScoreModel score = ScoreModel::constant(1, -1.0, 0.0);
    const double lb = log_backward_kernel(spec, score, x, y, 0.5, h);
    CHECK(lb ==
          doctest::Approx(normal_log_pdf(0.4, 0.35 * (1.0 - h), 2.0 * h)).epsilon(1e-12));
}

TEST_CASE("ou_marginal: stationary and relaxing cases") {
    const SdeSpec stationary = SdeSpec::ou(1, 0.0, 1.0);
    for (double t : {0.0, 0.3, 0.9}) {
        CHECK(ou_marginal(stationary, t).mean == doctest::Approx(0.0));
        CHECK(ou_marginal(stationary, t).var == doctest::Approx(1.0));
    }
    const SdeSpec relaxing = SdeSpec::ou(1, 1.0, 0.0);
    const Gaussian1 late = ou_marginal(relaxing, 20.0);
    CHECK(std::abs(late.mean) < 1e-8);
    CHECK(std::abs(late.var - 1.0) < 1e-8);
    CHECK_THROWS_AS(ou_marginal(brownian(), 0.5), WrongSpec);
}

TEST_CASE("ou_marginal against a 1e6-path Euler-Maruyama simulation") {
    const SdeSpec spec = SdeSpec::ou(1, 1.0, 0.5);
    const double t = 0.5;
    const int steps = 125;
    const double h = t / steps;
    const int n = 1000000;
    double sum = 0.0, sum2 = 0.0;
    for (int p = 0; p < n; ++p) {
        Rng rng(derive_seed(42, p));
        Eigen::VectorXd x(1);
        x[0] = 1.0 + std::sqrt(0.5) * rng.normal();
        for (int k = 0; k < steps; ++k) x = em_forward_step(spec, x, k * h, h, rng);
        sum += x[0];
        sum2 += x[0] * x[0];
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    const Gaussian1 marg = ou_marginal(spec, t);
    const double se_mean = std::sqrt(marg.var / n);
    const double se_var = marg.var * std::sqrt(2.0 / n);
    // 3 sigma of Monte Carlo error plus the O(h) integrator bias.
    CHECK(std::abs(mean - marg.mean) < 3.0 * se_mean + 0.5 * h);
    CHECK(std::abs(var - marg.var) < 3.0 * se_var + 0.5 * h);
}

TEST_CASE("grid density validates mass and positivity") {
    const SdeSpec spec = SdeSpec::ou(1, 0.0, 1.0);
    const Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(3, 0.4, 0.6);
    CHECK_NOTHROW(GridDensity::ou_analytic(spec, 801, 6.0, times));
    // Too narrow an extent loses tail mass.
    CHECK_THROWS_AS(GridDensity::ou_analytic(spec, 801, 2.0, times), ValidationError);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Constant(11, 1, -0.1);
    CHECK_THROWS_AS(GridDensity(Eigen::VectorXd::LinSpaced(11, -1, 1),
                                Eigen::VectorXd::Zero(1), bad),
                    ValidationError);
}

TEST_CASE("chapman-kolmogorov residual: small and shrinking on the stationary OU") {
    const SdeSpec spec = SdeSpec::ou(1, 0.0, 1.0);
    const double t = 0.5;
    Eigen::VectorXd times(4);
    times << t, t + 1e-2, t + 1e-3, t + 1e-4;
    const GridDensity grid = GridDensity::ou_analytic(spec, 801, 6.0, times);
    const double r2 = chapman_kolmogorov_residual(grid, spec, t, 1e-2);
    const double r3 = chapman_kolmogorov_residual(grid, spec, t, 1e-3);
    const double r4 = chapman_kolmogorov_residual(grid, spec, t, 1e-4);
    CHECK(r3 < 5e-3);
    CHECK(r2 > r3);
    CHECK(r3 > r4);
}

TEST_CASE("degenerate zero-drift zero-diffusion kernel is the identity") {
    SdeSpec spec = brownian();
    spec.diffusion = [](double) { return 0.0; };
    Eigen::VectorXd times(2);
    times << 0.5, 0.5 + 1e-3;
    Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(801, -6.0, 6.0);
    Eigen::MatrixXd values(801, 2);
    for (int i = 0; i < 801; ++i)
        values(i, 0) = values(i, 1) = normal_pdf(xs[i], 0.0, 1.0);
    const GridDensity grid(xs, times, values);
    CHECK(chapman_kolmogorov_residual(grid, spec, 0.5, 1e-3) == 0.0);
}

TEST_CASE("chapman-kolmogorov residual detects a stale marginal") {
    // For the relaxing OU, pretending p(., t+h) = p(., t) violates the
    // propagation identity by an amount linear in h.
    const SdeSpec spec = SdeSpec::ou(1, 1.0, 0.5);
    const double t = 0.3;
    const Gaussian1 marg = ou_marginal(spec, t);
    const Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(801, -6.0, 6.0);
    Eigen::MatrixXd values(801, 2);
    for (int i = 0; i < 801; ++i)
        values(i, 0) = values(i, 1) = normal_pdf(xs[i], marg.mean, marg.var);
    std::vector<double> stale;
    for (double h : {1e-2, 1e-3}) {
        Eigen::VectorXd times(2);
        times << t, t + h;
        const GridDensity grid(xs, times, values);
        stale.push_back(chapman_kolmogorov_residual(grid, spec, t, h));
    }
    CHECK(stale[0] > 1e-3);                 // far above the honest residual
    CHECK(stale[0] / stale[1] > 5.0);       // scales roughly linearly in h
    CHECK(stale[0] / stale[1] < 20.0);
}

TEST_CASE("fokker-planck residual on analytic OU marginals") {
    const SdeSpec spec = SdeSpec::ou(1, 1.0, 0.5);
    const double t = 0.5, dt = 1e-3;
    auto residual_at = [&](int m, double step) {
        Eigen::Vector3d times(t - step, t, t + step);
        return fokker_planck_residual(GridDensity::ou_analytic(spec, m, 6.0, times), spec, t);
    };
    const double coarse = residual_at(801, dt);
    CHECK(coarse < 1e-3);
    // Second-order stencils: halving both spacings divides the residual by ~4.
    const double fine = residual_at(1601, dt / 2.0);
    CHECK(coarse / fine > 3.0);
    CHECK(coarse / fine < 5.0);
}

TEST_CASE("fokker-planck residual vanishes on the stationary density") {
    // The time derivative is exactly zero here, so what remains is the
    // spatial stencil truncation, O(dx^2): ~2e-5 at M=801 and below 1e-6
    // once the grid is refined to M=4001.
    const SdeSpec spec = SdeSpec::ou(1, 0.0, 1.0);
    Eigen::Vector3d times(0.499, 0.5, 0.501);
    const GridDensity coarse = GridDensity::ou_analytic(spec, 801, 6.0, times);
    CHECK(fokker_planck_residual(coarse, spec, 0.5) < 1e-4);
    const GridDensity fine = GridDensity::ou_analytic(spec, 4001, 6.0, times);
    CHECK(fokker_planck_residual(fine, spec, 0.5) < 1e-6);
}

TEST_CASE("db limit: true score drives the residual to zero with h") {
    const SdeSpec spec = SdeSpec::ou(1, 1.0, 0.5);
    const ScoreModel truth = ScoreModel::ou_true(spec, 101);
    double prev = std::numeric_limits<double>::infinity();
    for (double h : {1e-2, 1e-3, 1e-4}) {
        double mean_abs = 0.0;
        for (int i = 0; i < 100; ++i) {
            Rng rng(derive_seed(7, i));
            const double t = 0.1 + 0.8 * rng.uniform();
            const Gaussian1 marg = ou_marginal(spec, t);
            Eigen::VectorXd x(1), eps(1);
            x[0] = marg.mean + std::sqrt(marg.var) * rng.normal();
            eps[0] = rng.normal();
            mean_abs += std::abs(db_limit_residual(spec, truth, x, t, eps, h).residual);
        }
        mean_abs /= 100.0;
        CHECK(mean_abs < prev);
        prev = mean_abs;
        if (h == 1e-4) CHECK(mean_abs < 5e-2);
    }
}

TEST_CASE("db limit: constant score offset surfaces as the limit value") {
    const SdeSpec spec = SdeSpec::ou(1, 1.0, 0.5);
    ScoreModel off = ScoreModel::ou_true(spec, 101);
    const double c = 0.7;
    off.b.array() += c;
    Eigen::VectorXd x(1), eps(1);
    x[0] = 0.6;
    eps[0] = 1.0;
    const DbLimit r = db_limit_residual(spec, off, x, 0.4, eps, 1e-4);
    CHECK(r.predicted == doctest::Approx(c).epsilon(1e-6));
    CHECK(std::abs(r.residual - c) < 0.05);
}

TEST_CASE("db limit: zero slice kills the residual regardless of the score") {
    const SdeSpec spec = SdeSpec::ou(2, 1.0, 0.5);
    ScoreModel wrong = ScoreModel::ou_true(spec, 51);
    wrong.a.array() += 0.8;
    wrong.b.array() -= 0.3;
    const Eigen::VectorXd eps = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd x(2);
    x << 0.2, -0.5;
    const DbLimit r = db_limit_residual(spec, wrong, x, 0.35, eps, 1e-4);
    CHECK(r.predicted == 0.0);
    CHECK(std::abs(r.residual) < 0.05);
}

TEST_CASE("db limit gap shrinks like sqrt(h) in two dimensions") {
    const SdeSpec spec = SdeSpec::ou(2, 1.0, 0.5);
    ScoreModel wrong = ScoreModel::ou_true(spec, 101);
    wrong.a.array() += -0.3;
    wrong.b.array() += 0.4;
    double gap_hi = 0.0, gap_lo = 0.0;
    for (int i = 0; i < 100; ++i) {
        Rng rng(derive_seed(9, i));
        const double t = 0.1 + 0.8 * rng.uniform();
        const Gaussian1 marg = ou_marginal(spec, t);
        const Eigen::VectorXd x =
            (marg.mean + std::sqrt(marg.var) * rng.normal_vector(2).array()).matrix();
        const Eigen::VectorXd eps = rng.normal_vector(2);
        const DbLimit hi = db_limit_residual(spec, wrong, x, t, eps, 1e-2);
        const DbLimit lo = db_limit_residual(spec, wrong, x, t, eps, 1e-4);
        gap_hi += std::abs(hi.residual - hi.predicted);
        gap_lo += std::abs(lo.residual - lo.predicted);
    }
    CHECK(gap_lo < gap_hi / 3.0);
}

TEST_CASE("ssm loss vanishes for the zero score") {
    const ScoreModel zero = ScoreModel::constant(1, 0.0, 0.0);
    Rng rng(3);
    Eigen::MatrixXd xs(1, 100), eps(1, 100);
    for (int i = 0; i < 100; ++i) {
        xs(0, i) = rng.normal();
        eps(0, i) = rng.normal();
    }
    const SsmLoss loss = ssm_loss(zero, xs, Eigen::VectorXd::Zero(100), eps);
    CHECK(loss.value == 0.0);
}

TEST_CASE("ssm loss gradient matches finite differences") {
    const SdeSpec spec = SdeSpec::ou(2, 0.5, 0.8);
    ScoreModel model;
    model.knots = Eigen::VectorXd::LinSpaced(3, 0.0, 1.0);
    Rng rng(4);
    model.a = rng.normal_vector(3);
    model.b = Eigen::MatrixXd::Random(2, 3);
    const int n = 50;
    Eigen::MatrixXd xs(2, n), eps(2, n);
    Eigen::VectorXd ts(n);
    for (int i = 0; i < n; ++i) {
        xs.col(i) = rng.normal_vector(2);
        eps.col(i) = rng.normal_vector(2);
        ts[i] = rng.uniform();
    }
    const SsmLoss loss = ssm_loss(model, xs, ts, eps);
    const double step = 1e-6;
    auto eval = [&](const ScoreModel& m) { return ssm_loss(m, xs, ts, eps).value; };
    for (int k = 0; k < 3; ++k) {
        ScoreModel m = model;
        m.a[k] += step;
        const double hi = eval(m);
        m.a[k] -= 2.0 * step;
        const double lo = eval(m);
        CHECK(std::abs((hi - lo) / (2.0 * step) - loss.grad[k]) < 1e-5);
        for (int d = 0; d < 2; ++d) {
            ScoreModel mb = model;
            mb.b(d, k) += step;
            const double bhi = eval(mb);
            mb.b(d, k) -= 2.0 * step;
            const double blo = eval(mb);
            CHECK(std::abs((bhi - blo) / (2.0 * step) - loss.grad[3 + k * 2 + d]) < 1e-5);
        }
    }
}

TEST_CASE("ssm fit on the stationary OU recovers the score") {
    const SdeSpec spec = SdeSpec::ou(1, 0.0, 1.0);
    const ScoreModel fit = fit_score_ssm(spec, 5, 100000, 2000, 0.05, 0);
    CHECK((fit.a.array() + 1.0).abs().maxCoeff() < 0.05);
    CHECK(fit.b.cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("ssm population loss is minimized near the true score") {
    const SdeSpec spec = SdeSpec::ou(1, 0.0, 1.0);
    Rng rng(12);
    const int n = 1000000;
    Eigen::MatrixXd xs(1, n), eps(1, n);
    for (int i = 0; i < n; ++i) {
        xs(0, i) = rng.normal();
        eps(0, i) = rng.normal();
    }
    const Eigen::VectorXd ts = Eigen::VectorXd::Zero(n);
    const double at_truth = ssm_loss(ScoreModel::constant(1, -1.0, 0.0), xs, ts, eps).value;
    for (double da : {-0.5, -0.25, 0.0, 0.25, 0.5})
        for (double db : {-0.5, -0.25, 0.0, 0.25, 0.5}) {
            if (da == 0.0 && db == 0.0) continue;
            const double perturbed =
                ssm_loss(ScoreModel::constant(1, -1.0 + da, db), xs, ts, eps).value;
            CHECK(at_truth <= perturbed);
        }
}

TEST_CASE("reverse sampler: zero diffusion reduces to ODE reversal") {
    SdeSpec spec;
    spec.dim = 1;
    spec.kind = SdeSpec::Kind::Custom;
    spec.drift = [](const Eigen::VectorXd& x, double) { return (-x).eval(); };
    spec.diffusion = [](double) { return 0.0; };
    spec.n_steps = 1000;
    spec.init_mean = Eigen::VectorXd::Constant(1, 2.0);
    spec.init_var = Eigen::VectorXd::Zero(1);
    const ScoreModel score = ScoreModel::constant(1, -1.0, 0.0);  // inert: g = 0
    const ReverseSamples out = reverse_sampler(spec, score, 4, 0, {0.0});
    for (int p = 0; p < 4; ++p)
        CHECK(std::abs(out.samples[0](0, p) - 2.0) < 5e-3);  // (1-h^2)^n integrator error
}

TEST_CASE("reverse sampler with the analytic score matches the forward marginals") {
    const SdeSpec spec = SdeSpec::ou(1, 1.0, 0.5, 500);
    const ScoreModel truth = ScoreModel::ou_true(spec, 201);
    const int n = 20000;
    const ReverseSamples out = reverse_sampler(spec, truth, n, 0, {0.0, 0.5});
    for (std::size_t r = 0; r < out.times.size(); ++r) {
        const Gaussian1 marg = ou_marginal(spec, out.times[r]);
        const Eigen::VectorXd xs = out.samples[r].row(0);
        const double mean = xs.mean();
        const double var = (xs.array() - mean).square().sum() / (n - 1);
        CHECK(std::abs(mean - marg.mean) < 3.0 * std::sqrt(marg.var / n) + 0.02);
        CHECK(std::abs(var - marg.var) < 3.0 * marg.var * std::sqrt(2.0 / n) + 0.02);
    }
    // Per-path substreams make the run reproducible.
    const ReverseSamples again = reverse_sampler(spec, truth, 8, 0, {0.0});
    for (int p = 0; p < 8; ++p) CHECK(again.samples[0](0, p) == out.samples[0](0, p));
}

TEST_CASE("ks statistic is small for a true Gaussian sample, large for a shifted one") {
    Rng rng(5);
    std::vector<double> sample(20000);
    for (double& v : sample) v = 0.3 + 1.4 * rng.normal();
    CHECK(ks_statistic_gaussian(sample, 0.3, 1.96) < 0.012);
    CHECK(ks_statistic_gaussian(sample, 0.0, 1.96) > 0.05);
}
