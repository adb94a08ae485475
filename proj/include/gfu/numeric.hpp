#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace gfu {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() == 0) return kNegInf;
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

inline Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
    return v.array() - log_sum_exp(v);
}

inline Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
    Eigen::ArrayXd e = (v.array() - v.maxCoeff()).exp();
    return e / e.sum();
}

// Total variation distance between two probability vectors of equal length.
inline double tv_distance(const Eigen::Ref<const Eigen::VectorXd>& p,
                          const Eigen::Ref<const Eigen::VectorXd>& q) {
    return 0.5 * (p - q).cwiseAbs().sum();
}

inline double entropy(const Eigen::Ref<const Eigen::VectorXd>& p) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    return h;
}

// Trapezoid rule on a uniform grid.
inline double trapezoid(const Eigen::Ref<const Eigen::VectorXd>& values, double dx) {
    if (values.size() < 2) return 0.0;
    return dx * (values.sum() - 0.5 * (values[0] + values[values.size() - 1]));
}

inline double normal_log_pdf(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * d * d / var;
}

inline double normal_pdf(double x, double mean, double var) {
    return std::exp(normal_log_pdf(x, mean, var));
}

inline double normal_cdf(double x, double mean, double var) {
    return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * var));
}

// Two-sided Kolmogorov-Smirnov statistic of a sample against N(mean, var).
inline double ks_statistic_gaussian(std::vector<double> samples, double mean, double var) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double ks = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double c = normal_cdf(samples[i], mean, var);
        ks = std::max(ks, std::abs((static_cast<double>(i) + 1.0) / n - c));
        ks = std::max(ks, std::abs(static_cast<double>(i) / n - c));
    }
    return ks;
}

}  // namespace gfu
