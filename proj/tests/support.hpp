#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <vector>

#include "uqadv/inference.hpp"

namespace uqadv::testing {

/// Bayesian linear regression y = X w + N(0, sn^2) with prior w ~ N(0, I): the posterior is
/// Gaussian with precision A = I + X^T X / sn^2 and mean A^-1 X^T y / sn^2.
struct ConjugateProblem {
    RowMatrix x;
    Eigen::VectorXd y;
    double noise = 0.14;
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;

    explicit ConjugateProblem(int n = 200) {
        Rng rng(42);
        x.resize(n, 2);
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd z = standard_normal(2, rng);
            x(i, 0) = z[0];
            x(i, 1) = 0.6 * z[0] + 0.8 * z[1];
        }
        Rng noise_rng(7);
        const Eigen::Vector2d w(0.8, -0.5);
        y = x * w + noise * standard_normal(n, noise_rng);
        const double s2 = noise * noise;
        const Eigen::Matrix2d a = Eigen::Matrix2d::Identity() + x.transpose() * x / s2;
        cov = a.inverse();
        mean = a.ldlt().solve(x.transpose() * y / s2);
    }

    PotentialFn potential() const {
        return [this](const Eigen::VectorXd& q, Eigen::VectorXd& g) {
            const Eigen::VectorXd r = x * q - y;
            const double s2 = noise * noise;
            g = x.transpose() * r / s2 + q;
            return 0.5 * r.squaredNorm() / s2 + 0.5 * q.squaredNorm();
        };
    }
};

/// Effective sample size via Geyer's initial monotone sequence.
inline double effective_sample_size(const std::vector<double>& s) {
    const auto n = static_cast<Index>(s.size());
    double m = 0.0;
    for (double v : s) m += v;
    m /= static_cast<double>(n);
    auto acov = [&](Index lag) {
        double c = 0.0;
        for (Index t = 0; t + lag < n; ++t)
            c += (s[static_cast<std::size_t>(t)] - m) * (s[static_cast<std::size_t>(t + lag)] - m);
        return c / static_cast<double>(n);
    };
    const double c0 = acov(0);
    if (!(c0 > 0.0)) return static_cast<double>(n);
    double sum = 0.0, prev = std::numeric_limits<double>::infinity();
    for (Index k = 0; 2 * k + 1 < n; ++k) {
        double pair = (acov(2 * k) + acov(2 * k + 1)) / c0;
        if (pair <= 0.0) break;
        pair = std::min(pair, prev);
        prev = pair;
        sum += pair;
    }
    const double tau = std::max(2.0 * sum - 1.0, 1e-3);
    return static_cast<double>(n) / tau;
}

/// Monte Carlo standard error of the mean of a correlated series.
inline double mc_standard_error(const std::vector<double>& s) {
    const auto n = static_cast<double>(s.size());
    double m = 0.0, v = 0.0;
    for (double x : s) m += x;
    m /= n;
    for (double x : s) v += (x - m) * (x - m);
    v /= n - 1.0;
    return std::sqrt(v / effective_sample_size(s));
}

struct MomentCheck {
    double worst_z = 0.0;  // max |estimate - truth| / standard error over means and covariance entries
};

/// Compares chain moments with the closed form, in units of MC standard error.
inline MomentCheck check_moments(const std::vector<Eigen::VectorXd>& samples, const Eigen::VectorXd& mean,
                                 const Eigen::MatrixXd& cov) {
    MomentCheck out;
    const Index d = mean.size();
    for (Index i = 0; i < d; ++i) {
        std::vector<double> s;
        for (const auto& q : samples) s.push_back(q[i]);
        double m = 0.0;
        for (double v : s) m += v;
        m /= static_cast<double>(s.size());
        out.worst_z = std::max(out.worst_z, std::abs(m - mean[i]) / mc_standard_error(s));
    }
    for (Index i = 0; i < d; ++i)
        for (Index j = i; j < d; ++j) {
            // Centred at the true mean so the product series is unbiased for cov(i, j).
            std::vector<double> s;
            for (const auto& q : samples) s.push_back((q[i] - mean[i]) * (q[j] - mean[j]));
            double m = 0.0;
            for (double v : s) m += v;
            m /= static_cast<double>(s.size());
            out.worst_z = std::max(out.worst_z, std::abs(m - cov(i, j)) / mc_standard_error(s));
        }
    return out;
}

}  // namespace uqadv::testing
