#include "abvr/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace abvr::stats {

void MomentAccumulator::add(double value) {
    if (!std::isfinite(value)) {
        throw std::invalid_argument("non-finite value");
    }
    ++n_;
    const double delta = value - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (value - mean_);
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
    if (other.n_ == 0) {
        return;
    }
    if (n_ == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double delta = other.mean_ - mean_;
    const double n_total = na + nb;
    mean_ += delta * nb / n_total;
    m2_ += other.m2_ + delta * delta * na * nb / n_total;
    n_ += other.n_;
}

double MomentAccumulator::mean() const {
    if (n_ == 0) {
        throw std::invalid_argument("empty sample");
    }
    return mean_;
}

double MomentAccumulator::variance() const {
    if (n_ < 2) {
        throw std::invalid_argument(n_ == 0 ? "empty sample" : "variance undefined for n = 1");
    }
    return m2_ / static_cast<double>(n_ - 1);
}

SampleStats MomentAccumulator::stats() const {
    return SampleStats{n_, mean(), variance()};
}

void CovarianceAccumulator::add(double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) {
        throw std::invalid_argument("non-finite value");
    }
    ++n_;
    const double n = static_cast<double>(n_);
    const double dx = x - mean_x_;
    mean_x_ += dx / n;
    mean_y_ += (y - mean_y_) / n;
    c2_ += dx * (y - mean_y_);
}

void CovarianceAccumulator::merge(const CovarianceAccumulator& other) {
    if (other.n_ == 0) {
        return;
    }
    if (n_ == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double n_total = na + nb;
    const double dx = other.mean_x_ - mean_x_;
    const double dy = other.mean_y_ - mean_y_;
    c2_ += other.c2_ + dx * dy * na * nb / n_total;
    mean_x_ += dx * nb / n_total;
    mean_y_ += dy * nb / n_total;
    n_ += other.n_;
}

double CovarianceAccumulator::covariance() const {
    if (n_ < 2) {
        throw std::invalid_argument("covariance undefined for n < 2");
    }
    return c2_ / static_cast<double>(n_ - 1);
}

SampleStats summarize(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("empty sample");
    }
    MomentAccumulator acc;
    for (double v : values) {
        acc.add(v);
    }
    return acc.stats();
}

SampleStats summarize(const Eigen::Ref<const Eigen::VectorXd>& values) {
    return summarize(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

double covariance(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("length mismatch");
    }
    CovarianceAccumulator acc;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc.add(x[i], y[i]);
    }
    return acc.covariance();
}

double covariance(const Eigen::Ref<const Eigen::VectorXd>& x,
                  const Eigen::Ref<const Eigen::VectorXd>& y) {
    return covariance(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                      std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

double std_normal_cdf(double z) {
    if (!std::isfinite(z)) {
        throw std::invalid_argument("non-finite z");
    }
    if (z < -38.0) {
        return 0.0;
    }
    if (z > 38.0) {
        return 1.0;
    }
    // Phi(z) = erfc(-z / sqrt(2)) / 2; erfc carries the rational-approximation
    // accuracy we need in the tails.
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

double z_statistic(const SampleStats& stats_a, const SampleStats& stats_b) {
    if (stats_a.n < 2 || stats_b.n < 2) {
        throw std::invalid_argument("need n >= 2 per variant");
    }
    const double pooled_se_sq = stats_a.variance / static_cast<double>(stats_a.n) +
                                stats_b.variance / static_cast<double>(stats_b.n);
    if (pooled_se_sq <= 0.0) {
        throw std::domain_error("degenerate variance");
    }
    return (stats_a.mean - stats_b.mean) / std::sqrt(pooled_se_sq);
}

double p_value(double z) {
    if (!std::isfinite(z)) {
        throw std::invalid_argument("non-finite z");
    }
    return 2.0 * std_normal_cdf(-std::abs(z));
}

TestResult two_sample_test(const SampleStats& stats_a, const SampleStats& stats_b) {
    TestResult result;
    result.z = z_statistic(stats_a, stats_b);
    result.p_value = p_value(result.z);
    result.ate = stats_a.mean - stats_b.mean;
    result.variance_a = stats_a.variance;
    result.variance_b = stats_b.variance;
    result.n_a = stats_a.n;
    result.n_b = stats_b.n;
    return result;
}

}  // namespace abvr::stats
