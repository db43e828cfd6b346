#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>

namespace abvr::stats {

/// Moments of one sample: count, mean, unbiased variance (divisor n-1).
struct SampleStats {
    std::size_t n = 0;
    double mean = 0.0;
    double variance = 0.0;
};

/// Outcome of a two-sample z-test for one experiment and one method.
struct TestResult {
    double z = 0.0;
    double p_value = 1.0;
    double ate = 0.0;  // mean_A - mean_B of the tested metric
    double variance_a = 0.0;
    double variance_b = 0.0;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    std::string method_label;
};

/// Streaming moment accumulator (Welford update, Chan merge).
/// Mergeable so per-shard accumulators can be combined for parallel ingestion.
class MomentAccumulator {
public:
    void add(double value);
    void merge(const MomentAccumulator& other);

    [[nodiscard]] std::size_t count() const { return n_; }
    [[nodiscard]] double mean() const;             // throws if n == 0
    [[nodiscard]] double variance() const;         // throws if n < 2
    [[nodiscard]] SampleStats stats() const;       // throws if n < 2

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

/// Streaming co-moment accumulator for paired samples.
class CovarianceAccumulator {
public:
    void add(double x, double y);
    void merge(const CovarianceAccumulator& other);

    [[nodiscard]] std::size_t count() const { return n_; }
    [[nodiscard]] double covariance() const;       // throws if n < 2

private:
    std::size_t n_ = 0;
    double mean_x_ = 0.0;
    double mean_y_ = 0.0;
    double c2_ = 0.0;
};

/// Single-pass summary of a sample. Throws on empty input ("empty sample")
/// and on n == 1 (variance undefined, never silently 0).
[[nodiscard]] SampleStats summarize(std::span<const double> values);
[[nodiscard]] SampleStats summarize(const Eigen::Ref<const Eigen::VectorXd>& values);

/// Unbiased sample covariance of index-paired sequences. Throws on length
/// mismatch and n < 2.
[[nodiscard]] double covariance(std::span<const double> x, std::span<const double> y);
[[nodiscard]] double covariance(const Eigen::Ref<const Eigen::VectorXd>& x,
                                const Eigen::Ref<const Eigen::VectorXd>& y);

/// Standard normal CDF, absolute error below 1e-7 on [-8, 8], clamped to
/// {0, 1} far in the tails.
[[nodiscard]] double std_normal_cdf(double z);

/// Welch-style two-sample z-statistic:
///   (mean_a - mean_b) / sqrt(var_a/n_a + var_b/n_b).
/// Throws "degenerate variance" when the pooled standard error is zero.
[[nodiscard]] double z_statistic(const SampleStats& stats_a, const SampleStats& stats_b);

/// Two-tailed p-value, 2 * Phi(-|z|).
[[nodiscard]] double p_value(double z);

/// z-test on two summarized samples; fills every TestResult field except
/// method_label.
[[nodiscard]] TestResult two_sample_test(const SampleStats& stats_a, const SampleStats& stats_b);

}  // namespace abvr::stats
