#include "abvr/ratio.hpp"

#include <cmath>
#include <stdexcept>

namespace abvr::ratio {

std::vector<UnitMetricComponents> compute_retention_components(
    std::span<const UnitActivity> activity) {
    std::vector<UnitMetricComponents> out;
    out.reserve(activity.size());
    for (const UnitActivity& unit : activity) {
        if (unit.active.size() < 2) {
            throw std::invalid_argument("activity window shorter than 2 days");
        }
        double numerator = 0.0;
        double denominator = 0.0;
        for (std::size_t d = 0; d + 1 < unit.active.size(); ++d) {
            if (unit.active[d]) {
                denominator += 1.0;
                if (unit.active[d + 1]) {
                    numerator += 1.0;
                }
            }
        }
        if (denominator > 0.0) {
            out.push_back(UnitMetricComponents{unit.unit_id, numerator, denominator});
        }
    }
    return out;
}

double ratio_point_estimate(std::span<const UnitMetricComponents> components) {
    double num_sum = 0.0;
    double den_sum = 0.0;
    for (const UnitMetricComponents& c : components) {
        num_sum += c.numerator;
        den_sum += c.denominator;
    }
    if (den_sum <= 0.0) {
        throw std::domain_error("all-zero denominators");
    }
    return num_sum / den_sum;
}

double delta_variance(const stats::SampleStats& num_stats, const stats::SampleStats& den_stats,
                      double cov_nd) {
    const double mu_n = num_stats.mean;
    const double mu_d = den_stats.mean;
    if (mu_n == 0.0 || mu_d == 0.0) {
        throw std::domain_error("delta method undefined");
    }
    const double ratio_sq = (mu_n * mu_n) / (mu_d * mu_d);
    double var = ratio_sq * (num_stats.variance / (mu_n * mu_n) +
                             den_stats.variance / (mu_d * mu_d) -
                             2.0 * cov_nd / (mu_n * mu_d));
    if (var < 0.0) {
        if (var < -1e-9) {
            throw std::domain_error("inconsistent moments");
        }
        var = 0.0;
    }
    return var;
}

double linearization_coefficient(std::span<const UnitMetricComponents> control_components) {
    if (control_components.empty()) {
        throw std::invalid_argument("empty control variant");
    }
    return ratio_point_estimate(control_components);
}

LinearizedMetric linearize(std::span<const UnitMetricComponents> components, double c) {
    if (!std::isfinite(c)) {
        throw std::invalid_argument("non-finite linearization coefficient");
    }
    LinearizedMetric out;
    out.c = c;
    out.values.resize(static_cast<Eigen::Index>(components.size()));
    for (std::size_t i = 0; i < components.size(); ++i) {
        out.values[static_cast<Eigen::Index>(i)] =
            components[i].numerator - c * components[i].denominator;
    }
    return out;
}

ComponentStats component_stats(std::span<const UnitMetricComponents> components) {
    stats::MomentAccumulator num_acc;
    stats::MomentAccumulator den_acc;
    stats::CovarianceAccumulator cov_acc;
    for (const UnitMetricComponents& c : components) {
        num_acc.add(c.numerator);
        den_acc.add(c.denominator);
        cov_acc.add(c.numerator, c.denominator);
    }
    return ComponentStats{num_acc.stats(), den_acc.stats(), cov_acc.covariance()};
}

stats::TestResult delta_ratio_test(std::span<const UnitMetricComponents> variant_a,
                                   std::span<const UnitMetricComponents> variant_b) {
    const ComponentStats a = component_stats(variant_a);
    const ComponentStats b = component_stats(variant_b);
    stats::SampleStats ratio_a{a.numerator.n, a.numerator.mean / a.denominator.mean,
                               delta_variance(a.numerator, a.denominator, a.cov_nd)};
    stats::SampleStats ratio_b{b.numerator.n, b.numerator.mean / b.denominator.mean,
                               delta_variance(b.numerator, b.denominator, b.cov_nd)};
    return stats::two_sample_test(ratio_a, ratio_b);
}

}  // namespace abvr::ratio
