#pragma once

#include "abvr/stats.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace abvr::ratio {

/// The linearization coefficient c either comes from the control variant's
/// ratio or is pinned to a constant supplied in the config.
struct ControlMean {};
struct FixedConstant {
    double value = 0.0;
};
using LinearizationSource = std::variant<ControlMean, FixedConstant>;

/// Names the numerator/denominator fields of a ratio metric and how its
/// linearization coefficient is chosen.
struct RatioMetricSpec {
    std::string name;
    std::string numerator_field = "numerator";
    std::string denominator_field = "denominator";
    LinearizationSource linearization_source = ControlMean{};
    bool enforce_component_bound = true;  // numerator <= denominator per unit
};

/// Per-unit realization of the metric components (M_N, M_D).
struct UnitMetricComponents {
    std::string unit_id;
    double numerator = 0.0;
    double denominator = 0.0;
};

/// Per-unit linearized metric L = M_N - c * M_D together with the c used.
struct LinearizedMetric {
    double c = 0.0;
    Eigen::VectorXd values;
};

/// Joint moments of the two components within one variant, as needed by the
/// ratio variance formula.
struct ComponentStats {
    stats::SampleStats numerator;
    stats::SampleStats denominator;
    double cov_nd = 0.0;
};

/// Daily activity flags for one unit over an analysis window.
struct UnitActivity {
    std::string unit_id;
    std::vector<std::uint8_t> active;  // one flag per day
};

/// Retention components over a window: denominator counts days the unit was
/// active (excluding the final day), numerator counts days active on both d
/// and d+1. Units never active before the final day are excluded.
[[nodiscard]] std::vector<UnitMetricComponents> compute_retention_components(
    std::span<const UnitActivity> activity);

/// (sum of numerators) / (sum of denominators). Throws when all denominators
/// are zero.
[[nodiscard]] double ratio_point_estimate(std::span<const UnitMetricComponents> components);

/// First-order variance of the ratio of means from component moments:
///   (mu_N^2/mu_D^2) * (var_N/mu_N^2 + var_D/mu_D^2 - 2*cov/(mu_N*mu_D)).
/// Returned per unit; the /N happens inside the z-statistic. Throws
/// "delta method undefined" on a zero component mean and "inconsistent
/// moments" when the result is negative beyond floating-point noise.
[[nodiscard]] double delta_variance(const stats::SampleStats& num_stats,
                                    const stats::SampleStats& den_stats, double cov_nd);

/// The control variant's ratio point estimate, reused as c for both variants.
[[nodiscard]] double linearization_coefficient(
    std::span<const UnitMetricComponents> control_components);

/// Per-unit L_i = numerator_i - c * denominator_i.
[[nodiscard]] LinearizedMetric linearize(std::span<const UnitMetricComponents> components,
                                         double c);

/// Joint component moments for one variant.
[[nodiscard]] ComponentStats component_stats(std::span<const UnitMetricComponents> components);

/// z-test on the ratio of means of two variants, with the ratio variance
/// approximation supplying the per-unit variances.
[[nodiscard]] stats::TestResult delta_ratio_test(std::span<const UnitMetricComponents> variant_a,
                                                 std::span<const UnitMetricComponents> variant_b);

}  // namespace abvr::ratio
