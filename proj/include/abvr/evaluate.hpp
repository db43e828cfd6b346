#pragma once

#include "abvr/cuped.hpp"
#include "abvr/ratio.hpp"
#include "abvr/unit.hpp"

#include <span>
#include <string>
#include <vector>

namespace abvr::evaluate {

/// One experiment ready for analysis.
struct ExperimentData {
    std::string id;
    std::vector<UnitRecord> units;
    std::string control_variant = "control";
};

/// Per-experiment comparison detail for one method.
struct ExperimentDetail {
    std::string experiment_id;
    double z_raw = 0.0;
    double z_vr = 0.0;
    double p_raw = 1.0;
    double p_vr = 1.0;
    double variance_reduction_pct = 0.0;
    bool sign_flip = false;  // sign(z_vr) != sign(z_raw)
};

/// One report row: the summary statistics for one method across a suite.
struct MethodComparison {
    std::string method_label;
    double variance_reduction_pct = 0.0;  // negative = reduction, mean over experiments
    double frac_lower_pvalue = 0.0;       // strict p_vr < p_raw
    double median_relative_z = 1.0;
    double type_i_error = 0.0;            // from the A/A suite, when provided
    double type_i_ci_lo = 0.0;            // exact 99% binomial interval
    double type_i_ci_hi = 0.0;
    bool has_type_i = false;
    std::vector<ExperimentDetail> details;
};

[[nodiscard]] double variance_reduction_pct(double var_raw, double var_vr);

[[nodiscard]] double frac_lower_pvalue(std::span<const std::pair<double, double>> pairs);

[[nodiscard]] double median_relative_z(std::span<const std::pair<double, double>> pairs);

/// 1 - 1/(median_rel_z^2): the fraction of sample no longer needed at
/// constant sensitivity.
[[nodiscard]] double sample_size_reduction(double median_rel_z);

struct TypeIEstimate {
    double rate = 0.0;
    double ci_lo = 0.0;  // exact two-sided 99% interval for the true rate
    double ci_hi = 0.0;
    std::size_t n = 0;
    std::size_t rejections = 0;
};

[[nodiscard]] TypeIEstimate type_i_error(std::span<const stats::TestResult> aa_results,
                                         double alpha);

/// Central acceptance interval for the rejection fraction under
/// Binomial(n, p): the tightest [lo, hi] with at most (1-confidence)/2
/// probability in each open tail.
struct FractionInterval {
    double lo = 0.0;
    double hi = 1.0;
};
[[nodiscard]] FractionInterval binomial_acceptance_interval(std::size_t n, double p,
                                                            double confidence);

/// Exact (Clopper-Pearson) confidence interval for a binomial proportion.
[[nodiscard]] FractionInterval clopper_pearson_interval(std::size_t successes, std::size_t n,
                                                        double confidence);

/// Full method-by-experiment cross: one MethodComparison row per method
/// ("raw" baseline first), evaluated on the A/B suite with type-I error from
/// the A/A suite when non-empty. Experiments run in parallel; aggregation is
/// a deterministic fold in suite order.
[[nodiscard]] std::vector<MethodComparison> run_table(std::span<const ExperimentData> suite_ab,
                                                      std::span<const ExperimentData> suite_aa,
                                                      const ratio::RatioMetricSpec& metric,
                                                      std::span<const cuped::VRConfig> methods,
                                                      double alpha);

}  // namespace abvr::evaluate
