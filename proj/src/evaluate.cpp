#include "abvr/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <stdexcept>
#include <thread>
#include <utility>

namespace abvr::evaluate {

namespace {

double log_binomial_pmf(std::size_t k, std::size_t n, double p) {
    const double kd = static_cast<double>(k);
    const double nd = static_cast<double>(n);
    return std::lgamma(nd + 1.0) - std::lgamma(kd + 1.0) - std::lgamma(nd - kd + 1.0) +
           kd * std::log(p) + (nd - kd) * std::log1p(-p);
}

// P(X <= k) for X ~ Binomial(n, p).
double binomial_cdf(std::size_t k, std::size_t n, double p) {
    if (p <= 0.0) {
        return 1.0;
    }
    if (p >= 1.0) {
        return k >= n ? 1.0 : 0.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i <= k; ++i) {
        sum += std::exp(log_binomial_pmf(i, n, p));
    }
    return std::min(sum, 1.0);
}

}  // namespace

double variance_reduction_pct(double var_raw, double var_vr) {
    if (var_raw <= 0.0) {
        throw std::domain_error("zero baseline variance");
    }
    return 100.0 * (var_vr - var_raw) / var_raw;
}

double frac_lower_pvalue(std::span<const std::pair<double, double>> pairs) {
    if (pairs.empty()) {
        throw std::invalid_argument("empty input");
    }
    std::size_t lower = 0;
    for (const auto& [p_raw, p_vr] : pairs) {
        if (p_raw < 0.0 || p_raw > 1.0 || p_vr < 0.0 || p_vr > 1.0) {
            throw std::invalid_argument("p-value out of [0, 1]");
        }
        if (p_vr < p_raw) {
            ++lower;
        }
    }
    return static_cast<double>(lower) / static_cast<double>(pairs.size());
}

double median_relative_z(std::span<const std::pair<double, double>> pairs) {
    if (pairs.empty()) {
        throw std::invalid_argument("empty input");
    }
    std::vector<double> ratios;
    ratios.reserve(pairs.size());
    for (const auto& [z_raw, z_vr] : pairs) {
        if (z_raw == 0.0) {
            throw std::domain_error("zero baseline z");
        }
        ratios.push_back(std::abs(z_vr) / std::abs(z_raw));
    }
    std::sort(ratios.begin(), ratios.end());
    const std::size_t n = ratios.size();
    if (n % 2 == 1) {
        return ratios[n / 2];
    }
    return 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]);
}

double sample_size_reduction(double median_rel_z) {
    if (median_rel_z <= 0.0) {
        throw std::domain_error("median relative z must be positive");
    }
    return 1.0 - 1.0 / (median_rel_z * median_rel_z);
}

FractionInterval binomial_acceptance_interval(std::size_t n, double p, double confidence) {
    if (n == 0 || !(p > 0.0 && p < 1.0) || !(confidence > 0.0 && confidence < 1.0)) {
        throw std::invalid_argument("invalid acceptance-interval arguments");
    }
    const double tail = (1.0 - confidence) / 2.0;
    std::vector<double> cdf(n + 1);
    double sum = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
        sum += std::exp(log_binomial_pmf(k, n, p));
        cdf[k] = std::min(sum, 1.0);
    }
    std::size_t k_lo = 0;
    while (k_lo < n && cdf[k_lo] <= tail) {
        ++k_lo;  // largest k with P(X < k) <= tail is k_lo after this loop
    }
    std::size_t k_hi = n;
    while (k_hi > 0 && 1.0 - cdf[k_hi - 1] <= tail) {
        --k_hi;
    }
    return FractionInterval{static_cast<double>(k_lo) / static_cast<double>(n),
                            static_cast<double>(k_hi) / static_cast<double>(n)};
}

FractionInterval clopper_pearson_interval(std::size_t successes, std::size_t n,
                                          double confidence) {
    if (n == 0 || successes > n || !(confidence > 0.0 && confidence < 1.0)) {
        throw std::invalid_argument("invalid interval arguments");
    }
    const double tail = (1.0 - confidence) / 2.0;
    FractionInterval out;
    if (successes == 0) {
        out.lo = 0.0;
    } else {
        double lo = 0.0;
        double hi = 1.0;
        for (int iter = 0; iter < 100; ++iter) {
            const double mid = 0.5 * (lo + hi);
            // lower bound: largest p with P(X >= s | p) <= tail
            if (1.0 - binomial_cdf(successes - 1, n, mid) <= tail) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.lo = lo;
    }
    if (successes == n) {
        out.hi = 1.0;
    } else {
        double lo = 0.0;
        double hi = 1.0;
        for (int iter = 0; iter < 100; ++iter) {
            const double mid = 0.5 * (lo + hi);
            // upper bound: smallest p with P(X <= s | p) <= tail
            if (binomial_cdf(successes, n, mid) <= tail) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out.hi = hi;
    }
    return out;
}

TypeIEstimate type_i_error(std::span<const stats::TestResult> aa_results, double alpha) {
    if (aa_results.empty()) {
        throw std::invalid_argument("empty suite");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("alpha must be in (0, 1)");
    }
    std::size_t rejections = 0;
    for (const auto& r : aa_results) {
        if (r.p_value < alpha) {
            ++rejections;
        }
    }
    TypeIEstimate out;
    out.n = aa_results.size();
    out.rejections = rejections;
    out.rate = static_cast<double>(rejections) / static_cast<double>(out.n);
    const FractionInterval ci = clopper_pearson_interval(rejections, out.n, 0.99);
    out.ci_lo = ci.lo;
    out.ci_hi = ci.hi;
    return out;
}

namespace {

struct ExperimentOutcome {
    std::vector<cuped::VRTestOutput> per_method;  // same order as methods
};

std::vector<ExperimentOutcome> analyze_suite(std::span<const ExperimentData> suite,
                                             const ratio::RatioMetricSpec& metric,
                                             std::span<const cuped::VRConfig> methods) {
    std::vector<ExperimentOutcome> outcomes(suite.size());
    // The preds-based methods in one table run share a single GBDT setting,
    // so predictions are computed once per experiment.
    const cuped::VRConfig* pred_config = nullptr;
    for (const auto& m : methods) {
        if (m.covariate_set != cuped::CovariateSet::PreOnly) {
            pred_config = &m;
            break;
        }
    }

    const auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const ExperimentData& exp = suite[i];
            cuped::PredictedCovariates predictions;
            const cuped::PredictedCovariates* predictions_ptr = nullptr;
            if (pred_config != nullptr) {
                std::vector<ratio::UnitMetricComponents> control;
                for (const UnitRecord& u : exp.units) {
                    if (u.variant == exp.control_variant) {
                        control.push_back(
                            ratio::UnitMetricComponents{u.unit_id, u.numerator, u.denominator});
                    }
                }
                double c = 0.0;
                if (std::holds_alternative<ratio::FixedConstant>(metric.linearization_source)) {
                    c = std::get<ratio::FixedConstant>(metric.linearization_source).value;
                } else {
                    c = ratio::linearization_coefficient(control);
                }
                predictions = cuped::predict_components(exp.units, c, *pred_config);
                predictions_ptr = &predictions;
            }
            if (methods.empty()) {
                // raw-only run: no VR pipeline, just the ratio test
                std::vector<ratio::UnitMetricComponents> treat;
                std::vector<ratio::UnitMetricComponents> ctrl;
                for (const UnitRecord& u : exp.units) {
                    auto& dst = u.variant == exp.control_variant ? ctrl : treat;
                    dst.push_back(
                        ratio::UnitMetricComponents{u.unit_id, u.numerator, u.denominator});
                }
                cuped::VRTestOutput raw_only;
                raw_only.raw = ratio::delta_ratio_test(treat, ctrl);
                raw_only.raw.method_label = "raw";
                raw_only.reduced = raw_only.raw;
                outcomes[i].per_method.push_back(std::move(raw_only));
                continue;
            }
            outcomes[i].per_method.reserve(methods.size());
            for (const auto& m : methods) {
                outcomes[i].per_method.push_back(
                    cuped::run_vr_test(exp.units, exp.control_variant, metric, m,
                                       predictions_ptr));
            }
        }
    };

    const std::size_t n_threads =
        std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(),
                                                       suite.size()));
    std::vector<std::future<void>> futures;
    const std::size_t chunk = (suite.size() + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(begin + chunk, suite.size());
        if (begin >= end) {
            break;
        }
        futures.push_back(std::async(std::launch::async, worker, begin, end));
    }
    for (auto& f : futures) {
        f.get();
    }
    return outcomes;
}

}  // namespace

std::vector<MethodComparison> run_table(std::span<const ExperimentData> suite_ab,
                                        std::span<const ExperimentData> suite_aa,
                                        const ratio::RatioMetricSpec& metric,
                                        std::span<const cuped::VRConfig> methods, double alpha) {
    if (suite_ab.empty()) {
        throw std::invalid_argument("empty A/B suite");
    }
    const auto ab_outcomes = analyze_suite(suite_ab, metric, methods);
    std::vector<ExperimentOutcome> aa_outcomes;
    if (!suite_aa.empty()) {
        aa_outcomes = analyze_suite(suite_aa, metric, methods);
    }

    std::vector<MethodComparison> rows;

    MethodComparison raw_row;
    raw_row.method_label = "raw";
    raw_row.median_relative_z = 1.0;
    for (std::size_t i = 0; i < suite_ab.size(); ++i) {
        const auto& raw = ab_outcomes[i].per_method.front().raw;
        raw_row.details.push_back(ExperimentDetail{suite_ab[i].id, raw.z, raw.z, raw.p_value,
                                                   raw.p_value, 0.0, false});
    }
    if (!suite_aa.empty()) {
        std::vector<stats::TestResult> raw_aa;
        raw_aa.reserve(suite_aa.size());
        for (const auto& outcome : aa_outcomes) {
            raw_aa.push_back(outcome.per_method.front().raw);
        }
        const TypeIEstimate t1 = type_i_error(raw_aa, alpha);
        raw_row.type_i_error = t1.rate;
        raw_row.type_i_ci_lo = t1.ci_lo;
        raw_row.type_i_ci_hi = t1.ci_hi;
        raw_row.has_type_i = true;
    }
    rows.push_back(std::move(raw_row));

    for (std::size_t m = 0; m < methods.size(); ++m) {
        MethodComparison row;
        row.method_label = cuped::method_label(methods[m].covariate_set);
        std::vector<std::pair<double, double>> p_pairs;
        std::vector<std::pair<double, double>> z_pairs;
        double var_red_sum = 0.0;
        for (std::size_t i = 0; i < suite_ab.size(); ++i) {
            const cuped::VRTestOutput& out = ab_outcomes[i].per_method[m];
            const double var_red =
                variance_reduction_pct(out.pooled_var_outcome, out.pooled_var_reduced);
            var_red_sum += var_red;
            p_pairs.emplace_back(out.raw.p_value, out.reduced.p_value);
            z_pairs.emplace_back(out.raw.z, out.reduced.z);
            row.details.push_back(ExperimentDetail{
                suite_ab[i].id, out.raw.z, out.reduced.z, out.raw.p_value, out.reduced.p_value,
                var_red, std::signbit(out.raw.z) != std::signbit(out.reduced.z)});
        }
        row.variance_reduction_pct = var_red_sum / static_cast<double>(suite_ab.size());
        row.frac_lower_pvalue = frac_lower_pvalue(p_pairs);
        row.median_relative_z = median_relative_z(z_pairs);
        if (!suite_aa.empty()) {
            std::vector<stats::TestResult> aa_results;
            aa_results.reserve(suite_aa.size());
            for (const auto& outcome : aa_outcomes) {
                aa_results.push_back(outcome.per_method[m].reduced);
            }
            const TypeIEstimate t1 = type_i_error(aa_results, alpha);
            row.type_i_error = t1.rate;
            row.type_i_ci_lo = t1.ci_lo;
            row.type_i_ci_hi = t1.ci_hi;
            row.has_type_i = true;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace abvr::evaluate
